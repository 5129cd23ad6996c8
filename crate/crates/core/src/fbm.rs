//! Exact sampling of fractional Brownian motion on uniform grids.
//!
//! Both samplers draw stationary fractional Gaussian noise (fGn) increments
//! and prefix-sum them into levels, so column 0 of every path is exactly
//! zero. Path `k` always draws from ChaCha stream `k` of the master seed,
//! which keeps output bit-identical whatever the rayon thread count.

use std::fmt;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Eigenvalues of the circulant embedding in `[-EIGEN_TOL, 0)` are rounding
/// noise and are clipped to zero.
pub const EIGEN_TOL: f64 = 1e-10;

/// Hurst exponent of the driving noise.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Hurst(f64);

impl Hurst {
    /// Any exponent in the open interval (0, 1); enough for sampling.
    pub fn new(h: f64) -> Result<Self> {
        if h > 0.0 && h < 1.0 {
            Ok(Hurst(h))
        } else {
            Err(Error::domain(format!("Hurst parameter {h} outside (0, 1)")))
        }
    }

    /// Exponents the solver accepts: `1/2 <= h < 1`.
    pub fn for_solver(h: f64) -> Result<Self> {
        let hurst = Hurst::new(h)?;
        if hurst.is_solver_range() {
            Ok(hurst)
        } else {
            Err(Error::domain(format!("solver requires 1/2 <= H < 1, got {h}")))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_solver_range(self) -> bool {
        self.0 >= 0.5
    }

    /// `2H`, the exponent of the variance clock `t^{2H}`.
    #[inline]
    pub fn two_h(self) -> f64 {
        2.0 * self.0
    }
}

impl TryFrom<f64> for Hurst {
    type Error = Error;
    fn try_from(h: f64) -> Result<Self> {
        Hurst::new(h)
    }
}

impl From<Hurst> for f64 {
    fn from(h: Hurst) -> f64 {
        h.0
    }
}

impl fmt::Display for Hurst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// How a shifted time that falls exactly between two grid points is rounded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tie {
    Past,
    Future,
}

/// Uniform grid on `[0, T + K]` with `T` on a grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    t_max: f64,
    n_steps: usize,
    horizon_index: usize,
}

impl TimeGrid {
    /// Grid on `[0, horizon + anticipation]` with `n_steps` equal cells.
    pub fn new(horizon: f64, anticipation: f64, n_steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::domain(format!("horizon T must be positive, got {horizon}")));
        }
        if !(anticipation >= 0.0) || !anticipation.is_finite() {
            return Err(Error::domain(format!("K must be nonnegative, got {anticipation}")));
        }
        if n_steps == 0 {
            return Err(Error::domain("n_steps must be positive"));
        }
        let t_max = horizon + anticipation;
        let dt = t_max / n_steps as f64;
        let horizon_index = (horizon / dt).round() as usize;
        if horizon_index == 0 || (horizon_index as f64 * dt - horizon).abs() > 1e-9 * t_max {
            return Err(Error::domain(format!(
                "T = {horizon} is not a grid point of {n_steps} cells on [0, {t_max}]"
            )));
        }
        Ok(TimeGrid {
            horizon,
            t_max,
            n_steps,
            horizon_index,
        })
    }

    /// Grid on `[0, t_max]` with `T = t_max`.
    pub fn uniform(t_max: f64, n_steps: usize) -> Result<Self> {
        TimeGrid::new(t_max, 0.0, n_steps)
    }

    /// Accepts explicit points only if they start at zero and are equally spaced.
    pub fn from_points(points: &[f64], horizon: f64) -> Result<Self> {
        if points.len() < 2 || points[0] != 0.0 {
            return Err(Error::domain("grid must start at 0 and contain at least two points"));
        }
        let n_steps = points.len() - 1;
        let t_max = points[n_steps];
        let dt = t_max / n_steps as f64;
        for (i, w) in points.windows(2).enumerate() {
            if !(w[1] > w[0]) {
                return Err(Error::domain(format!("grid points not increasing at index {i}")));
            }
            if ((w[1] - w[0]) - dt).abs() > 1e-9 * t_max {
                return Err(Error::domain(format!("non-uniform grid: cell {i} has width {}", w[1] - w[0])));
            }
        }
        TimeGrid::new(horizon, t_max - horizon, n_steps)
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.t_max / self.n_steps as f64
    }

    #[inline]
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Number of grid points, `n_steps + 1`.
    #[inline]
    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    #[inline]
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// `K = t_max - T`.
    pub fn anticipation(&self) -> f64 {
        self.t_max - self.horizon
    }

    #[inline]
    pub fn horizon_index(&self) -> usize {
        self.horizon_index
    }

    #[inline]
    pub fn point(&self, i: usize) -> f64 {
        if i == self.n_steps {
            self.t_max
        } else {
            self.t_max * i as f64 / self.n_steps as f64
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|i| self.point(i)).collect()
    }

    /// Index of `t`, which must coincide with a grid point.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let x = t / self.dt();
        let i = x.round();
        if t < -1e-12 || i > self.n_steps as f64 || (x - i).abs() > 1e-9 {
            return Err(Error::domain(format!("t = {t} is not on the grid")));
        }
        Ok(i as usize)
    }

    /// Nearest grid index to `t`, with exact midpoints resolved by `tie`.
    /// Returns `None` when `t` lies outside `[0, t_max]`.
    pub fn nearest_index(&self, t: f64, tie: Tie) -> Option<usize> {
        let tol = 1e-9;
        let x = t / self.dt();
        if x < -tol || x > self.n_steps as f64 + tol {
            return None;
        }
        let fl = x.floor();
        let frac = x - fl;
        let i = if (frac - 0.5).abs() < tol {
            match tie {
                Tie::Past => fl,
                Tie::Future => fl + 1.0,
            }
        } else {
            x.round()
        };
        Some((i.max(0.0) as usize).min(self.n_steps))
    }

    /// Evaluates `f` at every grid point.
    pub fn sample_fn(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        (0..=self.n_steps).map(|i| f(self.point(i))).collect()
    }
}

/// `R_H(s, t) = (t^{2H} + s^{2H} - |t - s|^{2H}) / 2`.
pub fn covariance(s: f64, t: f64, h: Hurst) -> Result<f64> {
    if s < 0.0 || t < 0.0 {
        return Err(Error::domain(format!("covariance needs nonnegative times, got ({s}, {t})")));
    }
    Ok(covariance_unchecked(s, t, h))
}

#[inline]
pub(crate) fn covariance_unchecked(s: f64, t: f64, h: Hurst) -> f64 {
    let a = h.two_h();
    0.5 * (t.powf(a) + s.powf(a) - (t - s).abs().powf(a))
}

/// Autocovariance at lag `k` of fGn increments over cells of width `dt`.
///
/// This is also the exact cell-pair integral of the kernel `φ`, which the
/// fractional calculus quadrature reuses.
pub fn fgn_autocovariance(k: usize, dt: f64, h: Hurst) -> f64 {
    let a = h.two_h();
    let k = k as f64;
    let s = if k == 0.0 {
        1.0
    } else {
        0.5 * ((k + 1.0).powf(a) - 2.0 * k.powf(a) + (k - 1.0).powf(a))
    };
    dt.powf(a) * s
}

/// Covariance matrix of the increment vector over all `n_steps` cells.
pub(crate) fn fgn_covariance(grid: &TimeGrid, h: Hurst) -> Vec<f64> {
    let n = grid.n_steps();
    let gamma: Vec<f64> = (0..n).map(|k| fgn_autocovariance(k, grid.dt(), h)).collect();
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            c[i * n + j] = gamma[i.abs_diff(j)];
        }
    }
    c
}

/// `R_H` tabulated on `grid x grid`; row and column 0 vanish.
pub fn build_covariance_matrix(grid: &TimeGrid, h: Hurst) -> Array2<f64> {
    let pts = grid.points();
    Array2::from_shape_fn((pts.len(), pts.len()), |(i, j)| covariance_unchecked(pts[i], pts[j], h))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMethod {
    Cholesky,
    Circulant,
}

impl fmt::Display for SamplingMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SamplingMethod::Cholesky => f.write_str("cholesky"),
            SamplingMethod::Circulant => f.write_str("circulant"),
        }
    }
}

/// Sampled fBm levels, one path per row.
#[derive(Debug, Clone)]
pub struct FbmPathSet {
    pub paths: Array2<f64>,
    pub grid: TimeGrid,
    pub hurst: Hurst,
    pub seed: u64,
    pub method: SamplingMethod,
}

impl FbmPathSet {
    pub fn n_paths(&self) -> usize {
        self.paths.nrows()
    }

    pub fn path(&self, k: usize) -> &[f64] {
        let n = self.grid.len();
        &self.paths.as_slice().expect("row-major paths")[k * n..(k + 1) * n]
    }

    /// Second-moment matrix `E[B_s B_t]` estimated with the known zero mean.
    pub fn empirical_covariance(&self) -> Array2<f64> {
        let m = self.grid.len();
        let n = self.n_paths() as f64;
        let mut acc = Array2::<f64>::zeros((m, m));
        for row in self.paths.rows() {
            for i in 0..m {
                let ri = row[i];
                if ri == 0.0 {
                    continue;
                }
                for j in i..m {
                    acc[[i, j]] += ri * row[j];
                }
            }
        }
        for i in 0..m {
            for j in i..m {
                let v = acc[[i, j]] / n;
                acc[[i, j]] = v;
                acc[[j, i]] = v;
            }
        }
        acc
    }

    /// Largest absolute deviation between empirical and exact covariance.
    pub fn max_covariance_error(&self) -> f64 {
        let exact = build_covariance_matrix(&self.grid, self.hurst);
        let emp = self.empirical_covariance();
        emp.iter().zip(exact.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Column of values at grid index `i`, one per path.
    pub fn column(&self, i: usize) -> Vec<f64> {
        self.paths.column(i).to_vec()
    }
}

pub(crate) fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

fn check_paths(n_paths: usize) -> Result<()> {
    if n_paths == 0 {
        return Err(Error::domain("n_paths must be at least 1"));
    }
    Ok(())
}

/// Fills rows of a row-major `n_paths x (n+1)` buffer in parallel; `draw`
/// writes the `n` increments of path `k` into its slice.
fn fill_paths<F>(n_paths: usize, n: usize, draw: F) -> Array2<f64>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let mut data = vec![0.0; n_paths * (n + 1)];
    data.par_chunks_mut(n + 1).enumerate().for_each(|(k, row)| {
        draw(k, &mut row[1..]);
        // levels from increments; row[0] stays exactly 0
        for i in 1..=n {
            row[i] += row[i - 1];
        }
    });
    Array2::from_shape_vec((n_paths, n + 1), data).expect("shape matches buffer")
}

/// Exact sampler: Cholesky factor of the fGn covariance applied to i.i.d.
/// normals, then prefix sums.
pub fn sample_cholesky(grid: &TimeGrid, h: Hurst, n_paths: usize, seed: u64) -> Result<FbmPathSet> {
    check_paths(n_paths)?;
    let n = grid.n_steps();
    let l = linalg::cholesky(&fgn_covariance(grid, h), n, 1e-14)?;
    let paths = fill_paths(n_paths, n, |k, out| {
        let mut rng = path_rng(seed, k);
        let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        linalg::lower_mul(&l, n, &z, out);
    });
    Ok(FbmPathSet {
        paths,
        grid: grid.clone(),
        hurst: h,
        seed,
        method: SamplingMethod::Cholesky,
    })
}

/// Square roots of the circulant-embedding eigenvalues divided by the
/// embedding size, after the negative-eigenvalue policy is applied.
fn circulant_scales(grid: &TimeGrid, h: Hurst) -> Result<Vec<f64>> {
    let n = grid.n_steps();
    let m = 2 * n;
    let mut c = vec![Complex::new(0.0, 0.0); m];
    for k in 0..=n {
        c[k].re = fgn_autocovariance(k, grid.dt(), h);
    }
    for k in 1..n {
        c[m - k].re = c[k].re;
    }
    FftPlanner::<f64>::new().plan_fft_forward(m).process(&mut c);
    let mut clipped = 0usize;
    let scales = c
        .iter()
        .enumerate()
        .map(|(k, lambda)| {
            let v = lambda.re;
            if v < -EIGEN_TOL {
                Err(Error::NegativeEigenvalue { index: k, value: v })
            } else if v < 0.0 {
                clipped += 1;
                Ok(0.0)
            } else {
                Ok((v / m as f64).sqrt())
            }
        })
        .collect::<Result<Vec<_>>>()?;
    if clipped > 0 {
        log::debug!("circulant embedding: clipped {clipped} slightly negative eigenvalues");
    }
    Ok(scales)
}

/// Circulant-embedding (Davies-Harte) sampler, `O(n log n)` per path.
pub fn sample_circulant(grid: &TimeGrid, h: Hurst, n_paths: usize, seed: u64) -> Result<FbmPathSet> {
    check_paths(n_paths)?;
    let n = grid.n_steps();
    let m = 2 * n;
    let scales = circulant_scales(grid, h)?;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(m);
    let paths = fill_paths(n_paths, n, |k, out| {
        let mut rng = path_rng(seed, k);
        let mut buf: Vec<Complex<f64>> = scales
            .iter()
            .map(|&s| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                Complex::new(s * re, s * im)
            })
            .collect();
        fft.process(&mut buf);
        for (o, w) in out.iter_mut().zip(&buf) {
            *o = w.re;
        }
    });
    Ok(FbmPathSet {
        paths,
        grid: grid.clone(),
        hurst: h,
        seed,
        method: SamplingMethod::Circulant,
    })
}

pub fn sample(method: SamplingMethod, grid: &TimeGrid, h: Hurst, n_paths: usize, seed: u64) -> Result<FbmPathSet> {
    match method {
        SamplingMethod::Cholesky => sample_cholesky(grid, h, n_paths, seed),
        SamplingMethod::Circulant => sample_circulant(grid, h, n_paths, seed),
    }
}
