//! Discrete Picard iteration for the delayed and anticipated BSDE.
//!
//! Conditional expectations are least-squares projections on polynomial
//! features of the *driver* `M`, a Gaussian martingale built from the sampled
//! fBm increments: `ΔM = diag(√v) L⁻¹ ΔB`, where `L` is the Cholesky factor
//! of the fGn covariance and `v_i = t_{i+1}^{2H} - t_i^{2H}`. `M` generates the
//! same filtration as `B`, has independent increments and `Var M_t = t^{2H}`,
//! and coincides with `B` when `H = 1/2`. Projections onto its past therefore
//! play the role of quasi-conditional expectations, under which `B_T - B_t`
//! (read through `M`) has zero conditional mean.
//!
//! `Z_i` is the projection of `(Y_{i+1} - Ê_i Y_{i+1}) ΔM_i` divided by the
//! sample second moment of `ΔM_i`, whose expectation is `v_i`.

use ndarray::{Array2, ShapeBuilder};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbm::{fgn_covariance, FbmPathSet, Hurst, Tie, TimeGrid};
use crate::frcalc::{beta_norm, BetaNormConfig};
use crate::linalg::{self, pairwise_mean, pairwise_sum};
use crate::problem::{DelayStructure, GeneratorArgs, ProblemSpec, Shift};

/// Paths per block in every parallel reduction. Fixed so that results never
/// depend on the number of worker threads.
const CHUNK: usize = 1024;

/// Smallest admissible ratio of paths to basis functions.
pub const MIN_PATHS_PER_BASIS: usize = 10;

/// Slack added to `1/√2` when checking contraction ratios.
pub const CONTRACTION_SLACK: f64 = 0.1;

/// Which functionals of the driver path at `t_i` the regression sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureSet {
    FbmLevel,
    /// Level plus up to `k` most recent increments.
    FbmLevelPlusIncrements { k: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegressionBasis {
    pub degree: usize,
    pub features: FeatureSet,
    pub ridge_lambda: f64,
}

impl Default for RegressionBasis {
    fn default() -> Self {
        RegressionBasis {
            degree: 3,
            features: FeatureSet::FbmLevelPlusIncrements { k: 2 },
            ridge_lambda: 0.0,
        }
    }
}

impl RegressionBasis {
    pub fn new(degree: usize, features: FeatureSet, ridge_lambda: f64) -> Result<Self> {
        let b = RegressionBasis {
            degree,
            features,
            ridge_lambda,
        };
        b.check()?;
        Ok(b)
    }

    pub fn check(&self) -> Result<()> {
        if self.degree > 6 {
            return Err(Error::domain(format!("basis degree {} exceeds 6", self.degree)));
        }
        if !(self.ridge_lambda >= 0.0) {
            return Err(Error::domain(format!("ridge_lambda must be nonnegative, got {}", self.ridge_lambda)));
        }
        Ok(())
    }

    /// Number of basis functions for `n_features` nondegenerate features.
    pub fn size(&self, n_features: usize) -> usize {
        multi_indices(n_features, self.degree).len()
    }
}

/// Exponent vectors of total degree `<= degree`, intercept first.
fn multi_indices(n_features: usize, degree: usize) -> Vec<Vec<usize>> {
    fn rec(pos: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if pos == cur.len() {
            out.push(cur.clone());
            return;
        }
        for e in 0..=left {
            cur[pos] = e;
            rec(pos + 1, left - e, cur, out);
        }
        cur[pos] = 0;
    }
    let mut out = Vec::new();
    rec(0, degree, &mut vec![0; n_features], &mut out);
    out.sort_by_key(|m| m.iter().sum::<usize>());
    out
}

/// Probabilists' Hermite polynomials `He_0..=He_d` at `x`.
fn hermite(x: f64, d: usize, out: &mut [f64]) {
    out[0] = 1.0;
    if d >= 1 {
        out[1] = x;
    }
    for n in 1..d {
        out[n + 1] = x * out[n] - n as f64 * out[n - 1];
    }
}

/// Least-squares projection onto a fixed polynomial basis of given features,
/// with the normal-equation factor cached for repeated targets.
#[derive(Debug, Clone)]
pub struct Projector {
    n_paths: usize,
    n_features: usize,
    kept: Vec<usize>,
    mean: Vec<f64>,
    std: Vec<f64>,
    degree: usize,
    multi: Vec<Vec<usize>>,
    chol: Vec<f64>,
}

impl Projector {
    /// `features` is row-major `n_paths x n_features`. Columns with zero
    /// sample variance are dropped.
    pub fn fit(features: &[f64], n_features: usize, basis: &RegressionBasis) -> Result<Self> {
        basis.check()?;
        let n_paths = if n_features == 0 { 0 } else { features.len() / n_features };
        let mut kept = Vec::new();
        let mut mean = Vec::new();
        let mut std = Vec::new();
        for j in 0..n_features {
            let col: Vec<f64> = (0..n_paths).map(|p| features[p * n_features + j]).collect();
            let m = pairwise_mean(&col);
            let sq: Vec<f64> = col.iter().map(|x| (x - m) * (x - m)).collect();
            let s = pairwise_mean(&sq).sqrt();
            if s > 1e-12 * (1.0 + m.abs()) {
                kept.push(j);
                mean.push(m);
                std.push(s);
            }
        }
        let multi = multi_indices(kept.len(), basis.degree);
        let nb = multi.len();
        let mut proj = Projector {
            n_paths,
            n_features,
            kept,
            mean,
            std,
            degree: basis.degree,
            multi,
            chol: Vec::new(),
        };
        let required = MIN_PATHS_PER_BASIS * nb;
        if n_paths < required {
            return Err(Error::domain(format!(
                "regression needs at least {required} paths for {nb} basis functions, got {n_paths}"
            )));
        }
        let design = proj.design(features);
        let mut gram = chunked_sum(n_paths, nb * nb, |range, acc| {
            for p in range {
                let row = &design[p * nb..(p + 1) * nb];
                for a in 0..nb {
                    for b in a..nb {
                        acc[a * nb + b] += row[a] * row[b];
                    }
                }
            }
        });
        for a in 0..nb {
            for b in a..nb {
                let v = gram[a * nb + b] / n_paths as f64;
                gram[a * nb + b] = v;
                gram[b * nb + a] = v;
            }
            gram[a * nb + a] += basis.ridge_lambda;
        }
        proj.chol = linalg::cholesky(&gram, nb, 1e-12).map_err(|e| match e {
            Error::Cholesky { pivot, .. } => Error::RankDeficient { basis_size: nb, pivot },
            other => other,
        })?;
        Ok(proj)
    }

    pub fn n_basis(&self) -> usize {
        self.multi.len()
    }

    /// Row-major `n_paths x n_basis` matrix of basis values.
    pub fn design(&self, features: &[f64]) -> Vec<f64> {
        let nb = self.multi.len();
        let nf = self.n_features;
        let d = self.degree;
        let mut out = vec![0.0; self.n_paths * nb];
        out.par_chunks_mut(nb).enumerate().for_each(|(p, row)| {
            let mut herm = vec![0.0; self.kept.len() * (d + 1)];
            for (k, &j) in self.kept.iter().enumerate() {
                let x = (features[p * nf + j] - self.mean[k]) / self.std[k];
                hermite(x, d, &mut herm[k * (d + 1)..(k + 1) * (d + 1)]);
            }
            for (slot, m) in row.iter_mut().zip(&self.multi) {
                *slot = m.iter().enumerate().map(|(k, &e)| herm[k * (d + 1) + e]).product();
            }
        });
        out
    }

    /// Fitted values of each target on `design`.
    pub fn project(&self, design: &[f64], targets: &[&[f64]]) -> Vec<Vec<f64>> {
        let nb = self.multi.len();
        let nt = targets.len();
        let p_total = self.n_paths;
        let rhs = chunked_sum(p_total, nt * nb, |range, acc| {
            for p in range {
                let row = &design[p * nb..(p + 1) * nb];
                for (t, target) in targets.iter().enumerate() {
                    let y = target[p];
                    for a in 0..nb {
                        acc[t * nb + a] += row[a] * y;
                    }
                }
            }
        });
        let coefs: Vec<Vec<f64>> = (0..nt)
            .map(|t| {
                let mut c: Vec<f64> = rhs[t * nb..(t + 1) * nb].iter().map(|v| v / p_total as f64).collect();
                linalg::forward_substitute(&self.chol, nb, &mut c);
                linalg::backward_substitute_transposed(&self.chol, nb, &mut c);
                c
            })
            .collect();
        coefs
            .iter()
            .map(|c| {
                let mut fitted = vec![0.0; p_total];
                fitted.par_iter_mut().enumerate().for_each(|(p, f)| {
                    let row = &design[p * nb..(p + 1) * nb];
                    *f = row.iter().zip(c).map(|(a, b)| a * b).sum();
                });
                fitted
            })
            .collect()
    }
}

/// Sums per-chunk accumulators of length `len` in chunk order.
fn chunked_sum<F>(n: usize, len: usize, body: F) -> Vec<f64>
where
    F: Fn(std::ops::Range<usize>, &mut [f64]) + Sync,
{
    let n_chunks = n.div_ceil(CHUNK);
    let partials: Vec<Vec<f64>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![0.0; len];
            body(c * CHUNK..((c + 1) * CHUNK).min(n), &mut acc);
            acc
        })
        .collect();
    let mut total = vec![0.0; len];
    for part in partials {
        for (t, v) in total.iter_mut().zip(part) {
            *t += v;
        }
    }
    total
}

/// Fitted values of `targets` regressed on `features` (row-major
/// `n_paths x n_features`).
pub fn regress_conditional(targets: &[f64], features: &[f64], n_features: usize, basis: &RegressionBasis) -> Result<Vec<f64>> {
    if n_features == 0 || features.len() != targets.len() * n_features {
        return Err(Error::domain("feature matrix does not match the number of targets"));
    }
    let proj = Projector::fit(features, n_features, basis)?;
    let design = proj.design(features);
    Ok(proj.project(&design, &[targets]).remove(0))
}

/// Martingale driver with the filtration of the sampled fBm.
#[derive(Debug, Clone)]
pub struct Driver {
    /// Column-major `n_paths x (n_steps + 1)` levels.
    levels: Array2<f64>,
    variances: Vec<f64>,
    second_moments: Vec<f64>,
}

impl Driver {
    pub fn from_paths(paths: &FbmPathSet) -> Result<Self> {
        let grid = &paths.grid;
        let h = paths.hurst;
        let n = grid.n_steps();
        let l = linalg::cholesky(&fgn_covariance(grid, h), n, 1e-14)?;
        let variances: Vec<f64> = (0..n)
            .map(|i| grid.point(i + 1).powf(h.two_h()) - grid.point(i).powf(h.two_h()))
            .collect();
        let scales: Vec<f64> = variances.iter().map(|v| v.sqrt()).collect();
        let n_paths = paths.n_paths();
        let mut rows = vec![0.0; n_paths * (n + 1)];
        rows.par_chunks_mut(n + 1).enumerate().for_each(|(k, row)| {
            let src = paths.path(k);
            let mut inc: Vec<f64> = src.windows(2).map(|w| w[1] - w[0]).collect();
            linalg::forward_substitute(&l, n, &mut inc);
            for i in 0..n {
                row[i + 1] = row[i] + scales[i] * inc[i];
            }
        });
        let row_major = Array2::from_shape_vec((n_paths, n + 1), rows).expect("shape matches buffer");
        let mut levels = Array2::zeros((n_paths, n + 1).f());
        levels.assign(&row_major);
        let second_moments = (0..n)
            .map(|i| {
                let sq: Vec<f64> = levels.column(i + 1).iter().zip(levels.column(i)).map(|(b, a)| (b - a) * (b - a)).collect();
                pairwise_mean(&sq)
            })
            .collect();
        Ok(Driver {
            levels,
            variances,
            second_moments,
        })
    }

    pub fn n_paths(&self) -> usize {
        self.levels.nrows()
    }

    /// Driver levels at grid index `i`, one per path.
    pub fn level(&self, i: usize) -> &[f64] {
        self.levels.column(i).to_slice().expect("column-major levels")
    }

    /// `Var(M_{t_{i+1}} - M_{t_i})`.
    pub fn increment_variance(&self, i: usize) -> f64 {
        self.variances[i]
    }

    /// Sample mean of `(M_{t_{i+1}} - M_{t_i})²` over the paths.
    pub fn increment_second_moment(&self, i: usize) -> f64 {
        self.second_moments[i]
    }

    pub fn levels(&self) -> &Array2<f64> {
        &self.levels
    }

    /// Row-major feature matrix at grid index `i`.
    pub fn features(&self, i: usize, set: FeatureSet) -> (Vec<f64>, usize) {
        let k = match set {
            FeatureSet::FbmLevel => 0,
            // the first increment equals the level at i = 1
            FeatureSet::FbmLevelPlusIncrements { k } => k.min(i.saturating_sub(1)),
        };
        let nf = 1 + k;
        let n_paths = self.n_paths();
        let mut out = vec![0.0; n_paths * nf];
        let lv: Vec<&[f64]> = (0..=k).map(|j| self.level(i - j)).collect();
        out.par_chunks_mut(nf).enumerate().for_each(|(p, row)| {
            row[0] = lv[0][p];
            for j in 1..=k {
                row[j] = lv[j - 1][p] - lv[j][p];
            }
        });
        (out, nf)
    }
}

/// Nearest-grid-point images of `t ∓ d(t)` for every index in `[0, T]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexMaps {
    pub delay_y: Vec<usize>,
    pub delay_z: Vec<usize>,
    pub anticipate_y: Vec<usize>,
    pub anticipate_z: Vec<usize>,
}

impl IndexMaps {
    pub fn get(&self, shift: Shift) -> &[usize] {
        match shift {
            Shift::DelayY => &self.delay_y,
            Shift::DelayZ => &self.delay_z,
            Shift::AnticipateY => &self.anticipate_y,
            Shift::AnticipateZ => &self.anticipate_z,
        }
    }
}

/// Discretises the four shifts. Delayed times before zero read index 0;
/// ties go to the past for delays and to the future for anticipations.
pub fn make_index_maps(grid: &TimeGrid, delays: &DelayStructure) -> Result<IndexMaps> {
    let n_t = grid.horizon_index();
    let map = |shift: Shift| -> Result<Vec<usize>> {
        (0..=n_t)
            .map(|i| {
                let t = grid.point(i);
                let s = delays.shifted(shift, t, grid);
                let (s, tie) = if shift.is_delay() { (s.max(0.0), Tie::Past) } else { (s, Tie::Future) };
                grid.nearest_index(s, tie).ok_or_else(|| {
                    Error::domain(format!("shifted time {s} for t = {t} lies outside [0, {}]", grid.t_max()))
                })
            })
            .collect()
    };
    Ok(IndexMaps {
        delay_y: map(Shift::DelayY)?,
        delay_z: map(Shift::DelayZ)?,
        anticipate_y: map(Shift::AnticipateY)?,
        anticipate_z: map(Shift::AnticipateZ)?,
    })
}

/// Discrete `(Y, Z)` over paths x grid points, stored column-major so that
/// each time slice is contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionPair {
    pub y: Array2<f64>,
    pub z: Array2<f64>,
    pub grid: TimeGrid,
}

/// Cross-sectional moments of a solution at one grid point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolutionRow {
    pub t: f64,
    pub mean_y: f64,
    pub std_y: f64,
    pub mean_z: f64,
    pub std_z: f64,
}

impl SolutionPair {
    pub fn zeros(n_paths: usize, grid: &TimeGrid) -> Self {
        SolutionPair {
            y: Array2::zeros((n_paths, grid.len()).f()),
            z: Array2::zeros((n_paths, grid.len()).f()),
            grid: grid.clone(),
        }
    }

    pub fn n_paths(&self) -> usize {
        self.y.nrows()
    }

    pub fn y_at(&self, i: usize) -> &[f64] {
        self.y.column(i).to_slice().expect("column-major solution")
    }

    pub fn z_at(&self, i: usize) -> &[f64] {
        self.z.column(i).to_slice().expect("column-major solution")
    }

    fn set_column(target: &mut Array2<f64>, i: usize, values: &[f64]) {
        target.column_mut(i).into_slice().expect("column-major solution").copy_from_slice(values);
    }

    pub fn summary(&self) -> Vec<SolutionRow> {
        let std = |xs: &[f64], m: f64| {
            let sq: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
            pairwise_mean(&sq).sqrt()
        };
        (0..self.grid.len())
            .map(|i| {
                let (y, z) = (self.y_at(i), self.z_at(i));
                let (my, mz) = (pairwise_mean(y), pairwise_mean(z));
                SolutionRow {
                    t: self.grid.point(i),
                    mean_y: my,
                    std_y: std(y, my),
                    mean_z: mz,
                    std_z: std(z, mz),
                }
            })
            .collect()
    }
}

/// `‖Y_a - Y_b‖_β + ‖Z_a - Z_b‖_β` (the `Z` part weighted by `t^{2H-1}`) on
/// `[0, T + K]`.
pub fn pair_distance(a: &SolutionPair, b: &SolutionPair, beta: f64, hurst: Hurst) -> Result<f64> {
    if a.grid != b.grid || a.n_paths() != b.n_paths() {
        return Err(Error::domain("solutions live on different grids"));
    }
    let t_max = a.grid.t_max();
    let dy = &a.y - &b.y;
    let dz = &a.z - &b.z;
    let ny = beta_norm(dy.view(), &a.grid, &BetaNormConfig::new(beta, false, hurst)?, t_max)?;
    let nz = beta_norm(dz.view(), &a.grid, &BetaNormConfig::new(beta, true, hurst)?, t_max)?;
    Ok(ny + nz)
}

/// Per-iteration record of the Picard loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PicardDiagnostics {
    pub iteration_count: usize,
    pub beta: f64,
    /// `d_k = ‖(Y^k - Y^{k-1}, Z^k - Z^{k-1})‖_β`, starting with `k = 1`.
    pub diff_norms: Vec<f64>,
    /// `d_{k+1} / d_k`.
    pub ratios: Vec<f64>,
    pub converged: bool,
    pub tol: f64,
    /// Differences at or below this level are treated as noise.
    pub noise_floor: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub basis: RegressionBasis,
    pub beta: f64,
    /// Stop once `d_k <= tol · d_1`, or at once when `d_1 <= tol`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            basis: RegressionBasis::default(),
            beta: 0.0,
            tol: 1e-6,
            max_iter: 100,
        }
    }
}

/// Everything a sweep needs that does not change between iterations.
pub struct PicardContext {
    spec: ProblemSpec,
    driver: Driver,
    maps: IndexMaps,
    basis: RegressionBasis,
    projectors: Vec<Projector>,
}

impl PicardContext {
    pub fn new(spec: &ProblemSpec, paths: &FbmPathSet, basis: &RegressionBasis) -> Result<Self> {
        if !spec.hurst.is_solver_range() {
            return Err(Error::domain(format!("solver requires 1/2 <= H < 1, got {}", spec.hurst)));
        }
        if paths.grid != spec.grid || paths.hurst != spec.hurst {
            return Err(Error::domain("path set does not match the problem grid and Hurst parameter"));
        }
        basis.check()?;
        let driver = Driver::from_paths(paths)?;
        let maps = make_index_maps(&spec.grid, &spec.delays)?;
        let projectors = (0..spec.grid.horizon_index())
            .map(|i| {
                let (x, nf) = driver.features(i, basis.features);
                Projector::fit(&x, nf, basis)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PicardContext {
            spec: spec.clone(),
            driver,
            maps,
            basis: *basis,
            projectors,
        })
    }

    pub fn driver(&self) -> &Driver {
        &self.driver
    }

    pub fn maps(&self) -> &IndexMaps {
        &self.maps
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn basis(&self) -> &RegressionBasis {
        &self.basis
    }

    fn pin_terminal(&self, sol: &mut SolutionPair) {
        let grid = &self.spec.grid;
        for i in grid.horizon_index()..grid.len() {
            let t = grid.point(i);
            let level = self.driver.level(i);
            let xi: Vec<f64> = level.iter().map(|&b| self.spec.terminal.xi_at(t, b)).collect();
            let eta: Vec<f64> = level.iter().map(|&b| self.spec.terminal.eta_at(t, b)).collect();
            SolutionPair::set_column(&mut sol.y, i, &xi);
            SolutionPair::set_column(&mut sol.z, i, &eta);
        }
    }

    /// `y⁰ = ξ_T` extended backward as a constant along each path, `z⁰ = 0`,
    /// with the terminal region pinned.
    pub fn initial_guess(&self) -> SolutionPair {
        let grid = &self.spec.grid;
        let mut sol = SolutionPair::zeros(self.driver.n_paths(), grid);
        self.pin_terminal(&mut sol);
        let n_t = grid.horizon_index();
        let xi_t = sol.y_at(n_t).to_vec();
        for i in 0..n_t {
            SolutionPair::set_column(&mut sol.y, i, &xi_t);
        }
        sol
    }

    /// One application of `Γ`: every generator argument is read from `prev`
    /// except the delayed and anticipated ones, which come from `lagged`.
    pub fn sweep(&self, prev: &SolutionPair, lagged: &SolutionPair) -> Result<SolutionPair> {
        let grid = &self.spec.grid;
        let n_paths = self.driver.n_paths();
        if prev.n_paths() != n_paths || lagged.n_paths() != n_paths {
            return Err(Error::domain("solution has a different number of paths than the driver"));
        }
        let dt = grid.dt();
        let mut next = SolutionPair::zeros(n_paths, grid);
        self.pin_terminal(&mut next);
        let gen = &self.spec.generator;

        for i in (0..grid.horizon_index()).rev() {
            let proj = &self.projectors[i];
            let (x, _) = self.driver.features(i, self.basis.features);
            let design = proj.design(&x);
            let i1 = self.maps.delay_y[i];
            let i2 = self.maps.delay_z[i];
            let i3 = self.maps.anticipate_y[i];
            let i4 = self.maps.anticipate_z[i];

            let y_next = next.y_at(i + 1);
            let mut targets: Vec<&[f64]> = vec![y_next];
            if i3 != i {
                targets.push(lagged.y_at(i3));
            }
            if i4 != i {
                targets.push(lagged.z_at(i4));
            }
            let mut fitted = proj.project(&design, &targets).into_iter();
            let cond_y = fitted.next().expect("first target");
            let phi = if i3 != i { fitted.next().expect("phi target") } else { lagged.y_at(i).to_vec() };
            let psi = if i4 != i { fitted.next().expect("psi target") } else { lagged.z_at(i).to_vec() };

            let lvl_now = self.driver.level(i);
            let lvl_next = self.driver.level(i + 1);
            let resid: Vec<f64> = (0..n_paths)
                .map(|p| (y_next[p] - cond_y[p]) * (lvl_next[p] - lvl_now[p]))
                .collect();
            let var = self.driver.increment_second_moment(i);
            let z_new: Vec<f64> = proj.project(&design, &[&resid]).remove(0).into_iter().map(|v| v / var).collect();

            let t = grid.point(i);
            let (u_col, v_col) = (lagged.y_at(i1), lagged.z_at(i2));
            let (y_col, z_col) = (prev.y_at(i), prev.z_at(i));
            let y_new: Vec<f64> = (0..n_paths)
                .into_par_iter()
                .map(|p| {
                    let args = GeneratorArgs {
                        u: u_col[p],
                        v: v_col[p],
                        y: y_col[p],
                        z: z_col[p],
                        phi: phi[p],
                        psi: psi[p],
                    };
                    let f = gen.eval(t, &args);
                    if f.is_finite() {
                        Ok(cond_y[p] + f * dt)
                    } else {
                        Err(Error::Solver {
                            index: i,
                            path: p,
                            message: format!("generator returned {f} for {args:?}"),
                        })
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            SolutionPair::set_column(&mut next.y, i, &y_new);
            SolutionPair::set_column(&mut next.z, i, &z_new);
        }
        Ok(next)
    }

    /// Picard iteration from [`initial_guess`](Self::initial_guess). With
    /// `lagged = None` the delayed and anticipated arguments track the
    /// iterate itself; otherwise they stay frozen at `lagged`.
    pub fn solve(&self, cfg: &SolveConfig, lagged: Option<&SolutionPair>) -> Result<(SolutionPair, PicardDiagnostics)> {
        if cfg.max_iter == 0 {
            return Err(Error::domain("max_iter must be positive"));
        }
        if !(cfg.tol > 0.0) {
            return Err(Error::domain(format!("tol must be positive, got {}", cfg.tol)));
        }
        let hurst = self.spec.hurst;
        let mut current = self.initial_guess();
        let mut diag = PicardDiagnostics {
            iteration_count: 0,
            beta: cfg.beta,
            diff_norms: Vec::new(),
            ratios: Vec::new(),
            converged: false,
            tol: cfg.tol,
            noise_floor: 0.0,
        };
        let mut scale = 0.0;
        for k in 1..=cfg.max_iter {
            let next = self.sweep(&current, lagged.unwrap_or(&current))?;
            let d = pair_distance(&next, &current, cfg.beta, hurst)?;
            if !d.is_finite() {
                return Err(Error::Solver {
                    index: 0,
                    path: 0,
                    message: format!("difference norm became {d} at iteration {k}"),
                });
            }
            if k == 1 {
                scale = d;
                diag.noise_floor = 10.0 * cfg.tol * d;
            } else if let Some(&last) = diag.diff_norms.last() {
                diag.ratios.push(if last > 0.0 { d / last } else { 0.0 });
            }
            diag.diff_norms.push(d);
            diag.iteration_count = k;
            current = next;
            log::debug!("picard iteration {k}: d = {d:.3e}");
            // a first sweep that barely moves means the guess is already the fixed point
            if d <= cfg.tol * scale || (k == 1 && d <= cfg.tol) {
                diag.converged = true;
                break;
            }
        }
        if !diag.converged {
            let n = diag.diff_norms.len();
            let stalled = n >= 2 && diag.diff_norms[n - 1] >= diag.diff_norms[n - 2];
            if stalled && diag.diff_norms[n - 1] > diag.noise_floor {
                return Err(Error::NonConvergence(Box::new(diag)));
            }
            log::warn!("picard iteration stopped at max_iter = {} without meeting tol", cfg.max_iter);
        }
        Ok((current, diag))
    }
}

/// One application of `Γ` to `prev`.
pub fn picard_step(prev: &SolutionPair, spec: &ProblemSpec, paths: &FbmPathSet, basis: &RegressionBasis) -> Result<SolutionPair> {
    PicardContext::new(spec, paths, basis)?.sweep(prev, prev)
}

/// Solves the problem on the given paths.
pub fn solve(spec: &ProblemSpec, paths: &FbmPathSet, cfg: &SolveConfig) -> Result<(SolutionPair, PicardDiagnostics)> {
    PicardContext::new(spec, paths, &cfg.basis)?.solve(cfg, None)
}

/// Ratios checked against `1/√2 + slack`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionSummary {
    pub ratios: Vec<f64>,
    pub bound: f64,
    pub noise_floor: f64,
    /// Ratios whose numerator lies above the noise floor.
    pub checked: usize,
    /// Indices into `ratios` exceeding the bound.
    pub exceeding: Vec<usize>,
}

impl ContractionSummary {
    pub fn holds(&self) -> bool {
        self.exceeding.is_empty()
    }
}

pub fn contraction_ratio(diag: &PicardDiagnostics) -> ContractionSummary {
    let bound = std::f64::consts::FRAC_1_SQRT_2 + CONTRACTION_SLACK;
    let mut checked = 0;
    let mut exceeding = Vec::new();
    for (k, r) in diag.ratios.iter().enumerate() {
        let numerator = diag.diff_norms[k + 1];
        if numerator <= diag.noise_floor {
            continue;
        }
        checked += 1;
        if *r > bound {
            exceeding.push(k);
        }
    }
    ContractionSummary {
        ratios: diag.ratios.clone(),
        bound,
        noise_floor: diag.noise_floor,
        checked,
        exceeding,
    }
}

/// Deterministic sum used by tests and callers that need reproducible means.
pub fn path_mean(xs: &[f64]) -> f64 {
    pairwise_sum(xs) / xs.len() as f64
}
