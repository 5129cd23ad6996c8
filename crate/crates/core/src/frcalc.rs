//! Fractional calculus numerics on a uniform grid.
//!
//! The kernel is `φ(x) = H(2H-1)|x|^{2H-2}`, normalised so that
//! `∫₀ᵗ∫₀ᵗ φ(u-v) du dv = t^{2H} = Var(B_t)`. Its singular diagonal is never
//! evaluated pointwise: every double integral is taken exactly cell by cell,
//! where the integral over a pair of cells equals the fGn autocovariance at
//! their lag, with integrands held at their cell-average value.

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbm::{fgn_autocovariance, Hurst, TimeGrid};
use crate::linalg::pairwise_mean;

/// The kernel `φ(x) = H(2H-1)|x|^{2H-2}`, singular at zero.
pub fn phi(x: f64, h: Hurst) -> Result<f64> {
    if x == 0.0 {
        return Err(Error::domain("phi is singular at x = 0; use the cell-exact quadrature"));
    }
    let hv = h.value();
    Ok(hv * (2.0 * hv - 1.0) * x.abs().powf(2.0 * hv - 2.0))
}

/// Odd antiderivative `Φ(x) = H sign(x) |x|^{2H-1}` of `φ`, so that
/// `∫_a^b φ(u - t) du = Φ(b - t) - Φ(a - t)` even across `u = t`.
pub fn phi_antiderivative(x: f64, h: Hurst) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    let hv = h.value();
    x.signum() * hv * x.abs().powf(2.0 * hv - 1.0)
}

/// `W[k] = ∫∫ φ(u-v)` over two cells `k` apart, `k = 0..=n_steps`.
pub fn cell_weights(grid: &TimeGrid, h: Hurst) -> Vec<f64> {
    (0..=grid.n_steps()).map(|k| fgn_autocovariance(k, grid.dt(), h)).collect()
}

fn cell_averages(values: &[f64], cells: usize) -> Vec<f64> {
    values[..=cells].windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
}

fn check_len(values: &[f64], grid: &TimeGrid) -> Result<()> {
    if values.len() != grid.len() {
        return Err(Error::domain(format!(
            "integrand has {} values, grid has {} points",
            values.len(),
            grid.len()
        )));
    }
    Ok(())
}

/// `⟨ξ, η⟩_t = ∫₀ᵗ∫₀ᵗ φ(u-v) ξ_u η_v du dv` for integrands sampled on the grid.
pub fn inner_product(xi: &[f64], eta: &[f64], grid: &TimeGrid, h: Hurst, t: f64) -> Result<f64> {
    check_len(xi, grid)?;
    check_len(eta, grid)?;
    let cells = grid.index_of(t)?;
    let w = cell_weights(grid, h);
    let a = cell_averages(xi, cells);
    let b = cell_averages(eta, cells);
    let mut total = 0.0;
    for (i, ai) in a.iter().enumerate() {
        if *ai == 0.0 {
            continue;
        }
        let row: f64 = b.iter().enumerate().map(|(j, bj)| w[i.abs_diff(j)] * bj).sum();
        total += ai * row;
    }
    Ok(total)
}

/// [`inner_product`] for integrands given as functions of time.
pub fn inner_product_fn(
    xi: impl Fn(f64) -> f64,
    eta: impl Fn(f64) -> f64,
    grid: &TimeGrid,
    h: Hurst,
    t: f64,
) -> Result<f64> {
    inner_product(&grid.sample_fn(xi), &grid.sample_fn(eta), grid, h, t)
}

/// Forward Riemann sum `Σ f(t_i)(B_{t_{i+1}} - B_{t_i})` over `[0, T]`.
///
/// For deterministic integrands this is the Wiener integral, where the
/// divergence and pathwise integrals agree.
pub fn wiener_integral(integrand: &[f64], path: &[f64], grid: &TimeGrid) -> f64 {
    let n_t = grid.horizon_index();
    (0..n_t).map(|i| integrand[i] * (path[i + 1] - path[i])).sum()
}

/// `𝔻_t^H F` for `F = ∫₀^s g dB^H` with deterministic `g`, namely
/// `∫₀^s φ(t-u) g(u) du`, integrated exactly per cell with `g` at its cell
/// average.
pub fn dh_derivative_deterministic(g: &[f64], grid: &TimeGrid, h: Hurst, t: f64, s: f64) -> Result<f64> {
    check_len(g, grid)?;
    grid.index_of(t)?;
    let cells = grid.index_of(s)?;
    Ok(dh_derivative_cells(g, grid, h, t, cells))
}

fn dh_derivative_cells(g: &[f64], grid: &TimeGrid, h: Hurst, t: f64, cells: usize) -> f64 {
    let mut lower = phi_antiderivative(-t, h);
    let mut acc = 0.0;
    for j in 0..cells {
        let upper = phi_antiderivative(grid.point(j + 1) - t, h);
        acc += 0.5 * (g[j] + g[j + 1]) * (upper - lower);
        lower = upper;
    }
    acc
}

/// Pathwise residual of the product rule for `Y_k(t) = ∫₀ᵗ f_k ds + ∫₀ᵗ g_k dB^H`
/// with deterministic `f_k`, `g_k`, evaluated at `t = T`.
///
/// `Y_k` is built by forward Euler. Time and stochastic integrals of `Y_k`
/// use its cell average, and each stochastic integral is turned into a
/// divergence integral by subtracting the exact Wick trace of the cell. The
/// `𝔻^H Y_k(s)` terms come from [`dh_derivative_deterministic`] with a left
/// Riemann sum in `s`. The residual therefore isolates the discretisation
/// error of the `𝔻^H` correction and vanishes under refinement.
#[allow(clippy::too_many_arguments)]
pub fn product_formula_residual(
    f1: &[f64],
    g1: &[f64],
    f2: &[f64],
    g2: &[f64],
    path: &[f64],
    grid: &TimeGrid,
    h: Hurst,
) -> Result<f64> {
    for v in [f1, g1, f2, g2, path] {
        check_len(v, grid)?;
    }
    let n_t = grid.horizon_index();
    let dt = grid.dt();
    let w = cell_weights(grid, h);

    let build = |f: &[f64], g: &[f64]| {
        let mut y = vec![0.0; n_t + 1];
        for j in 0..n_t {
            y[j + 1] = y[j] + f[j] * dt + g[j] * (path[j + 1] - path[j]);
        }
        y
    };
    let y1 = build(f1, g1);
    let y2 = build(f2, g2);
    // <D Ȳ_j, 1_{cell j}> for cell-average Ȳ_j
    let trace = |g: &[f64], j: usize| -> f64 {
        let past: f64 = (0..j).map(|l| g[l] * w[j - l]).sum();
        past + 0.5 * g[j] * w[0]
    };

    let lhs = y1[n_t] * y2[n_t];
    let mut rhs = 0.0;
    for j in 0..n_t {
        let db = path[j + 1] - path[j];
        let y1_bar = 0.5 * (y1[j] + y1[j + 1]);
        let y2_bar = 0.5 * (y2[j] + y2[j + 1]);
        rhs += y1_bar * f2[j] * dt + y2_bar * f1[j] * dt;
        rhs += g2[j] * (y1_bar * db - trace(g1, j));
        rhs += g1[j] * (y2_bar * db - trace(g2, j));
        let tj = grid.point(j);
        let d1 = dh_derivative_cells(g1, grid, h, tj, j);
        let d2 = dh_derivative_cells(g2, grid, h, tj, j);
        rhs += (d1 * g2[j] + d2 * g1[j]) * dt;
    }
    Ok(lhs - rhs)
}

/// Parameters of the exponentially weighted norm
/// `‖φ‖_β = (E ∫ e^{βt} w(t) |φ_t|² dt)^{1/2}`, `w(t) = t^{2H-1}` if weighted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaNormConfig {
    pub beta: f64,
    pub weighted: bool,
    pub hurst: Hurst,
}

impl BetaNormConfig {
    pub fn new(beta: f64, weighted: bool, hurst: Hurst) -> Result<Self> {
        if !(beta >= 0.0) {
            return Err(Error::domain(format!("beta must be nonnegative, got {beta}")));
        }
        Ok(BetaNormConfig { beta, weighted, hurst })
    }

    /// Trapezoid weights times `e^{βt}` (and `t^{2H-1}`) on `[0, t_upto]`.
    pub(crate) fn quadrature_weights(&self, grid: &TimeGrid, upto: usize) -> Vec<f64> {
        let dt = grid.dt();
        let exponent = 2.0 * self.hurst.value() - 1.0;
        (0..=upto)
            .map(|i| {
                let t = grid.point(i);
                let trap = if i == 0 || i == upto { 0.5 * dt } else { dt };
                let w = if self.weighted { t.powf(exponent) } else { 1.0 };
                trap * (self.beta * t).exp() * w
            })
            .collect()
    }
}

/// `‖p‖_β` on `[0, upto]` for a process stored as paths x grid points: the
/// trapezoid rule in time, then a fixed-order Monte-Carlo mean over paths.
pub fn beta_norm(values: ArrayView2<'_, f64>, grid: &TimeGrid, cfg: &BetaNormConfig, upto: f64) -> Result<f64> {
    if values.ncols() != grid.len() {
        return Err(Error::domain("process shape does not match grid"));
    }
    let last = grid.index_of(upto)?;
    let weights = cfg.quadrature_weights(grid, last);
    let per_path: Vec<f64> = values
        .rows()
        .into_iter()
        .map(|row| weights.iter().enumerate().map(|(i, w)| w * row[i] * row[i]).sum())
        .collect();
    Ok(pairwise_mean(&per_path).sqrt())
}

/// Two-sided band `(t^{2H-1}/M, M t^{2H-1})` bounding `𝔻_t^H Y_t / Z_t`.
pub fn dh_weight(t: f64, h: Hurst, m_const: f64) -> Result<(f64, f64)> {
    if t < 0.0 {
        return Err(Error::domain(format!("dh_weight needs t >= 0, got {t}")));
    }
    if !(m_const >= 1.0) {
        return Err(Error::domain(format!("M must be at least 1, got {m_const}")));
    }
    if t == 0.0 {
        return Ok((0.0, 0.0));
    }
    let base = t.powf(2.0 * h.value() - 1.0);
    Ok((base / m_const, m_const * base))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn h(v: f64) -> Hurst {
        Hurst::new(v).unwrap()
    }

    #[test]
    fn phi_values_and_symmetry() {
        assert!((phi(1.0, h(0.75)).unwrap() - 0.375).abs() < 1e-15);
        assert_eq!(phi(-2.0, h(0.75)).unwrap(), phi(2.0, h(0.75)).unwrap());
        assert!(phi(0.3, h(0.6)).unwrap() > 0.0);
        assert!(matches!(phi(0.0, h(0.7)), Err(Error::Domain(_))));
    }

    #[test]
    fn antiderivative_differentiates_to_phi() {
        let hh = h(0.7);
        for x in [-1.3, -0.2, 0.4, 2.0] {
            let eps = 1e-6;
            let fd = (phi_antiderivative(x + eps, hh) - phi_antiderivative(x - eps, hh)) / (2.0 * eps);
            assert!((fd - phi(x, hh).unwrap()).abs() < 1e-6);
        }
    }

    #[test]
    fn unit_inner_product_is_variance() {
        let g = TimeGrid::uniform(1.0, 50).unwrap();
        let ones = vec![1.0; g.len()];
        let ip = inner_product(&ones, &ones, &g, h(0.7), 1.0).unwrap();
        assert!((ip - 1.0).abs() < 1e-12);
        let ip = inner_product(&ones, &ones, &g, h(0.75), 0.5).unwrap();
        assert!((ip - 0.5f64.powf(1.5)).abs() < 1e-12);
    }

    #[test]
    fn inner_product_zero_and_off_grid() {
        let g = TimeGrid::uniform(1.0, 10).unwrap();
        let zero = vec![0.0; g.len()];
        let x = g.sample_fn(|t| t.sin());
        assert_eq!(inner_product(&zero, &x, &g, h(0.7), 1.0).unwrap(), 0.0);
        assert!(matches!(inner_product(&x, &x, &g, h(0.7), 0.33), Err(Error::Domain(_))));
    }

    #[test]
    fn dh_derivative_constant_integrand() {
        let g = TimeGrid::uniform(1.0, 64).unwrap();
        let ones = vec![1.0; g.len()];
        // ∫₀¹ φ(1-u) du = H
        let d = dh_derivative_deterministic(&ones, &g, h(0.75), 1.0, 1.0).unwrap();
        assert!((d - 0.75).abs() < 1e-12);
        let zero = vec![0.0; g.len()];
        assert_eq!(dh_derivative_deterministic(&zero, &g, h(0.75), 1.0, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn beta_norm_examples() {
        let g = TimeGrid::new(1.0, 0.5, 300).unwrap();
        let hh = h(0.75);
        let ones = Array2::from_elem((3, g.len()), 1.0);
        let cfg = BetaNormConfig::new(0.0, false, hh).unwrap();
        assert!((beta_norm(ones.view(), &g, &cfg, 1.5).unwrap() - 1.5f64.sqrt()).abs() < 1e-12);
        let zeros = Array2::zeros((3, g.len()));
        assert_eq!(beta_norm(zeros.view(), &g, &cfg, 1.5).unwrap(), 0.0);
        let cfg_w = BetaNormConfig::new(0.0, true, hh).unwrap();
        let v = beta_norm(ones.view(), &g, &cfg_w, 1.0).unwrap();
        assert!((v - (2.0f64 / 3.0).sqrt()).abs() < 1e-3, "{v}");
        assert!(BetaNormConfig::new(-1.0, false, hh).is_err());
    }

    #[test]
    fn dh_weight_band() {
        assert_eq!(dh_weight(1.0, h(0.75), 2.0).unwrap(), (0.5, 2.0));
        assert_eq!(dh_weight(0.0, h(0.75), 2.0).unwrap(), (0.0, 0.0));
        assert!(dh_weight(-1.0, h(0.75), 2.0).is_err());
        assert!(dh_weight(1.0, h(0.75), 0.5).is_err());
        let hh = h(0.7);
        let (l1, u1) = dh_weight(1.0, hh, 3.0).unwrap();
        for t in [0.25f64, 0.5] {
            let (l, u) = dh_weight(t, hh, 3.0).unwrap();
            assert!(l <= u);
            assert!((l / l1 - t.powf(0.4)).abs() < 1e-12);
            assert!((u / u1 - t.powf(0.4)).abs() < 1e-12);
        }
    }

    #[test]
    fn wiener_integral_telescopes() {
        let g = TimeGrid::uniform(1.0, 8).unwrap();
        let path: Vec<f64> = (0..9).map(|i| if i == 0 { 0.0 } else { (i as f64).cos() }).collect();
        assert_eq!(wiener_integral(&vec![0.0; 9], &path, &g), 0.0);
        assert!((wiener_integral(&vec![1.0; 9], &path, &g) - path[8]).abs() < 1e-14);
    }

    #[test]
    fn pure_drift_product_rule_is_exact() {
        let g = TimeGrid::uniform(1.0, 40).unwrap();
        let path = vec![0.0; g.len()];
        let f1 = g.sample_fn(|t| 1.0 + t * t);
        let f2 = g.sample_fn(|t| (3.0 * t).cos());
        let zero = vec![0.0; g.len()];
        let r = product_formula_residual(&f1, &zero, &f2, &zero, &path, &g, h(0.7)).unwrap();
        assert!(r.abs() <= 1e-8, "{r}");
    }
}
