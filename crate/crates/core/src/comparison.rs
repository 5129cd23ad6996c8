//! Comparison harness: forward processes, the monotone outer iteration and
//! ordering checks between two solutions.

use std::fmt;
use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbm::{FbmPathSet, Hurst, TimeGrid};
use crate::frcalc::{beta_norm, BetaNormConfig};
use crate::problem::{DelayStructure, GeneratorSpec, LinearCoefficients, ProblemSpec, TerminalData};
use crate::solver::{PicardContext, PicardDiagnostics, SolutionPair, SolveConfig};
use crate::stats::moments;

/// `η_t = η_0 + ∫ b ds + ∫ σ dB^H` sampled along each path.
#[derive(Debug, Clone)]
pub struct ForwardProcess {
    pub eta0: f64,
    /// Row-major `n_paths x (n_steps + 1)`.
    pub values: Array2<f64>,
    pub grid: TimeGrid,
}

/// Euler construction `η_{i+1} = η_i + b(t_i)Δ + σ(t_i)ΔB_i` on real fBm paths.
pub fn forward_process(eta0: f64, b: impl Fn(f64) -> f64, sigma: impl Fn(f64) -> f64, paths: &FbmPathSet) -> Result<ForwardProcess> {
    let grid = &paths.grid;
    let bs = grid.sample_fn(&b);
    let ss = grid.sample_fn(&sigma);
    if let Some((i, s)) = ss.iter().enumerate().find(|(_, s)| !(**s > 0.0)) {
        return Err(Error::validation(format!("sigma must be positive, got {s} at t = {}", grid.point(i))));
    }
    let dt = grid.dt();
    let n = grid.n_steps();
    let mut values = Array2::zeros((paths.n_paths(), n + 1));
    for (k, mut row) in values.rows_mut().into_iter().enumerate() {
        let path = paths.path(k);
        row[0] = eta0;
        for i in 0..n {
            row[i + 1] = row[i] + bs[i] * dt + ss[i] * (path[i + 1] - path[i]);
        }
    }
    Ok(ForwardProcess {
        eta0,
        values,
        grid: grid.clone(),
    })
}

pub type ReducedFn = Arc<dyn Fn(f64, f64, f64, f64, f64) -> f64 + Send + Sync>;

/// Generator `f(t, u, y, z, φ)`: no dependence on the delayed or anticipated
/// `z`.
#[derive(Clone)]
pub struct ReducedGenerator {
    f: ReducedFn,
    pub lipschitz_c: f64,
    pub label: String,
}

impl fmt::Debug for ReducedGenerator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ReducedGenerator").field("label", &self.label).field("lipschitz_c", &self.lipschitz_c).finish()
    }
}

impl ReducedGenerator {
    pub fn new(label: impl Into<String>, lipschitz_c: f64, f: impl Fn(f64, f64, f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        ReducedGenerator {
            f: Arc::new(f),
            lipschitz_c,
            label: label.into(),
        }
    }

    /// Affine reduced generator; rejects nonzero `v` or `ψ` coefficients.
    pub fn linear(c: LinearCoefficients, lipschitz_c: Option<f64>) -> Result<Self> {
        if c.v != 0.0 || c.psi != 0.0 {
            return Err(Error::validation(
                "comparison generators take (t, u, y, z, phi) only; v and psi coefficients must be zero",
            ));
        }
        let declared = lipschitz_c.unwrap_or_else(|| c.natural_lipschitz());
        Ok(ReducedGenerator::new("linear", declared, move |_, u, y, z, phi| {
            c.eval(&crate::problem::GeneratorArgs { u, v: 0.0, y, z, phi, psi: 0.0 })
        }))
    }

    #[inline]
    pub fn eval(&self, t: f64, u: f64, y: f64, z: f64, phi: f64) -> f64 {
        (self.f)(t, u, y, z, phi)
    }

    pub fn to_spec(&self) -> GeneratorSpec {
        let f = self.f.clone();
        GeneratorSpec::new(self.label.clone(), self.lipschitz_c, move |t, a| f(t, a.u, a.y, a.z, a.phi))
    }
}

/// Two problems sharing grid, Hurst parameter and delays.
#[derive(Debug, Clone)]
pub struct ComparisonPair {
    pub spec1: ProblemSpec,
    pub spec2: ProblemSpec,
    pub f1: ReducedGenerator,
    pub f2: ReducedGenerator,
    pub monotonicity_declared: bool,
}

impl ComparisonPair {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        grid: TimeGrid,
        hurst: Hurst,
        delays: DelayStructure,
        f1: ReducedGenerator,
        terminal1: TerminalData,
        f2: ReducedGenerator,
        terminal2: TerminalData,
    ) -> Result<Self> {
        if !delays.d2.is_zero() || !delays.d4.is_zero() {
            return Err(Error::validation("comparison problems carry no z-delay d2 or z-anticipation d4"));
        }
        let spec1 = ProblemSpec::new(grid.clone(), hurst, delays.clone(), f1.to_spec(), terminal1);
        let spec2 = ProblemSpec::new(grid, hurst, delays, f2.to_spec(), terminal2);
        Ok(ComparisonPair {
            spec1,
            spec2,
            f1,
            f2,
            monotonicity_declared: true,
        })
    }
}

/// `β = 16MC²(2L+1) + 4/M`, `M > 2`.
pub fn comparison_beta(c: f64, l: f64, m_const: f64) -> Result<f64> {
    if !(m_const > 2.0) {
        return Err(Error::domain(format!("comparison constant M must exceed 2, got {m_const}")));
    }
    Ok(16.0 * m_const * c * c * (2.0 * l + 1.0) + 4.0 / m_const)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OuterConfig {
    pub n_outer: usize,
    pub tol_outer: f64,
    /// `β` of the norm measuring outer differences of `Y`.
    pub beta: f64,
}

impl Default for OuterConfig {
    fn default() -> Self {
        OuterConfig {
            n_outer: 12,
            tol_outer: 1e-3,
            beta: 0.0,
        }
    }
}

/// `Y⁽¹⁾` followed by the outer iterates `Y⁽³⁾, Y⁽⁴⁾, …`.
#[derive(Debug, Clone)]
pub struct MonotoneChain {
    pub iterates: Vec<SolutionPair>,
    /// `‖Y⁽ⁿ⁾ - Y⁽ⁿ⁻¹⁾‖_β` for consecutive entries of `iterates`.
    pub outer_diffs: Vec<f64>,
    pub inner: Vec<PicardDiagnostics>,
    pub converged: bool,
}

impl MonotoneChain {
    pub fn first(&self) -> &SolutionPair {
        &self.iterates[0]
    }

    pub fn last(&self) -> &SolutionPair {
        self.iterates.last().expect("chain is never empty")
    }

    /// `outer_diffs[k+1] / outer_diffs[k]`.
    pub fn decay_ratios(&self) -> Vec<f64> {
        self.outer_diffs
            .windows(2)
            .map(|w| if w[0] > 0.0 { w[1] / w[0] } else { 0.0 })
            .collect()
    }
}

fn y_distance(a: &SolutionPair, b: &SolutionPair, beta: f64, hurst: Hurst) -> Result<f64> {
    let d = &a.y - &b.y;
    beta_norm(d.view(), &a.grid, &BetaNormConfig::new(beta, false, hurst)?, a.grid.t_max())
}

/// Solves problem 1, then repeatedly solves problem 2 with its delayed and
/// anticipated arguments frozen at the previous outer iterate.
pub fn monotone_iterate(pair: &ComparisonPair, paths: &FbmPathSet, cfg: &SolveConfig, outer: &OuterConfig) -> Result<MonotoneChain> {
    let hurst = pair.spec1.hurst;
    let ctx1 = PicardContext::new(&pair.spec1, paths, &cfg.basis)?;
    let (y1, d1) = ctx1.solve(cfg, None).map_err(|e| Error::Outer { outer: 1, source: Box::new(e) })?;
    let ctx2 = PicardContext::new(&pair.spec2, paths, &cfg.basis)?;
    let mut chain = MonotoneChain {
        iterates: vec![y1],
        outer_diffs: Vec::new(),
        inner: vec![d1],
        converged: false,
    };
    for n in 0..outer.n_outer {
        let label = n + 3;
        let lagged = chain.last();
        let (next, diag) = ctx2
            .solve(cfg, Some(lagged))
            .map_err(|e| Error::Outer { outer: label, source: Box::new(e) })?;
        let d = y_distance(&next, lagged, outer.beta, hurst)?;
        log::debug!("outer iterate {label}: difference {d:.3e}");
        chain.outer_diffs.push(d);
        chain.inner.push(diag);
        chain.iterates.push(next);
        if n > 0 && d < outer.tol_outer {
            chain.converged = true;
            break;
        }
    }
    Ok(chain)
}

/// Pointwise comparison of `a.y` against `b.y` on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderingReport {
    pub violation_fraction: f64,
    /// Largest `a.y - b.y`; nonpositive when `a` lies below `b` everywhere.
    pub max_violation: f64,
    pub tolerance: f64,
}

/// `n_se` Monte-Carlo standard errors of the pathwise gap `b.y - a.y`,
/// maximised over the grid points of `[0, T]`.
pub fn gap_tolerance(a: &SolutionPair, b: &SolutionPair, n_se: f64) -> Result<f64> {
    if a.grid != b.grid || a.n_paths() != b.n_paths() {
        return Err(Error::domain("gap tolerance needs solutions on the same grid and paths"));
    }
    let n = a.n_paths() as f64;
    Ok((0..=a.grid.horizon_index())
        .map(|i| {
            let gap: Vec<f64> = b.y_at(i).iter().zip(a.y_at(i)).map(|(yb, ya)| yb - ya).collect();
            n_se * moments(&gap).variance.sqrt() / n.sqrt()
        })
        .fold(0.0, f64::max))
}

pub fn check_ordering(a: &SolutionPair, b: &SolutionPair, tol: f64) -> Result<OrderingReport> {
    if a.grid != b.grid || a.n_paths() != b.n_paths() {
        return Err(Error::domain("ordering check needs solutions on the same grid and paths"));
    }
    let n_t = a.grid.horizon_index();
    let mut violations = 0usize;
    let mut max_excess = f64::NEG_INFINITY;
    for i in 0..=n_t {
        for (ya, yb) in a.y_at(i).iter().zip(b.y_at(i)) {
            let excess = ya - yb;
            max_excess = max_excess.max(excess);
            if excess > tol {
                violations += 1;
            }
        }
    }
    Ok(OrderingReport {
        violation_fraction: violations as f64 / ((n_t + 1) * a.n_paths()) as f64,
        max_violation: max_excess,
        tolerance: tol,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub samples: usize,
    pub passed: Vec<String>,
}

/// Spot-checks the comparison hypotheses: `f2` nondecreasing in `u` and `φ`,
/// `ξ⁽¹⁾ ≤ ξ⁽²⁾` on `[T, T + K]`, and `f1 ≤ f2`. Fails on the first
/// counterexample, which is reported in the error.
pub fn verify_hypotheses(pair: &ComparisonPair, n_samples: usize, seed: u64) -> Result<HypothesisReport> {
    if n_samples == 0 {
        return Err(Error::domain("verify_hypotheses needs at least one sample"));
    }
    let grid = &pair.spec1.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tol = 1e-12;
    let normal = |rng: &mut ChaCha8Rng| -> f64 { 2.0 * rng.sample::<f64, _>(StandardNormal) };
    let draw = |rng: &mut ChaCha8Rng| {
        let t = grid.horizon() * rng.random::<f64>();
        (t, normal(rng), normal(rng), normal(rng), normal(rng))
    };

    for _ in 0..n_samples {
        let (t, u, y, z, phi) = draw(&mut rng);
        let du = normal(&mut rng).abs();
        let base = pair.f2.eval(t, u, y, z, phi);
        let up = pair.f2.eval(t, u + du, y, z, phi);
        if up < base - tol {
            return Err(Error::validation(format!(
                "(i) f2 decreases in u: f2(t={t:.4}, u={u:.4}, y={y:.4}, z={z:.4}, phi={phi:.4}) = {base:.6} > f2 at u={:.4}: {up:.6}",
                u + du
            )));
        }
        let up = pair.f2.eval(t, u, y, z, phi + du);
        if up < base - tol {
            return Err(Error::validation(format!(
                "(i) f2 decreases in phi: f2(t={t:.4}, u={u:.4}, y={y:.4}, z={z:.4}, phi={phi:.4}) = {base:.6} > f2 at phi={:.4}: {up:.6}",
                phi + du
            )));
        }
    }

    let (term1, term2) = (&pair.spec1.terminal, &pair.spec2.terminal);
    let h = pair.spec1.hurst.value();
    for i in grid.horizon_index()..grid.len() {
        let t = grid.point(i);
        let sd = t.powf(h);
        for _ in 0..n_samples.div_ceil(grid.len() - grid.horizon_index()).max(8) {
            let level = sd * normal(&mut rng);
            let (a, b) = (term1.xi_at(t, level), term2.xi_at(t, level));
            if !(a <= b + tol) {
                return Err(Error::validation(format!(
                    "(ii) terminal ordering fails at t={t:.4}, level={level:.4}: xi1 = {a:.6} > xi2 = {b:.6}"
                )));
            }
        }
    }

    for _ in 0..n_samples {
        let (t, u, y, z, phi) = draw(&mut rng);
        let (a, b) = (pair.f1.eval(t, u, y, z, phi), pair.f2.eval(t, u, y, z, phi));
        if !(a <= b + tol) {
            return Err(Error::validation(format!(
                "(iii) f1 > f2 at t={t:.4}, u={u:.4}, y={y:.4}, z={z:.4}, phi={phi:.4}: {a:.6} > {b:.6}"
            )));
        }
    }

    Ok(HypothesisReport {
        samples: n_samples,
        passed: vec![
            "f2 nondecreasing in u and phi".to_string(),
            "xi1 <= xi2 on [T, T+K]".to_string(),
            "f1 <= f2".to_string(),
        ],
    })
}
