//! Problem specification: delay structure, generator and terminal data,
//! together with the grid-level validators run before any solve.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbm::{Hurst, TimeGrid};

/// Midpoint subsamples per cell used to measure pushed-forward mass.
const D2_SUBSAMPLES: usize = 16;

/// A nonnegative lag function on `[0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DelayFn {
    Constant(f64),
    Linear { slope: f64, intercept: f64 },
    /// Values at the grid points of `[0, T]`, linearly interpolated between them.
    Table(Vec<f64>),
}

impl Default for DelayFn {
    fn default() -> Self {
        DelayFn::Constant(0.0)
    }
}

impl DelayFn {
    pub fn eval(&self, t: f64, grid: &TimeGrid) -> f64 {
        match self {
            DelayFn::Constant(c) => *c,
            DelayFn::Linear { slope, intercept } => intercept + slope * t,
            DelayFn::Table(values) => {
                let x = (t / grid.dt()).max(0.0);
                let i = (x.floor() as usize).min(values.len().saturating_sub(1));
                if i + 1 >= values.len() {
                    return values.last().copied().unwrap_or(0.0);
                }
                let w = x - i as f64;
                values[i] * (1.0 - w) + values[i + 1] * w
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            DelayFn::Constant(c) => *c == 0.0,
            DelayFn::Linear { slope, intercept } => *slope == 0.0 && *intercept == 0.0,
            DelayFn::Table(v) => v.iter().all(|x| *x == 0.0),
        }
    }
}

/// Which argument slot a lag feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shift {
    /// `t - d1(t)`, the delayed `y` argument `u`.
    DelayY,
    /// `t - d2(t)`, the delayed `z` argument `v`.
    DelayZ,
    /// `t + d3(t)`, the anticipated `y` argument `φ`.
    AnticipateY,
    /// `t + d4(t)`, the anticipated `z` argument `ψ`.
    AnticipateZ,
}

impl Shift {
    pub const ALL: [Shift; 4] = [Shift::DelayY, Shift::DelayZ, Shift::AnticipateY, Shift::AnticipateZ];

    pub fn is_delay(self) -> bool {
        matches!(self, Shift::DelayY | Shift::DelayZ)
    }

    fn name(self) -> &'static str {
        match self {
            Shift::DelayY => "d1",
            Shift::DelayZ => "d2",
            Shift::AnticipateY => "d3",
            Shift::AnticipateZ => "d4",
        }
    }
}

/// The four lags and the anticipation horizon `K`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DelayStructure {
    pub d1: DelayFn,
    pub d2: DelayFn,
    pub d3: DelayFn,
    pub d4: DelayFn,
    #[serde(rename = "K")]
    pub k: f64,
}

impl DelayStructure {
    pub fn none() -> Self {
        DelayStructure::default()
    }

    pub fn constant(d1: f64, d2: f64, d3: f64, d4: f64, k: f64) -> Self {
        DelayStructure {
            d1: DelayFn::Constant(d1),
            d2: DelayFn::Constant(d2),
            d3: DelayFn::Constant(d3),
            d4: DelayFn::Constant(d4),
            k,
        }
    }

    pub fn lag(&self, shift: Shift) -> &DelayFn {
        match shift {
            Shift::DelayY => &self.d1,
            Shift::DelayZ => &self.d2,
            Shift::AnticipateY => &self.d3,
            Shift::AnticipateZ => &self.d4,
        }
    }

    /// Shifted time `t ∓ d(t)` without clamping.
    pub fn shifted(&self, shift: Shift, t: f64, grid: &TimeGrid) -> f64 {
        let d = self.lag(shift).eval(t, grid);
        if shift.is_delay() {
            t - d
        } else {
            t + d
        }
    }
}

/// Outcome of [`validate_delays`]: the certified `L̂` for each lag and overall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayReport {
    pub l_hat: [f64; 4],
    pub l: f64,
}

/// Checks the lag inclusions pointwise on the grid of `[0, T]` and certifies
/// the dominance constant `L̂`.
///
/// Delays only need `d ≥ 0`: a shifted time before zero reads the time-zero
/// value. Anticipations must satisfy `t ≤ t + d(t) ≤ T + K`.
///
/// `L̂` for each lag is the largest, over indicators of single grid cells, of
/// `∫₀ᵀ 1_cell(s ∓ d(s)) ds / Δ`, measured with midpoint subsamples. Images
/// outside `[0, T + K]` carry no mass.
pub fn validate_delays(d: &DelayStructure, grid: &TimeGrid) -> Result<DelayReport> {
    let tol = 1e-9 * grid.t_max();
    if (d.k - grid.anticipation()).abs() > tol {
        return Err(Error::validation(format!(
            "delay structure has K = {} but the grid extends {} beyond T",
            d.k,
            grid.anticipation()
        )));
    }
    let mut errors = Vec::new();
    for shift in Shift::ALL {
        let lag = d.lag(shift);
        if let DelayFn::Table(v) = lag {
            if v.len() != grid.horizon_index() + 1 {
                errors.push(format!(
                    "{}: table has {} values, expected {} (grid points of [0, T])",
                    shift.name(),
                    v.len(),
                    grid.horizon_index() + 1
                ));
                continue;
            }
        }
        for i in 0..=grid.horizon_index() {
            let t = grid.point(i);
            let v = lag.eval(t, grid);
            if !v.is_finite() {
                errors.push(format!("{} is not finite at t = {t}", shift.name()));
                break;
            }
            if v < -tol {
                errors.push(format!("(D1) {}(t) >= 0 fails at t = {t}: {} = {v}", shift.name(), shift.name()));
                break;
            }
            if !shift.is_delay() && t + v > grid.t_max() + tol {
                errors.push(format!(
                    "(D1) t + {}(t) <= T + K fails at t = {t}: {} > {}",
                    shift.name(),
                    t + v,
                    grid.t_max()
                ));
                break;
            }
        }
    }
    if !errors.is_empty() {
        return Err(Error::Validation(errors));
    }

    let mut l_hat = [0.0; 4];
    for (slot, shift) in Shift::ALL.into_iter().enumerate() {
        l_hat[slot] = dominance_constant(d, shift, grid);
    }
    let l = l_hat.iter().copied().fold(0.0, f64::max);
    Ok(DelayReport { l_hat, l })
}

fn dominance_constant(d: &DelayStructure, shift: Shift, grid: &TimeGrid) -> f64 {
    let dt = grid.dt();
    let mut mass = vec![0usize; grid.n_steps()];
    for i in 0..grid.horizon_index() {
        for q in 0..D2_SUBSAMPLES {
            let s = (i as f64 + (q as f64 + 0.5) / D2_SUBSAMPLES as f64) * dt;
            let image = d.shifted(shift, s, grid);
            if image < 0.0 || image > grid.t_max() {
                continue;
            }
            let cell = ((image / dt).floor() as usize).min(grid.n_steps() - 1);
            mass[cell] += 1;
        }
    }
    mass.into_iter().max().unwrap_or(0) as f64 / D2_SUBSAMPLES as f64
}

/// State arguments of the generator at one time and path.
///
/// `u = y_{t-d1}`, `v = z_{t-d2}`, `phi = E[y_{t+d3} | F_t]`,
/// `psi = E[z_{t+d4} | F_t]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct GeneratorArgs {
    pub u: f64,
    pub v: f64,
    pub y: f64,
    pub z: f64,
    pub phi: f64,
    pub psi: f64,
}

impl GeneratorArgs {
    fn get(&self, k: usize) -> f64 {
        [self.u, self.v, self.y, self.z, self.phi, self.psi][k]
    }

    fn set(&mut self, k: usize, x: f64) {
        match k {
            0 => self.u = x,
            1 => self.v = x,
            2 => self.y = x,
            3 => self.z = x,
            4 => self.phi = x,
            _ => self.psi = x,
        }
    }
}

pub type GeneratorFn = Arc<dyn Fn(f64, &GeneratorArgs) -> f64 + Send + Sync>;

/// Coefficients of an affine generator
/// `c·(u, v, y, z, φ, ψ) + a_y|y| + a_z|z| + constant`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearCoefficients {
    pub u: f64,
    pub v: f64,
    pub y: f64,
    pub z: f64,
    pub phi: f64,
    pub psi: f64,
    pub abs_y: f64,
    pub abs_z: f64,
    pub constant: f64,
}

impl LinearCoefficients {
    pub fn eval(&self, a: &GeneratorArgs) -> f64 {
        self.u * a.u
            + self.v * a.v
            + self.y * a.y
            + self.z * a.z
            + self.phi * a.phi
            + self.psi * a.psi
            + self.abs_y * a.y.abs()
            + self.abs_z * a.z.abs()
            + self.constant
    }

    /// Largest coefficient bound per argument, the smallest `C` for which the
    /// Lipschitz condition holds when the weights `t^{H-1/2}` equal one.
    pub fn natural_lipschitz(&self) -> f64 {
        [
            self.u.abs(),
            self.v.abs(),
            self.y.abs() + self.abs_y.abs(),
            self.z.abs() + self.abs_z.abs(),
            self.phi.abs(),
            self.psi.abs(),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Generator callback with its declared Lipschitz constant.
#[derive(Clone)]
pub struct GeneratorSpec {
    f: GeneratorFn,
    pub lipschitz_c: f64,
    pub zero_integrability_checked: bool,
    pub label: String,
}

impl fmt::Debug for GeneratorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GeneratorSpec")
            .field("label", &self.label)
            .field("lipschitz_c", &self.lipschitz_c)
            .finish()
    }
}

impl GeneratorSpec {
    pub fn new(label: impl Into<String>, lipschitz_c: f64, f: impl Fn(f64, &GeneratorArgs) -> f64 + Send + Sync + 'static) -> Self {
        GeneratorSpec {
            f: Arc::new(f),
            lipschitz_c,
            zero_integrability_checked: false,
            label: label.into(),
        }
    }

    pub fn zero() -> Self {
        GeneratorSpec::new("zero", 0.0, |_, _| 0.0)
    }

    pub fn constant(mu: f64) -> Self {
        GeneratorSpec::new(format!("constant({mu})"), 0.0, move |_, _| mu)
    }

    /// Affine generator; `lipschitz_c` defaults to the natural constant.
    pub fn linear(c: LinearCoefficients, lipschitz_c: Option<f64>) -> Self {
        let declared = lipschitz_c.unwrap_or_else(|| c.natural_lipschitz());
        GeneratorSpec::new("linear", declared, move |_, a| c.eval(a))
    }

    #[inline]
    pub fn eval(&self, t: f64, args: &GeneratorArgs) -> f64 {
        (self.f)(t, args)
    }
}

/// Estimate returned by [`lipschitz_probe`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzEstimate {
    pub estimate: f64,
    pub declared: f64,
    pub exceeds_declared: bool,
}

/// Largest sampled difference quotient
/// `|Δf| / (|Δu| + t^{H-1/2}|Δv| + |Δy| + t^{H-1/2}|Δz| + |Δφ| + t^{H-1/2}|Δψ|)`.
///
/// Half of the pairs perturb a single argument (cycling through all six), the
/// rest perturb every argument at once.
pub fn lipschitz_probe(g: &GeneratorSpec, hurst: Hurst, t_max: f64, n_samples: usize, seed: u64) -> Result<LipschitzEstimate> {
    if n_samples < 100 {
        return Err(Error::domain(format!("lipschitz_probe needs at least 100 samples, got {n_samples}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = |rng: &mut ChaCha8Rng, scale: f64| -> f64 { scale * rng.sample::<f64, _>(StandardNormal) };
    let weight_exp = hurst.value() - 0.5;
    let mut estimate: f64 = 0.0;
    for k in 0..n_samples {
        let t = t_max * (1.0 - rng.random::<f64>());
        let mut a = GeneratorArgs::default();
        for j in 0..6 {
            a.set(j, normal(&mut rng, 2.0));
        }
        let mut b = a;
        if k % 2 == 0 {
            let j = (k / 2) % 6;
            b.set(j, a.get(j) + normal(&mut rng, 1.0));
        } else {
            for j in 0..6 {
                b.set(j, a.get(j) + normal(&mut rng, 1.0));
            }
        }
        let fa = g.eval(t, &a);
        let fb = g.eval(t, &b);
        if !fa.is_finite() || !fb.is_finite() {
            return Err(Error::validation(format!(
                "generator '{}' returned a non-finite value at t = {t}, args = {a:?}",
                g.label
            )));
        }
        let w = t.powf(weight_exp);
        let denom = (a.u - b.u).abs()
            + w * (a.v - b.v).abs()
            + (a.y - b.y).abs()
            + w * (a.z - b.z).abs()
            + (a.phi - b.phi).abs()
            + w * (a.psi - b.psi).abs();
        if denom > 1e-12 {
            estimate = estimate.max((fa - fb).abs() / denom);
        }
    }
    let exceeds = estimate > g.lipschitz_c * (1.0 + 1e-9) + 1e-12;
    if exceeds {
        log::warn!(
            "generator '{}': sampled Lipschitz quotient {estimate:.4} exceeds declared C = {}",
            g.label,
            g.lipschitz_c
        );
    }
    Ok(LipschitzEstimate {
        estimate,
        declared: g.lipschitz_c,
        exceeds_declared: exceeds,
    })
}

/// Terminal value as a function of time and the driver level at that time.
pub type TerminalFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// `ξ` and `η` on `[T, T + K]`.
#[derive(Clone, Default)]
pub struct TerminalData {
    pub xi: Option<TerminalFn>,
    pub eta: Option<TerminalFn>,
    pub label: String,
}

impl fmt::Debug for TerminalData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TerminalData")
            .field("label", &self.label)
            .field("xi", &self.xi.is_some())
            .field("eta", &self.eta.is_some())
            .finish()
    }
}

impl TerminalData {
    pub fn new(
        label: impl Into<String>,
        xi: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        eta: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        TerminalData {
            xi: Some(Arc::new(xi)),
            eta: Some(Arc::new(eta)),
            label: label.into(),
        }
    }

    /// `ξ ≡ xi`, `η ≡ eta`.
    pub fn constant(xi: f64, eta: f64) -> Self {
        TerminalData::new(format!("constant({xi}, {eta})"), move |_, _| xi, move |_, _| eta)
    }

    /// `ξ_t = scale·B_t + offset`, `η_t ≡ eta`.
    pub fn level(scale: f64, offset: f64, eta: f64) -> Self {
        TerminalData::new(format!("level({scale}, {offset})"), move |_, b| scale * b + offset, move |_, _| eta)
    }

    pub fn xi_at(&self, t: f64, level: f64) -> f64 {
        self.xi.as_ref().map_or(f64::NAN, |f| f(t, level))
    }

    pub fn eta_at(&self, t: f64, level: f64) -> f64 {
        self.eta.as_ref().map_or(f64::NAN, |f| f(t, level))
    }
}

/// A complete problem instance.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub grid: TimeGrid,
    pub hurst: Hurst,
    pub delays: DelayStructure,
    pub generator: GeneratorSpec,
    pub terminal: TerminalData,
    /// The constant `M` of the energy estimate.
    pub m_const: f64,
}

impl ProblemSpec {
    pub fn new(grid: TimeGrid, hurst: Hurst, delays: DelayStructure, generator: GeneratorSpec, terminal: TerminalData) -> Self {
        ProblemSpec {
            grid,
            hurst,
            delays,
            generator,
            terminal,
            m_const: 2.0,
        }
    }
}

/// `β = 12C²(2L+1)M + 4/M`.
pub fn theorem_beta(c: f64, l: f64, m_const: f64) -> f64 {
    12.0 * c * c * (2.0 * l + 1.0) * m_const + 4.0 / m_const
}

/// Options for [`validate_problem`].
#[derive(Debug, Clone, Copy)]
pub struct ValidationOptions {
    pub n_probe: usize,
    pub seed: u64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        ValidationOptions { n_probe: 2000, seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub delays: DelayReport,
    pub lipschitz: LipschitzEstimate,
    /// `∫₀ᵀ |f(t, 0, …, 0)|² dt`.
    pub zero_generator_energy: f64,
    pub theorem_beta: f64,
    pub warnings: Vec<String>,
}

/// Runs every pre-solve check and computes the contraction `β`, which uses
/// the declared `C` and the certified `L̂`.
pub fn validate_problem(spec: &ProblemSpec, opts: ValidationOptions) -> Result<ValidationReport> {
    let grid = &spec.grid;
    let mut errors = Vec::new();
    let mut warnings = Vec::new();

    if !spec.hurst.is_solver_range() {
        errors.push(format!("solver requires H >= 1/2, got {}", spec.hurst));
    }
    if !(spec.m_const > 0.0) {
        errors.push(format!("M must be positive, got {}", spec.m_const));
    }
    if !(spec.generator.lipschitz_c >= 0.0) {
        errors.push(format!("declared Lipschitz constant must be nonnegative, got {}", spec.generator.lipschitz_c));
    }

    let delays = match validate_delays(&spec.delays, grid) {
        Ok(r) => Some(r),
        Err(Error::Validation(msgs)) => {
            errors.extend(msgs);
            None
        }
        Err(e) => return Err(e),
    };

    let lipschitz = match lipschitz_probe(&spec.generator, spec.hurst, grid.horizon(), opts.n_probe.max(100), opts.seed) {
        Ok(l) => {
            if l.exceeds_declared {
                warnings.push(format!(
                    "sampled Lipschitz quotient {:.4} exceeds declared C = {}",
                    l.estimate, l.declared
                ));
            }
            Some(l)
        }
        Err(Error::Validation(msgs)) => {
            errors.extend(msgs);
            None
        }
        Err(e) => return Err(e),
    };

    let zero = GeneratorArgs::default();
    let n_t = grid.horizon_index();
    let mut energy = 0.0;
    for i in 0..=n_t {
        let v = spec.generator.eval(grid.point(i), &zero);
        let w = if i == 0 || i == n_t { 0.5 } else { 1.0 };
        energy += w * v * v * grid.dt();
    }
    if !energy.is_finite() {
        errors.push("f(t, 0, ..., 0) is not square integrable on the grid".to_string());
    }

    check_terminal(spec, &mut errors);

    if !errors.is_empty() {
        return Err(Error::Validation(errors));
    }
    let delays = delays.expect("checked above");
    let lipschitz = lipschitz.expect("checked above");
    Ok(ValidationReport {
        theorem_beta: theorem_beta(spec.generator.lipschitz_c, delays.l, spec.m_const),
        delays,
        lipschitz,
        zero_generator_energy: energy,
        warnings,
    })
}

fn check_terminal(spec: &ProblemSpec, errors: &mut Vec<String>) {
    let grid = &spec.grid;
    let term = &spec.terminal;
    if term.xi.is_none() {
        errors.push("terminal value xi is missing on [T, T+K]".to_string());
    }
    if term.eta.is_none() {
        errors.push("terminal value eta is missing on [T, T+K]".to_string());
    }
    if term.xi.is_none() || term.eta.is_none() {
        return;
    }
    for i in grid.horizon_index()..grid.len() {
        let t = grid.point(i);
        let sd = t.powf(spec.hurst.value());
        for level in [-3.0 * sd, 0.0, 3.0 * sd] {
            if !term.xi_at(t, level).is_finite() || !term.eta_at(t, level).is_finite() {
                errors.push(format!("terminal data is not finite at t = {t}, level = {level}"));
                return;
            }
        }
    }
}
