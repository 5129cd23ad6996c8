//! JSON problem configuration and the builtin problem library.

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::comparison::{ComparisonPair, OuterConfig, ReducedGenerator};
use crate::error::{Error, Result};
use crate::fbm::{Hurst, SamplingMethod, TimeGrid};
use crate::problem::{DelayFn, DelayStructure, GeneratorSpec, LinearCoefficients, ProblemSpec, TerminalData};
use crate::solver::{RegressionBasis, SolveConfig};

pub const BUILTIN_NAMES: [&str; 8] = [
    "constant",
    "drift",
    "ode-rho",
    "delayed-rho",
    "anticipated-steps",
    "representation-bt",
    "lipschitz-linear",
    "ordered-pair",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DelayKind {
    #[default]
    Constant,
    Linear,
    Table,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DelaysConfig {
    pub kind: DelayKind,
    pub d1: DelayFn,
    pub d2: DelayFn,
    pub d3: DelayFn,
    pub d4: DelayFn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GeneratorConfig {
    Zero,
    Constant {
        mu: f64,
    },
    Linear {
        #[serde(flatten)]
        coefficients: LinearCoefficients,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lipschitz_c: Option<f64>,
    },
}

impl GeneratorConfig {
    pub fn build(&self) -> GeneratorSpec {
        match self {
            GeneratorConfig::Zero => GeneratorSpec::zero(),
            GeneratorConfig::Constant { mu } => GeneratorSpec::constant(*mu),
            GeneratorConfig::Linear { coefficients, lipschitz_c } => GeneratorSpec::linear(*coefficients, *lipschitz_c),
        }
    }

    pub fn build_reduced(&self) -> Result<ReducedGenerator> {
        match self {
            GeneratorConfig::Zero => ReducedGenerator::linear(LinearCoefficients::default(), None),
            GeneratorConfig::Constant { mu } => ReducedGenerator::linear(
                LinearCoefficients {
                    constant: *mu,
                    ..Default::default()
                },
                None,
            ),
            GeneratorConfig::Linear { coefficients, lipschitz_c } => ReducedGenerator::linear(*coefficients, *lipschitz_c),
        }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TerminalConfig {
    Constant {
        xi: f64,
        #[serde(default)]
        eta: f64,
    },
    /// `ξ_t = scale·B_t + offset`; `η` defaults to `scale`.
    Level {
        #[serde(default = "one")]
        scale: f64,
        #[serde(default)]
        offset: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        eta: Option<f64>,
    },
}

impl TerminalConfig {
    pub fn build(&self) -> TerminalData {
        match *self {
            TerminalConfig::Constant { xi, eta } => TerminalData::constant(xi, eta),
            TerminalConfig::Level { scale, offset, eta } => TerminalData::level(scale, offset, eta.unwrap_or(scale)),
        }
    }
}

fn default_tol() -> f64 {
    1e-6
}

fn default_max_iter() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSettings {
    #[serde(default)]
    pub basis: RegressionBasis,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Norm weight; the contraction `β` of the validated problem when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            basis: RegressionBasis::default(),
            tol: default_tol(),
            max_iter: default_max_iter(),
            beta: None,
        }
    }
}

impl SolverSettings {
    /// Resolves `β` and reports whether it equals the contraction `β`.
    pub fn resolve(&self, theorem_beta: f64) -> (SolveConfig, bool) {
        let beta = self.beta.unwrap_or(theorem_beta);
        let used = (beta - theorem_beta).abs() <= 1e-9 * theorem_beta.abs().max(1.0);
        (
            SolveConfig {
                basis: self.basis,
                beta,
                tol: self.tol,
                max_iter: self.max_iter,
            },
            used,
        )
    }
}

fn default_n_outer() -> usize {
    12
}

fn default_tol_outer() -> f64 {
    1e-3
}

fn default_threshold() -> f64 {
    0.01
}

fn default_comparison_m() -> f64 {
    3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComparisonConfig {
    pub generator2: GeneratorConfig,
    pub terminal2: TerminalConfig,
    #[serde(default = "default_n_outer")]
    pub n_outer: usize,
    #[serde(default = "default_tol_outer")]
    pub tol_outer: f64,
    /// `β` of the outer-difference norm.
    #[serde(default)]
    pub beta: f64,
    #[serde(default = "default_threshold")]
    pub violation_threshold: f64,
    #[serde(rename = "M", default = "default_comparison_m")]
    pub m_const: f64,
}

impl ComparisonConfig {
    pub fn outer(&self) -> OuterConfig {
        OuterConfig {
            n_outer: self.n_outer,
            tol_outer: self.tol_outer,
            beta: self.beta,
        }
    }
}

fn default_m() -> f64 {
    2.0
}

fn default_method() -> SamplingMethod {
    SamplingMethod::Circulant
}

/// A full experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub hurst: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(rename = "K", default)]
    pub anticipation: f64,
    pub n_steps: usize,
    #[serde(default)]
    pub delays: DelaysConfig,
    pub generator: GeneratorConfig,
    pub terminal: TerminalConfig,
    #[serde(rename = "M", default = "default_m")]
    pub m_const: f64,
    pub n_paths: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_method")]
    pub method: SamplingMethod,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<ComparisonConfig>,
}

impl ProblemConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ProblemConfig = serde_json::from_str(text)?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn builtin(name: &str) -> Result<Self> {
        let value = builtin_json(name).ok_or_else(|| {
            Error::validation(format!("unknown builtin '{name}'; available: {}", BUILTIN_NAMES.join(", ")))
        })?;
        let cfg: ProblemConfig = serde_json::from_value(value)?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Schema-level checks that do not need the grid.
    pub fn check(&self) -> Result<()> {
        let mut errors = Vec::new();
        if self.n_paths == 0 {
            errors.push("n_paths must be positive".to_string());
        }
        if self.delays.kind == DelayKind::Constant {
            for (name, d) in [("d1", &self.delays.d1), ("d2", &self.delays.d2), ("d3", &self.delays.d3), ("d4", &self.delays.d4)] {
                if !matches!(d, DelayFn::Constant(_)) {
                    errors.push(format!("delays.kind is constant but {name} is not a number"));
                }
            }
        }
        if let Err(e) = self.solver.basis.check() {
            errors.push(e.to_string());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errors))
        }
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.horizon, self.anticipation, self.n_steps)
    }

    pub fn hurst(&self) -> Result<Hurst> {
        Hurst::new(self.hurst)
    }

    pub fn delay_structure(&self) -> DelayStructure {
        DelayStructure {
            d1: self.delays.d1.clone(),
            d2: self.delays.d2.clone(),
            d3: self.delays.d3.clone(),
            d4: self.delays.d4.clone(),
            k: self.anticipation,
        }
    }

    pub fn problem_spec(&self) -> Result<ProblemSpec> {
        let mut spec = ProblemSpec::new(
            self.grid()?,
            Hurst::for_solver(self.hurst)?,
            self.delay_structure(),
            self.generator.build(),
            self.terminal.build(),
        );
        spec.m_const = self.m_const;
        Ok(spec)
    }

    pub fn comparison_pair(&self) -> Result<ComparisonPair> {
        let cmp = self
            .comparison
            .as_ref()
            .ok_or_else(|| Error::validation("configuration has no comparison section"))?;
        let mut pair = ComparisonPair::new(
            self.grid()?,
            Hurst::for_solver(self.hurst)?,
            self.delay_structure(),
            self.generator.build_reduced()?,
            self.terminal.build(),
            cmp.generator2.build_reduced()?,
            cmp.terminal2.build(),
        )?;
        pair.spec1.m_const = self.m_const;
        pair.spec2.m_const = self.m_const;
        Ok(pair)
    }
}

fn builtin_json(name: &str) -> Option<serde_json::Value> {
    let oracle_solver = json!({ "tol": 1e-8, "max_iter": 200, "beta": 0.0 });
    let v = match name {
        "constant" => json!({
            "hurst": 0.7, "T": 1.0, "n_steps": 128, "n_paths": 10000, "seed": 1,
            "generator": { "kind": "zero" },
            "terminal": { "kind": "constant", "xi": 1.5, "eta": 0.0 },
            "solver": oracle_solver,
        }),
        "drift" => json!({
            "hurst": 0.7, "T": 1.0, "n_steps": 128, "n_paths": 2000, "seed": 2,
            "generator": { "kind": "constant", "mu": 0.5 },
            "terminal": { "kind": "constant", "xi": 1.0 },
            "solver": oracle_solver,
        }),
        "ode-rho" => json!({
            "hurst": 0.7, "T": 1.0, "n_steps": 256, "n_paths": 10000, "seed": 3,
            "generator": { "kind": "linear", "y": 1.0 },
            "terminal": { "kind": "constant", "xi": 1.0 },
            "solver": oracle_solver,
        }),
        "delayed-rho" => json!({
            "hurst": 0.7, "T": 1.0, "n_steps": 256, "n_paths": 10000, "seed": 4,
            "delays": { "kind": "constant", "d1": 0.25 },
            "generator": { "kind": "linear", "u": 1.0 },
            "terminal": { "kind": "constant", "xi": 1.0 },
            "solver": oracle_solver,
        }),
        "anticipated-steps" => json!({
            "hurst": 0.7, "T": 1.0, "K": 0.5, "n_steps": 192, "n_paths": 10000, "seed": 5,
            "delays": { "kind": "constant", "d3": 0.5 },
            "generator": { "kind": "linear", "phi": 1.0 },
            "terminal": { "kind": "constant", "xi": 1.0 },
            "solver": oracle_solver,
        }),
        "representation-bt" => json!({
            "hurst": 0.7, "T": 1.0, "n_steps": 64, "n_paths": 50000, "seed": 6,
            "generator": { "kind": "zero" },
            "terminal": { "kind": "level", "scale": 1.0 },
            "solver": { "tol": 1e-8, "max_iter": 20, "beta": 0.0 },
        }),
        "lipschitz-linear" => json!({
            "hurst": 0.7, "T": 1.0, "K": 0.25, "n_steps": 160, "n_paths": 10000, "seed": 7,
            "delays": { "kind": "constant", "d1": 0.25, "d3": 0.25 },
            "generator": { "kind": "linear", "y": 0.5, "u": 0.25, "phi": 0.25, "constant": 0.1, "lipschitz_c": 0.5 },
            "terminal": { "kind": "level", "scale": 1.0 },
            "solver": { "tol": 1e-6, "max_iter": 15 },
        }),
        "ordered-pair" => json!({
            "hurst": 0.7, "T": 1.0, "K": 0.25, "n_steps": 80, "n_paths": 4000, "seed": 8,
            "delays": { "kind": "constant", "d1": 0.25, "d3": 0.25 },
            "generator": { "kind": "linear", "y": 0.5, "u": 0.2, "phi": 0.2 },
            "terminal": { "kind": "level", "scale": 1.0, "offset": 0.0 },
            "solver": { "tol": 1e-6, "max_iter": 50, "beta": 0.0 },
            "comparison": {
                "generator2": { "kind": "linear", "y": 0.5, "u": 0.2, "phi": 0.2, "constant": 0.1, "abs_y": 0.1 },
                "terminal2": { "kind": "level", "scale": 1.0, "offset": 0.2 },
                "n_outer": 12, "tol_outer": 1e-3, "violation_threshold": 0.01, "M": 3.0
            },
        }),
        _ => return None,
    };
    Some(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_builtin_parses_and_builds() {
        for name in BUILTIN_NAMES {
            let cfg = ProblemConfig::builtin(name).unwrap();
            cfg.problem_spec().unwrap();
            if name == "ordered-pair" {
                cfg.comparison_pair().unwrap();
            }
        }
        assert!(ProblemConfig::builtin("nope").is_err());
    }

    #[test]
    fn round_trip_through_json() {
        let cfg = ProblemConfig::builtin("ordered-pair").unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ProblemConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn delay_kinds_parse() {
        let text = r#"{"hurst":0.6,"T":1,"n_steps":4,"n_paths":10,
            "delays":{"kind":"linear","d1":{"slope":0.5,"intercept":0.0}},
            "generator":{"kind":"zero"},"terminal":{"kind":"constant","xi":1}}"#;
        let cfg = ProblemConfig::from_json(text).unwrap();
        assert_eq!(cfg.delays.d1, DelayFn::Linear { slope: 0.5, intercept: 0.0 });
        let text = r#"{"hurst":0.6,"T":1,"n_steps":4,"n_paths":10,
            "delays":{"kind":"table","d3":[0,0,0,0,0]},
            "generator":{"kind":"zero"},"terminal":{"kind":"constant","xi":1}}"#;
        assert!(matches!(ProblemConfig::from_json(text).unwrap().delays.d3, DelayFn::Table(_)));
        let bad = r#"{"hurst":0.6,"T":1,"n_steps":4,"n_paths":10,
            "delays":{"kind":"constant","d1":[0,0]},
            "generator":{"kind":"zero"},"terminal":{"kind":"constant","xi":1}}"#;
        assert!(matches!(ProblemConfig::from_json(bad), Err(Error::Validation(_))));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = r#"{"hurst":0.6,"T":1,"n_steps":4,"n_paths":10,"bogus":1,
            "generator":{"kind":"zero"},"terminal":{"kind":"constant","xi":1}}"#;
        assert!(ProblemConfig::from_json(text).is_err());
    }

    #[test]
    fn beta_resolution() {
        let s = SolverSettings::default();
        let (cfg, used) = s.resolve(20.0);
        assert_eq!(cfg.beta, 20.0);
        assert!(used);
        let s = SolverSettings { beta: Some(0.01), ..Default::default() };
        assert!(!s.resolve(20.0).1);
    }
}
