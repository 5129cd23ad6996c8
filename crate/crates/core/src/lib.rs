//! Numerical laboratory for anticipated BSDEs with time-delayed generators
//! driven by fractional Brownian motion.
//!
//! * [`fbm`]: exact fBm sampling (Cholesky and circulant embedding).
//! * [`frcalc`]: the `φ` kernel, the inner product `⟨·,·⟩_t`, Wiener
//!   integrals, deterministic Malliavin derivatives and weighted norms.
//! * [`problem`]: delay structures, generators, terminal data and validators.
//! * [`solver`]: regression-based Picard iteration with contraction diagnostics.
//! * [`comparison`]: monotone outer iteration and ordering checks.
//! * [`config`]: JSON configuration and the builtin problem library.

pub mod comparison;
pub mod config;
pub mod error;
pub mod fbm;
pub mod frcalc;
pub mod linalg;
pub mod problem;
pub mod solver;
pub mod stats;

pub use comparison::{
    check_ordering, comparison_beta, forward_process, gap_tolerance, monotone_iterate, verify_hypotheses, ComparisonPair, ForwardProcess,
    HypothesisReport, MonotoneChain, OrderingReport, OuterConfig, ReducedGenerator,
};
pub use config::{ComparisonConfig, GeneratorConfig, ProblemConfig, SolverSettings, TerminalConfig, BUILTIN_NAMES};
pub use error::{Error, Result};
pub use fbm::{
    build_covariance_matrix, covariance, sample, sample_cholesky, sample_circulant, FbmPathSet, Hurst, SamplingMethod, TimeGrid,
};
pub use frcalc::{
    beta_norm, dh_derivative_deterministic, dh_weight, inner_product, phi, product_formula_residual, wiener_integral,
    BetaNormConfig,
};
pub use problem::{
    lipschitz_probe, theorem_beta, validate_delays, validate_problem, DelayFn, DelayReport, DelayStructure, GeneratorArgs,
    GeneratorSpec, LinearCoefficients, LipschitzEstimate, ProblemSpec, TerminalData, ValidationOptions, ValidationReport,
};
pub use solver::{
    contraction_ratio, make_index_maps, picard_step, regress_conditional, solve, ContractionSummary, Driver, FeatureSet,
    IndexMaps, PicardContext, PicardDiagnostics, RegressionBasis, SolutionPair, SolutionRow, SolveConfig,
};
