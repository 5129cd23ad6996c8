use std::fmt;
use std::path::{Path, PathBuf};

use dabsde_core::Error;
use serde_json::{json, Value};

pub const EXIT_CHECK: u8 = 1;
pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_CONVERGENCE: u8 = 3;
pub const EXIT_IO: u8 = 4;

#[derive(Debug)]
pub enum Failure {
    Core(Error),
    Io { path: PathBuf, source: std::io::Error },
    /// The run completed but a configured check did not hold.
    Check(String),
}

impl Failure {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Failure::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Core(e) => core_exit_code(e),
            Failure::Io { .. } => EXIT_IO,
            Failure::Check(_) => EXIT_CHECK,
        }
    }

    pub fn to_json(&self) -> Value {
        let (kind, details) = match self {
            Failure::Core(e) => core_details(e),
            Failure::Io { path, .. } => ("io", json!({ "path": path })),
            Failure::Check(_) => ("check", Value::Null),
        };
        json!({
            "kind": kind,
            "exit_code": self.exit_code(),
            "message": self.to_string(),
            "details": details,
        })
    }
}

fn core_exit_code(e: &Error) -> u8 {
    match e {
        Error::Domain(_) | Error::Validation(_) | Error::Json(_) => EXIT_VALIDATION,
        Error::Io(_) => EXIT_IO,
        Error::Outer { source, .. } => core_exit_code(source),
        Error::NonConvergence(_)
        | Error::Solver { .. }
        | Error::RankDeficient { .. }
        | Error::Cholesky { .. }
        | Error::NegativeEigenvalue { .. } => EXIT_CONVERGENCE,
    }
}

fn core_details(e: &Error) -> (&'static str, Value) {
    match e {
        Error::Domain(m) => ("domain", json!(m)),
        Error::Validation(msgs) => ("validation", json!(msgs)),
        Error::Json(_) => ("config", Value::Null),
        Error::Io(_) => ("io", Value::Null),
        Error::NonConvergence(diag) => ("non_convergence", serde_json::to_value(diag).unwrap_or(Value::Null)),
        Error::Solver { index, path, message } => ("solver", json!({ "index": index, "path": path, "message": message })),
        Error::RankDeficient { basis_size, pivot } => ("rank_deficient", json!({ "basis_size": basis_size, "pivot": pivot })),
        Error::Cholesky { pivot, value } => ("cholesky", json!({ "pivot": pivot, "value": value })),
        Error::NegativeEigenvalue { index, value } => ("negative_eigenvalue", json!({ "index": index, "value": value })),
        Error::Outer { outer, source } => {
            let (kind, inner) = core_details(source);
            (kind, json!({ "outer": outer, "inner": inner }))
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Core(e) => write!(f, "{e}"),
            Failure::Io { path, source } => write!(f, "{}: {source}", path.display()),
            Failure::Check(m) => f.write_str(m),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}
