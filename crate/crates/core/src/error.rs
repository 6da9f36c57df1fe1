use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },

    #[error("missing required table `{0}`")]
    MissingTable(&'static str),

    #[error("malformed row in `{table}` at line {line}: expected at least {expected} fields, found {found}")]
    MalformedRow {
        table: &'static str,
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("invalid case data: {0}")]
    InvalidCase(String),

    #[error("uncertainty spec: {0}")]
    Schema(String),

    #[error("no uncertainty sources")]
    NoUncertaintySources,

    #[error("unknown bus id {0}")]
    UnknownBus(i64),

    #[error("matrix is not positive semidefinite (smallest eigenvalue {min_eigenvalue:.3e})")]
    NotPositiveSemidefinite { min_eigenvalue: f64 },

    #[error("network: {0}")]
    Network(String),

    #[error("branch {branch} has zero series impedance")]
    ZeroImpedance { branch: usize },

    #[error("power flow did not converge after {iterations} iterations (max mismatch {max_mismatch:.3e} p.u.)")]
    PowerFlowDiverged { iterations: usize, max_mismatch: f64 },

    #[error("singular Jacobian")]
    SingularJacobian,

    #[error("infeasible bounds: {0}")]
    InfeasibleBounds(String),

    #[error("optimal power flow failed ({status}) after {iterations} iterations: {detail}")]
    OpfFailed {
        status: crate::opf::SolverStatus,
        iterations: usize,
        detail: String,
    },

    #[error("argument out of domain: {0}")]
    Domain(String),

    #[error("sample {sample}: {source}")]
    SampleFailed {
        sample: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{diverged} of {total} sample power flows diverged")]
    TooManyDiverged { diverged: usize, total: usize },

    #[error("outer iteration {iteration}: {source}")]
    OuterIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("non-finite value in report ({0})")]
    NonFinite(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Innermost error, skipping iteration and sample context wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::SampleFailed { source, .. } | Error::OuterIteration { source, .. } => {
                source.root()
            }
            other => other,
        }
    }
}
