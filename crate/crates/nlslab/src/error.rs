use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Failure modes surfaced by the laboratory.
///
/// Numerical failures carry enough context (residuals, iteration counts,
/// offending values) to be actionable from the CLI, where they are rendered
/// as a JSON error record and mapped to exit code 1.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),

    #[error("bad snapshot: {0}")]
    Format(String),

    #[error("unsupported snapshot version {0}")]
    UnsupportedVersion(u32),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("newton iteration stalled after {iterations} steps, residual {residual:.3e}")]
    NewtonStalled { iterations: usize, residual: f64 },

    #[error("no soliton branch found: {0}")]
    BranchNotFound(String),

    #[error("amplitude left the soliton regime: {0}")]
    DegenerateBranch(String),

    #[error("eigensolver failed: {0}")]
    EigenFailure(String),

    #[error("iterative solve did not converge: {0}")]
    SolveDiverged(String),

    #[error("frequency {frequency:.6} is within {margin:.2e} of the essential-spectrum edge")]
    EdgeProximity { frequency: f64, margin: f64 },

    #[error("epsilon ladder not converging: {0}")]
    LadderDiverged(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("not supported: {0}")]
    NotSupported(String),
}

impl Error {
    /// JSON error record used by the CLI on numerical failures.
    pub fn to_json(&self) -> String {
        let kind = match self {
            Error::Io(_) => "io",
            Error::Format(_) => "format",
            Error::UnsupportedVersion(_) => "unsupported_version",
            Error::Config(_) => "config",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::NewtonStalled { .. } => "newton_stalled",
            Error::BranchNotFound(_) => "branch_not_found",
            Error::DegenerateBranch(_) => "degenerate_branch",
            Error::EigenFailure(_) => "eigen_failure",
            Error::SolveDiverged(_) => "solve_diverged",
            Error::EdgeProximity { .. } => "edge_proximity",
            Error::LadderDiverged(_) => "ladder_diverged",
            Error::ContractViolation(_) => "contract_violation",
            Error::NonFinite(_) => "non_finite",
            Error::NotSupported(_) => "not_supported",
        };
        serde_json::json!({ "error": { "kind": kind, "message": self.to_string() } }).to_string()
    }
}
