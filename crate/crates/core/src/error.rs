use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("transition row {row} sums to {sum} (deviation exceeds 1e-12) or has an entry outside [0, 1]")]
    NonStochasticRow { row: usize, sum: f64 },

    #[error("reward at flat index {index} is {value}, outside [-1, 1]")]
    RewardOutOfBounds { index: usize, value: f64 },

    #[error("discount factor {0} is outside [0, 1)")]
    BadGamma(f64),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("index out of range: state {state} (|S|={num_states}), action {action} (|A|={num_actions})")]
    IndexOutOfRange {
        state: usize,
        action: usize,
        num_states: usize,
        num_actions: usize,
    },

    #[error("sandwich bound violated at component {component}: {side} slack {slack:e}")]
    BoundViolation {
        component: usize,
        side: &'static str,
        slack: f64,
    },

    #[error("epsilon {epsilon} invalid for gamma {gamma}: need epsilon > 0 and gamma + epsilon in (0, 1)")]
    BadEpsilon { gamma: f64, epsilon: f64 },

    #[error("Lyapunov series did not converge within {0} terms")]
    NonConvergentSeries(usize),

    #[error("certificate invalid: {0}")]
    CertificateInvalid(String),

    #[error("weight vector must be strictly positive (component {index} is {value})")]
    NonPositiveW { index: usize, value: f64 },

    #[error("policy evaluation system is singular")]
    SingularEvaluation,

    #[error("policy iteration did not terminate within {0} improvement steps")]
    PolicyIterationStalled(usize),

    #[error("{count} deterministic policies exceed the enumeration cap of {cap}")]
    TooManyPolicies { count: f64, cap: usize },

    #[error("claim `{claim}` violated at k={k} with slack {slack:e}")]
    ClaimViolation {
        claim: &'static str,
        k: usize,
        slack: f64,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Claim violations exit with 1, everything else is an input/config problem.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::ClaimViolation { .. }
            | Error::BoundViolation { .. }
            | Error::CertificateInvalid(_) => 1,
            _ => 2,
        }
    }
}
