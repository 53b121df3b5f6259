use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("singular diffusion block at t = {t}: condition estimate {condition:.3e} exceeds bound {bound:.3e}")]
    SingularDiffusion { t: f64, condition: f64, bound: f64 },

    #[error("regression design is rank deficient (rank {rank} < {columns} columns) with zero ridge")]
    IllConditioned { rank: usize, columns: usize },

    #[error("driver returned a non-finite value at step {step}, path {path}")]
    DriverNonFinite { step: usize, path: usize },

    #[error("barrier {barrier} exceeds terminal value {terminal} on path {path}")]
    BarrierAboveTerminal { path: usize, barrier: f64, terminal: f64 },

    #[error("policy returned {kind} index {index} outside a set of size {size} (step {step}, path {path})")]
    PolicyRange { kind: &'static str, index: usize, size: usize, step: usize, path: usize },

    #[error("tree transition probability {probability} outside (0, 1) at step {step}, state {state}")]
    ProbabilityOutOfRange { probability: f64, step: usize, state: f64 },

    #[error("impulse target {target} from state {state} at step {step} lies outside the tree lattice")]
    OffTreeImpulse { step: usize, state: f64, target: f64 },

    #[error("invalid configuration at `{field}`: {reason}")]
    ConfigInvalid { field: String, reason: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerical pipeline (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularDiffusion { .. }
                | Error::IllConditioned { .. }
                | Error::DriverNonFinite { .. }
                | Error::BarrierAboveTerminal { .. }
                | Error::PolicyRange { .. }
                | Error::ProbabilityOutOfRange { .. }
                | Error::OffTreeImpulse { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
