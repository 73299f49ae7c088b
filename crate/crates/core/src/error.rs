use thiserror::Error;

/// Errors raised by the solvers and estimators in this crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("ground state did not converge after {iterations} iterations (residual {residual:.3e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("trajectory {trajectory} failed: {reason}")]
    Integration { trajectory: usize, reason: String },

    #[error("norm drift {drift:.3e} in one step of {dt:.3e} s; reduce the time step")]
    StepSize { drift: f64, dt: f64 },

    #[error("squeezing parameter undefined: <Jx> = {mean_jx:.4e} is consistent with zero")]
    UndefinedSqueezing { mean_jx: f64 },

    #[error("chi fit failed: {0}")]
    Fit(String),

    #[error(
        "exact propagation of a non-diagonal Hamiltonian is limited to {limit} atoms \
         (requested {n_atoms}); use the truncated-Wigner solver"
    )]
    TooManyAtoms { n_atoms: usize, limit: usize },

    #[error("run aborted: {failed} of {total} trajectories failed; first failure: {first}")]
    RunAborted {
        failed: usize,
        total: usize,
        first: Box<Error>,
    },

    #[error("omega scan point {fraction}: {source}")]
    ScanPoint { fraction: f64, source: Box<Error> },
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
