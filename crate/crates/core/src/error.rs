use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),

    #[error("lattice mismatch: {0}")]
    LatticeMismatch(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("operation requires {required} boundary, got {actual}")]
    Boundary { required: &'static str, actual: &'static str },

    #[error("operation requires dimension {required}, got {actual}")]
    Dimension { required: usize, actual: usize },

    #[error("dense backend limited to {limit} sites, lattice has {sites}")]
    BackendSize { sites: usize, limit: usize },

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("population cap {cap} exceeded at time {time}")]
    PopulationCap { cap: u64, time: f64 },

    #[error("solution left [0, 1] by {excess:e} at time {time}")]
    InvarianceViolated { excess: f64, time: f64 },

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("format: {0}")]
    Format(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
