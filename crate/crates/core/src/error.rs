use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),

    #[error("fock basis with {n_modes} modes and {max_total} photons has {dim} states, above the limit of {limit}")]
    BasisTooLarge {
        n_modes: usize,
        max_total: usize,
        dim: u128,
        limit: usize,
    },

    #[error("trajectory {index} failed at t = {t_cycles:.6} cycles: {reason}")]
    TrajectoryFailure {
        index: usize,
        t_cycles: f64,
        reason: String,
    },

    #[error(
        "step size underflow at t = {t_cycles:.6} cycles (h = {h:.3e} below {min:.3e}); \
         the problem looks stiffer than the controller can handle at this tolerance"
    )]
    StepSizeUnderflow { t_cycles: f64, h: f64, min: f64 },

    #[error("exact-reference dimension {dim} exceeds the cap of {cap} states")]
    OracleDimCap { dim: u128, cap: usize },

    #[error("exact-reference norm drifted by {drift:.3e} at t = {t_cycles:.6} cycles (limit {limit:.1e})")]
    OracleNormDrift {
        t_cycles: f64,
        drift: f64,
        limit: f64,
    },

    #[error("time grids do not match: {0}")]
    GridMismatch(String),
}

pub type Result<T> = std::result::Result<T, SimError>;
