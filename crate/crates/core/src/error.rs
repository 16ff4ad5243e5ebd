//! Crate-wide error type.

/// Errors produced by model construction, integration, and analysis.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    /// Photon cutoff below the minimum of 1.
    #[error("photon cutoff must be at least 1, got {0}")]
    InvalidCutoff(usize),

    /// Mn position on or outside the box boundary, where the ground-state
    /// wave function vanishes and the couplings are ill-conditioned.
    #[error("Mn position must lie strictly inside the unit box, got {0:?}")]
    MnPositionOutsideBox([f64; 3]),

    /// Generic domain violation of an analytic formula.
    #[error("parameter out of domain: {0}")]
    Domain(String),

    /// A Lindblad rate was negative.
    #[error("Lindblad rate must be non-negative, got {0} ns^-1")]
    NegativeRate(f64),

    /// Inconsistent protocol specification.
    #[error("invalid protocol spec: {0}")]
    Spec(String),

    /// The integrator failed (step-size underflow, state-validity violation).
    #[error("integration failed at t = {t_ps} ps: {reason}")]
    Integration { t_ps: f64, reason: String },

    /// Adaptive quadrature did not converge.
    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    /// The augmented density matrix would exceed the configured memory cap.
    #[error(
        "augmented density matrix needs {bytes} bytes (cap {cap}) for dt = {dt_ps} ps, \
         n_mem = {n_mem}; reduce n_mem or increase the cap"
    )]
    ResourceCap {
        dt_ps: f64,
        n_mem: usize,
        bytes: usize,
        cap: usize,
    },

    /// Too few usable points for a fit.
    #[error("fit needs at least {needed} points, got {got}")]
    FitInsufficientPoints { needed: usize, got: usize },

    /// The fit iteration did not converge.
    #[error("fit did not converge: {0}")]
    FitDidNotConverge(String),

    /// Fitted decay time is not resolved by the sampled span.
    #[error("fit span {span_ns} ns shorter than 0.5 * tau_star = {tau_star_ns} ns")]
    FitSpanTooShort { span_ns: f64, tau_star_ns: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
