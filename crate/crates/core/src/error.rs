use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Parameters violate a type invariant (dimensions, orthogonality, ranges).
    #[error("configuration error: {0}")]
    Config(String),

    /// Target coincides with an array origin.
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    /// Target lies outside the forward half-plane of a ULA.
    #[error("target behind array: local angle {phi_rad:.6} rad is outside (-pi/2, pi/2)")]
    BehindArray { phi_rad: f64 },

    /// Every pixel of a map was excluded by the geometry rules.
    #[error("geometry error: {0}")]
    Geometry(String),

    /// Dense operator requested above the configured size cap.
    #[error("dense channel matrix refused: M*N = {size} exceeds cap {cap}; use the fast channel operator instead")]
    DenseCapExceeded { size: usize, cap: usize },

    /// Channel coefficient undefined because the modelled echo has zero energy.
    #[error("undefined channel coefficient: ||Gx|| = 0")]
    UndefinedCoefficient,

    /// Finite-difference derivative failed its step-halving consistency check.
    #[error("numerical derivative w.r.t. {param} failed step halving: relative change {rel_change:.3e} (limit {limit:.1e}, step {step:.3e})")]
    NumericalDerivative {
        param: &'static str,
        rel_change: f64,
        limit: f64,
        step: f64,
    },

    /// Nuisance block of the FIM is (numerically) singular.
    #[error("nuisance block degenerate: scaled condition number {condition:.3e} exceeds {limit:.1e}")]
    NuisanceDegenerate { condition: f64, limit: f64 },

    /// Position FIM not invertible.
    #[error("position unobservable: {0}")]
    Unobservable(String),

    #[error("unknown channel backend `{0}`")]
    UnknownBackend(String),

    /// Monte Carlo experiment aborted.
    #[error("experiment aborted: {0}")]
    Experiment(String),
}
