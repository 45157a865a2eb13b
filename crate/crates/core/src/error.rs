use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid velocity profile: {0}")]
    InvalidProfile(String),

    #[error("root not bracketed: lift({lo}) = {f_lo}, lift({hi}) = {f_hi}, target {target}")]
    RootNotBracketed {
        lo: f64,
        hi: f64,
        f_lo: f64,
        f_hi: f64,
        target: f64,
    },

    #[error("inverse branch solve did not converge after {iterations} iterations (residual {residual:e})")]
    ConvergenceFailure { iterations: usize, residual: f64 },

    #[error("pair distance {distance} is not below the radius {radius}")]
    RadiusExceeded { distance: f64, radius: f64 },

    #[error("precondition violated: {0}")]
    PreconditionViolated(String),

    #[error("invalid modulus: {0}")]
    InvalidModulus(String),

    #[error("modulus evaluated at {x}, outside its domain [{min}, {max}]")]
    DomainExceeded { x: f64, min: f64, max: f64 },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error(
        "no compatibility constant found: best C_1 = {c1:e} at pair ({x0}, {y0}), depth {depth}"
    )]
    CertificateFailed {
        c1: f64,
        x0: f64,
        y0: f64,
        depth: usize,
    },

    #[error("power iteration did not converge in {iterations} iterations (delta {delta:e}, residual {residual:e})")]
    NoConvergence {
        iterations: usize,
        delta: f64,
        residual: f64,
    },

    #[error("eigenfunction is not positive at node {index} (value {value:e})")]
    NonpositiveEigenfunction { index: usize, value: f64 },

    #[error("seminorm blow-up for observable `{observable}` at n = {n} (norm {norm:e})")]
    SeminormBlowup {
        observable: String,
        n: usize,
        norm: f64,
    },

    #[error("only {usable} points above the noise floor, at least {needed} needed")]
    InsufficientSignal { usable: usize, needed: usize },

    #[error(
        "degenerate asymptotic variance {variance:e}; observable looks cohomologous to a constant"
    )]
    DegenerateVariance { variance: f64 },
}
