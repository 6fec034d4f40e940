use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("unknown system `{name}` (available: {available})")]
    UnknownSystem { name: String, available: String },

    #[error("tau = {tau} outside forcing domain ({min}, {max})")]
    Domain { tau: f64, min: f64, max: f64 },

    #[error("lambda = {lambda} cannot be mapped to slow time: {reason}")]
    InverseForcing { lambda: f64, reason: String },

    #[error("assumption violated: {0}")]
    Assumption(String),

    #[error("x = {x} lies on the {side} side of the fold at x_F = {x_fold}")]
    Side { x: f64, x_fold: f64, side: &'static str },

    #[error("reduced flow is singular on the fold at (x, tau) = ({x}, {tau}); use the desingularized field")]
    OnFold { x: f64, tau: f64 },

    #[error("bracket error: {0}")]
    Bracket(String),

    #[error("step size underflow at tau = {tau} (x = {x}, y = {y}); retry with tighter tolerances or the stiff method")]
    Stiffness { tau: f64, x: f64, y: f64 },

    #[error("no jump dichotomy on section: {0}")]
    Section(String),

    #[error("degenerate singularity: {0}")]
    Degenerate(String),

    #[error("invalid input: {0}")]
    Invalid(String),
}

impl Error {
    /// True for failures of the (A1)/(A2) gate, which the CLI maps to a dedicated exit code.
    pub fn is_assumption(&self) -> bool {
        matches!(self, Error::Assumption(_) | Error::Side { .. })
    }
}
