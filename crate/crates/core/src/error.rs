use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {layer}: {detail}")]
    ShapeMismatch { layer: String, detail: String },

    #[error("loss must be a scalar tensor, got dims {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("parameter `{0}` has no gradient")]
    MissingGradient(String),

    #[error("parameter {theta:?} outside the domain of {transform}")]
    OutOfDomain { transform: &'static str, theta: Vec<f64> },

    #[error("{0} is not a resolvable transformation")]
    NotResolvable(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch} (loss = {loss})")]
    Diverged { epoch: usize, loss: f64 },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("size guard violated: {0}")]
    TooLarge(String),

    #[error("mismatch: {0}")]
    Mismatch(String),
}

impl Error {
    pub(crate) fn shape(layer: &str, detail: String) -> Self {
        Error::ShapeMismatch { layer: layer.into(), detail }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
