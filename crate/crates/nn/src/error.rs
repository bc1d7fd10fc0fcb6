use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{0} contains non-finite values")]
    NonFiniteInput(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("non-finite loss {value} at epoch {epoch}, sample {sample}")]
    NonFiniteLoss { epoch: usize, sample: usize, value: f64 },
    #[error("stage {0} requires a model trained on the next-frame stage first")]
    StageOrder(&'static str),
    #[error("corrupt {what}: {reason}")]
    Corrupt { what: &'static str, reason: String },
    #[error(transparent)]
    Core(#[from] dprong_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape(msg: impl Into<String>) -> Error {
    Error::ShapeMismatch(msg.into())
}
