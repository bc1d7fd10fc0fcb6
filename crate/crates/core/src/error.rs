use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid belief mass (m_o={m_o}, m_f={m_f})")]
    InvalidMass { m_o: f64, m_f: f64 },

    #[error("total conflict between fused masses (K={conflict})")]
    TotalConflict { conflict: f64 },

    #[error("cannot normalize degenerate mass (sum={total})")]
    DegenerateMass { total: f64 },

    #[error("invalid grid spec: {0}")]
    InvalidSpec(String),

    #[error("grid spec mismatch: {0}")]
    SpecMismatch(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid scene config: {0}")]
    InvalidConfig(String),

    #[error("duplicate track id {0} within one frame")]
    DuplicateTrack(u32),

    #[error("corrupt {what}: {reason}")]
    Corrupt { what: &'static str, reason: String },

    #[error("empty evaluation set")]
    EmptySet,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn corrupt(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Corrupt { what, reason: reason.into() }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
