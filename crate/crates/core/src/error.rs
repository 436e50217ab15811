use diffcore::DiffError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("toml: {0}")]
    Toml(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch in {op}: expected {expected}, found {found}")]
    Shape { op: &'static str, expected: String, found: String },
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("numerical blow-up at stride {stride}; kinetic energy spectrum {spectrum:?}")]
    BlowUp { stride: usize, spectrum: Vec<f64> },
    #[error("CFL number {cfl:.3} exceeds 0.5 at stride {stride}")]
    Cfl { stride: usize, cfl: f64 },
    #[error("bad file format: {0}")]
    Format(String),
    #[error("unsupported format version {found} (expected {expected})")]
    Version { expected: u32, found: u32 },
    #[error("payload checksum mismatch")]
    PayloadChecksum,
    #[error("model checksum mismatch: archive {archive}, checkpoint {checkpoint}")]
    ModelChecksum { archive: String, checkpoint: String },
    #[error("{what} {index} out of range (have {len})")]
    OutOfRange { what: &'static str, index: usize, len: usize },
    #[error("training diverged in phase {phase} at update {update}")]
    Diverged { phase: String, update: usize },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Toml(e.to_string())
    }
}

impl From<toml::ser::Error> for Error {
    fn from(e: toml::ser::Error) -> Self {
        Error::Toml(e.to_string())
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
