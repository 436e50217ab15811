use thiserror::Error;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("{0} not found")]
    NotFound(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("replay failed: {0}")]
    Replay(String),
    #[error("checksum mismatch for {path}: manifest {expected}, file {found}")]
    Checksum { path: String, expected: String, found: String },
    #[error(transparent)]
    Core(#[from] sdl_core::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = GatewayError> = std::result::Result<T, E>;

impl GatewayError {
    /// Stable snake-case tag for machine consumers.
    pub fn kind(&self) -> &'static str {
        use sdl_core::Error as C;
        match self {
            GatewayError::NotFound(_) => "not_found",
            GatewayError::BadRequest(_) => "bad_request",
            GatewayError::Replay(_) => "replay_failed",
            GatewayError::Checksum { .. } => "checksum_mismatch",
            GatewayError::Io(_) => "io",
            GatewayError::Json(_) => "json",
            GatewayError::Core(e) => match e {
                C::OutOfRange { .. } => "not_found",
                C::InvalidArgument(_) | C::Shape { .. } | C::Toml(_) => "bad_request",
                C::ModelChecksum { .. } | C::PayloadChecksum => "checksum_mismatch",
                C::Format(_) | C::Version { .. } => "bad_format",
                C::NonFinite(_) | C::BlowUp { .. } | C::Cfl { .. } | C::Diverged { .. } => "numerical",
                C::Io(_) => "io",
                C::Json(_) => "json",
                C::Diff(_) => "internal",
            },
        }
    }

    /// One line: `error kind=<kind> message=<json string>`.
    pub fn line(&self) -> String {
        format!("error kind={} message={}", self.kind(), serde_json::Value::String(self.to_string()))
    }
}
