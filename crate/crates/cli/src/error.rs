use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] curate_core::Error),
    #[error("bad configuration: {0}")]
    BadConfig(String),
    #[error("address {addr} is unavailable: {source}")]
    AddrInUse { addr: String, source: std::io::Error },
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CliError {
    /// 0 success, 1 domain error, 2 corrupt input or configuration.
    pub fn exit_code(&self) -> u8 {
        use curate_core::Error as E;
        match self {
            CliError::BadConfig(_) | CliError::Io { .. } => 2,
            CliError::Core(E::CorruptSession(_) | E::SchemaMismatch { .. } | E::MalformedSuite { .. })
            | CliError::Core(E::TemplateFormat { .. } | E::Io(_)) => 2,
            _ => 1,
        }
    }
}
