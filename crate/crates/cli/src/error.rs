use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}`: {msg}")]
    Value { key: String, msg: String },
    #[error("missing required keys: {}", .0.join(", "))]
    Missing(Vec<String>),
    #[error("unknown preset `{0}` (available: system-a, system-b, iv-a-hamming)")]
    UnknownPreset(String),
    #[error("{}: {source}", .path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("group `{group}`: {source}")]
    Run { group: String, source: ura_core::Error },
    #[error(transparent)]
    Core(#[from] ura_core::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

pub(crate) fn io_at(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}
