use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },

    /// Malformed input, positioned at the byte where parsing failed.
    #[error("{what}: {detail} (at byte offset {offset})")]
    Format { what: &'static str, offset: u64, detail: String },

    #[error("checkpoint CRC mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Crc { stored: u32, computed: u32 },

    #[error("checkpoint format version {found} is not supported (this build reads version {expected}); re-save the model with a matching release")]
    Version { found: u32, expected: u32 },

    #[error("config: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Csv { path: PathBuf, source: csv::Error },

    #[error("{}: {source}", path.display())]
    Json { path: PathBuf, source: serde_json::Error },

    #[error(transparent)]
    Core(#[from] gsmooth_core::Error),
}

impl Error {
    pub fn format(what: &'static str, offset: usize, detail: impl Into<String>) -> Self {
        Error::Format { what, offset: offset as u64, detail: detail.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub(crate) fn read(path: &std::path::Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write(path: &std::path::Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
