use std::path::{Path, PathBuf};

/// Failures surfaced by the harness. Each maps to a process exit code.
#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{0}")]
    Config(String),
    #[error("missing artifact {}: {reason}", path.display())]
    MissingArtifact { path: PathBuf, reason: String },
    #[error("verification failed: {0}")]
    Verification(String),
    #[error("bad file {}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },
    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] chanrep_core::Error),
}

pub type Result<T> = std::result::Result<T, HarnessError>;

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::MissingArtifact { .. } | HarnessError::Format { .. } => 3,
            HarnessError::Verification(_) => 4,
            _ => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Config(_) => "config",
            HarnessError::MissingArtifact { .. } => "missing_artifact",
            HarnessError::Verification(_) => "verification",
            HarnessError::Format { .. } => "format",
            HarnessError::Io { .. } => "io",
            HarnessError::Core(_) => "numeric",
        }
    }

    /// One-line JSON rendering for stderr.
    pub fn to_line(&self) -> String {
        serde_json::json!({ "error": self.kind(), "exit": self.exit_code(), "message": self.to_string() }).to_string()
    }

    pub fn format(path: &Path, reason: impl Into<String>) -> Self {
        HarnessError::Format { path: path.to_path_buf(), reason: reason.into() }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        if source.kind() == std::io::ErrorKind::NotFound {
            HarnessError::MissingArtifact { path: path.to_path_buf(), reason: "not found".into() }
        } else {
            HarnessError::Io { path: path.to_path_buf(), source }
        }
    }
}

pub(crate) fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| HarnessError::io(path, e))
}

pub(crate) fn read_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))
}

pub(crate) fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io { path: dir.to_path_buf(), source: e })?;
    }
    std::fs::write(path, bytes).map_err(|e| HarnessError::Io { path: path.to_path_buf(), source: e })
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_string(path)?).map_err(|e| HarnessError::format(path, e.to_string()))
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| HarnessError::format(path, e.to_string()))?;
    s.push('\n');
    write(path, s.as_bytes())
}
