use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("seed {seed}, {setting}: {source}")]
    Run {
        seed: u64,
        setting: String,
        #[source]
        source: vpm::Error,
    },
    #[error(transparent)]
    Vpm(#[from] vpm::Error),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{0} self-test check(s) failed")]
    SelfTest(usize),
}

impl CliError {
    /// 1 for configuration problems, 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Attaches seed and setting context to a library error.
pub(crate) trait Context<T> {
    fn at(self, seed: u64, setting: &str) -> CliResult<T>;
}

impl<T> Context<T> for vpm::Result<T> {
    fn at(self, seed: u64, setting: &str) -> CliResult<T> {
        self.map_err(|source| CliError::Run {
            seed,
            setting: setting.to_string(),
            source,
        })
    }
}
