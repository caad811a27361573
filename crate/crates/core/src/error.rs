use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("could not place obstacle after {attempts} attempts (grid too full)")]
    Placement { attempts: u32 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("timestep {t} outside buffer coverage [{start}, {end}]")]
    OutOfRange { t: u32, start: u32, end: u32 },

    #[error("q-learning did not converge for goal ({goal_x}, {goal_y}): {failing} of {total} start cells miss the goal within 2x manhattan distance")]
    TrainingFailure {
        goal_x: i32,
        goal_y: i32,
        failing: usize,
        total: usize,
    },

    #[error("policy file {path}: {reason}")]
    PolicyFormat { path: PathBuf, reason: String },

    #[error("degenerate statistics input: {0}")]
    Degenerate(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {source}")]
    Toml {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        Error::Csv {
            path: path.into(),
            source,
        }
    }
}
