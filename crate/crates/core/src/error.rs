use std::fmt;
use std::path::PathBuf;
use std::time::Duration;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Audit stage a failure is attributed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Data,
    Split,
    Standardize,
    Train,
    Anchor,
    Baseline,
    Attribution,
    Suite,
    Importance,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Data => "data",
            Stage::Split => "split",
            Stage::Standardize => "standardize",
            Stage::Train => "train",
            Stage::Anchor => "anchor",
            Stage::Baseline => "baseline",
            Stage::Attribution => "attribution",
            Stage::Suite => "suite",
            Stage::Importance => "importance",
            Stage::Report => "report",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(String),

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("provenance mismatch: {0}")]
    Provenance(String),

    #[error("scoring failed ({context}): {source}")]
    Scoring {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("bridge protocol error: {0}")]
    Protocol(String),

    #[error("bridge timed out after {0:?}")]
    Timeout(Duration),

    #[error("bridge endpoint error: {0}")]
    Remote(String),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: Stage,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn at_stage(self, stage: Stage) -> Self {
        match self {
            // keep the innermost stage tag
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// True when the root cause is a bridge timeout.
    pub fn is_timeout(&self) -> bool {
        match self {
            Error::Timeout(_) => true,
            Error::Stage { source, .. } | Error::Scoring { source, .. } => source.is_timeout(),
            _ => false,
        }
    }

    pub fn stage(&self) -> Option<Stage> {
        match self {
            Error::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: Stage) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: Stage) -> Result<T> {
        self.map_err(|e| e.at_stage(stage))
    }
}
