use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown family `{0}`")]
    UnknownFamily(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("boundary projection did not converge from {start:?} after {iterations} iterations")]
    ProjectionFailed { start: Vec<[f64; 2]>, iterations: usize },

    #[error("Levi matrix not positive definite on the band (min eigenvalue {min_eigenvalue:.3e}); eps1 too large")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("degenerate family: {0}")]
    Degenerate(String),

    #[error("certificate breach: {0}")]
    CertificateBreach(String),

    #[error("point outside the evaluation domain (level {level:.3e} above {threshold:.3e})")]
    OutsideDomain { level: f64, threshold: f64 },

    #[error("ill-conditioned least-squares system (condition estimate {0:.3e})")]
    IllConditioned(f64),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn at_stage(self, stage: &'static str) -> Self {
        match self {
            Error::Stage { .. } => self,
            other => Error::Stage {
                stage,
                source: Box::new(other),
            },
        }
    }

    /// Name of the pipeline stage that produced this error, if any.
    pub fn stage(&self) -> Option<&'static str> {
        match self {
            Error::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.at_stage(stage))
    }
}
