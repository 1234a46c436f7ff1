use thiserror::Error;

/// Every failure the laboratory can report. Variants map onto the CLI exit
/// codes through [`LabError::exit_code`].
#[derive(Debug, Error)]
pub enum LabError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("parameter error: {0}")]
    Parameter(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("compatibility error: {0}")]
    Compatibility(String),

    #[error("conditioning error: {0}")]
    Conditioning(String),

    #[error("resolution error: {0}")]
    Resolution(String),

    #[error("solenoidality error: {0}")]
    Solenoidality(String),

    #[error("internal consistency error: {0}")]
    InternalConsistency(String),

    #[error("smallness gate failed ({gate}): measured {measured:.6e} >= threshold {threshold:.6e}")]
    Smallness {
        gate: String,
        measured: f64,
        threshold: f64,
    },

    #[error("Picard iteration diverged after {iterations} iterations (residuals {residuals:?})")]
    Divergence {
        iterations: usize,
        residuals: Vec<f64>,
    },

    #[error("stability error: {0}")]
    Stability(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<LabError>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;

impl LabError {
    pub fn in_stage(self, stage: &str) -> LabError {
        LabError::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }

    /// Innermost error, looking through stage wrappers.
    pub fn root(&self) -> &LabError {
        match self {
            LabError::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// Exit code contract of the `nse-lab` binary: 2 for usage/schema
    /// problems, 3 for numerical failures. Check failures (code 1) are not
    /// errors; they are reported through a `RunReport`.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            LabError::Schema(_) | LabError::Parameter(_) | LabError::Json(_) => 2,
            LabError::Io(_) | LabError::Format(_) => 2,
            _ => 3,
        }
    }
}
