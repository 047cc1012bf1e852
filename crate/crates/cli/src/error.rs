use std::path::PathBuf;

use hpscreen::anomaly::AnomalyError;
use hpscreen::autoencoder::ModelError;
use hpscreen::diagnosis::DiagnosisError;
use hpscreen::evaluation::EvalError;
use hpscreen::imaging::ImagingError;
use hpscreen::segmentation::SegmentationError;
use hpscreen::synth::SynthError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("missing input {}: {hint}", path.display())]
    MissingInput { path: PathBuf, hint: String },
    #[error("{stage} outputs in the workdir were produced with different settings; rerun `hpscreen {stage}` first")]
    Stale { stage: &'static str },
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("data: {0}")]
    Data(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    /// 2 configuration, 3 missing or stale input, 4 model, 5 data, 1 other.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingInput { .. } | CliError::Stale { .. } => 3,
            CliError::Model(_) => 4,
            CliError::Data(_) => 5,
            CliError::Io { .. } => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}

impl From<ImagingError> for CliError {
    fn from(e: ImagingError) -> Self {
        match e {
            ImagingError::MissingFile(path) => CliError::MissingInput { path, hint: "file not found".into() },
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<SegmentationError> for CliError {
    fn from(e: SegmentationError) -> Self {
        match e {
            SegmentationError::Imaging(e) => e.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<AnomalyError> for CliError {
    fn from(e: AnomalyError) -> Self {
        match e {
            AnomalyError::Model(e) => e.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<DiagnosisError> for CliError {
    fn from(e: DiagnosisError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::InvalidSpec(m) => CliError::Config(m),
            SynthError::Imaging(e) => e.into(),
            SynthError::Io { path, source } => CliError::Io { path, source },
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
