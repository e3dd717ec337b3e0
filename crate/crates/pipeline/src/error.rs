use std::path::PathBuf;

use moundline::catalog::CatalogError;
use moundline::evals::EvalError;
use moundline::formats::FormatError;
use moundline::model::ModelError;
use moundline::mosaic::MosaicError;
use moundline::postproc::PostprocError;
use moundline::synth::SynthError;
use moundline::tiles::TileError;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("input not found: {}", .0.display())]
    MissingInput(PathBuf),
    #[error("unknown run {0}")]
    UnknownRun(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Tile(#[from] TileError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Postproc(#[from] PostprocError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Mosaic(#[from] MosaicError),
    #[error(transparent)]
    Synth(#[from] SynthError),
}

impl PipelineError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    /// Bad user input, as opposed to a failure while doing valid work.
    pub fn is_validation(&self) -> bool {
        match self {
            Self::Config(_) | Self::MissingInput(_) | Self::UnknownRun(_) => true,
            Self::Catalog(e) => !matches!(e, CatalogError::StratumTooSmall { .. }),
            Self::Model(e) => matches!(e, ModelError::InvalidSpec(_) | ModelError::EmptyTrainingSet),
            Self::Postproc(e) => !matches!(e, PostprocError::DegenerateResult(_)),
            Self::Mosaic(e) => matches!(e, MosaicError::InvalidSweep(_) | MosaicError::ExtentTooSmall { .. }),
            Self::Synth(e) => matches!(e, SynthError::InvalidSpec(_)),
            Self::Eval(e) => matches!(e, EvalError::InsufficientCount { .. } | EvalError::BadRecord(_)),
            Self::Tile(e) => matches!(e, TileError::InvalidSpec(_) | TileError::InvalidWindow(_)),
            Self::Io { .. } | Self::Format(_) => false,
        }
    }

    pub fn exit_code(&self) -> i32 {
        if self.is_validation() {
            2
        } else {
            1
        }
    }

    pub fn report(&self) -> ErrorReport {
        ErrorReport {
            v: 1,
            error: ErrorBody {
                kind: if self.is_validation() { "validation" } else { "runtime" },
                message: self.to_string(),
            },
        }
    }
}

/// Machine-readable error printed with `--json-errors`.
#[derive(Debug, Serialize)]
pub struct ErrorReport {
    pub v: u32,
    pub error: ErrorBody,
}

#[derive(Debug, Serialize)]
pub struct ErrorBody {
    pub kind: &'static str,
    pub message: String,
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;
