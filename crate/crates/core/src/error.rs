use thiserror::Error;

use crate::bridge::BridgeError;
use crate::engine::EngineError;
use crate::export::ExportError;
use crate::ingest::IngestError;
use crate::model::ModelError;
use crate::recovery::RecoveryError;
use crate::runner::RunnerError;

/// Any failure of a localization run, tagged with the module it came from.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration: {0}")]
    Config(String),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("coverage ingest: {0}")]
    Ingest(#[from] IngestError),
    #[error("test runner: {0}")]
    Runner(#[from] RunnerError),
    #[error("engine: {0}")]
    Engine(#[from] EngineError),
    #[error("exception recovery: {0}")]
    Recovery(#[from] RecoveryError),
    #[error("source bridge: {0}")]
    Bridge(#[from] BridgeError),
    #[error("export: {0}")]
    Export(#[from] ExportError),
}

impl Error {
    /// 1 for problems with what the user asked for or supplied, 2 for runs
    /// that could not be carried out.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Model(_)
            | Error::Ingest(_)
            | Error::Recovery(_)
            | Error::Runner(RunnerError::InvalidConfig(_))
            | Error::Engine(
                EngineError::UnknownFormula(_)
                | EngineError::InvalidFormulaName(_)
                | EngineError::DuplicateFormulaName(_),
            )
            | Error::Export(ExportError::UnknownFormat(_) | ExportError::DuplicateExporterName(_)) => 1,
            Error::Runner(_) | Error::Engine(_) | Error::Bridge(_) | Error::Export(_) => 2,
        }
    }
}
