use std::io;

use thiserror::Error;

/// Errors raised while ingesting, transforming or analysing annotation data.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },

    #[error("line {line}: duplicate record for file `{file_id}` and annotator `{annotator_id}`")]
    DuplicateRecord {
        line: u64,
        file_id: String,
        annotator_id: String,
    },

    #[error("unknown label `{0}`")]
    UnknownLabel(String),

    #[error("unknown annotator `{0}`")]
    UnknownAnnotator(String),

    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),

    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("missing competence for annotator `{0}`")]
    MissingCompetence(String),

    #[error("incomplete item grid: file `{file_id}` lacks label `{label}`")]
    IncompleteGrid { file_id: String, label: String },

    #[error("infeasible assignment: {files_per_annotator} files per annotator but only {num_files} files")]
    InfeasibleAssignment {
        files_per_annotator: usize,
        num_files: usize,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// True for failures of the estimation machinery rather than of the input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
