use std::path::PathBuf;

use thiserror::Error;

use crate::data::Triple;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("missing triple file for split `{split}` in {dir}")]
    MissingSplit { split: &'static str, dir: PathBuf },

    #[error("line {line}: expected 3 tab-separated fields, found {found}")]
    MalformedLine { line: usize, found: usize },

    #[error("line {line}: empty field")]
    EmptyField { line: usize },

    #[error("triple ({head}, {relation}, {tail}) appears in both `{first}` and `{second}`")]
    OverlappingSplits {
        head: String,
        relation: String,
        tail: String,
        first: &'static str,
        second: &'static str,
    },

    #[error("entity id {id} out of range (|E| = {count})")]
    EntityOutOfRange { id: u32, count: usize },

    #[error("relation id {id} out of range (|R| = {count})")]
    RelationOutOfRange { id: u32, count: usize },

    #[error("cannot corrupt triples with fewer than 2 entities")]
    TooFewEntities,

    #[error("negative count must be at least 1")]
    ZeroNegatives,

    #[error("invalid dimension schedule: {0}")]
    InvalidSchedule(String),

    #[error("sub-model index {index} out of range 1..={count}")]
    SubModelOutOfRange { index: usize, count: usize },

    #[error("dimension {dim} is not in the schedule {valid:?}")]
    DimNotInSchedule { dim: usize, valid: Vec<usize> },

    #[error("model has no rows in table `{0}`")]
    EmptyTable(String),

    #[error("importance vector has length {found}, model width is {expected}")]
    ImportanceLength { expected: usize, found: usize },

    #[error("importance vector contains a non-finite value at column {0}")]
    NonFiniteImportance(usize),

    #[error("checkpoint: bad magic bytes")]
    BadMagic,

    #[error("checkpoint: unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u16, found: u16 },

    #[error("checkpoint: truncated while reading {0}")]
    Truncated(&'static str),

    #[error("checkpoint: CRC mismatch in table `{table}` (stored {stored:#010x}, computed {computed:#010x})")]
    CrcMismatch {
        table: String,
        stored: u32,
        computed: u32,
    },

    #[error("checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("unknown score function `{0}`")]
    UnknownScoreFunction(String),

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("split `{0}` is empty")]
    EmptySplit(&'static str),

    #[error("non-finite loss at step {step} (sub-model {sub_model}); offending batch has {} positives", batch.len())]
    NonFiniteLoss {
        step: u64,
        sub_model: usize,
        batch: Vec<Triple>,
    },

    #[error("student dimension {student} exceeds teacher dimension {teacher}")]
    StudentTooWide { student: usize, teacher: usize },

    #[error("model/dataset mismatch: {0}")]
    Mismatch(String),

    #[error("report: {0}")]
    Report(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
