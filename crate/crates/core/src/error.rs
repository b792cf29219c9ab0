use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // pose graph
    #[error("non-monotonic stamp {stamp} (last accepted {last})")]
    NonMonotonicStamp { stamp: f64, last: f64 },
    #[error("embedding row {row} out of range for bank with {rows} rows")]
    InvalidEmbeddingRow { row: usize, rows: usize },
    #[error("unknown node id {0}")]
    UnknownNode(usize),
    #[error("base version {base} is newer than current version {current}")]
    StaleVersion { base: u64, current: u64 },

    // semantics
    #[error("vector dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("zero-norm vector")]
    ZeroVector,
    #[error("node {0} has no room label")]
    Unlabeled(usize),
    #[error("prompt bank is empty")]
    EmptyPrompts,
    #[error("duplicate prompt label `{0}`")]
    DuplicateLabel(String),
    #[error("invalid room label `{0}`")]
    InvalidLabel(String),

    // loop closure
    #[error("node {0} carries no local features")]
    MissingFeatures(usize),

    // optimizer
    #[error("negative chi2 {0}")]
    NegativeChi2(f64),
    #[error("pose graph is disconnected: node {0} unreachable from the anchor")]
    Disconnected(usize),
    #[error("normal equations singular even at damping {0:e}")]
    Singular(f64),

    // planner
    #[error("no cluster carries label `{0}`")]
    UnknownLabel(String),

    // evaluation
    #[error("node {node} falls inside overlapping ground-truth boxes `{first}` and `{second}`")]
    OverlappingBoxes {
        node: usize,
        first: usize,
        second: usize,
    },
    #[error("need at least {needed} pose pairs, got {got}")]
    TooFewPoses { needed: usize, got: usize },
    #[error("no ground-truth entry for node {0}")]
    MissingGroundTruth(usize),
    #[error("archetype generation failed: {labels} labels cannot keep pairwise cosine <= {max_cosine} in dimension {dim}")]
    ArchetypeRejection {
        labels: usize,
        dim: usize,
        max_cosine: f64,
    },
    #[error("invalid scene: {0}")]
    InvalidScene(String),

    // io
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("{path}: bad magic {found:?}")]
    BadMagic { path: PathBuf, found: [u8; 4] },
    #[error("{path}: unsupported version {found}")]
    VersionMismatch { path: PathBuf, found: u32 },
    #[error("{path}: size mismatch, header implies {expected} bytes, file has {actual}")]
    SizeMismatch {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },
    #[error("record {record} references embedding row {row}, bank has {rows} rows")]
    DanglingRow {
        record: usize,
        row: usize,
        rows: usize,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("invalid bundle: {0}")]
    InvalidBundle(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{context}: {source}")]
    Stage {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    pub(crate) fn in_stage(self, context: impl Into<String>) -> Self {
        Error::Stage {
            context: context.into(),
            source: Box::new(self),
        }
    }
}
