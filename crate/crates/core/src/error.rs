use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("schema error: {0}")]
    SchemaParse(String),
    #[error("no data file for table `{table}` at {path}")]
    MissingTableFile { table: String, path: PathBuf },
    #[error("table `{table}` has duplicate primary key {id}")]
    DuplicatePrimaryKey { table: String, id: i64 },
    #[error("`{table}` tuple {tuple}: `{column}` = {value} references no existing tuple")]
    DanglingForeignKey { table: String, tuple: i64, column: String, value: String },
    #[error("`{table}` line {line}, column `{column}`: cannot read `{value}`")]
    BadCell { table: String, line: u64, column: String, value: String },
    #[error("`{table}`: {message}")]
    Csv { table: String, message: String },
    #[error("{count} empty cell(s) are still pending an insertion")]
    PendingEmptyCells { count: usize },
    #[error("foreign keys form a cycle through `{table}`")]
    CyclicSchema { table: String },
    #[error("i/o failure on {path}: {source}")]
    IoFailure { path: PathBuf, source: std::io::Error },
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::IoFailure { path: path.to_path_buf(), source }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModificationError {
    #[error("unknown table index {0}")]
    UnknownTable(usize),
    #[error("table `{table}` has no tuple {tuple}")]
    UnknownTuple { table: String, tuple: i64 },
    #[error("table `{table}` has no value column {index}")]
    ColumnOutOfRange { table: String, index: usize },
    #[error("`{table}` tuple {tuple} column {col}: {reason}")]
    CellState { table: String, tuple: i64, col: usize, reason: &'static str },
    #[error("{got} values supplied for {expected} columns")]
    ValueCount { expected: usize, got: usize },
    #[error("`{table}` column {col}: value kind does not match the column")]
    KindMismatch { table: String, col: usize },
    #[error("`{table}` column {col}: {value} references no existing tuple")]
    Dangling { table: String, col: usize, value: i64 },
    #[error("modification lists no tuples or columns")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FeatureError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("target cannot be repaired: {0}")]
    InfeasibleRepair(String),
    #[error("distributions belong to different groups: {0}")]
    GroupMismatch(String),
    #[error("distributions belong to different bindings: {0}")]
    BindingMismatch(String),
    #[error("ground truth is zero")]
    ZeroTruth,
    #[error("unknown table `{0}`")]
    UnknownTable(String),
    #[error("query does not fit the schema: {0}")]
    SpecMismatch(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScaleError {
    #[error("table `{table}` cannot hold {size} tuples while `{references}` is empty")]
    InfeasibleTarget { table: String, references: String, size: u64 },
    #[error("no target size given for table `{0}`")]
    MissingSize(String),
    #[error("target size names unknown table `{0}`")]
    UnknownTable(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OverlapError {
    #[error("overlap graph has {nodes} tools, exact search supports at most {limit}")]
    GraphTooLarge { nodes: usize, limit: usize },
}

#[derive(Debug, Error)]
pub enum CoordError {
    #[error("malformed modification: {0}")]
    Malformed(#[from] ModificationError),
    #[error("verdict was computed against version {verdict}, dataset is at {current}")]
    StaleVerdict { verdict: u64, current: u64 },
    #[error("verdict was a rejection and cannot be applied")]
    NotAccepted,
    #[error("tool `{tool}` exhausted {rounds} relaxation round(s)")]
    CoordinatorExhausted { tool: String, rounds: usize },
    #[error("target for `{tool}` is infeasible: {}", violations.join("; "))]
    TargetInfeasible { tool: String, violations: Vec<String> },
    #[error("a tool named `{0}` is already registered")]
    DuplicateToolName(String),
    #[error("no registered tool `{0}`")]
    UnknownTool(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

/// Any failure surfaced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Modification(#[from] ModificationError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Scale(#[from] ScaleError),
    #[error(transparent)]
    Overlap(#[from] OverlapError),
    #[error(transparent)]
    Coord(#[from] CoordError),
    #[error("configuration error: {0}")]
    Config(String),
}
