use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("{func}: argument must be positive, got {x}")]
    Domain { func: &'static str, x: f64 },

    #[error("dimension mismatch in task {task}: {detail}")]
    Dimension { task: usize, detail: String },

    #[error("task {task} has an empty design (n = {n}, s = {s})")]
    EmptyDesign { task: usize, n: usize, s: usize },

    #[error("task {task}: group label {label} at column {column} is outside 1..={groups}")]
    Label {
        task: usize,
        column: usize,
        label: usize,
        groups: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;
