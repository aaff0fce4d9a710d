use alloc::string::String;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("row {row}: {message}")]
    InvalidRow { row: usize, message: String },
    #[error("subject {subject}: {message}")]
    InvalidSubject { subject: String, message: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("time {time} outside [0, {tau}]")]
    TimeOutOfRange { time: f64, tau: f64 },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("dataset has no observed recurrent events")]
    NoEvents,
    #[error("IPC weight undefined for subject {subject}: censoring survival is zero at {time}")]
    ZeroCensoringSurvival { subject: String, time: f64 },
    #[error("pseudo risk set is empty at time {time}")]
    EmptyRiskSet { time: f64 },
    #[error("non-finite value for subject {subject} at time {time}: {what}")]
    NonFinite { subject: String, time: f64, what: &'static str },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("matrix is not positive definite (pivot {pivot}); inspect the model and the data")]
    NotPositiveDefinite { pivot: usize },
    #[error("{solver} did not converge after {iterations} iterations (gradient norm {gradient_norm:e})")]
    NoConvergence { solver: &'static str, iterations: usize, gradient_norm: f64 },
    #[error("bisection failed to bracket a root on [{lo}, {hi}]")]
    Bisection { lo: f64, hi: f64 },
    #[error("all {0} replicates failed")]
    AllReplicatesFailed(usize),
}

pub type Result<T> = core::result::Result<T, Error>;
