//! Error type shared across the core engine.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Result alias used throughout the crate.
pub type Result<T> = core::result::Result<T, CoreError>;

/// Errors surfaced by the fallible operations of the engine.
///
/// Shape mismatches in the low-level tensor arithmetic are programmer
/// errors and panic instead; this enum covers contract violations that
/// depend on runtime data (configs, cohorts, temperatures, queues).
#[derive(Clone, Debug, PartialEq)]
pub enum CoreError {
    /// Softmax or calibration called with a non-positive temperature.
    NonPositiveTemperature { got: f64 },
    /// An input tensor carried a NaN where a finite value is required.
    NonFiniteInput { context: &'static str },
    /// Dropout rate outside `[0, 1)`.
    InvalidDropoutRate { got: f64 },
    /// `backward` called on a tensor that is not a scalar.
    LossNotScalar { shape: Vec<usize> },
    /// `backward` called twice through the same recorded graph.
    GraphConsumed,
    /// A vector argument had the wrong length.
    LengthMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    /// Token id at or above the vocabulary size.
    TokenOutOfRange { id: u32, vocab: usize },
    /// An operation that needs at least one element got none.
    EmptyInput(&'static str),
    /// Contrastive loss or alpha rule asked to run against an empty queue.
    EmptyQueue,
    /// A zero vector where a direction is required (normalization, enqueue).
    ZeroVector(&'static str),
    /// Momentum pair or checkpoint with mismatched parameter lists.
    ParameterMismatch { detail: String },
    /// Invalid cohort or training configuration.
    InvalidConfig(String),
    /// Graph file or construction violated an invariant.
    InvalidGraph(String),
    /// Class or disease id outside the configured range.
    ClassOutOfRange { id: usize, classes: usize },
    /// A metric over binary labels saw only one class.
    SingleClassLabels,
    /// A metric input was outside its documented domain.
    MetricDomain { context: &'static str, got: f64 },
    /// Cohort loaded without stored latents cannot drive the oracle.
    MissingLatent { patient_id: u64 },
    /// Training diverged (non-finite loss) at the given epoch/step.
    Diverged { epoch: usize, step: usize },
    /// Train/val/test split left a partition empty.
    EmptySplit(&'static str),
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::NonPositiveTemperature { got } => {
                write!(f, "temperature must be positive, got {got}")
            }
            CoreError::NonFiniteInput { context } => {
                write!(f, "non-finite value in {context}")
            }
            CoreError::InvalidDropoutRate { got } => {
                write!(f, "dropout rate must lie in [0, 1), got {got}")
            }
            CoreError::LossNotScalar { shape } => {
                write!(f, "backward requires a scalar loss, got shape {shape:?}")
            }
            CoreError::GraphConsumed => {
                write!(f, "computation graph already consumed by a previous backward")
            }
            CoreError::LengthMismatch {
                context,
                expected,
                got,
            } => write!(f, "{context}: expected length {expected}, got {got}"),
            CoreError::TokenOutOfRange { id, vocab } => {
                write!(f, "token id {id} out of range for vocabulary of size {vocab}")
            }
            CoreError::EmptyInput(what) => write!(f, "{what} must not be empty"),
            CoreError::EmptyQueue => write!(f, "negative queue is empty"),
            CoreError::ZeroVector(context) => {
                write!(f, "zero vector rejected in {context}")
            }
            CoreError::ParameterMismatch { detail } => {
                write!(f, "parameter mismatch: {detail}")
            }
            CoreError::InvalidConfig(detail) => write!(f, "invalid config: {detail}"),
            CoreError::InvalidGraph(detail) => write!(f, "invalid graph: {detail}"),
            CoreError::ClassOutOfRange { id, classes } => {
                write!(f, "class id {id} out of range for {classes} classes")
            }
            CoreError::SingleClassLabels => {
                write!(f, "metric needs both classes present in labels")
            }
            CoreError::MetricDomain { context, got } => {
                write!(f, "{context} outside valid range, got {got}")
            }
            CoreError::MissingLatent { patient_id } => {
                write!(f, "patient {patient_id} carries no stored latent; oracle unavailable")
            }
            CoreError::Diverged { epoch, step } => {
                write!(f, "training diverged (non-finite loss) at epoch {epoch}, step {step}")
            }
            CoreError::EmptySplit(which) => write!(f, "{which} split is empty"),
        }
    }
}

impl core::error::Error for CoreError {}
