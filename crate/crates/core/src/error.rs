use thiserror::Error;

/// Errors raised while reading or validating a knowledge base document.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum KbError {
    #[error("parse error at `{path}`: {message}")]
    Parse { path: String, message: String },
    #[error("unsupported knowledge base version {0}")]
    Version(u32),
    #[error("reference error: {0}")]
    Reference(String),
    #[error("validation error: {0}")]
    Validation(String),
    #[error("unknown category `{0}`")]
    UnknownCategory(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BeliefError {
    #[error("prior weights are all zero")]
    DegeneratePrior,
    #[error("prior weight {0} is negative or not finite")]
    InvalidWeight(f64),
    #[error("belief collapsed: every concept has zero likelihood")]
    CollapsedBelief,
    #[error("empty answer selection")]
    EmptySelection,
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("turn budget of {0} exhausted")]
    TurnLimit(usize),
    #[error(transparent)]
    Kb(#[from] KbError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("no unasked questions remain")]
    Exhausted,
    #[error("learned policy requested but no policy network is loaded")]
    MissingNetwork,
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("mask excludes every output")]
    EmptyMask,
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("head mismatch: operation requires {expected}, network has {actual}")]
    Head {
        expected: &'static str,
        actual: &'static str,
    },
    #[error("malformed network file, line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SessionError {
    #[error("session is closed")]
    Closed,
    #[error("session is still awaiting an answer")]
    StillActive,
    #[error("answer for `{got}` but the pending question is `{expected}`")]
    OutOfOrder { expected: String, got: String },
    #[error("invalid option `{option}` for question `{question}`")]
    InvalidOption { question: String, option: String },
    #[error("invalid session configuration: {0}")]
    Config(String),
    #[error("question `{0}` is not covered by the script and no fallback was given")]
    Unscripted(String),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("non-finite {what} at epoch {epoch}")]
    Numerical {
        what: &'static str,
        epoch: usize,
        checkpoint: Box<crate::rl::NetworkBundle>,
    },
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("invalid evaluation request: {0}")]
    Config(String),
    #[error("i/o error writing `{path}`: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Kb(#[from] KbError),
}
