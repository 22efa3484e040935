use crate::datamodel::ClassId;

pub type Result<T> = std::result::Result<T, Error>;

/// Library error type. Variants carry enough context (file, line, ids,
/// dimensions) that callers can report failures without re-deriving state.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {file} line {line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },

    #[error("invalid split description: {0}")]
    SplitJson(#[from] serde_json::Error),

    #[error("{file} line {line}: label id {id} out of range for {n_classes} classes")]
    LabelOutOfRange {
        file: String,
        line: usize,
        id: usize,
        n_classes: usize,
    },

    #[error("invalid {what}: {message}")]
    Invalid { what: String, message: String },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("empty candidate set after restriction")]
    EmptyCandidates,

    #[error("unknown class id {id} (table has {n_classes} classes)")]
    UnknownClass { id: ClassId, n_classes: usize },

    #[error("class {id} has no images in the required set ({context})")]
    ClassWithoutImages { id: ClassId, context: String },

    #[error("attribute {attribute} is constant across classes; cannot binarize")]
    ConstantAttribute { attribute: usize },

    #[error("classes {a} and {b} share an identical binary attribute signature")]
    DuplicateSignature { a: ClassId, b: ClassId },

    #[error("classes {a} and {b} share an identical embedding among split classes")]
    DuplicateEmbedding { a: ClassId, b: ClassId },

    #[error("linear system is singular or not positive definite ({context})")]
    SingularSystem { context: String },

    #[error("{method} training diverged at epoch {epoch}: non-finite parameters")]
    Diverged { method: String, epoch: usize },

    #[error("simplex solver did not reach a fixed point: residual {residual:.3e} after {iters} iterations")]
    NotConverged { residual: f64, iters: usize },

    #[error("class id {id} has no name (names list has {n_names} entries)")]
    MissingClassName { id: ClassId, n_names: usize },

    #[error("synthetic generation failed: {0}")]
    Synthetic(String),

    #[error("{context}: {message}")]
    Config { context: String, message: String },
}

impl Error {
    pub fn invalid(what: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Invalid {
            what: what.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(file: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            file: file.into(),
            line,
            message: message.into(),
        }
    }
}
