use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("lexicon line {line}: {reason}")]
    LexiconParse { line: usize, reason: String },
    #[error("lexicon term `{0}` appears in more than one entry")]
    DuplicateTerm(String),
    #[error("lexicon entry maps `{0}` to itself")]
    SelfMapped(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {what} (expected {expected}, found {found})")]
    DimensionMismatch {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("missing tensor `{0}`")]
    MissingTensor(String),

    #[error("zero-norm vector in cosine similarity")]
    ZeroNorm,
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("batch shape error: {0}")]
    BatchShape(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("non-finite prediction at index {0}")]
    NonFinitePrediction(usize),
    #[error("label kind does not match task kind")]
    LabelKind,

    #[error("template {0} has no `{{X}}` slot")]
    MissingSlot(usize),
    #[error("template {0} has more than one `{{X}}` slot")]
    MultipleSlots(usize),
    #[error("unknown profession label `{0}`")]
    UnknownProfession(String),
    #[error("missing gender tag in record {0}")]
    MissingGender(usize),

    #[error("cannot compute metric on an empty set")]
    EmptyInput,
    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(&'static str),
    #[error("bias metric needs both genders present")]
    MissingGroup,
    #[error("probabilities at index {0} are negative or do not sum to 1")]
    InvalidProbabilities(usize),

    #[error("loss diverged (non-finite) at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },
    #[error("training data is empty")]
    EmptyDataset,
    #[error("method requires auxiliary pairs (external entailment pairs)")]
    MissingAuxiliaryPairs,
}
