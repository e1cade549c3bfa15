use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed record on line {line}: {message}")]
    MalformedRecord { line: usize, message: String },

    #[error("duplicate unit id {0:?}")]
    DuplicateId(String),

    #[error("unit {unit:?} references missing pair source {pair_id:?}")]
    DanglingPair { unit: String, pair_id: String },

    #[error("unit {unit:?} is paired with {source_id:?}, which is not a control unit")]
    NonControlSource { unit: String, source_id: String },

    #[error("treated unit {0:?} carries no pair_id")]
    MissingPairId(String),

    #[error("covariate dimensionality mismatch for unit {unit:?}: expected {expected}, found {found}")]
    CovariateShape {
        unit: String,
        expected: usize,
        found: usize,
    },

    #[error("prompt input missing for placeholder {{{0}}}")]
    MissingPlaceholderInput(&'static str),

    #[error("prompt task {0} does not take a comment")]
    UnexpectedComment(&'static str),

    #[error("model {model_id} refused the request")]
    Refused { model_id: String },

    #[error("transport failed after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },

    #[error("arm {0} is empty")]
    EmptyArm(&'static str),

    #[error("covariate group {0} has no units")]
    EmptyGroup(String),

    #[error("unit {0:?} has no propensity assigned")]
    MissingPropensity(String),

    #[error("unparseable verdict {0:?}")]
    UnparseableVerdict(String),

    #[error("contextual encoder backend unavailable for model {0:?}")]
    AdapterUnavailable(String),

    #[error("no labeled training data")]
    NoLabeledData,

    #[error("fold {fold} has no labeled units")]
    FoldTooSmall { fold: usize },

    #[error("validation labels contain a single class")]
    DegenerateValidation,

    #[error("propensity outside (0,1) for {} unit(s): {}; consider ipw.clip", unit_ids.len(), preview(unit_ids))]
    PropensityOutOfRange { unit_ids: Vec<String> },

    #[error("empty input")]
    EmptyInput,

    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },

    #[error("no entry is defined in both vectors")]
    NoDefinedEntries,

    #[error("group labels differ between runs")]
    LabelMismatch,

    #[error("unknown key at {path}")]
    UnknownKey { path: String },

    #[error("unknown value {value:?} at {path}")]
    UnknownValue { path: String, value: String },

    #[error("type error at {path}: {message}")]
    TypeError { path: String, message: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by an invalid experiment configuration.
    pub fn is_config_error(&self) -> bool {
        match self {
            Error::UnknownKey { .. } | Error::UnknownValue { .. } | Error::TypeError { .. } => true,
            Error::Stage { source, .. } => source.is_config_error(),
            _ => false,
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| match e {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        })
    }
}

fn preview(ids: &[String]) -> String {
    const SHOWN: usize = 5;
    let head = ids.iter().take(SHOWN).map(String::as_str).collect::<Vec<_>>().join(", ");
    if ids.len() > SHOWN {
        format!("{head}, ...")
    } else {
        head
    }
}
