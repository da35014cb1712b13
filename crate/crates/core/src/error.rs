use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    /// One or more dataset records violate the sample invariants.
    #[error("{}", format_issues(.0))]
    InvalidSamples(Vec<SampleIssue>),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("objective {objective} has no {class} samples; class weights are undefined")]
    EmptyClass { objective: usize, class: &'static str },

    #[error("length mismatch: {what} (expected {expected}, got {got})")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("unknown layer `{0}`")]
    UnknownLayer(String),

    #[error("objective index {index} out of range for {count} objectives")]
    UnknownObjective { index: usize, count: usize },

    #[error("non-finite gradient in `{layer}`")]
    NonFiniteGradient { layer: String },

    #[error("checkpoint integrity: {0}")]
    Checkpoint(String),

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
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

    /// Per-sample issues, if this is a validation error.
    pub fn issues(&self) -> &[SampleIssue] {
        match self {
            Error::InvalidSamples(issues) => issues,
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleIssue {
    pub id: String,
    pub kind: IssueKind,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum IssueKind {
    #[error("image file `{0}` not found")]
    MissingImage(PathBuf),
    #[error("image could not be decoded: {0}")]
    UndecodableImage(String),
    #[error("image is {got_h}x{got_w}, manifest declares {h}x{w}")]
    ImageSize {
        h: usize,
        w: usize,
        got_h: usize,
        got_w: usize,
    },
    #[error("label vector has length {got}, expected {expected}")]
    LabelLength { expected: usize, got: usize },
    #[error("label value {0} is not 0 or 1")]
    LabelValue(i64),
    #[error("box [{x},{y},{w},{h}] is degenerate or outside the {img_h}x{img_w} image")]
    BoxOutOfBounds {
        x: i64,
        y: i64,
        w: i64,
        h: i64,
        img_h: usize,
        img_w: usize,
    },
    #[error("boxes present but the annotated objective label is 0")]
    BoxWithoutPositive,
    #[error("duplicate sample id")]
    DuplicateId,
    #[error("intensity outside [0,1]")]
    IntensityRange,
}

fn format_issues(issues: &[SampleIssue]) -> String {
    let parts: Vec<String> = issues
        .iter()
        .map(|i| format!("sample `{}`: {}", i.id, i.kind))
        .collect();
    parts.join("; ")
}
