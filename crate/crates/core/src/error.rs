use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::envsim::EnvId;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Why a language-model reply could not be turned into a latent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    NoList,
    Arity { expected: usize, found: usize },
    NonFinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParseError {
    pub kind: ParseErrorKind,
    /// The full reply text, kept for retries and diagnostics.
    pub raw: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// State, action or controller belong to a different environment.
    EnvMismatch { expected: EnvId, found: EnvId },
    NonFinite(&'static str),
    InvalidParams(String),
    /// A pixel whose colour is not in the palette.
    UnknownColor { row: usize, col: usize, color: [u8; 3] },
    MissingObject(String),
    EmptyMask(String),
    DimensionMismatch { expected: (usize, usize), found: (usize, usize) },
    InconsistentLabels(Vec<String>),
    NothingToPredict,
    Parse(ParseError),
    MissingGroundTruth(usize),
    UndefinedAngle,
    ReplayExhausted(usize),
    InvalidRequest(String),
    Empty(&'static str),
    /// Failure reported by an external predictor backend.
    Backend { kind: String, detail: String },
    AtStep { step: usize, source: Box<Error> },
}

impl Error {
    pub fn at_step(self, step: usize) -> Self {
        Error::AtStep { step, source: Box::new(self) }
    }

    /// Short machine-readable tag.
    pub fn kind(&self) -> &str {
        match self {
            Error::EnvMismatch { .. } => "env_mismatch",
            Error::NonFinite(_) => "non_finite",
            Error::InvalidParams(_) => "invalid_params",
            Error::UnknownColor { .. } => "unknown_color",
            Error::MissingObject(_) => "missing_object",
            Error::EmptyMask(_) => "empty_mask",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::InconsistentLabels(_) => "inconsistent_labels",
            Error::NothingToPredict => "nothing_to_predict",
            Error::Parse(_) => "parse",
            Error::MissingGroundTruth(_) => "missing_ground_truth",
            Error::UndefinedAngle => "undefined_angle",
            Error::ReplayExhausted(_) => "replay_exhausted",
            Error::InvalidRequest(_) => "invalid_request",
            Error::Empty(_) => "empty",
            Error::Backend { kind, .. } => kind,
            Error::AtStep { source, .. } => source.kind(),
        }
    }

    /// Step index of the innermost [`Error::AtStep`] wrapper, if any.
    pub fn step(&self) -> Option<usize> {
        match self {
            Error::AtStep { step, source } => source.step().or(Some(*step)),
            _ => None,
        }
    }
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParseErrorKind::NoList => f.write_str("no numeric list found"),
            ParseErrorKind::Arity { expected, found } => {
                write!(f, "expected {expected} numbers, found {found}")
            }
            ParseErrorKind::NonFinite => f.write_str("list contains a non-finite value"),
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::EnvMismatch { expected, found } => {
                write!(f, "environment mismatch: expected {expected:?}, found {found:?}")
            }
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
            Error::InvalidParams(msg) => write!(f, "invalid parameters: {msg}"),
            Error::UnknownColor { row, col, color } => write!(
                f,
                "pixel ({row}, {col}) has colour #{:02x}{:02x}{:02x} which is not in the palette",
                color[0], color[1], color[2]
            ),
            Error::MissingObject(label) => write!(f, "object '{label}' not found"),
            Error::EmptyMask(label) => write!(f, "mask '{label}' has no pixels"),
            Error::DimensionMismatch { expected, found } => write!(
                f,
                "dimension mismatch: expected {}x{}, found {}x{}",
                expected.0, expected.1, found.0, found.1
            ),
            Error::InconsistentLabels(labels) => {
                write!(f, "inconsistent label sets, differing labels: {}", labels.join(", "))
            }
            Error::NothingToPredict => f.write_str("nothing to predict: no objects kept"),
            Error::Parse(e) => write!(f, "cannot parse prediction: {} (reply: {:?})", e.kind, e.raw),
            Error::MissingGroundTruth(step) => write!(f, "no ground truth for horizon step {step}"),
            Error::UndefinedAngle => f.write_str("angle undefined for coincident centroids"),
            Error::ReplayExhausted(t) => write!(f, "replay controller has no action for step {t}"),
            Error::InvalidRequest(msg) => write!(f, "invalid prediction request: {msg}"),
            Error::Empty(what) => write!(f, "empty input: {what}"),
            Error::Backend { kind, detail } => write!(f, "predictor backend error ({kind}): {detail}"),
            Error::AtStep { step, source } => write!(f, "at step {step}: {source}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for Error {}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    #[test]
    fn step_wrappers_keep_the_innermost_index_and_kind() {
        let e = Error::MissingObject("pole".into()).at_step(4).at_step(9);
        assert_eq!(e.step(), Some(4));
        assert_eq!(e.kind(), "missing_object");
        assert_eq!(e.to_string(), "at step 9: at step 4: object 'pole' not found");
        assert_eq!(Error::UndefinedAngle.step(), None);
    }

    #[test]
    fn parse_errors_show_the_reply() {
        let e = Error::Parse(ParseError { kind: ParseErrorKind::Arity { expected: 4, found: 2 }, raw: "[1, 2]".into() });
        assert_eq!(e.to_string(), "cannot parse prediction: expected 4 numbers, found 2 (reply: \"[1, 2]\")");
        let b = Error::Backend { kind: "llm_auth".into(), detail: "401".into() };
        assert_eq!(b.kind(), "llm_auth");
    }
}
