use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("direction below the horizon (z = {0})")]
    LowerHemisphere(f64),
    #[error("point ({0}, {1}) lies outside the unit disk")]
    OffManifold(f64, f64),

    #[error("scene field `{path}`: {msg}")]
    Schema { path: String, msg: String },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported version {found} (reader supports {supported})")]
    Version { found: u32, supported: u32 },
    #[error("truncated file: {0}")]
    Truncated(String),
    #[error("malformed file: {0}")]
    Malformed(String),
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("integrity check failed: expected digest {expected}, computed {computed}")]
    Integrity { expected: String, computed: String },

    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in batch {batch}")]
    NonFinite { batch: usize },
    #[error("channel {0} has no accepted samples")]
    EmptyChannel(usize),
    #[error("no albedo groups in dataset")]
    EmptyGroups,
    #[error("spatially varying model requires a feature vector")]
    MissingFeature,
    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("chi-square test needs at least 5 expected samples per bin (got {0:.2})")]
    TooFewExpected(f64),
    #[error("chi-square test needs at least two bins")]
    ZeroDof,

    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn schema(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Short stable tag for machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::LowerHemisphere(_) => "lower_hemisphere",
            Error::OffManifold(..) => "off_manifold",
            Error::Schema { .. } => "schema",
            Error::BadMagic { .. } => "bad_magic",
            Error::Version { .. } => "version",
            Error::Truncated(_) => "truncated",
            Error::Malformed(_) => "malformed",
            Error::SizeMismatch(_) => "size_mismatch",
            Error::Integrity { .. } => "integrity",
            Error::Shape(_) => "shape",
            Error::NonFinite { .. } => "non_finite",
            Error::EmptyChannel(_) => "empty_channel",
            Error::EmptyGroups => "empty_groups",
            Error::MissingFeature => "missing_feature",
            Error::Invalid(_) => "invalid",
            Error::TooFewExpected(_) => "too_few_expected",
            Error::ZeroDof => "zero_dof",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
