use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the skelkit library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("non-triangular face at line {line} ({count} vertices)")]
    NonTriangularFace { line: usize, count: usize },

    #[error("face {face} references vertex {index}, but mesh has {count} vertices")]
    IndexOutOfRange {
        face: usize,
        index: usize,
        count: usize,
    },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("degenerate triangle: face {face} has zero area")]
    DegenerateTriangle { face: usize },

    #[error("singular system (condition estimate {condition:.3e})")]
    SingularSystem { condition: f64 },

    #[error("non-finite value produced: {0}")]
    NonFinite(String),

    #[error("empty skeleton graph")]
    EmptyGraph,

    #[error("blended transform of vertex {vertex} is singular (condition {condition:.3e})")]
    SingularBlend { vertex: usize, condition: f64 },

    #[error("bone {bone} has a degenerate part ({reason})")]
    DegeneratePart { bone: usize, reason: String },

    #[error("point is at or behind the camera (z = {z:e})")]
    BehindCamera { z: f64 },

    #[error("zero-length vector in cosine similarity")]
    ZeroVector,

    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),

    #[error("missing artifact: {0}")]
    MissingArtifact(PathBuf),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularSystem { .. }
                | Error::NonFinite(_)
                | Error::SingularBlend { .. }
                | Error::DegenerateTriangle { .. }
                | Error::DegeneratePart { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
