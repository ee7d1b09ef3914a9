//! Tracking by language: a grounder localizes the queried object per frame,
//! a template tracker follows it between groundings, and an integrator
//! decides per frame which of the two to trust using predicted region (R)
//! and template (T) quality scores.

use std::path::{Path, PathBuf};

pub mod cli;
pub mod config;
pub mod evalharness;
pub mod geometry;
pub mod grounder;
pub mod integrator;
pub mod io;
pub mod queries;
pub mod raster;
pub mod rtscore;
pub mod seeding;
pub mod synthworld;
pub mod tracker;

pub use geometry::{BBox, FrameBounds};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid box (x={x}, y={y}, w={w}, h={h})")]
    InvalidBox { x: f64, y: f64, w: f64, h: f64 },
    #[error("invalid frame bounds {width}x{height}")]
    InvalidBounds { width: u32, height: u32 },
    #[error("invalid scene: {0}")]
    InvalidScene(String),
    #[error("frame {index} out of range for a {n_frames}-frame video")]
    FrameOutOfRange { index: usize, n_frames: usize },
    #[error("crop {0:?} is degenerate")]
    DegenerateCrop(BBox),
    #[error("crop {0:?} extends outside the frame")]
    OutOfFrame(BBox),
    #[error("query: {0}")]
    Query(#[from] queries::QueryError),
    #[error("T-score undefined for a single-frame video")]
    SingleFrameVideo,
    #[error("no training samples survived the confidence filter")]
    EmptyAfterFilter,
    #[error("need at least {needed} training samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("policy {0} needs a trained score model")]
    MissingModel(String),
    #[error("tubelet lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("test split is empty")]
    EmptyTestSplit,
    #[error("config: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().to_path_buf(), source }
    }

    /// Process exit code: 2 for usage and configuration problems, 3 for
    /// problems with input data.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::MissingModel(_) | Error::Query(_) => 2,
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 2,
            _ => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
