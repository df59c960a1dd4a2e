use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by the library. Calibration and I/O failures carry enough
/// context to name the offending input.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("file not found: {0}")]
    NotFound(PathBuf),
    #[error("malformed header in {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },
    #[error("image is not square: {width}x{height}")]
    NonSquare { width: usize, height: usize },
    #[error("image side {0} is not a power of two >= 4")]
    NonPowerOfTwo(usize),
    #[error("maxval {0} exceeds 255")]
    MaxvalTooLarge(u32),
    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("manifest error: {0}")]
    BadManifest(String),

    #[error("plan mismatch: plan side {plan} vs data side {data}")]
    PlanMismatch { plan: usize, data: usize },
    #[error("operator materialization limited to side <= {limit}, got {side}")]
    OperatorTooLarge { side: usize, limit: usize },

    #[error("gallery too small: {0} images (need at least 2)")]
    GalleryTooSmall(usize),
    #[error("rank deficient: only {found} significant singular values, requested {requested}")]
    RankDeficient { found: usize, requested: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("empty class: {0}")]
    EmptyClass(String),
    #[error("degenerate identification radius at feature {0}")]
    DegenerateRadius(usize),
    #[error("degenerate sensitivity at feature {0}")]
    DegenerateSensitivity(usize),
    #[error("cannot normalize a zero feature vector")]
    ZeroVector,

    #[error("probability parameter must lie in (0,1), got {0}")]
    BadProbability(f64),
    #[error("zero noise power for feature {0}: calibration leaves it unprotected")]
    ZeroDenominator(usize),
    #[error("all weights negligible in ranked column {0}")]
    AllWeightsNegligible(usize),
    #[error("solver did not converge: best loss {best_loss:.3e} after {iterations} iterations")]
    NonConvergence { best_loss: f64, iterations: usize },

    #[error("calibration mismatch: {0}")]
    CalibrationMismatch(String),
    #[error("calibration bundle missing: {0}")]
    CalibrationMissing(PathBuf),
}
