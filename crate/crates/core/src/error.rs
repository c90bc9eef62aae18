use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("nonzero black-hole spin ({0}) is not supported")]
    NonzeroSpinUnsupported(f64),
    #[error("black-hole mass must be positive, got {0}")]
    InvalidMass(f64),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("geodesic integrator failed to meet tolerance (step size {step:e} at r = {radius})")]
    IntegratorDiverged { step: f64, radius: f64 },
    #[error("geodesic exceeded {0} integration steps")]
    MaxStepsExceeded(usize),
    #[error("pixel {pixel}: {source}")]
    Pixel {
        pixel: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("radius {0} lies inside the event horizon")]
    RadiusInsideHorizon(f64),
    #[error("field support (r <= {field}) extends beyond the ray bundle region (r <= {bundle})")]
    BundleFieldMismatch { bundle: f64, field: f64 },

    #[error("no visible baselines at timestamp {0}")]
    NoVisibleBaselines(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid array catalog: {0}")]
    InvalidCatalog(String),

    #[error("volume contains negative emission at voxel {0}")]
    NegativeEmission(usize),
    #[error("bad header: {0}")]
    BadHeader(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("checksum mismatch in {0}")]
    Checksum(PathBuf),

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("ground-truth volume is identically zero")]
    DegenerateTruth,
    #[error("all reconstruction runs failed: {0}")]
    AllRunsFailed(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn at_pixel(self, pixel: usize) -> Self {
        Error::Pixel {
            pixel,
            source: Box::new(self),
        }
    }
}
