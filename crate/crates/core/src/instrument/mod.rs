//! Interferometric measurement model: Earth-rotation uv coverage, DTFT
//! visibilities, thermal noise and the χ² data term.

mod catalog;
mod observe;
mod uv;

pub use catalog::{ArrayCatalog, Station, DEFAULT_BANDWIDTH_HZ, DEFAULT_INTEGRATION_S, EARTH_RADIUS_M};
pub use observe::{add_thermal_noise, image_domain_observe, observe, FrameModel, Measurements, ObservationSet, Provenance};
pub use uv::{
    dtft, dtft_adjoint, elevation_deg, gmst, project_baselines, project_uv, Baseline, SourcePosition, UvFrame, DEFAULT_WAVELENGTH_M,
    ELEVATION_CUTOFF_DEG,
};
