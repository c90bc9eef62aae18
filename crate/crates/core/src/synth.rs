//! Synthetic ground truth: Gaussian hotspots on Keplerian orbits, voxel volume
//! files, and complete simulated datasets.

use std::f64::consts::PI;
use std::path::Path;

use chrono::{DateTime, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binio::{Reader, Writer};
use crate::dynamics::{rotate, Motion, RotationAxis, VelocityProfile};
use crate::error::{Error, Result};
use crate::field::{EmissionSource, Support, VoxelEmission};
use crate::instrument::{image_domain_observe, observe, project_baselines, ArrayCatalog, ObservationSet, SourcePosition};
use crate::render::{render_frame, RenderPlan};
use crate::units::{BlackHoleSystem, GridSpec, HORIZON_RADIUS};
use crate::Vec3;

pub const VOLUME_FORMAT_VERSION: u32 = 1;
const VOLUME_MAGIC: &[u8; 4] = b"BHVL";

/// Isotropic Gaussian emission blob; `center` is its position at `flare_time`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HotspotSpec {
    pub center: [f64; 3],
    pub std: f64,
    pub amplitude: f64,
    pub flare_time: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HotspotConfig {
    pub count: usize,
    /// Orbit radius in r_g; defaults to 1.16 r_ms.
    pub orbit_radius: f64,
    pub std: f64,
    pub amplitude: f64,
    /// Uniform ±2% jitter of each spot's orbit radius.
    pub radius_jitter: bool,
    /// Spots flare at uniform times in `[-flare_window, 0]`; zero puts every flare at t = 0.
    pub flare_window: f64,
}

impl Default for HotspotConfig {
    fn default() -> Self {
        Self {
            count: 1,
            orbit_radius: 1.16 * crate::units::SCHWARZSCHILD_R_MS,
            std: 0.4,
            amplitude: 1.0,
            radius_jitter: false,
            flare_window: 0.0,
        }
    }
}

/// Orthonormal pair spanning the plane perpendicular to `k`.
fn plane_basis(k: &Vec3) -> (Vec3, Vec3) {
    let helper = if k.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let e1 = (helper - k * k.dot(&helper)).normalize();
    (e1, k.cross(&e1))
}

/// Spots at uniformly random azimuths in the plane perpendicular to the true axis.
pub fn make_hotspots(config: &HotspotConfig, true_axis: &RotationAxis, seed: u64) -> Result<Vec<HotspotSpec>> {
    if config.count == 0 {
        return Err(Error::Config("hotspot count must be at least 1".into()));
    }
    if !(config.std > 0.0) || !(config.orbit_radius > HORIZON_RADIUS) || config.flare_window < 0.0 {
        return Err(Error::Config(format!("invalid hotspot configuration {config:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = true_axis.unit();
    let (e1, e2) = plane_basis(&k);
    Ok((0..config.count)
        .map(|_| {
            let phi = rng.gen_range(0.0..2.0 * PI);
            let jitter = rng.gen_range(-0.02..0.02);
            let flare = rng.gen_range(0.0..1.0);
            let radius = config.orbit_radius * if config.radius_jitter { 1.0 + jitter } else { 1.0 };
            let c = (e1 * phi.cos() + e2 * phi.sin()) * radius;
            HotspotSpec {
                center: [c.x, c.y, c.z],
                std: config.std,
                amplitude: config.amplitude,
                flare_time: -config.flare_window * flare,
            }
        })
        .collect())
}

/// Analytic hotspot emission advected by the true flow.
///
/// The canonical field of a spot that flares at `τ < 0` is the Gaussian pulled back
/// through the flow over `[τ, 0]`, so it arrives at `t = 0` already sheared.
#[derive(Clone, Debug)]
pub struct HotspotField {
    pub spots: Vec<HotspotSpec>,
    pub truth: Motion,
    pub support: Support,
}

impl HotspotField {
    pub fn new(spots: Vec<HotspotSpec>, truth: Motion, support: Support) -> Self {
        Self { spots, truth, support }
    }

    /// Canonical emission `e₀(y)`.
    pub fn canonical(&self, y: &Vec3) -> f64 {
        let k = self.truth.axis.unit();
        let omega = self.truth.profile.omega_and_slope(y.norm()).0;
        self.spots
            .iter()
            .map(|s| {
                let p = if s.flare_time == 0.0 { *y } else { rotate(&k, y, -s.flare_time * omega) };
                let d2 = (p - Vec3::from(s.center)).norm_squared();
                s.amplitude * (-d2 / (2.0 * s.std * s.std)).exp()
            })
            .sum()
    }
}

impl EmissionSource for HotspotField {
    fn support(&self) -> Support {
        self.support
    }

    fn eval_batch(&self, motion: &Motion, t: f64, xs: &[Vec3], out: &mut [f64]) {
        let k = motion.axis.unit();
        for (x, o) in xs.iter().zip(out.iter_mut()) {
            *o = if self.support.contains(x) {
                let y = if t == 0.0 {
                    *x
                } else {
                    rotate(&k, x, t * motion.profile.omega_and_slope(x.norm()).0)
                };
                self.canonical(&y)
            } else {
                0.0
            };
        }
    }
}

/// Samples the canonical field at voxel centers.
pub fn rasterize(source: &dyn EmissionSource, grid: &GridSpec) -> Result<VoxelEmission> {
    grid.validate()?;
    VoxelEmission::from_values(*grid, source.rasterize(grid))
}

/// Writes a `BHVL` volume and, if given, a JSON provenance sidecar next to it.
pub fn write_volume(path: &Path, volume: &VoxelEmission, provenance: Option<&serde_json::Value>) -> Result<()> {
    let mut w = Writer::new();
    w.bytes(VOLUME_MAGIC);
    w.u32(VOLUME_FORMAT_VERSION);
    w.u64(volume.grid.resolution as u64);
    w.f64(volume.grid.half_extent);
    w.f64s(&volume.values());
    std::fs::write(path, &w.buf)?;
    if let Some(p) = provenance {
        std::fs::write(path.with_extension("json"), serde_json::to_string_pretty(p)?)?;
    }
    Ok(())
}

pub fn read_volume_bytes(data: &[u8]) -> Result<VoxelEmission> {
    let mut r = Reader::new(data);
    r.expect_magic(VOLUME_MAGIC)?;
    let version = r.u32()?;
    if version != VOLUME_FORMAT_VERSION {
        return Err(Error::BadHeader(format!("volume version {version}, expected {VOLUME_FORMAT_VERSION}")));
    }
    let resolution = r.u64()? as usize;
    let half_extent = r.f64()?;
    let grid = GridSpec::new(resolution, half_extent).map_err(|e| Error::BadHeader(e.to_string()))?;
    if r.remaining() != grid.voxel_count() * 8 {
        return Err(Error::BadHeader(format!(
            "{resolution}³ grid needs {} payload bytes, found {}",
            grid.voxel_count() * 8,
            r.remaining()
        )));
    }
    let values = r.f64s(grid.voxel_count())?;
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Parse(format!("non-finite value at voxel {i}")));
    }
    VoxelEmission::from_values(grid, values)
}

pub fn load_volume(path: &Path) -> Result<VoxelEmission> {
    read_volume_bytes(&std::fs::read(path)?)
}

/// Uniform timestamps over `[0, duration]`.
pub fn frame_times(n_frames: usize, duration: f64) -> Result<Vec<f64>> {
    if n_frames == 0 || !(duration > 0.0) {
        return Err(Error::Config(format!("need n_frames ≥ 1 and duration > 0 (got {n_frames}, {duration})")));
    }
    Ok(if n_frames == 1 {
        vec![0.0]
    } else {
        (0..n_frames).map(|k| duration * k as f64 / (n_frames - 1) as f64).collect()
    })
}

/// One full orbit at `radius` under the exact Keplerian profile.
pub fn default_duration(radius: f64) -> Result<f64> {
    VelocityProfile::Keplerian.period(radius)
}

/// Interferometric observing setup.
#[derive(Clone, Debug, PartialEq)]
pub struct ArraySetup {
    pub catalog: ArrayCatalog,
    pub source: SourcePosition,
    pub wavelength_m: f64,
    pub start: DateTime<Utc>,
    pub system: BlackHoleSystem,
    /// Radians per image pixel.
    pub pixel_scale: f64,
    /// Mean total flux of the truth frames, in Jy.
    pub total_flux_jy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum MeasurementMode {
    Image,
    Array(Box<ArraySetup>),
}

/// Everything needed to score a reconstruction and to regenerate its data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub grid: GridSpec,
    /// Stored separately as a volume file.
    #[serde(skip)]
    pub volume: Vec<f64>,
    pub axis: RotationAxis,
    pub profile: VelocityProfile,
    pub times: Vec<f64>,
    pub noise_seed: Option<u64>,
}

/// Renders the truth at uniform timestamps and measures it.
pub fn make_dataset(
    truth: &dyn EmissionSource,
    motion: &Motion,
    plan: &RenderPlan,
    grid: &GridSpec,
    mode: &MeasurementMode,
    times: &[f64],
    noise_seed: Option<u64>,
) -> Result<(ObservationSet, GroundTruth)> {
    let obs = match mode {
        MeasurementMode::Image => image_domain_observe(plan, truth, motion, times),
        MeasurementMode::Array(setup) => {
            let utc: Vec<DateTime<Utc>> = times
                .iter()
                .map(|&t| {
                    let ns = (setup.system.geometric_to_seconds(t) * 1e9).round() as i64;
                    setup.start + chrono::Duration::nanoseconds(ns)
                })
                .collect();
            let uv = project_baselines(&setup.catalog, &setup.source, &utc, setup.wavelength_m)?;
            let mean_flux = times.iter().map(|&t| render_frame(plan, truth, motion, t).total_flux()).sum::<f64>() / times.len() as f64;
            if !(mean_flux > 0.0) {
                return Err(Error::DegenerateTruth);
            }
            let stations = setup.catalog.stations.iter().map(|s| s.name.clone()).collect();
            observe(plan, truth, motion, times, uv, stations, setup.pixel_scale, setup.total_flux_jy / mean_flux, noise_seed)?
        }
    };
    let record = GroundTruth {
        grid: *grid,
        volume: truth.rasterize(grid),
        axis: motion.axis,
        profile: motion.profile.clone(),
        times: times.to_vec(),
        noise_seed,
    };
    Ok((obs, record))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesic::{euclidean_bundle, CameraSpec, Tolerances};

    fn single(axis: RotationAxis) -> HotspotField {
        let cfg = HotspotConfig::default();
        let spots = make_hotspots(&cfg, &axis, 1).unwrap();
        HotspotField::new(spots, Motion::keplerian(axis), Support::for_grid(&GridSpec::default()))
    }

    #[test]
    fn single_spot_geometry() {
        let f = single(RotationAxis::z());
        let c = Vec3::from(f.spots[0].center);
        assert!((c.norm() - 6.96).abs() < 1e-12);
        assert_eq!(c.z, 0.0);
        assert_eq!(f.spots[0].std, 0.4);
        assert!((f.canonical(&c) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn centers_are_equatorial() {
        let axis = RotationAxis::new(Vec3::new(0.3, -0.8, 0.5)).unwrap();
        let cfg = HotspotConfig { count: 6, radius_jitter: true, ..Default::default() };
        for s in make_hotspots(&cfg, &axis, 9).unwrap() {
            assert!(Vec3::from(s.center).dot(&axis.unit()).abs() < 1e-12);
            let r = Vec3::from(s.center).norm();
            assert!((r / 6.96 - 1.0).abs() <= 0.02 + 1e-12);
        }
        assert!(make_hotspots(&HotspotConfig { count: 0, ..Default::default() }, &axis, 0).is_err());
    }

    #[test]
    fn flare_pre_rotation() {
        let axis = RotationAxis::new(Vec3::new(0.1, 0.2, 1.0)).unwrap();
        let m = Motion::keplerian(axis);
        let base = make_hotspots(&HotspotConfig::default(), &axis, 4).unwrap()[0];
        let period = default_duration(6.96).unwrap();
        let early = HotspotField::new(vec![HotspotSpec { flare_time: -period / 2.0, ..base }], m.clone(), Support::for_grid(&GridSpec::default()));
        let now = HotspotField::new(vec![base], m.clone(), Support::for_grid(&GridSpec::default()));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..200 {
            let x = Vec3::from(base.center) + Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let a = early.eval_at_time(&m, period / 2.0, &x).unwrap();
            let b = now.eval_at_time(&m, period, &x).unwrap();
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn volume_files() {
        let grid = GridSpec::new(8, 10.0).unwrap();
        let vol = rasterize(&single(RotationAxis::z()), &grid).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.bhvl");
        write_volume(&path, &vol, Some(&serde_json::json!({"seed": 1}))).unwrap();
        assert!(path.with_extension("json").exists());
        assert_eq!(load_volume(&path).unwrap(), vol);

        let mut bytes = std::fs::read(&path).unwrap();
        let neg = 4 + 4 + 8 + 8 + 8 * 5;
        bytes[neg..neg + 8].copy_from_slice(&(-1.0f64).to_le_bytes());
        assert!(matches!(read_volume_bytes(&bytes), Err(Error::NegativeEmission(5))));
        bytes.truncate(bytes.len() - 8);
        assert!(matches!(read_volume_bytes(&bytes), Err(Error::BadHeader(_))));
        assert!(read_volume_bytes(b"NOPE").is_err());
    }

    #[test]
    fn datasets() {
        let camera = CameraSpec::looking_along_z(8, 12.0);
        let bundle = euclidean_bundle(&camera, &Tolerances::default());
        let grid = GridSpec::new(16, 10.0).unwrap();
        let field = single(RotationAxis::z());
        let plan = RenderPlan::new(&bundle, &field.support).unwrap();
        let times = frame_times(1, 1.0).unwrap();
        let (obs, truth) = make_dataset(&field, &field.truth, &plan, &grid, &MeasurementMode::Image, &times, None).unwrap();
        assert_eq!(obs.frame_count(), 1);
        assert_eq!(truth.volume.len(), grid.voxel_count());
        let again = make_dataset(&field, &field.truth, &plan, &grid, &MeasurementMode::Image, &times, None).unwrap();
        assert_eq!(again.0, obs);
        assert!(frame_times(0, 1.0).is_err());
        assert_eq!(frame_times(3, 2.0).unwrap(), vec![0.0, 1.0, 2.0]);
        // One orbit at 6.96 r_g for Sgr A* lasts about 38 minutes.
        let minutes = BlackHoleSystem::sgra().geometric_to_seconds(default_duration(6.96).unwrap()) / 60.0;
        assert!((minutes - 37.885).abs() < 0.01);
    }
}
