use std::path::{Path, PathBuf};

use chrono::{DateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{sample_perturbation, Motion, RotationAxis, VelocityProfile};
use crate::error::{Error, Result};
use crate::field::Support;
use crate::geodesic::{CameraSpec, Tolerances};
use crate::instrument::{ArrayCatalog, SourcePosition, DEFAULT_BANDWIDTH_HZ, DEFAULT_INTEGRATION_S, DEFAULT_WAVELENGTH_M};
use crate::solver::{SolveConfig, SweepSpec};
use crate::synth::{default_duration, frame_times, make_hotspots, HotspotConfig, HotspotField};
use crate::units::{BlackHoleSystem, GridSpec, PARSEC, SGRA_DISTANCE_M, SGRA_MASS_SOLAR};
use crate::Vec3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    pub mass_solar: f64,
    pub distance_pc: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            mass_solar: SGRA_MASS_SOLAR,
            distance_pc: SGRA_DISTANCE_M / PARSEC,
        }
    }
}

impl SystemConfig {
    pub fn system(&self) -> Result<BlackHoleSystem> {
        BlackHoleSystem::with_distance(self.mass_solar, 0.0, self.distance_pc * PARSEC)
    }
}

/// Velocity profile of the ground-truth flow.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ProfileConfig {
    #[default]
    Keplerian,
    Perturbed {
        magnitude: f64,
        correlation_length: f64,
        seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TruthConfig {
    /// True rotation axis (need not be normalized).
    pub axis: [f64; 3],
    pub hotspots: HotspotConfig,
    /// Seed of the hotspot placement.
    pub seed: u64,
    pub profile: ProfileConfig,
}

impl Default for TruthConfig {
    fn default() -> Self {
        let inc = 60f64.to_radians();
        Self {
            axis: [0.0, inc.sin(), -inc.cos()],
            hotspots: HotspotConfig::default(),
            seed: 0,
            profile: ProfileConfig::Keplerian,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObservationConfig {
    pub n_frames: usize,
    /// Geometric time spanned by the frames; one orbit at the hotspot radius when absent.
    pub duration: Option<f64>,
    /// Produce full-image (unit σ) measurements.
    pub image: bool,
    /// Interferometric arrays: builtin names (`eht2017`, `ngeht`) or station CSV paths.
    pub arrays: Vec<String>,
    pub source: SourcePosition,
    pub start: DateTime<Utc>,
    pub wavelength_m: f64,
    pub bandwidth_hz: f64,
    pub integration_s: f64,
    /// Mean total flux of the truth frames [Jy].
    pub total_flux_jy: f64,
    /// Thermal-noise seed; noiseless when absent.
    pub noise_seed: Option<u64>,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        Self {
            n_frames: 128,
            duration: None,
            image: true,
            arrays: Vec::new(),
            source: SourcePosition::sgra(),
            start: Utc.with_ymd_and_hms(2017, 4, 7, 12, 0, 0).unwrap(),
            wavelength_m: DEFAULT_WAVELENGTH_M,
            bandwidth_hz: DEFAULT_BANDWIDTH_HZ,
            integration_s: DEFAULT_INTEGRATION_S,
            total_flux_jy: 1.0,
            noise_seed: Some(0),
        }
    }
}

/// Every setting of a run in one strict JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemConfig,
    pub camera: CameraSpec,
    pub tracer: Tolerances,
    pub grid: GridSpec,
    pub truth: TruthConfig,
    pub observation: ObservationConfig,
    pub solver: SolveConfig,
    /// Measurement set the reconstruction fits: `image` or an array name.
    pub fit_on: String,
    pub sweep: SweepSpec,
    pub output: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            system: SystemConfig::default(),
            camera: CameraSpec::looking_along_z(64, 12.0),
            tracer: Tolerances::default(),
            grid: GridSpec::default(),
            truth: TruthConfig::default(),
            observation: ObservationConfig::default(),
            solver: SolveConfig::default(),
            fit_on: "image".into(),
            sweep: SweepSpec::default(),
            output: None,
            cache_dir: None,
        }
    }
}

/// Directory name of a measurement set.
pub fn array_label(spec: &str) -> String {
    Path::new(spec).file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| spec.to_string())
}

impl RunConfig {
    /// Parses and validates; relative catalog paths are resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for a in &mut cfg.observation.arrays {
            if !matches!(a.as_str(), "eht2017" | "ngeht") && Path::new(a.as_str()).is_relative() {
                *a = base.join(&*a).to_string_lossy().into_owned();
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks everything that can be checked without heavy compute.
    pub fn validate(&self) -> Result<()> {
        self.system.system()?;
        self.camera.validate()?;
        self.grid.validate()?;
        let support = self.support();
        if support.outer_radius > self.tracer.roi_radius {
            return Err(Error::BundleFieldMismatch {
                bundle: self.tracer.roi_radius,
                field: support.outer_radius,
            });
        }
        let axis = self.truth_axis()?;
        make_hotspots(&self.truth.hotspots, &axis, self.truth.seed)?;
        self.truth_profile()?;
        self.times()?;
        for a in &self.observation.arrays {
            self.catalog(a)?;
        }
        self.observation.source.validate()?;
        if !(self.observation.wavelength_m > 0.0 && self.observation.total_flux_jy > 0.0) {
            return Err(Error::Config("wavelength and total flux must be positive".into()));
        }
        let labels: Vec<String> = self.observation.arrays.iter().map(|a| array_label(a)).collect();
        if !((self.fit_on == "image" && self.observation.image) || labels.contains(&self.fit_on)) {
            return Err(Error::Config(format!("fit_on = {:?} names no generated measurement set", self.fit_on)));
        }
        self.solver.validate(self.observation.n_frames)?;
        self.sweep.validate()
    }

    pub fn support(&self) -> Support {
        Support::for_grid(&self.grid)
    }

    pub fn truth_axis(&self) -> Result<RotationAxis> {
        RotationAxis::new(Vec3::from(self.truth.axis))
    }

    pub fn truth_profile(&self) -> Result<VelocityProfile> {
        match self.truth.profile {
            ProfileConfig::Keplerian => Ok(VelocityProfile::Keplerian),
            ProfileConfig::Perturbed { magnitude, correlation_length, seed } => {
                sample_perturbation(magnitude, correlation_length, seed, self.grid.half_extent)
            }
        }
    }

    /// Analytic ground truth under `profile`.
    pub fn truth_field(&self, profile: VelocityProfile) -> Result<HotspotField> {
        let axis = self.truth_axis()?;
        let spots = make_hotspots(&self.truth.hotspots, &axis, self.truth.seed)?;
        Ok(HotspotField::new(spots, Motion::new(axis, profile), self.support()))
    }

    pub fn duration(&self) -> Result<f64> {
        match self.observation.duration {
            Some(d) => Ok(d),
            None => default_duration(self.truth.hotspots.orbit_radius),
        }
    }

    pub fn times(&self) -> Result<Vec<f64>> {
        frame_times(self.observation.n_frames, self.duration()?)
    }

    pub fn catalog(&self, spec: &str) -> Result<ArrayCatalog> {
        let mut cat = match spec {
            "eht2017" | "ngeht" => ArrayCatalog::builtin(spec)?,
            path => ArrayCatalog::from_csv(Path::new(path), self.observation.bandwidth_hz, self.observation.integration_s)?,
        };
        cat.bandwidth_hz = self.observation.bandwidth_hz;
        cat.integration_s = self.observation.integration_s;
        cat.validate()?;
        Ok(cat)
    }

    /// Ray-bundle cache: `$BHT_CACHE_DIR`, else `cache_dir`, else a temp-dir default.
    pub fn cache_dir(&self) -> PathBuf {
        std::env::var_os(super::CACHE_DIR_ENV)
            .map(PathBuf::from)
            .or_else(|| self.cache_dir.clone())
            .unwrap_or_else(|| std::env::temp_dir().join("bhtomo-cache"))
    }

    /// SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}
