//! End-to-end runs driven by a single JSON configuration: tracing, dataset
//! generation, fitting, evaluation, the mismatch sweep and exports. Every run
//! writes a manifest from which its outputs can be regenerated and checked.

mod config;
mod plot;

pub use config::{array_label, ObservationConfig, ProfileConfig, RunConfig, SystemConfig, TruthConfig};
pub use plot::line_plot_png;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{Motion, RotationAxis, VelocityProfile};
use crate::error::{Error, Result};
use crate::field::{Checkpoint, VoxelEmission, CHECKPOINT_FORMAT_VERSION};
use crate::geodesic::{build_bundle_cached, CacheStatus, RayBundle, BUNDLE_FORMAT_VERSION};
use crate::instrument::{Measurements, ObservationSet};
use crate::render::{render_frame, RenderPlan};
use crate::solver::{evaluate as score, full_loss, mismatch_sweep, run, solve, Metrics, Problem, RunResult, SolveState};
use crate::synth::{load_volume, make_dataset, write_volume, ArraySetup, GroundTruth, MeasurementMode, VOLUME_FORMAT_VERSION};

/// Environment variable overriding the ray-bundle cache directory.
pub const CACHE_DIR_ENV: &str = "BHT_CACHE_DIR";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Provenance record written next to every run's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub config: RunConfig,
    pub seeds: BTreeMap<String, u64>,
    pub formats: BTreeMap<String, u32>,
    /// Paths of consumed inputs (dataset directory, resume checkpoint).
    pub inputs: BTreeMap<String, String>,
    /// SHA-256 of every regenerable output file, keyed by relative path.
    pub artifacts: BTreeMap<String, String>,
}

impl Manifest {
    fn new(command: &str, cfg: &RunConfig, inputs: BTreeMap<String, String>, out: &Path) -> Result<Self> {
        let mut seeds = BTreeMap::from([
            ("truth".to_string(), cfg.truth.seed),
            ("init".to_string(), cfg.solver.init_seed),
            ("batch".to_string(), cfg.solver.batch_seed),
            ("sweep".to_string(), cfg.sweep.base_seed),
        ]);
        if let Some(s) = cfg.observation.noise_seed {
            seeds.insert("noise".into(), s);
        }
        if let crate::solver::AxisInit::Random { seed } = cfg.solver.axis_init {
            seeds.insert("axis".into(), seed);
        }
        let formats = BTreeMap::from([
            ("bundle".to_string(), BUNDLE_FORMAT_VERSION),
            ("checkpoint".to_string(), CHECKPOINT_FORMAT_VERSION),
            ("volume".to_string(), VOLUME_FORMAT_VERSION),
        ]);
        Ok(Self {
            tool: "bhtomo".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config_hash: cfg.hash(),
            config: cfg.clone(),
            seeds,
            formats,
            inputs,
            artifacts: hash_tree(out)?,
        })
    }

    fn write(&self, out: &Path) -> Result<()> {
        std::fs::write(out.join(MANIFEST_FILE), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(dir.join(MANIFEST_FILE))?)?)
    }
}

/// Wall-clock files differ between otherwise identical runs.
fn is_volatile(rel: &str) -> bool {
    rel == MANIFEST_FILE || rel.rsplit('/').next().is_some_and(|f| f.starts_with("timing"))
}

/// SHA-256 of every regular file below `dir`, keyed by `/`-separated relative path.
pub fn hash_tree(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::Io(e.into()))?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry.path().strip_prefix(dir).expect("walk stays below root");
        let rel = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        if !is_volatile(&rel) {
            out.insert(rel, hex::encode(Sha256::digest(std::fs::read(entry.path())?)));
        }
    }
    Ok(out)
}

/// Ray bundle for the configured camera, from the cache when possible.
pub fn bundle(cfg: &RunConfig) -> Result<(RayBundle, CacheStatus)> {
    let dir = cfg.cache_dir();
    std::fs::create_dir_all(&dir)?;
    build_bundle_cached(&cfg.camera, &cfg.tracer, &dir)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub bundle_hash: String,
    pub cache_file: PathBuf,
    pub cache: String,
    pub pixels: usize,
    pub captured: usize,
    pub escaped: usize,
    pub samples: usize,
}

/// Traces (or loads) the ray bundle and writes `trace.json` into `out`.
pub fn trace(cfg: &RunConfig, out: &Path) -> Result<TraceSummary> {
    let (b, status) = bundle(cfg)?;
    let summary = TraceSummary {
        bundle_hash: b.hash_hex(),
        cache_file: crate::geodesic::cache_path(&cfg.cache_dir(), &cfg.camera, &cfg.tracer),
        cache: format!("{status:?}").to_lowercase(),
        pixels: b.pixel_count(),
        captured: b.captured_count(),
        escaped: b.pixel_count() - b.captured_count(),
        samples: b.sample_count(),
    };
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("trace.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(summary)
}

/// Measurement model of a named measurement set.
pub fn measurement_mode(cfg: &RunConfig, label: &str) -> Result<MeasurementMode> {
    if label == "image" {
        return Ok(MeasurementMode::Image);
    }
    let spec = cfg
        .observation
        .arrays
        .iter()
        .find(|a| array_label(a) == label)
        .ok_or_else(|| Error::Config(format!("no array named {label:?}")))?;
    let system = cfg.system.system()?;
    Ok(MeasurementMode::Array(Box::new(ArraySetup {
        catalog: cfg.catalog(spec)?,
        source: cfg.observation.source,
        wavelength_m: cfg.observation.wavelength_m,
        start: cfg.observation.start,
        system,
        pixel_scale: cfg.camera.pixel_size() * system.angular_scale(),
        total_flux_jy: cfg.observation.total_flux_jy,
    })))
}

fn labels(cfg: &RunConfig) -> Vec<String> {
    let mut v = Vec::new();
    if cfg.observation.image {
        v.push("image".to_string());
    }
    v.extend(cfg.observation.arrays.iter().map(|a| array_label(a)));
    v
}

fn prepare_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    Ok(())
}

/// Ground truth plus every requested measurement set.
pub fn generate(cfg: &RunConfig, out: &Path) -> Result<Manifest> {
    cfg.validate()?;
    prepare_out(out)?;
    let (b, _) = bundle(cfg)?;
    let plan = RenderPlan::new(&b, &cfg.support())?;
    let truth = cfg.truth_field(cfg.truth_profile()?)?;
    let times = cfg.times()?;
    let mut record = None;
    for label in labels(cfg) {
        let mode = measurement_mode(cfg, &label)?;
        let (obs, gt) = make_dataset(&truth, &truth.truth, &plan, &cfg.grid, &mode, &times, cfg.observation.noise_seed)?;
        obs.write(&out.join(&label))?;
        record = Some(gt);
    }
    let record = record.ok_or_else(|| Error::Config("no measurement set requested".into()))?;
    let volume = VoxelEmission::from_values(cfg.grid, record.volume.clone())?;
    let provenance = serde_json::json!({ "hotspots": truth.spots, "axis": cfg.truth.axis, "seed": cfg.truth.seed });
    write_volume(&out.join("truth.bhvl"), &volume, Some(&provenance))?;
    std::fs::write(out.join("ground_truth.json"), serde_json::to_string_pretty(&record)?)?;
    record.profile.write_csv(&out.join("profile.csv"), crate::units::HORIZON_RADIUS, cfg.grid.half_extent + 2.0)?;
    let manifest = Manifest::new("generate", cfg, BTreeMap::new(), out)?;
    manifest.write(out)?;
    Ok(manifest)
}

/// Ground-truth record of a generated dataset.
pub fn load_truth(dataset: &Path) -> Result<GroundTruth> {
    let mut record: GroundTruth = serde_json::from_str(&std::fs::read_to_string(dataset.join("ground_truth.json"))?)?;
    let volume = load_volume(&dataset.join("truth.bhvl"))?;
    if volume.grid != record.grid {
        return Err(Error::ShapeMismatch("truth volume grid differs from its record".into()));
    }
    record.volume = volume.values();
    Ok(record)
}

/// Real degrees of freedom of a measurement set.
pub fn degrees_of_freedom(obs: &ObservationSet) -> usize {
    match obs.measurements {
        Measurements::Image { .. } => obs.measurement_count(),
        Measurements::Visibility { .. } => 2 * obs.measurement_count(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub initial_axis: [f64; 3],
    pub final_axis: [f64; 3],
    pub final_chi2: f64,
    pub steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub metrics: Metrics,
    pub chi2_per_dof: f64,
    pub best_run: usize,
    pub runs: Vec<RunSummary>,
    pub failures: Vec<String>,
}

/// Fits the configured measurement set of `dataset`, optionally resuming a checkpoint.
pub fn fit(cfg: &RunConfig, dataset: &Path, out: &Path, resume: Option<&Path>) -> Result<FitReport> {
    cfg.validate()?;
    let obs = ObservationSet::read(&dataset.join(&cfg.fit_on))?;
    let truth = load_truth(dataset)?;
    if obs.frame_count() != cfg.observation.n_frames {
        return Err(Error::ShapeMismatch(format!("dataset has {} frames, config expects {}", obs.frame_count(), cfg.observation.n_frames)));
    }
    let resume_ckpt = resume.map(Checkpoint::read).transpose()?;
    prepare_out(out)?;
    let (b, _) = bundle(cfg)?;
    let plan = RenderPlan::new(&b, &cfg.support())?;
    let problem = Problem {
        observations: &obs,
        plan: &plan,
        profile: &VelocityProfile::Keplerian,
    };
    let (runs, failures, best) = match &resume_ckpt {
        Some(ckpt) => {
            let state = run(SolveState::from_checkpoint(ckpt)?, &cfg.solver, &problem)?;
            let final_chi2 = full_loss(state.field.as_ref(), state.axis, &problem)?;
            (vec![RunResult { initial_axis: ckpt.axis, state, final_chi2 }], Vec::new(), 0)
        }
        None => {
            let o = solve(&cfg.solver, &problem)?;
            (o.runs, o.failures.into_iter().map(|(_, e)| e).collect(), o.best)
        }
    };
    for (i, r) in runs.iter().enumerate() {
        r.state.checkpoint().write(&out.join(format!("run_{i}.bhck")))?;
        r.state.write_loss_trace(&out.join(format!("loss_run{i}.csv")), &cfg.solver)?;
        r.state.write_timing(&out.join(format!("timing_run{i}.csv")))?;
    }
    let best_run = &runs[best];
    best_run.state.checkpoint().write(&out.join("best.bhck"))?;
    let metrics = score(best_run.state.field.as_ref(), best_run.state.axis, &truth, best_run.final_chi2)?;
    let report = FitReport {
        metrics,
        chi2_per_dof: best_run.final_chi2 / degrees_of_freedom(&obs) as f64,
        best_run: best,
        runs: runs
            .iter()
            .map(|r| RunSummary {
                initial_axis: r.initial_axis.into(),
                final_axis: r.state.axis.into(),
                final_chi2: r.final_chi2,
                steps: r.state.step_count(),
            })
            .collect(),
        failures,
    };
    std::fs::write(out.join("metrics.json"), serde_json::to_string_pretty(&report)?)?;
    let mut inputs = BTreeMap::from([("dataset".to_string(), dataset.display().to_string())]);
    if let Some(p) = resume {
        inputs.insert("resume".into(), p.display().to_string());
    }
    Manifest::new("fit", cfg, inputs, out)?.write(out)?;
    Ok(report)
}

/// Scores a checkpoint against a dataset; writes `metrics.json` into `out`.
pub fn evaluate(cfg: &RunConfig, checkpoint: &Path, dataset: &Path, out: &Path) -> Result<Metrics> {
    let ckpt = Checkpoint::read(checkpoint)?;
    let truth = load_truth(dataset)?;
    let obs = ObservationSet::read(&dataset.join(&cfg.fit_on))?;
    let (b, _) = bundle(cfg)?;
    let plan = RenderPlan::new(&b, &ckpt.spec.support())?;
    let field = ckpt.field()?;
    let problem = Problem {
        observations: &obs,
        plan: &plan,
        profile: &VelocityProfile::Keplerian,
    };
    let chi2 = full_loss(field.as_ref(), ckpt.axis, &problem)?;
    let metrics = score(field.as_ref(), ckpt.axis, &truth, chi2)?;
    prepare_out(out)?;
    std::fs::write(out.join("metrics.json"), serde_json::to_string_pretty(&metrics)?)?;
    Ok(metrics)
}

/// Model-mismatch study: data from perturbed flows, reconstruction with the Keplerian one.
pub fn sweep(cfg: &RunConfig, out: &Path) -> Result<crate::solver::SweepTable> {
    cfg.validate()?;
    prepare_out(out)?;
    let (b, _) = bundle(cfg)?;
    let plan = RenderPlan::new(&b, &cfg.support())?;
    let mode = measurement_mode(cfg, &cfg.fit_on)?;
    let times = cfg.times()?;
    let table = mismatch_sweep(&cfg.sweep, cfg.grid.half_extent, |profile| {
        let truth = cfg.truth_field(profile.clone())?;
        let (obs, gt) = make_dataset(&truth, &truth.truth, &plan, &cfg.grid, &mode, &times, cfg.observation.noise_seed)?;
        let problem = Problem {
            observations: &obs,
            plan: &plan,
            profile: &VelocityProfile::Keplerian,
        };
        let outcome = solve(&cfg.solver, &problem)?;
        let best = outcome.best();
        score(best.state.field.as_ref(), best.state.axis, &gt, best.final_chi2)
    })?;
    table.write_csv(&out.join("sweep.csv"))?;
    table.write_summary(&out.join("summary.csv"))?;
    Manifest::new("sweep", cfg, BTreeMap::new(), out)?.write(out)?;
    Ok(table)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExportKind {
    Volume,
    Frames,
    Plots,
}

impl FromStr for ExportKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "volume" => Ok(Self::Volume),
            "frames" => Ok(Self::Frames),
            "plots" => Ok(Self::Plots),
            other => Err(Error::Config(format!("unknown export kind {other:?} (volume, frames, plots)"))),
        }
    }
}

fn frame_images(cfg: &RunConfig, ckpt: &Checkpoint) -> Result<Vec<crate::render::ImageFrame>> {
    let (b, _) = bundle(cfg)?;
    let plan = RenderPlan::new(&b, &ckpt.spec.support())?;
    let field = ckpt.field()?;
    let motion = Motion::keplerian(RotationAxis::new(ckpt.axis)?);
    Ok(cfg.times()?.iter().map(|&t| render_frame(&plan, field.as_ref(), &motion, t)).collect())
}

/// Writes the reconstructed volume, rendered frames, or loss/flux curves.
pub fn export(cfg: &RunConfig, checkpoint: &Path, what: ExportKind, out: &Path) -> Result<Vec<PathBuf>> {
    let ckpt = Checkpoint::read(checkpoint)?;
    prepare_out(out)?;
    let mut written = Vec::new();
    match what {
        ExportKind::Volume => {
            let field = ckpt.field()?;
            let volume = VoxelEmission::from_values(cfg.grid, field.rasterize(&cfg.grid))?;
            let path = out.join("volume.bhvl");
            let provenance = serde_json::json!({ "checkpoint": checkpoint.display().to_string(), "axis": <[f64; 3]>::from(ckpt.axis) });
            write_volume(&path, &volume, Some(&provenance))?;
            written.push(path);
        }
        ExportKind::Frames => {
            let frames = frame_images(cfg, &ckpt)?;
            let peak = frames.iter().flat_map(|f| f.pixels.iter().copied()).fold(0.0, f64::max);
            let dir = out.join("frames");
            std::fs::create_dir_all(&dir)?;
            for (i, f) in frames.iter().enumerate() {
                let bin = dir.join(format!("frame_{i:04}.bin"));
                f.write(&bin)?;
                f.write_png(&bin.with_extension("png"), peak)?;
                written.push(bin);
            }
        }
        ExportKind::Plots => {
            let loss = out.join("loss.csv");
            let mut w = csv::Writer::from_path(&loss)?;
            w.write_record(["step", "loss"])?;
            for (i, l) in ckpt.loss_trace.iter().enumerate() {
                w.write_record([i.to_string(), l.to_string()])?;
            }
            w.flush()?;
            line_plot_png(&out.join("loss.png"), &ckpt.loss_trace, true)?;
            let flux: Vec<(f64, f64)> = frame_images(cfg, &ckpt)?.iter().map(|f| (f.time, f.total_flux())).collect();
            let flux_csv = out.join("flux.csv");
            let mut w = csv::Writer::from_path(&flux_csv)?;
            w.write_record(["t", "flux"])?;
            for (t, f) in &flux {
                w.write_record([t.to_string(), f.to_string()])?;
            }
            w.flush()?;
            line_plot_png(&out.join("flux.png"), &flux.iter().map(|p| p.1).collect::<Vec<_>>(), false)?;
            written.extend([loss, out.join("loss.png"), flux_csv, out.join("flux.png")]);
        }
    }
    Ok(written)
}

/// Re-runs the command recorded in `dir`'s manifest into `scratch` and lists
/// artifacts whose bytes differ (or are missing on either side).
pub fn verify_manifest(dir: &Path, scratch: &Path) -> Result<Vec<String>> {
    let m = Manifest::read(dir)?;
    let resume = m.inputs.get("resume").map(PathBuf::from);
    match m.command.as_str() {
        "generate" => {
            generate(&m.config, scratch)?;
        }
        "fit" => {
            let dataset = m.inputs.get("dataset").ok_or_else(|| Error::Config("fit manifest lacks its dataset".into()))?;
            fit(&m.config, Path::new(dataset), scratch, resume.as_deref())?;
        }
        "sweep" => {
            sweep(&m.config, scratch)?;
        }
        other => return Err(Error::Config(format!("cannot regenerate command {other:?}"))),
    }
    let fresh = hash_tree(scratch)?;
    let mut keys: Vec<&String> = m.artifacts.keys().chain(fresh.keys()).collect();
    keys.sort();
    keys.dedup();
    Ok(keys.into_iter().filter(|k| m.artifacts.get(*k) != fresh.get(*k)).cloned().collect())
}

/// Replaces every seed in the configuration with `seed` (noise only when noise is enabled).
pub fn override_seed(cfg: &mut RunConfig, seed: u64) {
    cfg.truth.seed = seed;
    cfg.solver.init_seed = seed;
    cfg.solver.batch_seed = seed;
    cfg.sweep.base_seed = seed;
    if cfg.observation.noise_seed.is_some() {
        cfg.observation.noise_seed = Some(seed);
    }
    if let crate::solver::AxisInit::Random { .. } = cfg.solver.axis_init {
        cfg.solver.axis_init = crate::solver::AxisInit::Random { seed };
    }
}
