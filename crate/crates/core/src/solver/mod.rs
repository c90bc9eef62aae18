//! Joint reconstruction of the emission field and rotation axis by Adam on χ².

mod metrics;
mod sweep;

pub use metrics::{evaluate, psnr, Metrics};
pub use sweep::{mismatch_sweep, SweepCell, SweepRow, SweepSpec, SweepTable};

use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{Motion, RotationAxis, VelocityProfile};
use crate::error::{Error, Result};
use crate::field::{Checkpoint, EmissionField, ModelSpec, OptimizerState, Representation, Support};
use crate::units::GridSpec;
use crate::instrument::ObservationSet;
use crate::render::{grad_render, render_frame, RenderGradient, RenderPlan};
use crate::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AxisInit {
    Given { axis: [f64; 3] },
    Random { seed: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AxisMode {
    Fixed,
    Estimated,
}

/// Architecture of the reconstructed field; its support and time range come from the problem.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub representation: Representation,
    pub width: usize,
    pub hidden_layers: usize,
    pub degree: usize,
    /// Voxels per axis of the grid baseline.
    pub voxel_resolution: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            representation: Representation::BhNerf,
            width: 128,
            hidden_layers: 4,
            degree: 3,
            voxel_resolution: 64,
        }
    }
}

impl ModelConfig {
    pub fn spec(&self, support: Support, times: &[f64]) -> Result<ModelSpec> {
        let Self { width, hidden_layers, degree, .. } = *self;
        Ok(match self.representation {
            Representation::BhNerf => ModelSpec::BhNerf { width, hidden_layers, degree, support },
            Representation::VoxelGrid => ModelSpec::VoxelGrid {
                grid: GridSpec::new(self.voxel_resolution, support.outer_radius)?,
                support,
            },
            Representation::Mlp4d => {
                let first = times.first().copied().unwrap_or(0.0);
                let last = times.last().copied().unwrap_or(first);
                ModelSpec::Mlp4d { width, hidden_layers, degree, support, time_range: [first, last] }
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    pub iterations: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    /// Power of the polynomial decay from `lr_start` to `lr_end`.
    pub power: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Multiplier on the learning rate for the raw axis.
    pub axis_lr_scale: f64,
    pub frames_per_step: usize,
    pub axis_init: AxisInit,
    pub axis_mode: AxisMode,
    /// Also optimize from the antipodal axis and keep the lower final loss (estimated mode only).
    pub dual_init: bool,
    pub model: ModelConfig,
    /// Initial pre-activation output offset (network head bias or voxel pre-value).
    pub output_bias_init: f64,
    /// Seed of the θ initialization, shared by both dual-init runs.
    pub init_seed: u64,
    /// Seed of the random frame minibatches (unused in deterministic mode).
    pub batch_seed: u64,
    /// Round-robin frame schedule instead of random minibatches.
    pub deterministic: bool,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            iterations: 5000,
            lr_start: 1e-4,
            lr_end: 1e-6,
            power: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            axis_lr_scale: 1.0,
            frames_per_step: 1,
            axis_init: AxisInit::Random { seed: 0 },
            axis_mode: AxisMode::Estimated,
            dual_init: true,
            model: ModelConfig::default(),
            output_bias_init: -4.0,
            init_seed: 0,
            batch_seed: 0,
            deterministic: true,
        }
    }
}

impl SolveConfig {
    pub fn validate(&self, n_frames: usize) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lr_end > 0.0 && self.lr_start >= self.lr_end) {
            return bad(format!("need lr_start ≥ lr_end > 0 (got {}, {})", self.lr_start, self.lr_end));
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        if self.frames_per_step == 0 || self.frames_per_step > n_frames {
            return bad(format!("frames_per_step {} outside 1..={n_frames}", self.frames_per_step));
        }
        if !(self.power > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return bad("invalid schedule power or Adam hyperparameters".into());
        }
        if !(self.axis_lr_scale >= 0.0) || !self.output_bias_init.is_finite() {
            return bad("axis_lr_scale must be non-negative and output_bias_init finite".into());
        }
        if let AxisInit::Given { axis } = self.axis_init {
            RotationAxis::new(Vec3::from(axis))?;
        }
        Ok(())
    }

    pub fn initial_axis(&self) -> Result<RotationAxis> {
        match self.axis_init {
            AxisInit::Given { axis } => RotationAxis::new(Vec3::from(axis)),
            AxisInit::Random { seed } => Ok(RotationAxis::random(seed)),
        }
    }
}

/// `lr_end + (lr_start − lr_end)·(1 − step/iterations)^p`.
pub fn lr_at(config: &SolveConfig, step: usize) -> f64 {
    let frac = (step.min(config.iterations) as f64 / config.iterations as f64).min(1.0);
    config.lr_end + (config.lr_start - config.lr_end) * (1.0 - frac).powf(config.power)
}

/// Observations plus everything needed to model them.
#[derive(Clone, Copy)]
pub struct Problem<'a> {
    pub observations: &'a ObservationSet,
    pub plan: &'a RenderPlan,
    /// Velocity profile assumed by the reconstruction.
    pub profile: &'a VelocityProfile,
}

impl Problem<'_> {
    fn motion(&self, raw_axis: Vec3) -> Result<Motion> {
        Ok(Motion::new(RotationAxis::new(raw_axis)?, self.profile.clone()))
    }
}

/// χ² over `frames` and its gradient with respect to θ and, optionally, the raw axis.
pub fn loss_and_gradient(field: &dyn EmissionField, raw_axis: Vec3, problem: &Problem, frames: &[usize], with_axis: bool) -> Result<(f64, RenderGradient)> {
    let motion = problem.motion(raw_axis)?;
    let obs = problem.observations;
    let mut total = RenderGradient::zeros(field.param_count());
    let mut chi2 = 0.0;
    for &k in frames {
        let t = obs.times[k];
        let image = render_frame(problem.plan, field, &motion, t);
        let (c, upstream) = obs.frame_loss(k, &image.pixels);
        chi2 += c;
        total.add(&grad_render(problem.plan, field, &motion, t, &upstream, with_axis)?);
    }
    Ok((chi2, total))
}

/// χ² over every frame.
pub fn full_loss(field: &dyn EmissionField, raw_axis: Vec3, problem: &Problem) -> Result<f64> {
    let motion = problem.motion(raw_axis)?;
    let obs = problem.observations;
    Ok((0..obs.frame_count())
        .map(|k| obs.frame_loss(k, &render_frame(problem.plan, field, &motion, obs.times[k]).pixels).0)
        .sum())
}

/// Optimizer state of one reconstruction run.
pub struct SolveState {
    pub field: Box<dyn EmissionField>,
    pub axis: Vec3,
    pub optimizer: OptimizerState,
    /// Minibatch χ² per step.
    pub loss_trace: Vec<f64>,
    /// Seconds since the run started, per step.
    pub wall_clock: Vec<f64>,
}

impl Clone for SolveState {
    fn clone(&self) -> Self {
        Self {
            field: self.field.spec().with_params(self.field.params().to_vec()).expect("spec rebuilds its own parameters"),
            axis: self.axis,
            optimizer: self.optimizer.clone(),
            loss_trace: self.loss_trace.clone(),
            wall_clock: self.wall_clock.clone(),
        }
    }
}

impl std::fmt::Debug for SolveState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SolveState")
            .field("spec", &self.field.spec())
            .field("axis", &self.axis)
            .field("step", &self.optimizer.step)
            .finish_non_exhaustive()
    }
}

impl SolveState {
    pub fn new(field: Box<dyn EmissionField>, axis: RotationAxis) -> Self {
        let n = field.param_count();
        Self {
            field,
            axis: axis.raw,
            optimizer: OptimizerState::zeros(n),
            loss_trace: Vec::new(),
            wall_clock: Vec::new(),
        }
    }

    pub fn step_count(&self) -> usize {
        self.optimizer.step as usize
    }

    pub fn unit_axis(&self) -> Result<Vec3> {
        Ok(RotationAxis::new(self.axis)?.unit())
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            spec: self.field.spec(),
            params: self.field.params().to_vec(),
            axis: self.axis,
            optimizer: Some(self.optimizer.clone()),
            loss_trace: self.loss_trace.clone(),
        }
    }

    /// Resumes from a checkpoint; wall-clock history is not stored and restarts empty.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let field = ckpt.field()?;
        let optimizer = ckpt.optimizer.clone().unwrap_or_else(|| OptimizerState::zeros(field.param_count()));
        if optimizer.m.len() != field.param_count() || optimizer.step as usize != ckpt.loss_trace.len() {
            return Err(Error::ShapeMismatch("checkpoint optimizer state does not match its field".into()));
        }
        Ok(Self {
            field,
            axis: RotationAxis::new(ckpt.axis)?.raw,
            optimizer,
            loss_trace: ckpt.loss_trace.clone(),
            wall_clock: Vec::new(),
        })
    }

    /// `step, loss, lr` rows.
    pub fn write_loss_trace(&self, path: &Path, config: &SolveConfig) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "step,loss,lr")?;
        for (i, loss) in self.loss_trace.iter().enumerate() {
            writeln!(out, "{i},{loss:e},{:e}", lr_at(config, i))?;
        }
        Ok(())
    }

    /// `step, wall_s` rows for the steps taken since this state was created or loaded.
    pub fn write_timing(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "step,wall_s")?;
        let offset = self.loss_trace.len() - self.wall_clock.len();
        for (i, w) in self.wall_clock.iter().enumerate() {
            writeln!(out, "{},{w}", i + offset)?;
        }
        Ok(())
    }
}

/// Frames used at `step`.
pub fn frame_batch(config: &SolveConfig, n_frames: usize, step: usize) -> Vec<usize> {
    let f = config.frames_per_step;
    if config.deterministic {
        (0..f).map(|i| (step * f + i) % n_frames).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(config.batch_seed);
        rng.set_stream(step as u64);
        let mut idx = sample(&mut rng, n_frames, f).into_vec();
        idx.sort_unstable();
        idx
    }
}

fn adam(x: &mut f64, m: &mut f64, v: &mut f64, g: f64, lr: f64, c: &SolveConfig, bias1: f64, bias2: f64) {
    *m = c.beta1 * *m + (1.0 - c.beta1) * g;
    *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
    *x -= lr * (*m / bias1) / ((*v / bias2).sqrt() + c.epsilon);
}

/// One Adam update on a minibatch of frames; returns the minibatch χ².
pub fn step(state: &mut SolveState, config: &SolveConfig, problem: &Problem) -> Result<f64> {
    let k = state.step_count();
    let frames = frame_batch(config, problem.observations.frame_count(), k);
    let estimate_axis = config.axis_mode == AxisMode::Estimated;
    let (loss, grad) = loss_and_gradient(state.field.as_ref(), state.axis, problem, &frames, estimate_axis)?;
    let grad_finite = grad.params.iter().all(|g| g.is_finite()) && grad.axis.iter().all(|g| g.is_finite());
    if !loss.is_finite() || !grad_finite {
        let params = state.field.params();
        log::error!(
            "non-finite loss {loss} at step {k}: frames {frames:?}, axis {:?}, |θ|∞ = {}, finite gradient: {grad_finite}",
            state.axis,
            params.iter().fold(0.0f64, |a, p| a.max(p.abs()))
        );
        return Err(Error::NonFiniteLoss { step: k });
    }
    let lr = lr_at(config, k);
    let t = (k + 1) as i32;
    let (bias1, bias2) = (1.0 - config.beta1.powi(t), 1.0 - config.beta2.powi(t));
    let opt = &mut state.optimizer;
    for (((x, m), v), g) in state.field.params_mut().iter_mut().zip(&mut opt.m).zip(&mut opt.v).zip(&grad.params) {
        adam(x, m, v, *g, lr, config, bias1, bias2);
    }
    if estimate_axis {
        let lr_axis = lr * config.axis_lr_scale;
        for i in 0..3 {
            adam(&mut state.axis[i], &mut opt.axis_m[i], &mut opt.axis_v[i], grad.axis[i], lr_axis, config, bias1, bias2);
        }
        RotationAxis::new(state.axis)?;
    }
    opt.step += 1;
    state.loss_trace.push(loss);
    Ok(loss)
}

/// Steps until `config.iterations` steps have been taken in total.
pub fn run(mut state: SolveState, config: &SolveConfig, problem: &Problem) -> Result<SolveState> {
    config.validate(problem.observations.frame_count())?;
    let start = Instant::now();
    let base = state.wall_clock.last().copied().unwrap_or(0.0);
    let report = (config.iterations / 10).max(1);
    while state.step_count() < config.iterations {
        let loss = step(&mut state, config, problem)?;
        state.wall_clock.push(base + start.elapsed().as_secs_f64());
        if state.step_count() % report == 0 {
            log::info!("step {}/{}: χ² = {loss:.6e}, lr = {:.3e}", state.step_count(), config.iterations, lr_at(config, state.step_count()));
        }
    }
    Ok(state)
}

/// One optimization run and its full-data loss.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub initial_axis: Vec3,
    pub state: SolveState,
    pub final_chi2: f64,
}

/// All runs of a solve; `best` indexes the lowest final χ².
#[derive(Clone, Debug)]
pub struct SolveOutcome {
    pub runs: Vec<RunResult>,
    pub failures: Vec<(Vec3, String)>,
    pub best: usize,
}

impl SolveOutcome {
    pub fn best(&self) -> &RunResult {
        &self.runs[self.best]
    }
}

/// Full reconstruction: one run with a fixed axis, or runs from `ξ₀` and `−ξ₀` when estimating it.
pub fn solve(config: &SolveConfig, problem: &Problem) -> Result<SolveOutcome> {
    config.validate(problem.observations.frame_count())?;
    let spec = config.model.spec(problem.plan.support(), &problem.observations.times)?;
    let axis0 = config.initial_axis()?;
    let field0 = spec.initialize(config.init_seed, config.output_bias_init)?;
    let mut inits = vec![axis0];
    if config.axis_mode == AxisMode::Estimated && config.dual_init {
        inits.push(axis0.negated());
    }
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for axis in inits {
        let field = spec.with_params(field0.params().to_vec())?;
        let attempt = run(SolveState::new(field, axis), config, problem)
            .and_then(|state| Ok((full_loss(state.field.as_ref(), state.axis, problem)?, state)));
        match attempt {
            Ok((final_chi2, state)) => {
                log::info!("run from axis {:?}: final χ² = {final_chi2:.6e}", axis.unit());
                runs.push(RunResult { initial_axis: axis.raw, state, final_chi2 });
            }
            Err(e) => {
                log::warn!("run from axis {:?} failed: {e}", axis.unit());
                failures.push((axis.raw, e.to_string()));
            }
        }
    }
    if runs.is_empty() {
        let msgs: Vec<_> = failures.iter().map(|(_, e)| e.as_str()).collect();
        return Err(Error::AllRunsFailed(msgs.join("; ")));
    }
    let best = runs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.final_chi2.total_cmp(&b.1.final_chi2))
        .map(|(i, _)| i)
        .unwrap();
    Ok(SolveOutcome { runs, failures, best })
}
