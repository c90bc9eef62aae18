//! Emission-field representations: the flow-warped coordinate MLP, the voxel
//! grid baseline and the 4D spatiotemporal MLP baseline.

mod checkpoint;
mod encoding;
mod mlp;
mod neural;
mod voxel;

use serde::{Deserialize, Serialize};

use crate::dynamics::Motion;
use crate::error::{Error, Result};
use crate::geodesic::Tolerances;
use crate::units::{GridSpec, HORIZON_RADIUS};
use crate::Vec3;

pub use checkpoint::{Checkpoint, OptimizerState, CHECKPOINT_FORMAT_VERSION};
pub use encoding::PositionalEncoding;
pub use mlp::{Mlp, MlpCache, MlpShape};
pub use neural::NeuralEmission;
pub use voxel::{ValueTransform, VoxelEmission};

/// Points per batch in evaluation and backpropagation.
pub const CHUNK: usize = 2048;

#[inline]
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`softplus`] for positive values.
pub fn softplus_inverse(v: f64) -> f64 {
    if v > 30.0 {
        v
    } else {
        v.exp_m1().ln()
    }
}

/// Spherical shell where emission may be nonzero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Support {
    pub inner_radius: f64,
    pub outer_radius: f64,
}

impl Support {
    /// Ball inscribed in the grid cube, minus the horizon guard.
    pub fn for_grid(grid: &GridSpec) -> Self {
        Self {
            inner_radius: Tolerances::default().capture_radius(),
            outer_radius: grid.half_extent,
        }
    }

    #[inline]
    pub fn contains(&self, x: &Vec3) -> bool {
        let r2 = x.norm_squared();
        r2 > self.inner_radius * self.inner_radius && r2 <= self.outer_radius * self.outer_radius
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Representation {
    BhNerf,
    VoxelGrid,
    Mlp4d,
}

impl Representation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Representation::BhNerf => "bh-nerf",
            Representation::VoxelGrid => "voxel-grid",
            Representation::Mlp4d => "mlp-4d",
        }
    }
}

/// Named slice of a flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Everything needed to rebuild a field from its flat parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "representation", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    BhNerf {
        width: usize,
        hidden_layers: usize,
        degree: usize,
        support: Support,
    },
    VoxelGrid {
        grid: GridSpec,
        support: Support,
    },
    Mlp4d {
        width: usize,
        hidden_layers: usize,
        degree: usize,
        support: Support,
        /// Observation window mapped onto the time coordinate.
        time_range: [f64; 2],
    },
}

impl ModelSpec {
    pub fn representation(&self) -> Representation {
        match self {
            ModelSpec::BhNerf { .. } => Representation::BhNerf,
            ModelSpec::VoxelGrid { .. } => Representation::VoxelGrid,
            ModelSpec::Mlp4d { .. } => Representation::Mlp4d,
        }
    }

    pub fn support(&self) -> Support {
        match self {
            ModelSpec::BhNerf { support, .. } | ModelSpec::VoxelGrid { support, .. } | ModelSpec::Mlp4d { support, .. } => *support,
        }
    }

    /// Freshly initialized field; voxel grids start at `softplus(0)` everywhere.
    pub fn build(&self, seed: u64) -> Result<Box<dyn EmissionField>> {
        self.initialize(seed, 0.0)
    }

    /// Like [`build`](Self::build), with the pre-activation output offset by
    /// `output_bias`: the head bias of a network, or every voxel pre-value.
    pub fn initialize(&self, seed: u64, output_bias: f64) -> Result<Box<dyn EmissionField>> {
        Ok(match self {
            ModelSpec::VoxelGrid { grid, support } => {
                Box::new(VoxelEmission::trainable(*grid, *support, vec![output_bias; grid.voxel_count()])?)
            }
            _ => {
                let mut field = NeuralEmission::from_spec(self, None, seed)?;
                if let Some(head_bias) = field.params_mut().last_mut() {
                    *head_bias = output_bias;
                }
                Box::new(field)
            }
        })
    }

    pub fn with_params(&self, params: Vec<f64>) -> Result<Box<dyn EmissionField>> {
        Ok(match self {
            ModelSpec::VoxelGrid { grid, support } => Box::new(VoxelEmission::trainable(*grid, *support, params)?),
            _ => Box::new(NeuralEmission::from_spec(self, Some(params), 0)?),
        })
    }
}

/// A nonnegative emission density `e(t, x)` that can be rendered.
pub trait EmissionSource: Send + Sync {
    fn support(&self) -> Support;

    /// Emission at observation time `t`; zero outside the support.
    fn eval_batch(&self, motion: &Motion, t: f64, xs: &[Vec3], out: &mut [f64]);

    /// Single-point evaluation with the horizon check.
    fn eval_at_time(&self, motion: &Motion, t: f64, x: &Vec3) -> Result<f64> {
        let r = x.norm();
        if !(r > HORIZON_RADIUS) {
            return Err(Error::RadiusInsideHorizon(r));
        }
        let mut out = [0.0];
        self.eval_batch(motion, t, std::slice::from_ref(x), &mut out);
        Ok(out[0])
    }

    /// Canonical (t = 0) field sampled at the centers of `grid`.
    fn rasterize(&self, grid: &GridSpec) -> Vec<f64> {
        let motion = Motion::keplerian(crate::dynamics::RotationAxis::z());
        let xs: Vec<Vec3> = (0..grid.voxel_count()).map(|i| Vec3::from(grid.voxel_center(i))).collect();
        let mut out = vec![0.0; xs.len()];
        for (x, o) in xs.chunks(CHUNK).zip(out.chunks_mut(CHUNK)) {
            self.eval_batch(&motion, 0.0, x, o);
        }
        out
    }
}

/// An emission source with flat trainable parameters.
pub trait EmissionField: EmissionSource {
    fn spec(&self) -> ModelSpec;
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    fn tensors(&self) -> Vec<TensorInfo>;

    /// Accumulates `∂(Σ upstream_i e(t, x_i))/∂θ` into `grad` and, when given, the
    /// derivative with respect to the raw rotation axis into `grad_axis`.
    fn backward_batch(&self, motion: &Motion, t: f64, xs: &[Vec3], upstream: &[f64], grad: &mut [f64], grad_axis: Option<&mut Vec3>);

    fn representation(&self) -> Representation {
        self.spec().representation()
    }

    fn param_count(&self) -> usize {
        self.params().len()
    }
}
