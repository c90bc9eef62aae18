use serde::{Deserialize, Serialize};

use super::{EmissionSource, sigmoid, softplus, EmissionField, ModelSpec, Support, TensorInfo};
use crate::dynamics::{unit_to_raw_gradient, warp_adjoint, warp_forward, Motion};
use crate::error::{Error, Result};
use crate::units::GridSpec;
use crate::Vec3;

/// How stored voxel parameters map to emission values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValueTransform {
    /// Parameters are the (nonnegative) values themselves.
    Identity,
    /// Values are `softplus(parameter)`.
    Softplus,
}

/// Voxel-center samples with trilinear interpolation, advected by the flow.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelEmission {
    pub grid: GridSpec,
    pub support: Support,
    pub transform: ValueTransform,
    params: Vec<f64>,
}

/// Lower corner index, fractional offset and whether the coordinate was clamped.
#[derive(Clone, Copy)]
struct AxisCell {
    i0: usize,
    frac: f64,
    clamped: bool,
}

const SNAP: f64 = 1e-10;

impl VoxelEmission {
    /// Fixed nonnegative values, e.g. a ground-truth volume.
    pub fn from_values(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if values.len() != grid.voxel_count() {
            return Err(Error::ShapeMismatch(format!("{} values for a {}³ grid", values.len(), grid.resolution)));
        }
        if let Some(i) = values.iter().position(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::NegativeEmission(i));
        }
        Ok(Self {
            grid,
            support: Support::for_grid(&grid),
            transform: ValueTransform::Identity,
            params: values,
        })
    }

    /// Trainable grid of softplus pre-activations.
    pub fn trainable(grid: GridSpec, support: Support, pre: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if pre.len() != grid.voxel_count() {
            return Err(Error::ShapeMismatch(format!("{} values for a {}³ grid", pre.len(), grid.resolution)));
        }
        Ok(Self {
            grid,
            support,
            transform: ValueTransform::Softplus,
            params: pre,
        })
    }

    pub fn with_support(mut self, support: Support) -> Self {
        self.support = support;
        self
    }

    #[inline]
    fn value(&self, i: usize) -> f64 {
        match self.transform {
            ValueTransform::Identity => self.params[i],
            ValueTransform::Softplus => softplus(self.params[i]),
        }
    }

    #[inline]
    fn value_slope(&self, i: usize) -> f64 {
        match self.transform {
            ValueTransform::Identity => 1.0,
            ValueTransform::Softplus => sigmoid(self.params[i]),
        }
    }

    pub fn values(&self) -> Vec<f64> {
        (0..self.params.len()).map(|i| self.value(i)).collect()
    }

    #[inline]
    fn cell(&self, c: f64) -> AxisCell {
        let n = self.grid.resolution;
        let u = (c + self.grid.half_extent) / self.grid.spacing() - 0.5;
        let last = (n - 1) as f64;
        if u <= 0.0 {
            return AxisCell { i0: 0, frac: 0.0, clamped: true };
        }
        if u >= last {
            return AxisCell { i0: n - 2, frac: 1.0, clamped: true };
        }
        // Snap near-centers so center queries reproduce stored values exactly.
        let nearest = u.round();
        let u = if (u - nearest).abs() <= SNAP * nearest.max(1.0) { nearest } else { u };
        let i0 = (u.floor() as usize).min(n - 2);
        AxisCell {
            i0,
            frac: u - i0 as f64,
            clamped: false,
        }
    }

    fn corners(&self, x: &Vec3) -> ([AxisCell; 3], [(usize, [f64; 3], [f64; 3]); 8]) {
        let cells = [self.cell(x.x), self.cell(x.y), self.cell(x.z)];
        let mut out = [(0, [0.0; 3], [0.0; 3]); 8];
        for (corner, slot) in out.iter_mut().enumerate() {
            let mut idx = [0usize; 3];
            let mut w = [0.0; 3];
            let mut dw = [0.0; 3];
            for a in 0..3 {
                let hi = (corner >> (2 - a)) & 1 == 1;
                idx[a] = cells[a].i0 + hi as usize;
                w[a] = if hi { cells[a].frac } else { 1.0 - cells[a].frac };
                dw[a] = if hi { 1.0 } else { -1.0 };
            }
            *slot = (self.grid.index(idx[0], idx[1], idx[2]), w, dw);
        }
        (cells, out)
    }

    /// Trilinear interpolation at a canonical-frame point (no support mask).
    pub fn interpolate(&self, x: &Vec3) -> f64 {
        let (_, corners) = self.corners(x);
        let mut acc = 0.0;
        for (i, w, _) in corners {
            let weight = w[0] * w[1] * w[2];
            if weight != 0.0 {
                acc += weight * self.value(i);
            }
        }
        acc
    }

    /// Adds `upstream · ∂value/∂params` and returns the spatial gradient.
    fn interpolate_backward(&self, x: &Vec3, upstream: f64, grad: &mut [f64]) -> Vec3 {
        let (cells, corners) = self.corners(x);
        let inv = 1.0 / self.grid.spacing();
        let mut dx = Vec3::zeros();
        for (i, w, dw) in corners {
            let weight = w[0] * w[1] * w[2];
            if weight != 0.0 {
                grad[i] += upstream * weight * self.value_slope(i);
            }
            let v = self.value(i);
            for a in 0..3 {
                if !cells[a].clamped {
                    let others = w[(a + 1) % 3] * w[(a + 2) % 3];
                    dx[a] += dw[a] * others * v * inv;
                }
            }
        }
        dx * upstream
    }
}

impl EmissionSource for VoxelEmission {
    fn support(&self) -> Support {
        self.support
    }

    fn eval_batch(&self, motion: &Motion, t: f64, xs: &[Vec3], out: &mut [f64]) {
        assert_eq!(xs.len(), out.len());
        let k = motion.axis.unit();
        for (x, o) in xs.iter().zip(out.iter_mut()) {
            *o = if self.support.contains(x) {
                self.interpolate(&warp_forward(&k, &motion.profile, t, x).warped)
            } else {
                0.0
            };
        }
    }
}

impl EmissionField for VoxelEmission {
    fn spec(&self) -> ModelSpec {
        ModelSpec::VoxelGrid {
            grid: self.grid,
            support: self.support,
        }
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn tensors(&self) -> Vec<TensorInfo> {
        let n = self.grid.resolution;
        vec![TensorInfo {
            name: "voxels".into(),
            shape: vec![n, n, n],
            offset: 0,
        }]
    }

    fn backward_batch(&self, motion: &Motion, t: f64, xs: &[Vec3], upstream: &[f64], grad: &mut [f64], grad_axis: Option<&mut Vec3>) {
        assert_eq!(xs.len(), upstream.len());
        let k = motion.axis.unit();
        let mut grad_k = Vec3::zeros();
        for (x, &u) in xs.iter().zip(upstream) {
            if u == 0.0 || !self.support.contains(x) {
                continue;
            }
            let rec = warp_forward(&k, &motion.profile, t, x);
            let dy = self.interpolate_backward(&rec.warped, u, grad);
            if grad_axis.is_some() {
                grad_k += warp_adjoint(&k, &rec, &dy).0;
            }
        }
        if let Some(ga) = grad_axis {
            *ga += unit_to_raw_gradient(&motion.axis.raw, &grad_k);
        }
    }
}
