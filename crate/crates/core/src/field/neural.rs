use ndarray::Array2;

use super::{EmissionSource, sigmoid, softplus, EmissionField, Mlp, MlpShape, ModelSpec, PositionalEncoding, Support, TensorInfo};
use crate::dynamics::{unit_to_raw_gradient, warp_adjoint, warp_forward, Motion, WarpRecord};
use crate::error::{Error, Result};
use crate::Vec3;

/// Coordinate MLP `softplus(MLP_θ(γ(·)))`, either evaluated at flow-warped
/// canonical coordinates or, with a time range, directly on `(x, t)`.
#[derive(Clone, Debug)]
pub struct NeuralEmission {
    mlp: Mlp,
    encoding: PositionalEncoding,
    support: Support,
    time_range: Option<[f64; 2]>,
    params: Vec<f64>,
}

/// Per-chunk intermediate values.
struct Forward {
    active: Vec<usize>,
    warps: Vec<WarpRecord>,
    encoded: Array2<f64>,
    z: Vec<f64>,
    cache: super::MlpCache,
}

impl NeuralEmission {
    pub fn from_spec(spec: &ModelSpec, params: Option<Vec<f64>>, seed: u64) -> Result<Self> {
        let (width, hidden_layers, degree, support, time_range) = match *spec {
            ModelSpec::BhNerf { width, hidden_layers, degree, support } => (width, hidden_layers, degree, support, None),
            ModelSpec::Mlp4d { width, hidden_layers, degree, support, time_range } => {
                (width, hidden_layers, degree, support, Some(time_range))
            }
            ModelSpec::VoxelGrid { .. } => return Err(Error::Config("voxel spec passed to a neural field".into())),
        };
        if width == 0 || hidden_layers == 0 || degree == 0 {
            return Err(Error::Config("network width, depth and encoding degree must be positive".into()));
        }
        let input_dim = if time_range.is_some() { 4 } else { 3 };
        let encoding = PositionalEncoding::for_extent(degree, support.outer_radius);
        let mlp = Mlp::new(MlpShape {
            input_dim: encoding.output_dim(input_dim),
            width,
            hidden_layers,
        });
        let params = match params {
            Some(p) if p.len() != mlp.param_count() => {
                return Err(Error::ShapeMismatch(format!("expected {} parameters, got {}", mlp.param_count(), p.len())))
            }
            Some(p) => p,
            None => mlp.init(seed),
        };
        Ok(Self {
            mlp,
            encoding,
            support,
            time_range,
            params,
        })
    }

    pub fn encoding(&self) -> &PositionalEncoding {
        &self.encoding
    }

    /// Time mapped into `[-half_extent/2, half_extent/2]`, i.e. `[-π/2, π/2]` after encoding.
    fn time_coordinate(&self, t: f64) -> f64 {
        let [t0, t1] = self.time_range.expect("temporal field");
        if t1 > t0 {
            ((t - t0) / (t1 - t0) - 0.5) * self.support.outer_radius
        } else {
            0.0
        }
    }

    fn forward(&self, motion: &Motion, t: f64, xs: &[Vec3], skip: impl Fn(usize) -> bool) -> Forward {
        let k = motion.axis.unit();
        let mut active = Vec::with_capacity(xs.len());
        let mut warps = Vec::new();
        for (i, x) in xs.iter().enumerate() {
            if self.support.contains(x) && !skip(i) {
                active.push(i);
            }
        }
        let dim = if self.time_range.is_some() { 4 } else { 3 };
        let mut coords = Array2::zeros((active.len(), dim));
        match self.time_range {
            Some(_) => {
                let tc = self.time_coordinate(t);
                for (row, &i) in active.iter().enumerate() {
                    let x = &xs[i];
                    coords[[row, 0]] = x.x;
                    coords[[row, 1]] = x.y;
                    coords[[row, 2]] = x.z;
                    coords[[row, 3]] = tc;
                }
            }
            None => {
                warps.reserve(active.len());
                for (row, &i) in active.iter().enumerate() {
                    let rec = warp_forward(&k, &motion.profile, t, &xs[i]);
                    coords[[row, 0]] = rec.warped.x;
                    coords[[row, 1]] = rec.warped.y;
                    coords[[row, 2]] = rec.warped.z;
                    warps.push(rec);
                }
            }
        }
        let encoded = self.encoding.encode_batch(coords.view());
        let cache = self.mlp.forward(&self.params, encoded.clone());
        let z = cache.output.to_vec();
        Forward {
            active,
            warps,
            encoded,
            z,
            cache,
        }
    }
}

impl EmissionSource for NeuralEmission {
    fn support(&self) -> Support {
        self.support
    }

    fn eval_batch(&self, motion: &Motion, t: f64, xs: &[Vec3], out: &mut [f64]) {
        assert_eq!(xs.len(), out.len());
        out.fill(0.0);
        for (xc, oc) in xs.chunks(super::CHUNK).zip(out.chunks_mut(super::CHUNK)) {
            let fw = self.forward(motion, t, xc, |_| false);
            for (&i, &z) in fw.active.iter().zip(&fw.z) {
                oc[i] = softplus(z);
            }
        }
    }
}

impl EmissionField for NeuralEmission {
    fn spec(&self) -> ModelSpec {
        let shape = self.mlp.shape;
        match self.time_range {
            None => ModelSpec::BhNerf {
                width: shape.width,
                hidden_layers: shape.hidden_layers,
                degree: self.encoding.degree,
                support: self.support,
            },
            Some(time_range) => ModelSpec::Mlp4d {
                width: shape.width,
                hidden_layers: shape.hidden_layers,
                degree: self.encoding.degree,
                support: self.support,
                time_range,
            },
        }
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn tensors(&self) -> Vec<TensorInfo> {
        self.mlp.tensors()
    }

    fn backward_batch(&self, motion: &Motion, t: f64, xs: &[Vec3], upstream: &[f64], grad: &mut [f64], grad_axis: Option<&mut Vec3>) {
        assert_eq!(xs.len(), upstream.len());
        assert_eq!(grad.len(), self.params.len());
        let want_axis = grad_axis.is_some() && self.time_range.is_none();
        let k = motion.axis.unit();
        let mut grad_k = Vec3::zeros();
        for (xc, uc) in xs.chunks(super::CHUNK).zip(upstream.chunks(super::CHUNK)) {
            let fw = self.forward(motion, t, xc, |i| uc[i] == 0.0);
            if fw.active.is_empty() {
                continue;
            }
            let dz: Vec<f64> = fw.active.iter().zip(&fw.z).map(|(&i, &z)| uc[i] * sigmoid(z)).collect();
            let d_encoded = self.mlp.backward(&self.params, &fw.cache, &dz, grad, want_axis);
            if let Some(d_encoded) = d_encoded {
                let d_coords = self.encoding.backward_batch(fw.encoded.view(), d_encoded.view(), 3);
                for (row, rec) in fw.warps.iter().enumerate() {
                    let g = Vec3::new(d_coords[[row, 0]], d_coords[[row, 1]], d_coords[[row, 2]]);
                    grad_k += warp_adjoint(&k, rec, &g).0;
                }
            }
        }
        if let (true, Some(ga)) = (want_axis, grad_axis) {
            *ga += unit_to_raw_gradient(&motion.axis.raw, &grad_k);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{RotationAxis, VelocityProfile};
    use crate::units::GridSpec;

    fn nerf(width: usize, seed: u64) -> NeuralEmission {
        let spec = ModelSpec::BhNerf {
            width,
            hidden_layers: 4,
            degree: 3,
            support: Support::for_grid(&GridSpec::default()),
        };
        NeuralEmission::from_spec(&spec, None, seed).unwrap()
    }

    fn motion() -> Motion {
        Motion::keplerian(RotationAxis::new(Vec3::new(0.2, -0.5, 1.0)).unwrap())
    }

    #[test]
    fn zero_parameters_give_ln2() {
        let mut f = nerf(16, 0);
        f.params_mut().fill(0.0);
        let v = f.eval_at_time(&motion(), 3.0, &Vec3::new(4.0, 1.0, -2.0)).unwrap();
        assert_eq!(v, std::f64::consts::LN_2);
        assert!(f.eval_at_time(&motion(), 0.0, &Vec3::new(1.0, 0.0, 0.0)).is_err());
        // Outside the support ball.
        assert_eq!(f.eval_at_time(&motion(), 0.0, &Vec3::new(9.0, 9.0, 0.0)).unwrap(), 0.0);
    }

    #[test]
    fn time_zero_is_canonical() {
        let f = nerf(16, 4);
        let m = motion();
        let x = Vec3::new(3.0, -4.0, 1.5);
        let at0 = f.eval_at_time(&m, 0.0, &x).unwrap();
        let mut canon = [0.0];
        f.eval_batch(&Motion::keplerian(RotationAxis::z()), 0.0, &[x], &mut canon);
        assert_eq!(at0, canon[0]);
    }

    #[test]
    fn parameter_and_axis_gradients() {
        let f = nerf(8, 7);
        let m = Motion::new(
            RotationAxis::new(Vec3::new(0.3, 0.4, 0.8)).unwrap(),
            VelocityProfile::Keplerian,
        );
        let xs = vec![Vec3::new(3.0, -2.0, 1.0), Vec3::new(-5.0, 1.0, 0.5), Vec3::new(6.5, 2.0, -0.3)];
        let up = vec![0.5, -1.3, 0.8];
        let t = 20.0;
        let loss = |f: &NeuralEmission, m: &Motion| {
            let mut out = vec![0.0; 3];
            f.eval_batch(m, t, &xs, &mut out);
            out.iter().zip(&up).map(|(a, b)| a * b).sum::<f64>()
        };
        let mut grad = vec![0.0; f.param_count()];
        let mut ga = Vec3::zeros();
        f.backward_batch(&m, t, &xs, &up, &mut grad, Some(&mut ga));
        let h = 1e-5;
        for i in (0..f.param_count()).step_by(13) {
            let mut fp = f.clone();
            let mut fm = f.clone();
            fp.params[i] += h;
            fm.params[i] -= h;
            let fd = (loss(&fp, &m) - loss(&fm, &m)) / (2.0 * h);
            assert!((fd - grad[i]).abs() <= 1e-4 * fd.abs().max(1e-3), "θ[{i}]: {fd} vs {}", grad[i]);
        }
        for c in 0..3 {
            let mut mp = m.clone();
            let mut mm = m.clone();
            mp.axis.raw[c] += h;
            mm.axis.raw[c] -= h;
            let fd = (loss(&f, &mp) - loss(&f, &mm)) / (2.0 * h);
            assert!((fd - ga[c]).abs() <= 1e-4 * fd.abs().max(1e-3), "axis {c}: {fd} vs {}", ga[c]);
        }
    }

    #[test]
    fn batch_gradient_is_sum_of_singles() {
        let f = nerf(8, 2);
        let m = motion();
        let xs = vec![Vec3::new(3.0, -2.0, 1.0), Vec3::new(-5.0, 1.0, 0.5)];
        let up = vec![1.0, 1.0];
        let mut g = vec![0.0; f.param_count()];
        f.backward_batch(&m, 4.0, &xs, &up, &mut g, None);
        let mut g1 = vec![0.0; f.param_count()];
        for x in &xs {
            f.backward_batch(&m, 4.0, std::slice::from_ref(x), &[1.0], &mut g1, None);
        }
        for (a, b) in g.iter().zip(&g1) {
            assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
        }
        let mut zero = vec![0.0; f.param_count()];
        f.backward_batch(&m, 4.0, &xs, &[0.0, 0.0], &mut zero, None);
        assert!(zero.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn temporal_field_ignores_the_flow() {
        let spec = ModelSpec::Mlp4d {
            width: 8,
            hidden_layers: 2,
            degree: 3,
            support: Support::for_grid(&GridSpec::default()),
            time_range: [0.0, 100.0],
        };
        let f = NeuralEmission::from_spec(&spec, None, 1).unwrap();
        let x = Vec3::new(4.0, 0.0, 1.0);
        let a = f.eval_at_time(&motion(), 30.0, &x).unwrap();
        let b = f.eval_at_time(&Motion::keplerian(RotationAxis::z()), 30.0, &x).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, f.eval_at_time(&motion(), 60.0, &x).unwrap());
        let mut ga = Vec3::zeros();
        let mut g = vec![0.0; f.param_count()];
        f.backward_batch(&motion(), 30.0, &[x], &[1.0], &mut g, Some(&mut ga));
        assert_eq!(ga, Vec3::zeros());
    }
}
