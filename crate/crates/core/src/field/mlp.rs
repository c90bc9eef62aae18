use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TensorInfo;

/// Fully connected ReLU network with a scalar linear head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    pub input_dim: usize,
    pub width: usize,
    pub hidden_layers: usize,
}

#[derive(Clone, Copy, Debug)]
struct Layer {
    weight: usize,
    bias: usize,
    fan_in: usize,
    fan_out: usize,
}

#[derive(Clone, Debug)]
pub struct Mlp {
    pub shape: MlpShape,
    layers: Vec<Layer>,
    param_count: usize,
}

/// Activations retained for the backward pass.
pub struct MlpCache {
    input: Array2<f64>,
    hidden: Vec<Array2<f64>>,
    pub output: Array1<f64>,
}

impl Mlp {
    pub fn new(shape: MlpShape) -> Self {
        assert!(shape.hidden_layers >= 1 && shape.width >= 1 && shape.input_dim >= 1);
        let mut layers = Vec::with_capacity(shape.hidden_layers + 1);
        let mut offset = 0;
        let mut fan_in = shape.input_dim;
        for l in 0..=shape.hidden_layers {
            let fan_out = if l == shape.hidden_layers { 1 } else { shape.width };
            layers.push(Layer {
                weight: offset,
                bias: offset + fan_in * fan_out,
                fan_in,
                fan_out,
            });
            offset += fan_in * fan_out + fan_out;
            fan_in = fan_out;
        }
        Self {
            shape,
            layers,
            param_count: offset,
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    pub fn tensors(&self) -> Vec<TensorInfo> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push(TensorInfo {
                name: format!("layer{i}.weight"),
                shape: vec![l.fan_out, l.fan_in],
                offset: l.weight,
            });
            out.push(TensorInfo {
                name: format!("layer{i}.bias"),
                shape: vec![l.fan_out],
                offset: l.bias,
            });
        }
        out
    }

    /// He-uniform weights (bound √(6 / fan_in)), zero biases.
    pub fn init(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; self.param_count];
        for l in &self.layers {
            let bound = (6.0 / l.fan_in as f64).sqrt();
            for w in &mut params[l.weight..l.bias] {
                *w = rng.gen_range(-bound..bound);
            }
        }
        params
    }

    fn weight<'a>(&self, params: &'a [f64], l: &Layer) -> ArrayView2<'a, f64> {
        ArrayView2::from_shape((l.fan_out, l.fan_in), &params[l.weight..l.bias]).expect("layer shape")
    }

    fn bias<'a>(&self, params: &'a [f64], l: &Layer) -> ArrayView1<'a, f64> {
        ArrayView1::from(&params[l.bias..l.bias + l.fan_out])
    }

    /// Pre-activation output of the head for each row of `input`.
    pub fn forward(&self, params: &[f64], input: Array2<f64>) -> MlpCache {
        assert_eq!(input.ncols(), self.shape.input_dim);
        let n = input.nrows();
        let mut hidden: Vec<Array2<f64>> = Vec::with_capacity(self.shape.hidden_layers);
        for (i, l) in self.layers.iter().enumerate() {
            let prev = if i == 0 { input.view() } else { hidden[i - 1].view() };
            let mut h = Array2::zeros((n, l.fan_out));
            h += &self.bias(params, l);
            general_mat_mul(1.0, &prev, &self.weight(params, l).t(), 1.0, &mut h);
            if i < self.shape.hidden_layers {
                h.mapv_inplace(|v| v.max(0.0));
            }
            hidden.push(h);
        }
        let output = hidden.pop().expect("head").remove_axis(Axis(1));
        MlpCache { input, hidden, output }
    }

    /// Accumulates `∂(Σ upstream_i z_i)/∂θ` into `grad`; returns the input gradient if asked.
    pub fn backward(&self, params: &[f64], cache: &MlpCache, upstream: &[f64], grad: &mut [f64], want_input: bool) -> Option<Array2<f64>> {
        let n = cache.input.nrows();
        assert_eq!(upstream.len(), n);
        let mut delta = Array2::from_shape_vec((n, 1), upstream.to_vec()).expect("column");
        for (i, l) in self.layers.iter().enumerate().rev() {
            let prev = if i == 0 { cache.input.view() } else { cache.hidden[i - 1].view() };
            {
                let (gw, gb) = grad[l.weight..l.bias + l.fan_out].split_at_mut(l.fan_in * l.fan_out);
                let mut gw = ArrayViewMut2::from_shape((l.fan_out, l.fan_in), gw).expect("layer shape");
                general_mat_mul(1.0, &delta.t(), &prev, 1.0, &mut gw);
                let mut gb = ArrayViewMut1::from(gb);
                gb += &delta.sum_axis(Axis(0));
            }
            if i == 0 && !want_input {
                return None;
            }
            let mut back = Array2::zeros((n, l.fan_in));
            general_mat_mul(1.0, &delta, &self.weight(params, l), 0.0, &mut back);
            if i > 0 {
                ndarray::Zip::from(&mut back).and(&prev).for_each(|d, &h| {
                    if h <= 0.0 {
                        *d = 0.0;
                    }
                });
            }
            delta = back;
        }
        Some(delta)
    }
}
