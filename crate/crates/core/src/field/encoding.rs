use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

/// Sinusoidal lifting `[sin(2^k s v), cos(2^k s v)]` per component for `k < degree`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionalEncoding {
    pub degree: usize,
    pub input_scale: f64,
}

impl PositionalEncoding {
    /// Maps `[-half_extent, half_extent]` onto `[-π, π]`.
    pub fn for_extent(degree: usize, half_extent: f64) -> Self {
        Self {
            degree,
            input_scale: std::f64::consts::PI / half_extent,
        }
    }

    pub fn output_dim(&self, input_dim: usize) -> usize {
        2 * input_dim * self.degree
    }

    /// Layout: component-major, then frequency, then `[sin, cos]`.
    pub fn encode_into(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.output_dim(v.len()));
        let mut j = 0;
        for &c in v {
            let mut arg = c * self.input_scale;
            for _ in 0..self.degree {
                let (s, co) = arg.sin_cos();
                out[j] = s;
                out[j + 1] = co;
                j += 2;
                arg *= 2.0;
            }
        }
    }

    pub fn encode(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.output_dim(v.len())];
        self.encode_into(v, &mut out);
        out
    }

    /// Encodes each row of `inputs`.
    pub fn encode_batch(&self, inputs: ArrayView2<f64>) -> Array2<f64> {
        let (n, d) = inputs.dim();
        let mut out = Array2::zeros((n, self.output_dim(d)));
        for (row, mut dst) in inputs.outer_iter().zip(out.outer_iter_mut()) {
            self.encode_into(row.as_slice().expect("contiguous row"), dst.as_slice_mut().expect("contiguous row"));
        }
        out
    }

    /// Pulls gradients with respect to the encoding back to the raw inputs, reusing
    /// the forward encoding (`d sin = cos`, `d cos = −sin`).
    pub fn backward_batch(&self, encoded: ArrayView2<f64>, grad_encoded: ArrayView2<f64>, input_dim: usize) -> Array2<f64> {
        let n = encoded.nrows();
        let mut out = Array2::zeros((n, input_dim));
        for i in 0..n {
            let e = encoded.row(i);
            let g = grad_encoded.row(i);
            for c in 0..input_dim {
                let mut freq = self.input_scale;
                let mut acc = 0.0;
                for k in 0..self.degree {
                    let j = 2 * (c * self.degree + k);
                    acc += freq * (g[j] * e[j + 1] - g[j + 1] * e[j]);
                    freq *= 2.0;
                }
                out[[i, c]] = acc;
            }
        }
        out
    }
}
