//! Emission representations against independent reference values and statistical properties.

use bhtomo::dynamics::{Motion, RotationAxis};
use bhtomo::field::{EmissionField, EmissionSource, Mlp, MlpShape, ModelSpec, NeuralEmission, PositionalEncoding, Support, VoxelEmission};
use bhtomo::units::GridSpec;
use bhtomo::Vec3;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn support() -> Support {
    Support::for_grid(&GridSpec::default())
}

#[test]
fn forward_pass_matches_reference_script() {
    // θ_i = 0.6 sin(0.37 i + 0.1); reference outputs from a NumPy forward pass.
    let spec = ModelSpec::BhNerf {
        width: 8,
        hidden_layers: 4,
        degree: 3,
        support: support(),
    };
    let mut field = NeuralEmission::from_spec(&spec, None, 0).unwrap();
    assert_eq!(field.param_count(), 377);
    for (i, p) in field.params_mut().iter_mut().enumerate() {
        *p = 0.6 * (0.37 * i as f64 + 0.1).sin();
    }
    let cases = [
        ([1.3, -2.1, 0.7], 0.01837059015937977),
        ([-6.0, 4.5, 2.2], 0.2348548376452061),
        ([0.0, 3.0, -8.0], 0.029812684099581297),
    ];
    let still = Motion::keplerian(RotationAxis::z());
    for (x, expected) in cases {
        let v = field.eval_at_time(&still, 0.0, &Vec3::from(x)).unwrap();
        assert!(((v - expected) / expected).abs() < 1e-12, "{x:?}: {v} vs {expected}");
    }
}

#[test]
fn all_representations_are_nonnegative() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let grid = GridSpec::new(8, 10.0).unwrap();
    let specs = [
        ModelSpec::BhNerf { width: 16, hidden_layers: 4, degree: 3, support: support() },
        ModelSpec::Mlp4d { width: 16, hidden_layers: 4, degree: 3, support: support(), time_range: [0.0, 500.0] },
        ModelSpec::VoxelGrid { grid, support: Support::for_grid(&grid) },
    ];
    let mut count = 0;
    for spec in &specs {
        for draw in 0..40 {
            let mut field = spec.build(draw).unwrap();
            let scale = rng.gen_range(0.1..20.0);
            for p in field.params_mut() {
                *p = rng.gen_range(-scale..scale);
            }
            let motion = Motion::keplerian(RotationAxis::random(draw));
            let xs: Vec<Vec3> = (0..1000)
                .map(|_| Vec3::new(rng.gen_range(-11.0..11.0), rng.gen_range(-11.0..11.0), rng.gen_range(-11.0..11.0)))
                .collect();
            let mut out = vec![0.0; xs.len()];
            field.eval_batch(&motion, rng.gen_range(0.0..500.0), &xs, &mut out);
            assert!(out.iter().all(|v| *v >= 0.0 && v.is_finite()));
            count += out.len();
        }
    }
    assert!(count >= 100_000);
}

#[test]
fn voxel_rasterization_is_exact() {
    let grid = GridSpec::new(12, 10.0).unwrap();
    let values: Vec<f64> = (0..grid.voxel_count()).map(|i| (i as f64 * 0.13).sin().abs()).collect();
    let field = VoxelEmission::from_values(grid, values.clone()).unwrap();
    let raster = field.rasterize(&grid);
    let support = Support::for_grid(&grid);
    for i in 0..grid.voxel_count() {
        let inside = support.contains(&Vec3::from(grid.voxel_center(i)));
        assert_eq!(raster[i], if inside { values[i] } else { 0.0 });
    }
}

/// Fraction of non-DC energy above `cutoff` cycles per period.
fn high_band_fraction(samples: &[f64], cutoff: usize) -> f64 {
    let n = samples.len();
    let (mut low, mut high) = (0.0, 0.0);
    for k in 1..n / 2 {
        let (mut re, mut im) = (0.0, 0.0);
        for (j, s) in samples.iter().enumerate() {
            let a = -2.0 * std::f64::consts::PI * (k * j) as f64 / n as f64;
            re += s * a.cos();
            im += s * a.sin();
        }
        let e = re * re + im * im;
        if k <= cutoff {
            low += e;
        } else {
            high += e;
        }
    }
    high / (low + high)
}

#[test]
fn encoding_limits_bandwidth() {
    // Networks with small weights and positive biases keep every ReLU active, so the
    // output along a grid axis is a combination of the encoded frequencies 1, 2, 4
    // cycles per domain (plus a small softplus curvature term).
    let degree = 3;
    let half_extent = 10.0;
    let enc = PositionalEncoding::for_extent(degree, half_extent);
    let mlp = Mlp::new(MlpShape { input_dim: enc.output_dim(3), width: 32, hidden_layers: 4 });
    let n = 256;
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = mlp.init(seed);
        for t in mlp.tensors() {
            for p in &mut params[t.offset..t.offset + t.len()] {
                *p = if t.name.ends_with("bias") { rng.gen_range(1.0..2.0) } else { *p * 0.05 };
            }
        }
        let (y0, z0) = (rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
        let mut coords = Array2::zeros((n, 3));
        for j in 0..n {
            coords[[j, 0]] = -half_extent + 2.0 * half_extent * j as f64 / n as f64;
            coords[[j, 1]] = y0;
            coords[[j, 2]] = z0;
        }
        let cache = mlp.forward(&params, enc.encode_batch(coords.view()));
        let values: Vec<f64> = cache.output.iter().map(|z| bhtomo::field::softplus(*z)).collect();
        worst = worst.max(high_band_fraction(&values, 1 << (degree - 1)));
    }
    assert!(worst < 0.01, "high-band energy fraction {worst}");
}
