//! Measurement model against direct-sum references and Monte-Carlo noise statistics.

use bhtomo::instrument::{
    add_thermal_noise, dtft, project_baselines, ArrayCatalog, Baseline, FrameModel, Measurements, ObservationSet, Provenance, SourcePosition, UvFrame,
    DEFAULT_WAVELENGTH_M,
};
use chrono::{TimeZone, Utc};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Textbook double loop over pixels with explicit angular offsets.
fn dtft_oracle(image: &[f64], n: usize, u: f64, v: f64, scale: f64) -> (f64, f64) {
    let (mut re, mut im) = (0.0, 0.0);
    for row in 0..n {
        for col in 0..n {
            let alpha = (col as f64 - (n as f64 - 1.0) / 2.0) * scale;
            let beta = ((n as f64 - 1.0) / 2.0 - row as f64) * scale;
            let phase = -2.0 * std::f64::consts::PI * (u * alpha + v * beta);
            re += image[row * n + col] * phase.cos();
            im += image[row * n + col] * phase.sin();
        }
    }
    (re, im)
}

#[test]
fn dtft_matches_direct_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let n = 8;
    let scale = 4.83e-6 / 206_264.806;
    let image: Vec<f64> = (0..n * n).map(|_| rng.gen_range(0.0..1.0)).collect();
    let uv: Vec<(f64, f64)> = (0..50).map(|_| (rng.gen_range(-9e9..9e9), rng.gen_range(-9e9..9e9))).collect();
    let total: f64 = image.iter().sum();
    for (z, &(u, v)) in dtft(&image, n, &uv, scale).iter().zip(&uv) {
        let (re, im) = dtft_oracle(&image, n, u, v, scale);
        let mag = re.hypot(im).max(1e-3 * total);
        assert!((z.re - re).abs() <= 1e-10 * mag && (z.im - im).abs() <= 1e-10 * mag);
        assert!(z.norm() <= total * (1.0 + 1e-12));
    }
}

fn eht_frames(count: usize) -> (ArrayCatalog, Vec<UvFrame>) {
    let cat = ArrayCatalog::builtin("eht2017").unwrap();
    let t0 = Utc.with_ymd_and_hms(2017, 4, 7, 12, 0, 0).unwrap();
    let times: Vec<_> = (0..count).map(|k| t0 + chrono::Duration::seconds(75 * k as i64)).collect();
    let uv = project_baselines(&cat, &SourcePosition::sgra(), &times, DEFAULT_WAVELENGTH_M).unwrap();
    (cat, uv)
}

#[test]
fn noise_standard_deviation() {
    let (_, uv) = eht_frames(1);
    let draws = 10_000;
    let k = uv[0].baselines.len();
    let (mut sum_sq_re, mut sum_sq_im) = (vec![0.0; k], vec![0.0; k]);
    for seed in 0..draws {
        let mut vis = vec![vec![Complex64::new(0.0, 0.0); k]];
        add_thermal_noise(&uv, &mut vis, seed);
        for (j, z) in vis[0].iter().enumerate() {
            sum_sq_re[j] += z.re * z.re;
            sum_sq_im[j] += z.im * z.im;
        }
    }
    for (j, b) in uv[0].baselines.iter().enumerate() {
        let sd_re = (sum_sq_re[j] / draws as f64).sqrt();
        let sd_im = (sum_sq_im[j] / draws as f64).sqrt();
        assert!((sd_re / b.sigma - 1.0).abs() < 0.03, "baseline {j}: {sd_re} vs {}", b.sigma);
        assert!((sd_im / b.sigma - 1.0).abs() < 0.03);
    }
}

fn noisy_set(uv: &[UvFrame], clean: &[Vec<Complex64>], seed: u64) -> ObservationSet {
    let mut vis = clean.to_vec();
    add_thermal_noise(uv, &mut vis, seed);
    ObservationSet {
        times: (0..uv.len()).map(|k| k as f64).collect(),
        image_pixels: 4,
        pixel_scale: 1e-11,
        flux_scale: 1.0,
        provenance: Provenance::Noisy { seed },
        measurements: Measurements::Visibility { stations: vec![], uv: uv.to_vec(), vis },
    }
}

#[test]
fn chi2_whitening_and_direct_sum() {
    let (_, uv) = eht_frames(8);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let clean: Vec<Vec<Complex64>> = uv
        .iter()
        .map(|f| f.baselines.iter().map(|_| Complex64::new(rng.gen_range(0.0..2.0), rng.gen_range(-0.5..0.5))).collect())
        .collect();
    let model: Vec<FrameModel> = clean.iter().map(|v| FrameModel::Visibility(v.clone())).collect();
    let k_total: usize = clean.iter().map(Vec::len).sum();
    let mut ratio_sum = 0.0;
    let seeds = 40;
    for seed in 0..seeds {
        let obs = noisy_set(&uv, &clean, seed);
        let chi2 = obs.chi2(&model).unwrap();
        // Direct summation.
        let Measurements::Visibility { vis, .. } = &obs.measurements else { unreachable!() };
        let mut direct = 0.0;
        for t in 0..uv.len() {
            for (j, b) in uv[t].baselines.iter().enumerate() {
                let dr = vis[t][j].re - clean[t][j].re;
                let di = vis[t][j].im - clean[t][j].im;
                direct += (dr * dr + di * di) / (b.sigma * b.sigma);
            }
        }
        assert!((chi2 - direct).abs() <= 1e-12 * direct);
        ratio_sum += chi2 / (2.0 * k_total as f64);
    }
    let mean = ratio_sum / seeds as f64;
    assert!((mean - 1.0).abs() < 0.05, "mean χ²/2K = {mean}");
}

#[test]
fn chi2_is_permutation_invariant() {
    let (_, uv) = eht_frames(2);
    let clean: Vec<Vec<Complex64>> = uv.iter().map(|f| f.baselines.iter().map(|b| Complex64::new(b.sigma * 3.0, 0.1)).collect()).collect();
    let obs = noisy_set(&uv, &clean, 9);
    let model: Vec<FrameModel> = clean.iter().map(|v| FrameModel::Visibility(v.clone())).collect();
    let base = obs.chi2(&model).unwrap();

    let mut perm_uv = uv.clone();
    let Measurements::Visibility { vis, .. } = &obs.measurements else { unreachable!() };
    let mut perm_vis = vis.clone();
    let mut perm_model = clean.clone();
    for t in 0..uv.len() {
        let order: Vec<usize> = (0..uv[t].baselines.len()).rev().collect();
        perm_uv[t].baselines = order.iter().map(|&j| uv[t].baselines[j]).collect::<Vec<Baseline>>();
        perm_vis[t] = order.iter().map(|&j| vis[t][j]).collect();
        perm_model[t] = order.iter().map(|&j| clean[t][j]).collect();
    }
    let permuted = ObservationSet {
        measurements: Measurements::Visibility { stations: vec![], uv: perm_uv, vis: perm_vis },
        ..obs.clone()
    };
    let pm: Vec<FrameModel> = perm_model.into_iter().map(FrameModel::Visibility).collect();
    assert!((permuted.chi2(&pm).unwrap() - base).abs() <= 1e-12 * base);
}
