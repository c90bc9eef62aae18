//! Keplerian orbital flow: angular velocity profile and the axis-angle
//! coordinate warp that maps observation-time points back to canonical time.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::HORIZON_RADIUS;
use crate::Vec3;

/// Raw axis norms below this are treated as degenerate.
pub const AXIS_NORM_EPS: f64 = 1e-12;
/// Radial nodes used to tabulate velocity perturbations.
pub const PERTURBATION_NODES: usize = 512;

/// Unconstrained rotation-axis parameter; the unit axis is `raw / |raw|`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RotationAxis {
    pub raw: Vec3,
}

impl RotationAxis {
    pub fn new(raw: Vec3) -> Result<Self> {
        if !(raw.norm() > AXIS_NORM_EPS) || !raw.iter().all(|v| v.is_finite()) {
            return Err(Error::Config(format!("rotation axis {raw:?} is degenerate")));
        }
        Ok(Self { raw })
    }

    pub fn z() -> Self {
        Self { raw: Vec3::z() }
    }

    pub fn unit(&self) -> Vec3 {
        self.raw / self.raw.norm().max(AXIS_NORM_EPS)
    }

    /// Uniformly distributed on the unit sphere.
    pub fn random(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let v = Vec3::new(
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            );
            if v.norm() > 1e-6 {
                return Self { raw: v.normalize() };
            }
        }
    }

    pub fn negated(&self) -> Self {
        Self { raw: -self.raw }
    }
}

/// Multiplicative perturbation `g(r)` tabulated on a uniform radial grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub magnitude: f64,
    pub correlation_length: f64,
    pub seed: u64,
    pub r_min: f64,
    pub r_max: f64,
    pub values: Vec<f64>,
}

impl Perturbation {
    fn spacing(&self) -> f64 {
        (self.r_max - self.r_min) / (self.values.len() - 1) as f64
    }

    pub fn radii(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.values.len()).map(move |i| self.r_min + i as f64 * self.spacing())
    }

    /// Linearly interpolated `g(r)` and its derivative; constant beyond the table.
    pub fn eval(&self, r: f64) -> (f64, f64) {
        let n = self.values.len();
        if r <= self.r_min {
            return (self.values[0], 0.0);
        }
        if r >= self.r_max {
            return (self.values[n - 1], 0.0);
        }
        let h = self.spacing();
        let pos = (r - self.r_min) / h;
        let i = (pos.floor() as usize).min(n - 2);
        let frac = pos - i as f64;
        let (a, b) = (self.values[i], self.values[i + 1]);
        (a + frac * (b - a), (b - a) / h)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
pub enum VelocityProfile {
    #[default]
    Keplerian,
    Perturbed(Perturbation),
}

impl VelocityProfile {
    /// Angular velocity in radians per geometric time unit.
    pub fn omega(&self, r: f64) -> Result<f64> {
        if !(r > HORIZON_RADIUS) {
            return Err(Error::RadiusInsideHorizon(r));
        }
        Ok(self.omega_and_slope(r).0)
    }

    /// `ω(r)` and `dω/dr`, without the horizon check.
    pub fn omega_and_slope(&self, r: f64) -> (f64, f64) {
        let kepler = r.powf(-1.5);
        let kepler_slope = -1.5 * kepler / r;
        match self {
            VelocityProfile::Keplerian => (kepler, kepler_slope),
            VelocityProfile::Perturbed(p) => {
                let (g, dg) = p.eval(r);
                let factor = 1.0 + p.magnitude * g;
                (kepler * factor, kepler_slope * factor + kepler * p.magnitude * dg)
            }
        }
    }

    /// Orbital period `2π / ω(r)` in geometric time.
    pub fn period(&self, r: f64) -> Result<f64> {
        Ok(2.0 * std::f64::consts::PI / self.omega(r)?)
    }

    pub fn write_csv(&self, path: &Path, r_min: f64, r_max: f64) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["r", "g"])?;
        match self {
            VelocityProfile::Perturbed(p) => {
                for (r, g) in p.radii().zip(&p.values) {
                    w.write_record([r.to_string(), g.to_string()])?;
                }
            }
            VelocityProfile::Keplerian => {
                for i in 0..PERTURBATION_NODES {
                    let r = r_min + (r_max - r_min) * i as f64 / (PERTURBATION_NODES - 1) as f64;
                    w.write_record([r.to_string(), "0".to_string()])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Rotation and flow model shared by every time-dependent field evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Motion {
    pub axis: RotationAxis,
    pub profile: VelocityProfile,
}

impl Motion {
    pub fn new(axis: RotationAxis, profile: VelocityProfile) -> Self {
        Self { axis, profile }
    }

    pub fn keplerian(axis: RotationAxis) -> Self {
        Self::new(axis, VelocityProfile::Keplerian)
    }
}

/// Rodrigues rotation of `x` by angle `phi` about unit axis `k` (right-handed).
#[inline]
pub fn rotate(k: &Vec3, x: &Vec3, phi: f64) -> Vec3 {
    let (s, c) = phi.sin_cos();
    x * c + k.cross(x) * s + k * (k.dot(x) * (1.0 - c))
}

/// Maps an observation-time point to canonical (t = 0) coordinates:
/// `R(ξ, t ω(|x|)) x`.
pub fn warp_point(axis: &RotationAxis, profile: &VelocityProfile, t: f64, x: &Vec3) -> Result<Vec3> {
    let r = x.norm();
    let omega = profile.omega(r)?;
    Ok(rotate(&axis.unit(), x, t * omega))
}

/// Intermediate values of one warp, kept for the adjoint pass.
#[derive(Clone, Copy, Debug)]
pub struct WarpRecord {
    pub x: Vec3,
    pub phi: f64,
    pub dphi_dr: f64,
    pub warped: Vec3,
}

#[inline]
pub fn warp_forward(k: &Vec3, profile: &VelocityProfile, t: f64, x: &Vec3) -> WarpRecord {
    let r = x.norm();
    let (omega, slope) = profile.omega_and_slope(r);
    let phi = t * omega;
    WarpRecord {
        x: *x,
        phi,
        dphi_dr: t * slope,
        warped: rotate(k, x, phi),
    }
}

/// Gradient of `g · warp(x)` with respect to the unit axis `k` and to `x`.
#[inline]
pub fn warp_adjoint(k: &Vec3, rec: &WarpRecord, g: &Vec3) -> (Vec3, Vec3) {
    let x = &rec.x;
    let (s, c) = rec.phi.sin_cos();
    let kx = k.dot(x);
    let gk = g.dot(k);
    let grad_k = x.cross(g) * s + (g * kx + x * gk) * (1.0 - c);

    // Direct term Rᵀ g, then the dependence of φ on |x|.
    let rt_g = g * c + g.cross(k) * s + k * (gk * (1.0 - c));
    let dy_dphi = -x * s + k.cross(x) * c + k * (kx * s);
    let r = x.norm();
    let grad_x = if r > 0.0 {
        rt_g + x * (g.dot(&dy_dphi) * rec.dphi_dr / r)
    } else {
        rt_g
    };
    (grad_k, grad_x)
}

/// Chain rule from the unit axis to the raw (unnormalized) parameter.
#[inline]
pub fn unit_to_raw_gradient(raw: &Vec3, grad_unit: &Vec3) -> Vec3 {
    let n = raw.norm().max(AXIS_NORM_EPS);
    let k = raw / n;
    (grad_unit - k * k.dot(grad_unit)) / n
}

/// Vector-Jacobian product of `warp_point` with respect to the raw axis and `x`.
pub fn warp_vjp(axis: &RotationAxis, profile: &VelocityProfile, t: f64, x: &Vec3, g: &Vec3) -> Result<(Vec3, Vec3)> {
    let r = x.norm();
    if !(r > HORIZON_RADIUS) {
        return Err(Error::RadiusInsideHorizon(r));
    }
    let k = axis.unit();
    let rec = warp_forward(&k, profile, t, x);
    let (grad_k, grad_x) = warp_adjoint(&k, &rec, g);
    Ok((unit_to_raw_gradient(&axis.raw, &grad_k), grad_x))
}

/// Draws correlated Gaussian velocity perturbations for a fixed correlation length.
///
/// The squared-exponential covariance is factored once; each seed then costs one
/// triangular matrix-vector product.
pub struct PerturbationSampler {
    correlation_length: f64,
    r_min: f64,
    r_max: f64,
    factor: DMatrix<f64>,
}

impl PerturbationSampler {
    pub fn new(correlation_length: f64, r_min: f64, r_max: f64) -> Result<Self> {
        if !(correlation_length > 0.0) {
            return Err(Error::Config(format!("correlation length must be positive, got {correlation_length}")));
        }
        let n = PERTURBATION_NODES;
        let h = (r_max - r_min) / (n - 1) as f64;
        let kernel = DMatrix::from_fn(n, n, |i, j| {
            let d = (i as f64 - j as f64) * h;
            (-d * d / (2.0 * correlation_length * correlation_length)).exp()
        });
        let mut jitter = 1e-10;
        let factor = loop {
            let mut k = kernel.clone();
            for i in 0..n {
                k[(i, i)] += jitter;
            }
            if let Some(chol) = k.cholesky() {
                break chol.l();
            }
            jitter *= 10.0;
            if jitter > 1e-2 {
                return Err(Error::Config("covariance factorization failed".into()));
            }
        };
        Ok(Self {
            correlation_length,
            r_min,
            r_max,
            factor,
        })
    }

    pub fn sample_values(&self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = DVector::from_fn(PERTURBATION_NODES, |_, _| StandardNormal.sample(&mut rng));
        (&self.factor * z).iter().copied().collect()
    }

    pub fn sample(&self, magnitude: f64, seed: u64) -> VelocityProfile {
        VelocityProfile::Perturbed(Perturbation {
            magnitude,
            correlation_length: self.correlation_length,
            seed,
            r_min: self.r_min,
            r_max: self.r_max,
            values: self.sample_values(seed),
        })
    }
}

/// Perturbed Keplerian profile `ω(r) (1 + m g(r))` with `g` drawn on `[2, half_extent + 2]`.
pub fn sample_perturbation(magnitude: f64, correlation_length: f64, seed: u64, grid_half_extent: f64) -> Result<VelocityProfile> {
    if !(magnitude >= 0.0) {
        return Err(Error::Config(format!("perturbation magnitude must be nonnegative, got {magnitude}")));
    }
    let sampler = PerturbationSampler::new(correlation_length, HORIZON_RADIUS, grid_half_extent + 2.0)?;
    Ok(sampler.sample(magnitude, seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    #[test]
    fn omega_values() {
        let p = VelocityProfile::Keplerian;
        assert!(matches!(p.omega(1.0), Err(Error::RadiusInsideHorizon(_))));
        assert_relative_eq!(p.omega(4.0).unwrap(), 0.125);
        assert_relative_eq!(p.omega(16.0).unwrap(), p.omega(4.0).unwrap() / 8.0, max_relative = 1e-15);
        let (_, slope) = p.omega_and_slope(1.0);
        assert_relative_eq!(slope, -1.5);
    }

    #[test]
    fn omega_is_strictly_decreasing() {
        let p = VelocityProfile::Keplerian;
        let mut prev = f64::INFINITY;
        for i in 0..200 {
            let r = 2.01 + i as f64 * 0.1;
            let w = p.omega(r).unwrap();
            assert!(w < prev);
            assert_relative_eq!(w * r.powf(1.5), 1.0, max_relative = 1e-14);
            prev = w;
        }
    }

    #[test]
    fn warp_quarter_turn() {
        // At r = 1 (below the horizon, so use the raw rotation), ω = 1 and t = π/2 gives φ = π/2.
        let k = Vec3::z();
        let rec = warp_forward(&k, &VelocityProfile::Keplerian, PI / 2.0, &Vec3::x());
        assert!((rec.warped - Vec3::y()).norm() < 1e-15);
        // Same rotation at r = 4 after scaling time by ω(4)⁻¹.
        let x = Vec3::new(4.0, 0.0, 0.0);
        let y = warp_point(&RotationAxis::z(), &VelocityProfile::Keplerian, PI / 2.0 * 8.0, &x).unwrap();
        assert!((y - Vec3::new(0.0, 4.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn warp_identity_cases() {
        let axis = RotationAxis::new(Vec3::new(0.3, -0.2, 0.9)).unwrap();
        let x = Vec3::new(3.0, 4.0, 5.0);
        assert_eq!(warp_point(&axis, &VelocityProfile::Keplerian, 0.0, &x).unwrap(), x);
        let on_axis = axis.unit() * 7.0;
        let y = warp_point(&axis, &VelocityProfile::Keplerian, 123.0, &on_axis).unwrap();
        assert!((y - on_axis).norm() < 1e-12);
        assert!(warp_point(&axis, &VelocityProfile::Keplerian, 1.0, &Vec3::new(1.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn zero_magnitude_perturbation_is_keplerian() {
        let p = sample_perturbation(0.0, 2.0, 7, 10.0).unwrap();
        for r in [2.5, 4.0, 6.96, 11.0, 30.0] {
            assert_eq!(p.omega(r).unwrap(), VelocityProfile::Keplerian.omega(r).unwrap());
        }
    }

    #[test]
    fn perturbation_is_reproducible() {
        let a = sample_perturbation(0.3, 1.0, 11, 10.0).unwrap();
        let b = sample_perturbation(0.3, 1.0, 11, 10.0).unwrap();
        let c = sample_perturbation(0.3, 1.0, 12, 10.0).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn perturbation_autocorrelation_at_one_length() {
        let ell = 1.0;
        let sampler = PerturbationSampler::new(ell, 2.0, 12.0).unwrap();
        let h = 10.0 / (PERTURBATION_NODES - 1) as f64;
        let lag = (ell / h).round() as usize;
        let lag_dist = lag as f64 * h;
        let (mut cross, mut var) = (0.0, 0.0);
        let seeds = 1000;
        for seed in 0..seeds {
            let g = sampler.sample_values(seed);
            for i in (0..PERTURBATION_NODES - lag).step_by(16) {
                cross += g[i] * g[i + lag];
                var += 0.5 * (g[i] * g[i] + g[i + lag] * g[i + lag]);
            }
        }
        let corr = cross / var;
        let expected = (-lag_dist * lag_dist / (2.0 * ell * ell)).exp();
        assert!((corr - expected).abs() < 0.1 * expected, "{corr} vs {expected}");
    }

    #[test]
    fn perturbation_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let p = sample_perturbation(0.1, 4.0, 3, 10.0).unwrap();
        p.write_csv(&path, 2.0, 12.0).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("r,g\n"));
        assert_eq!(text.lines().count(), PERTURBATION_NODES + 1);
    }

    fn finite_difference_check(axis: RotationAxis, profile: &VelocityProfile, t: f64, x: Vec3, g: Vec3) {
        let (ga, gx) = warp_vjp(&axis, profile, t, &x, &g).unwrap();
        let h = 1e-6;
        let f = |a: &RotationAxis, p: &Vec3| g.dot(&warp_point(a, profile, t, p).unwrap());
        for i in 0..3 {
            let mut plus = axis;
            let mut minus = axis;
            plus.raw[i] += h;
            minus.raw[i] -= h;
            let fd = (f(&plus, &x) - f(&minus, &x)) / (2.0 * h);
            assert!((fd - ga[i]).abs() <= 1e-5 * fd.abs().max(1e-3), "axis {i}: {fd} vs {}", ga[i]);
            let mut xp = x;
            let mut xm = x;
            xp[i] += h;
            xm[i] -= h;
            let fd = (f(&axis, &xp) - f(&axis, &xm)) / (2.0 * h);
            assert!((fd - gx[i]).abs() <= 1e-5 * fd.abs().max(1e-3), "x {i}: {fd} vs {}", gx[i]);
        }
    }

    #[test]
    fn warp_gradients_match_finite_differences() {
        let axis = RotationAxis::new(Vec3::new(0.4, -1.3, 2.1)).unwrap();
        finite_difference_check(axis, &VelocityProfile::Keplerian, 35.0, Vec3::new(3.0, -4.5, 2.0), Vec3::new(0.3, 1.1, -0.7));
        let perturbed = sample_perturbation(0.2, 2.0, 5, 10.0).unwrap();
        finite_difference_check(axis, &perturbed, 80.0, Vec3::new(-5.1, 2.2, 1.3), Vec3::new(-1.0, 0.2, 0.5));
    }

    proptest! {
        #[test]
        fn warp_preserves_norm(ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in 0.1f64..1.0,
                               x in -9.0f64..9.0, y in -9.0f64..9.0, z in -9.0f64..9.0, t in -500.0f64..500.0) {
            let p = Vec3::new(x, y, z);
            prop_assume!(p.norm() > 2.1);
            let axis = RotationAxis::new(Vec3::new(ax, ay, az)).unwrap();
            let w = warp_point(&axis, &VelocityProfile::Keplerian, t, &p).unwrap();
            prop_assert!((w.norm() - p.norm()).abs() <= 1e-12 * p.norm());
        }

        #[test]
        fn warp_composes(ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in 0.1f64..1.0,
                         x in -9.0f64..9.0, y in -9.0f64..9.0, z in -9.0f64..9.0,
                         t1 in -200.0f64..200.0, t2 in -200.0f64..200.0) {
            let p = Vec3::new(x, y, z);
            prop_assume!(p.norm() > 2.1);
            let axis = RotationAxis::new(Vec3::new(ax, ay, az)).unwrap();
            let prof = VelocityProfile::Keplerian;
            let once = warp_point(&axis, &prof, t1 + t2, &p).unwrap();
            let twice = warp_point(&axis, &prof, t1, &warp_point(&axis, &prof, t2, &p).unwrap()).unwrap();
            prop_assert!((once - twice).norm() < 1e-10);
        }

        #[test]
        fn antipodal_axis_reverses_time(ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in 0.1f64..1.0,
                                        x in -9.0f64..9.0, y in -9.0f64..9.0, z in -9.0f64..9.0, t in -300.0f64..300.0) {
            let p = Vec3::new(x, y, z);
            prop_assume!(p.norm() > 2.1);
            let axis = RotationAxis::new(Vec3::new(ax, ay, az)).unwrap();
            let prof = VelocityProfile::Keplerian;
            let a = warp_point(&axis.negated(), &prof, t, &p).unwrap();
            let b = warp_point(&axis, &prof, -t, &p).unwrap();
            prop_assert!((a - b).norm() < 1e-12 * p.norm());
        }
    }
}
