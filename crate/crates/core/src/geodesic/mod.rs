//! Null geodesics of the Schwarzschild geometry, traced backward from an
//! orthographic image plane.
//!
//! Rays are integrated as a Hamiltonian system in isotropic Cartesian
//! coordinates `(t, X, p_t, P)`, where the spatial metric is conformally flat,
//! `g_ij = ψ⁴ δ_ij` with `ψ = 1 + 1/(2ρ)`, and the lapse is
//! `α = (1 − 1/(2ρ)) / (1 + 1/(2ρ))`. Sample positions handed to the renderer
//! are expressed in Schwarzschild-Cartesian coordinates `x = r X / ρ`, so that
//! `|x|` is the areal radius `r = ρψ²` used by the orbital dynamics.
//!
//! Along each ray the Euclidean arc length of `x` is carried as an extra state
//! variable; the retained portion inside the region of interest is resampled
//! into equal arc-length cells whose midpoints become the quadrature samples.

mod bundle;
pub mod rk45;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::units::HORIZON_RADIUS;
use crate::Vec3;
use rk45::StepControl;

pub use bundle::{build_bundle, build_bundle_cached, cache_path, euclidean_bundle, BundleKind, CacheStatus, RayBundle, BUNDLE_FORMAT_VERSION};

/// Orthographic camera. Image-plane coordinates of a pixel are its impact
/// parameters (observer at infinity); rays are launched from `start_radius`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraSpec {
    pub view_direction: [f64; 3],
    pub up_direction: [f64; 3],
    pub image_pixels: usize,
    pub field_half_width: f64,
    #[serde(default = "default_start_radius")]
    pub start_radius: f64,
}

fn default_start_radius() -> f64 {
    100.0
}

impl CameraSpec {
    /// Builds a camera, normalizing the view direction and orthogonalizing `up` against it.
    pub fn new(view: [f64; 3], up: [f64; 3], image_pixels: usize, field_half_width: f64) -> Result<Self> {
        let v = Vec3::from(view);
        let norm = v.norm();
        if !(norm > 1e-12) {
            return Err(Error::InvalidCamera("view direction has zero length".into()));
        }
        let v = v / norm;
        let u = Vec3::from(up);
        let u = u - v * v.dot(&u);
        if !(u.norm() > 1e-9) {
            return Err(Error::InvalidCamera("up direction is parallel to view direction".into()));
        }
        let u = u.normalize();
        let camera = Self {
            view_direction: v.into(),
            up_direction: u.into(),
            image_pixels,
            field_half_width,
            start_radius: default_start_radius(),
        };
        camera.validate()?;
        Ok(camera)
    }

    /// Camera on the `-z` side looking along `+z`, `up = +y`.
    pub fn looking_along_z(image_pixels: usize, field_half_width: f64) -> Self {
        Self::new([0.0, 0.0, 1.0], [0.0, 1.0, 0.0], image_pixels, field_half_width).expect("valid camera")
    }

    pub fn with_start_radius(mut self, start_radius: f64) -> Result<Self> {
        self.start_radius = start_radius;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let v = Vec3::from(self.view_direction);
        let u = Vec3::from(self.up_direction);
        if (v.norm() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidCamera(format!("|view_direction| = {} != 1", v.norm())));
        }
        if (u.norm() - 1.0).abs() > 1e-9 || v.dot(&u).abs() > 1e-9 {
            return Err(Error::InvalidCamera("up_direction must be a unit vector orthogonal to view".into()));
        }
        if self.image_pixels == 0 {
            return Err(Error::InvalidCamera("image must have at least one pixel".into()));
        }
        if !(self.field_half_width > 0.0) {
            return Err(Error::InvalidCamera("field_half_width must be positive".into()));
        }
        if !(self.start_radius > self.field_half_width * std::f64::consts::SQRT_2) {
            return Err(Error::InvalidCamera(format!(
                "start_radius {} must exceed field_half_width * sqrt(2)",
                self.start_radius
            )));
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.image_pixels * self.image_pixels
    }

    pub fn pixel_size(&self) -> f64 {
        2.0 * self.field_half_width / self.image_pixels as f64
    }

    pub fn view(&self) -> Vec3 {
        Vec3::from(self.view_direction)
    }

    pub fn up(&self) -> Vec3 {
        Vec3::from(self.up_direction)
    }

    pub fn right(&self) -> Vec3 {
        self.view().cross(&self.up())
    }

    /// Image-plane coordinates `(x, y)` of a pixel center; row 0 is the top row.
    pub fn pixel_coords(&self, pixel_index: usize) -> (f64, f64) {
        let n = self.image_pixels;
        let (row, col) = (pixel_index / n, pixel_index % n);
        let d = self.pixel_size();
        let x = -self.field_half_width + (col as f64 + 0.5) * d;
        let y = self.field_half_width - (row as f64 + 0.5) * d;
        (x, y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub atol: f64,
    pub rtol: f64,
    /// Rays are captured once `r <= 2 (1 + horizon_guard)`.
    pub horizon_guard: f64,
    /// Only the portion of each ray with `r <= roi_radius` is retained.
    pub roi_radius: f64,
    pub max_samples_per_ray: usize,
    /// Target spacing between consecutive retained samples.
    pub sample_spacing: f64,
    /// Largest integration step (in arc length) inside the region of interest.
    pub max_step: f64,
    pub max_steps: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            atol: 1e-9,
            rtol: 1e-9,
            horizon_guard: 1e-3,
            roi_radius: 12.0,
            max_samples_per_ray: 128,
            sample_spacing: 0.2,
            max_step: 0.25,
            max_steps: 2_000_000,
        }
    }
}

impl Tolerances {
    pub fn capture_radius(&self) -> f64 {
        HORIZON_RADIUS * (1.0 + self.horizon_guard)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Captured,
    Escaped,
}

impl Termination {
    pub(crate) fn as_byte(self) -> u8 {
        match self {
            Termination::Captured => 0,
            Termination::Escaped => 1,
        }
    }

    pub(crate) fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Termination::Captured),
            1 => Some(Termination::Escaped),
            _ => None,
        }
    }
}

/// One traced ray: resampled quadrature points plus integration diagnostics.
#[derive(Clone, Debug)]
pub struct RayPath {
    pub samples: Vec<Vec3>,
    pub weights: Vec<f64>,
    pub termination: Termination,
    /// Arc length of the retained portion, from the integrated arc-length state.
    pub retained_length: f64,
    /// Lengths of each retained segment in path order.
    pub segment_lengths: Vec<f64>,
    /// Largest relative violation of the null condition seen at any step.
    pub max_null_violation: f64,
    /// Largest relative drift of the conserved angular momentum.
    pub max_angular_momentum_drift: f64,
    pub min_radius: f64,
    /// Angle between the launch direction and the final direction of travel (escaped rays).
    pub bending_angle: Option<f64>,
    pub steps: usize,
}

const STATE: usize = 9;
// Layout: t, X(3), p_t, P(3), s
const IX: usize = 1;
const IPT: usize = 4;
const IP: usize = 5;
const IS: usize = 8;

#[inline]
fn position(y: &[f64; STATE]) -> Vec3 {
    Vec3::new(y[IX], y[IX + 1], y[IX + 2])
}

#[inline]
fn momentum(y: &[f64; STATE]) -> Vec3 {
    Vec3::new(y[IP], y[IP + 1], y[IP + 2])
}

#[inline]
fn conformal_factor(rho: f64) -> f64 {
    1.0 + 0.5 / rho
}

#[inline]
fn lapse(rho: f64) -> f64 {
    (2.0 * rho - 1.0) / (2.0 * rho + 1.0)
}

/// Areal (Schwarzschild) radius from isotropic radius.
#[inline]
pub fn areal_radius(rho: f64) -> f64 {
    let psi = conformal_factor(rho);
    rho * psi * psi
}

/// Isotropic radius from areal radius, `r > 2`.
#[inline]
pub fn isotropic_radius(r: f64) -> f64 {
    0.5 * (r - 1.0 + (r * (r - 2.0)).sqrt())
}

/// Right-hand side of the geodesic Hamiltonian system.
fn geodesic_rhs(y: &[f64; STATE]) -> [f64; STATE] {
    let x = position(y);
    let p = momentum(y);
    let pt = y[IPT];
    let rho = x.norm();
    let psi = conformal_factor(rho);
    let psi2 = psi * psi;
    let psi4 = psi2 * psi2;
    let alpha = lapse(rho);
    let p2 = p.norm_squared();

    let dx = p / psi4;
    let dt = -pt / (alpha * alpha);
    let a = 2.0 * rho - 1.0;
    let grav = -4.0 * pt * pt * (2.0 * rho + 1.0) / (a * a * a * rho) - p2 / (psi4 * psi * rho * rho * rho);
    let dp = x * grav;

    // Arc length of the Schwarzschild-Cartesian embedding x_s = ψ² X.
    let dpsi = -x.dot(&dx) / (2.0 * rho * rho * rho);
    let dxs = dx * psi2 + x * (2.0 * psi * dpsi);
    let ds = dxs.norm();

    [dt, dx[0], dx[1], dx[2], 0.0, dp[0], dp[1], dp[2], ds]
}

/// Schwarzschild-Cartesian position and unit tangent `dx/ds` for a state.
fn embedding(y: &[f64; STATE], dy: &[f64; STATE]) -> (Vec3, Vec3) {
    let x = position(y);
    let rho = x.norm();
    let psi = conformal_factor(rho);
    let xs = x * (psi * psi);
    let dx = Vec3::new(dy[IX], dy[IX + 1], dy[IX + 2]);
    let dpsi = -x.dot(&dx) / (2.0 * rho * rho * rho);
    let dxs = dx * (psi * psi) + x * (2.0 * psi * dpsi);
    (xs, dxs / dy[IS])
}

fn null_violation(y: &[f64; STATE]) -> f64 {
    let rho = position(y).norm();
    let psi = conformal_factor(rho);
    let alpha = lapse(rho);
    let pt = y[IPT];
    momentum(y).norm_squared() * alpha * alpha / (psi.powi(4) * pt * pt) - 1.0
}

/// Rescales the spatial momentum so the null constraint holds exactly.
fn project_null(y: &mut [f64; STATE]) {
    let scale = 1.0 / (1.0 + null_violation(y)).sqrt();
    for p in &mut y[IP..IP + 3] {
        *p *= scale;
    }
}

/// Dense record of an accepted integration node.
#[derive(Clone, Copy, Debug)]
struct Node {
    s: f64,
    x: Vec3,
    tangent: Vec3,
}

fn hermite(a: &Node, b: &Node, s: f64) -> Vec3 {
    let h = b.s - a.s;
    if h <= 0.0 {
        return a.x;
    }
    let t = ((s - a.s) / h).clamp(0.0, 1.0);
    let t2 = t * t;
    let t3 = t2 * t;
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + t;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    a.x * h00 + a.tangent * (h10 * h) + b.x * h01 + b.tangent * (h11 * h)
}

/// Arc length within `[a, b]` where the interpolated radius crosses `radius`.
fn radius_crossing(a: &Node, b: &Node, radius: f64) -> f64 {
    let f = |s: f64| hermite(a, b, s).norm() - radius;
    let (mut lo, mut hi) = (a.s, b.s);
    let f_lo = f(lo);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == (f_lo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 * (1.0 + hi.abs()) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Launch state for a backward ray whose impact parameter is `offset` (image-plane vector).
fn launch_state(camera: &CameraSpec, offset: Vec3) -> [f64; STATE] {
    let v = camera.view();
    let d_img = offset.norm();
    let dir = if d_img > 0.0 { offset / d_img } else { Vec3::zeros() };
    // Solve d = b * α(r0), r0 = sqrt(D² + d²), so that L/E equals the image-plane offset.
    let mut d = d_img;
    for _ in 0..8 {
        let r0 = (camera.start_radius.powi(2) + d * d).sqrt();
        d = d_img * (1.0 - 2.0 / r0).sqrt();
    }
    let xs = -v * camera.start_radius + dir * d;
    let r = xs.norm();
    let rho = isotropic_radius(r);
    let x_iso = xs * (rho / r);
    let psi = conformal_factor(rho);
    let p = v * (psi * psi / lapse(rho));
    [0.0, x_iso[0], x_iso[1], x_iso[2], -1.0, p[0], p[1], p[2], 0.0]
}

/// Traces the backward geodesic for one pixel of the camera.
pub fn trace_ray(camera: &CameraSpec, pixel_index: usize, tolerances: &Tolerances) -> Result<RayPath> {
    if pixel_index >= camera.pixel_count() {
        return Err(Error::InvalidCamera(format!(
            "pixel index {pixel_index} out of range for {} pixels",
            camera.pixel_count()
        )));
    }
    let (a, b) = camera.pixel_coords(pixel_index);
    trace_impact(camera, a, b, tolerances)
}

/// Traces a backward ray through arbitrary image-plane coordinates (impact parameters).
pub fn trace_impact(camera: &CameraSpec, image_x: f64, image_y: f64, tolerances: &Tolerances) -> Result<RayPath> {
    let offset = camera.right() * image_x + camera.up() * image_y;
    let mut y = launch_state(camera, offset);
    let mut dy = geodesic_rhs(&y);
    let control = StepControl::new(tolerances.atol, tolerances.rtol);
    let capture_radius = tolerances.capture_radius();
    let roi = tolerances.roi_radius;

    let l0 = position(&y).cross(&momentum(&y)).norm();
    let launch_dir = camera.view();
    let mut nodes = Vec::new();
    let (x0, t0) = embedding(&y, &dy);
    nodes.push(Node { s: 0.0, x: x0, tangent: t0 });

    let mut max_null = null_violation(&y).abs();
    let mut max_l_drift: f64 = 0.0;
    let mut min_radius = x0.norm();
    let mut h = f64::NAN;
    let mut steps = 0usize;
    let termination;
    let mut final_dir = None;

    loop {
        steps += 1;
        if steps > tolerances.max_steps {
            return Err(Error::MaxStepsExceeded(tolerances.max_steps));
        }
        let r = areal_radius(position(&y).norm());
        let cap_s = if r > roi { (r - roi).max(tolerances.max_step) } else { tolerances.max_step };
        let h_cap = cap_s / dy[IS];
        if !h.is_finite() {
            h = h_cap;
        }
        h = h.min(h_cap);

        let trial = rk45::try_step(&geodesic_rhs, &y, &dy, h, &control);
        let rho_new = position(&trial.y).norm();
        if !(trial.error <= 1.0) || !(rho_new > 0.5) {
            h *= if rho_new > 0.5 { rk45::step_factor(trial.error, &control) } else { 0.25 };
            if h < control.h_min {
                return Err(Error::IntegratorDiverged { step: h, radius: r });
            }
            continue;
        }
        let factor = rk45::step_factor(trial.error, &control);
        y = trial.y;
        h *= factor;
        // Violation accumulated over this step, then projected back onto H = 0 so
        // near-critical rays cannot build up drift over many windings.
        max_null = max_null.max(null_violation(&y).abs());
        project_null(&mut y);
        dy = geodesic_rhs(&y);

        let (xs, tangent) = embedding(&y, &dy);
        nodes.push(Node { s: y[IS], x: xs, tangent });
        let r_new = xs.norm();
        min_radius = min_radius.min(r_new);
        if l0 > 0.0 {
            let l = position(&y).cross(&momentum(&y)).norm();
            max_l_drift = max_l_drift.max((l - l0).abs() / l0);
        }

        if r_new <= capture_radius {
            termination = Termination::Captured;
            break;
        }
        if r_new >= camera.start_radius && xs.dot(&tangent) > 0.0 {
            termination = Termination::Escaped;
            final_dir = Some(tangent.normalize());
            break;
        }
    }

    let segments = retained_segments(&nodes, roi, capture_radius, termination);
    let (samples, weights) = resample(&nodes, &segments, tolerances);
    let segment_lengths: Vec<f64> = segments.iter().map(|(a, b)| b - a).collect();
    let bending_angle = final_dir.map(|d: Vec3| d.dot(&launch_dir).clamp(-1.0, 1.0).acos());

    Ok(RayPath {
        samples,
        weights,
        termination,
        retained_length: segment_lengths.iter().sum(),
        segment_lengths,
        max_null_violation: max_null,
        max_angular_momentum_drift: max_l_drift,
        min_radius,
        bending_angle,
        steps,
    })
}

/// Arc-length intervals of the path lying inside the region of interest.
fn retained_segments(nodes: &[Node], roi: f64, capture_radius: f64, termination: Termination) -> Vec<(f64, f64)> {
    let mut segments = Vec::new();
    let mut start: Option<f64> = if nodes[0].x.norm() <= roi { Some(nodes[0].s) } else { None };
    for pair in nodes.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let (ra, rb) = (a.x.norm(), b.x.norm());
        if ra > roi && rb <= roi {
            start = Some(radius_crossing(a, b, roi));
        } else if ra <= roi && rb > roi {
            if let Some(s0) = start.take() {
                let s1 = radius_crossing(a, b, roi);
                if s1 > s0 {
                    segments.push((s0, s1));
                }
            }
        }
    }
    if let Some(s0) = start {
        let n = nodes.len();
        let end = if termination == Termination::Captured && n >= 2 {
            let (a, b) = (&nodes[n - 2], &nodes[n - 1]);
            if a.x.norm() > capture_radius {
                radius_crossing(a, b, capture_radius)
            } else {
                b.s
            }
        } else {
            nodes[n - 1].s
        };
        if end > s0 {
            segments.push((s0, end));
        }
    }
    segments
}

/// Splits the retained arc length into equal cells and places a sample at each cell midpoint.
fn resample(nodes: &[Node], segments: &[(f64, f64)], tolerances: &Tolerances) -> (Vec<Vec3>, Vec<f64>) {
    let total: f64 = segments.iter().map(|(a, b)| b - a).sum();
    if segments.is_empty() || total <= 0.0 {
        return (Vec::new(), Vec::new());
    }
    let max_cells = tolerances.max_samples_per_ray.max(segments.len());
    let wanted = (total / tolerances.sample_spacing).ceil() as usize;
    let cells_total = wanted.clamp(segments.len(), max_cells);

    // Largest-remainder allocation with at least one cell per segment.
    let mut counts: Vec<usize> = Vec::with_capacity(segments.len());
    let mut remainders = Vec::with_capacity(segments.len());
    for (a, b) in segments {
        let exact = cells_total as f64 * (b - a) / total;
        counts.push((exact.floor() as usize).max(1));
        remainders.push(exact - exact.floor());
    }
    let mut assigned: usize = counts.iter().sum();
    while assigned < cells_total {
        let (i, _) = remainders
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.total_cmp(y.1))
            .expect("nonempty");
        counts[i] += 1;
        remainders[i] = -1.0;
        assigned += 1;
    }
    while assigned > cells_total {
        let i = counts.iter().enumerate().max_by_key(|(_, c)| **c).map(|(i, _)| i).expect("nonempty");
        counts[i] -= 1;
        assigned -= 1;
    }

    let mut samples = Vec::with_capacity(cells_total);
    let mut weights = Vec::with_capacity(cells_total);
    let mut cursor = 0usize;
    for ((s0, s1), &k) in segments.iter().zip(&counts) {
        let ds = (s1 - s0) / k as f64;
        for i in 0..k {
            let s = s0 + (i as f64 + 0.5) * ds;
            while cursor + 2 < nodes.len() && nodes[cursor + 1].s < s {
                cursor += 1;
            }
            samples.push(hermite(&nodes[cursor], &nodes[cursor + 1], s));
            weights.push(ds);
        }
    }
    (samples, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn camera() -> CameraSpec {
        CameraSpec::looking_along_z(8, 12.0)
    }

    #[test]
    fn radius_conversions_invert() {
        for r in [2.5, 3.0, 6.0, 12.0, 100.0, 1e4] {
            assert_relative_eq!(areal_radius(isotropic_radius(r)), r, max_relative = 1e-13);
        }
        assert_relative_eq!(isotropic_radius(2.0), 0.5);
    }

    #[test]
    fn camera_validation() {
        assert!(CameraSpec::new([0.0, 0.0, 0.0], [0.0, 1.0, 0.0], 4, 1.0).is_err());
        assert!(CameraSpec::new([0.0, 0.0, 1.0], [0.0, 0.0, 2.0], 4, 1.0).is_err());
        let cam = CameraSpec::new([0.0, 0.0, 3.0], [0.0, 1.0, 1.0], 4, 1.0).unwrap();
        assert_relative_eq!(cam.view().norm(), 1.0, epsilon = 1e-12);
        assert!(cam.view().dot(&cam.up()).abs() < 1e-12);
        assert!(cam.clone().with_start_radius(1.0).is_err());
        assert!(CameraSpec::new([0.0, 0.0, 1.0], [0.0, 1.0, 0.0], 0, 1.0).is_err());
    }

    #[test]
    fn center_ray_is_captured() {
        let cam = CameraSpec::looking_along_z(1, 1e-3);
        let path = trace_ray(&cam, 0, &Tolerances::default()).unwrap();
        assert_eq!(path.termination, Termination::Captured);
        let last = path.samples.last().unwrap();
        assert!(last.norm() > 2.0);
        // Radial ray: retained length is roi - capture radius.
        let tol = Tolerances::default();
        assert_relative_eq!(path.retained_length, tol.roi_radius - tol.capture_radius(), max_relative = 1e-6);
    }

    #[test]
    fn capture_boundary() {
        let cam = camera();
        let tol = Tolerances::default();
        let bc = 3.0 * 3f64.sqrt();
        assert_eq!(trace_impact(&cam, 5.0, 0.0, &tol).unwrap().termination, Termination::Captured);
        assert_eq!(trace_impact(&cam, bc - 0.01, 0.0, &tol).unwrap().termination, Termination::Captured);
        assert_eq!(trace_impact(&cam, 0.0, bc + 0.01, &tol).unwrap().termination, Termination::Escaped);
    }

    #[test]
    fn conserved_quantities() {
        let cam = camera();
        let tol = Tolerances::default();
        for b in [0.5, 4.0, 5.3, 8.0, 20.0] {
            let path = trace_impact(&cam, b, 0.3, &tol).unwrap();
            assert!(path.max_null_violation < 1e-8, "b={b}: null {}", path.max_null_violation);
            assert!(path.max_angular_momentum_drift < 1e-8, "b={b}: L {}", path.max_angular_momentum_drift);
        }
    }

    #[test]
    fn weights_sum_to_retained_length() {
        let cam = camera();
        let tol = Tolerances::default();
        for p in 0..cam.pixel_count() {
            let path = trace_ray(&cam, p, &tol).unwrap();
            let sum: f64 = path.weights.iter().sum();
            if path.retained_length > 0.0 {
                assert_relative_eq!(sum, path.retained_length, max_relative = 1e-12);
            }
            assert!(path.weights.iter().all(|w| *w > 0.0));
            assert!(path.samples.len() <= tol.max_samples_per_ray);
            for x in &path.samples {
                assert!(x.norm() > 2.0 && x.norm() <= tol.roi_radius * (1.0 + 1e-9));
            }
        }
    }

    #[test]
    fn min_radius_is_monotone_above_critical() {
        let cam = camera();
        let tol = Tolerances::default();
        let bc = 3.0 * 3f64.sqrt();
        let mut previous = 0.0;
        for db in [1e-3, 0.01, 0.1, 0.5, 1.0, 3.0] {
            let path = trace_impact(&cam, bc + db, 0.0, &tol).unwrap();
            assert_eq!(path.termination, Termination::Escaped);
            assert!(path.min_radius > previous);
            previous = path.min_radius;
        }
        let near = trace_impact(&cam, bc + 1e-3, 0.0, &tol).unwrap();
        assert!((near.min_radius - 3.0).abs() < 0.15, "{}", near.min_radius);
        // Near-critical rays wind around the photon sphere: far longer than a straight chord.
        let chord = 2.0 * (tol.roi_radius.powi(2) - bc * bc).sqrt();
        assert!(near.retained_length > chord + 2.0 * std::f64::consts::PI * 3.0, "{}", near.retained_length);
    }

    #[test]
    fn reflection_symmetry() {
        let tol = Tolerances::default();
        let cam = CameraSpec::new([0.3, 0.2, 0.9], [0.0, 0.4, 0.5], 4, 10.0).unwrap();
        let mirror = |v: [f64; 3]| [v[0], v[1], -v[2]];
        let cam_m = CameraSpec {
            view_direction: mirror(cam.view_direction),
            up_direction: mirror(cam.up_direction),
            ..cam.clone()
        };
        let n = cam.image_pixels;
        for row in 0..n {
            for col in 0..n {
                let p = trace_ray(&cam, row * n + col, &tol).unwrap();
                let q = trace_ray(&cam_m, row * n + (n - 1 - col), &tol).unwrap();
                assert_eq!(p.samples.len(), q.samples.len());
                for (a, b) in p.samples.iter().zip(&q.samples) {
                    assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9 && (a[2] + b[2]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn pixel_out_of_range() {
        assert!(trace_ray(&camera(), 64, &Tolerances::default()).is_err());
    }
}
