//! Geodesic tracer checked against closed-form Schwarzschild orbit integrals.

use bhtomo::geodesic::{build_bundle, trace_impact, CameraSpec, Termination, Tolerances};

/// Adaptive Simpson quadrature.
fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn step<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        assert!(whole.is_finite(), "non-finite integrand on [{a}, {b}]");
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol.max(1e-15 * (left + right).abs()) {
            return left + right + (left + right - whole) / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 40)
}

/// Largest root of r³ − b² r + 2 b² (the periapsis), if the ray escapes.
fn periapsis(b: f64) -> Option<f64> {
    let bc = 3.0 * 3f64.sqrt();
    if b <= bc {
        return None;
    }
    // r_p = (2b/√3) cos(⅓ arccos(−3√3/b)).
    Some(2.0 * b / 3f64.sqrt() * ((1.0 / 3.0) * (-bc / b).acos()).cos())
}

/// Euclidean arc length (in Schwarzschild r, φ) of the orbit with impact parameter `b`
/// inside `r <= roi`, ending at `r_capture` for captured orbits.
fn orbit_arc_length(b: f64, roi: f64, r_capture: f64) -> f64 {
    // ds/dr = sqrt(1 + 1 / (r²/b² − 1 + 2/r))
    let g = |r: f64| r * r / (b * b) - 1.0 + 2.0 / r;
    match periapsis(b) {
        Some(rp) if rp < roi => {
            // With r = rp + w², r³ − b²r + 2b² = w² (r² + rp r + rp² − b²), which
            // removes the inverse-square-root singularity at periapsis.
            let f = |w: f64| {
                let r = rp + w * w;
                2.0 * (w * w + b * b * r / (r * r + rp * r + rp * rp - b * b)).sqrt()
            };
            2.0 * simpson(&f, 0.0, (roi - rp).sqrt(), 1e-12)
        }
        Some(_) => 0.0,
        None => {
            let f = |r: f64| (1.0 + 1.0 / g(r)).sqrt();
            simpson(&f, r_capture, roi, 1e-12)
        }
    }
}

#[test]
fn exact_deflection_far_observer() {
    // Exact deflection 2∫₀^{u_p} du / sqrt(1/b² − u² + 2u³) − π, evaluated with mpmath at 30 digits.
    let reference = [(15.0, 0.336365726029484593), (20.0, 0.236135995388469907), (30.0, 0.148248087272755424)];
    let camera = CameraSpec::looking_along_z(1, 1.0).with_start_radius(1e5).unwrap();
    let tol = Tolerances::default();
    for (b, exact) in reference {
        let path = trace_impact(&camera, b, 0.0, &tol).unwrap();
        assert_eq!(path.termination, Termination::Escaped);
        let bend = path.bending_angle.unwrap();
        // Truncating at r = 1e5 loses ≈ b / r² on each side.
        assert!(((bend - exact) / exact).abs() < 1e-5, "b={b}: {bend} vs {exact}");
    }
}

#[test]
fn capture_boundary_by_bisection() {
    let camera = CameraSpec::looking_along_z(1, 1.0);
    let tol = Tolerances::default();
    let (mut lo, mut hi) = (4.0, 7.0);
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        match trace_impact(&camera, mid, 0.0, &tol).unwrap().termination {
            Termination::Captured => lo = mid,
            Termination::Escaped => hi = mid,
        }
    }
    let bc = 3.0 * 3f64.sqrt();
    assert!((0.5 * (lo + hi) - bc).abs() < 1e-4, "{lo} {hi}");
}

#[test]
fn bundle_arc_lengths_match_orbit_integrals() {
    let camera = CameraSpec::looking_along_z(64, 12.0);
    let tol = Tolerances::default();
    let bundle = build_bundle(&camera, &tol).unwrap();
    let mut checked = 0;
    for n in 0..bundle.pixel_count() {
        let (xs, ws) = bundle.ray(n);
        let (a, b) = camera.pixel_coords(n);
        let impact = (a * a + b * b).sqrt();
        let oracle = orbit_arc_length(impact, tol.roi_radius, tol.capture_radius());
        let sum: f64 = ws.iter().sum();
        if oracle == 0.0 {
            assert!(xs.is_empty());
            continue;
        }
        let rel = ((sum - oracle) / oracle).abs();
        assert!(rel < 1e-6, "pixel {n} (b = {impact}): {sum} vs {oracle} ({rel:e})");
        // The polyline through the samples can only be shorter than the path it samples.
        let poly: f64 = xs.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
        assert!(poly <= sum * (1.0 + 1e-9));
        checked += 1;
    }
    assert!(checked > 2000);
    // The shadow: rays with b < 3√3 are captured.
    let captured = bundle.captured_count();
    assert!(captured > 0 && captured < bundle.pixel_count());
}
