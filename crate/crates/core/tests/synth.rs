//! Hot-spot synthesis checked against closed-form Gaussian integrals.

use bhtomo::dynamics::{Motion, RotationAxis};
use bhtomo::field::Support;
use bhtomo::synth::{load_volume, make_hotspots, rasterize, write_volume, HotspotConfig, HotspotField};
use bhtomo::units::GridSpec;
use bhtomo::Vec3;

fn one_spot(std: f64, half_extent: f64) -> HotspotField {
    let inc = 60f64.to_radians();
    let axis = RotationAxis::new(Vec3::new(0.0, inc.sin(), -inc.cos())).unwrap();
    let cfg = HotspotConfig { count: 1, std, ..Default::default() };
    let spots = make_hotspots(&cfg, &axis, 4).unwrap();
    HotspotField::new(spots, Motion::keplerian(axis), Support::for_grid(&GridSpec::new(8, half_extent).unwrap()))
}

fn mass(grid: GridSpec, field: &HotspotField) -> f64 {
    rasterize(field, &grid).unwrap().values().iter().sum::<f64>() * grid.voxel_volume()
}

#[test]
fn gaussian_integral_on_64_cube() {
    let field = one_spot(0.4, 10.0);
    let exact = (2.0 * std::f64::consts::PI).powf(1.5) * 0.4f64.powi(3);
    let m = mass(GridSpec::new(64, 10.0).unwrap(), &field);
    assert!(((m - exact) / exact).abs() < 0.01, "{m} vs {exact}");
}

#[test]
fn coarse_grid_keeps_the_total_mass() {
    let field = one_spot(0.4, 10.0);
    let fine = mass(GridSpec::new(64, 10.0).unwrap(), &field);
    let coarse = mass(GridSpec::new(32, 10.0).unwrap(), &field);
    assert!(((coarse - fine) / fine).abs() < 0.01, "{coarse} vs {fine}");
}

#[test]
fn volume_round_trip_preserves_bits() {
    let field = one_spot(0.8, 9.0);
    let grid = GridSpec::new(16, 9.0).unwrap();
    let vol = rasterize(&field, &grid).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("v.bhvl");
    write_volume(&path, &vol, None).unwrap();
    let back = load_volume(&path).unwrap();
    let (a, b) = (vol.values(), back.values());
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}
