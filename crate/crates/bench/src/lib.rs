//! Shared fixtures for the benchmarks.

use bhtomo::dynamics::{Motion, RotationAxis};
use bhtomo::field::{EmissionField, Support};
use bhtomo::geodesic::{build_bundle, CameraSpec, RayBundle, Tolerances};
use bhtomo::render::RenderPlan;
use bhtomo::solver::ModelConfig;
use bhtomo::units::GridSpec;

pub struct Fixture {
    pub camera: CameraSpec,
    pub tolerances: Tolerances,
    pub bundle: RayBundle,
    pub plan: RenderPlan,
    pub field: Box<dyn EmissionField>,
    pub motion: Motion,
}

/// Desk-scale camera (`pixels`², half-width 9 r_g) and a width-32 network.
pub fn fixture(pixels: usize) -> Fixture {
    let grid = GridSpec::new(32, 9.0).unwrap();
    let support = Support::for_grid(&grid);
    let camera = CameraSpec::new([0.0, 0.0, -1.0], [0.0, 1.0, 0.0], pixels, 9.0).unwrap();
    let tolerances = Tolerances { roi_radius: 9.0, sample_spacing: 0.4, ..Default::default() };
    let bundle = build_bundle(&camera, &tolerances).unwrap();
    let plan = RenderPlan::new(&bundle, &support).unwrap();
    let model = ModelConfig { width: 32, ..Default::default() };
    let field = model.spec(support, &[0.0, 100.0]).unwrap().initialize(1, -2.0).unwrap();
    let inc = 60f64.to_radians();
    let motion = Motion::keplerian(RotationAxis::new(bhtomo::Vec3::new(0.0, inc.sin(), -inc.cos())).unwrap());
    Fixture { camera, tolerances, bundle, plan, field, motion }
}
