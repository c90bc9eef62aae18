//! Lensed image formation: `p_n(t) = Σ_i e(t, x_i) Δs_i` along precomputed rays.

use std::path::Path;

use rayon::prelude::*;

use crate::binio::{Reader, Writer};
use crate::dynamics::Motion;
use crate::error::{Error, Result};
use crate::field::{EmissionField, EmissionSource, Support, CHUNK};
use crate::geodesic::RayBundle;
use crate::Vec3;

const FRAME_MAGIC: &[u8; 4] = b"BHFR";
const FRAME_FORMAT_VERSION: u32 = 1;
/// Fixed number of partial sums in gradient reductions, independent of thread count.
const REDUCTION_GROUPS: usize = 8;

/// Row-major `N × N` image at a geometric time.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageFrame {
    pub time: f64,
    pub image_pixels: usize,
    pub pixels: Vec<f64>,
}

impl ImageFrame {
    pub fn total_flux(&self) -> f64 {
        self.pixels.iter().sum()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(FRAME_MAGIC);
        w.u32(FRAME_FORMAT_VERSION);
        w.f64(self.time);
        w.u64(self.image_pixels as u64);
        w.f64s(&self.pixels);
        w.buf
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = Reader::new(data);
        r.expect_magic(FRAME_MAGIC)?;
        let version = r.u32()?;
        if version != FRAME_FORMAT_VERSION {
            return Err(Error::BadHeader(format!("frame version {version}")));
        }
        let time = r.f64()?;
        let n = r.u64()? as usize;
        if r.remaining() != n * n * 8 {
            return Err(Error::BadHeader(format!("{} payload bytes for a {n}×{n} frame", r.remaining())));
        }
        Ok(Self {
            time,
            image_pixels: n,
            pixels: r.f64s(n * n)?,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// 8-bit grayscale, linearly scaled so `peak` maps to white.
    pub fn write_png(&self, path: &Path, peak: f64) -> Result<()> {
        let n = self.image_pixels as u32;
        let scale = if peak > 0.0 { 255.0 / peak } else { 0.0 };
        let img = image::GrayImage::from_fn(n, n, |x, y| {
            let v = self.pixels[(y * n + x) as usize] * scale;
            image::Luma([v.round().clamp(0.0, 255.0) as u8])
        });
        img.save(path)?;
        Ok(())
    }
}

/// Bundle samples that fall inside a field's support, flattened for batch evaluation.
#[derive(Clone, Debug)]
pub struct RenderPlan {
    pub image_pixels: usize,
    support: Support,
    positions: Vec<Vec3>,
    weights: Vec<f64>,
    pixel: Vec<u32>,
}

impl RenderPlan {
    pub fn new(bundle: &RayBundle, support: &Support) -> Result<Self> {
        let roi = bundle.tolerances.roi_radius;
        if support.outer_radius > roi {
            return Err(Error::BundleFieldMismatch {
                bundle: roi,
                field: support.outer_radius,
            });
        }
        let mut plan = Self {
            image_pixels: bundle.camera.image_pixels,
            support: *support,
            positions: Vec::new(),
            weights: Vec::new(),
            pixel: Vec::new(),
        };
        for n in 0..bundle.pixel_count() {
            let (xs, ws) = bundle.ray(n);
            for (x, w) in xs.iter().zip(ws) {
                if support.contains(x) {
                    plan.positions.push(*x);
                    plan.weights.push(*w);
                    plan.pixel.push(n as u32);
                }
            }
        }
        Ok(plan)
    }

    pub fn support(&self) -> Support {
        self.support
    }

    pub fn pixel_count(&self) -> usize {
        self.image_pixels * self.image_pixels
    }

    pub fn sample_count(&self) -> usize {
        self.positions.len()
    }

    /// Emission at every sample.
    fn emission(&self, field: &dyn EmissionSource, motion: &Motion, t: f64) -> Vec<f64> {
        let mut e = vec![0.0; self.positions.len()];
        self.positions
            .par_chunks(CHUNK)
            .zip(e.par_chunks_mut(CHUNK))
            .for_each(|(xs, out)| field.eval_batch(motion, t, xs, out));
        e
    }
}

pub fn render_frame(plan: &RenderPlan, field: &dyn EmissionSource, motion: &Motion, t: f64) -> ImageFrame {
    let e = plan.emission(field, motion, t);
    let mut pixels = vec![0.0; plan.pixel_count()];
    for ((v, w), &p) in e.iter().zip(&plan.weights).zip(&plan.pixel) {
        pixels[p as usize] += v * w;
    }
    ImageFrame {
        time: t,
        image_pixels: plan.image_pixels,
        pixels,
    }
}

pub fn render_sequence(plan: &RenderPlan, field: &dyn EmissionSource, motion: &Motion, times: &[f64]) -> Result<Vec<ImageFrame>> {
    if times.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::Config("timestamps must be sorted ascending".into()));
    }
    Ok(times.iter().map(|&t| render_frame(plan, field, motion, t)).collect())
}

/// Gradients of `Σ_n upstream_n p_n(t)` with respect to field parameters and the raw axis.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderGradient {
    pub params: Vec<f64>,
    pub axis: Vec3,
}

impl RenderGradient {
    pub fn zeros(n: usize) -> Self {
        Self {
            params: vec![0.0; n],
            axis: Vec3::zeros(),
        }
    }

    pub fn add(&mut self, other: &RenderGradient) {
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            *a += b;
        }
        self.axis += other.axis;
    }
}

pub fn grad_render(plan: &RenderPlan, field: &dyn EmissionField, motion: &Motion, t: f64, upstream: &[f64], with_axis: bool) -> Result<RenderGradient> {
    if upstream.len() != plan.pixel_count() {
        return Err(Error::ShapeMismatch(format!("{} upstream weights for {} pixels", upstream.len(), plan.pixel_count())));
    }
    let per_sample: Vec<f64> = plan
        .weights
        .iter()
        .zip(&plan.pixel)
        .map(|(w, &p)| upstream[p as usize] * w)
        .collect();
    let n = plan.positions.len();
    let group_len = n.div_ceil(REDUCTION_GROUPS).div_ceil(CHUNK).max(1) * CHUNK;
    let partials: Vec<RenderGradient> = plan
        .positions
        .par_chunks(group_len)
        .zip(per_sample.par_chunks(group_len))
        .map(|(xs, up)| {
            let mut g = RenderGradient::zeros(field.param_count());
            let mut axis = Vec3::zeros();
            field.backward_batch(motion, t, xs, up, &mut g.params, if with_axis { Some(&mut axis) } else { None });
            g.axis = axis;
            g
        })
        .collect();
    let mut total = RenderGradient::zeros(field.param_count());
    for p in &partials {
        total.add(p);
    }
    Ok(total)
}
