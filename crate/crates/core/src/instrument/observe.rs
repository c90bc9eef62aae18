use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::uv::{dtft, dtft_adjoint, UvFrame};
use super::Baseline;
use crate::dynamics::Motion;
use crate::error::{Error, Result};
use crate::field::EmissionSource;
use crate::render::{render_frame, ImageFrame, RenderPlan};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Provenance {
    Noiseless,
    Noisy { seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub enum Measurements {
    /// Full frames with unit noise.
    Image { frames: Vec<Vec<f64>> },
    /// Complex visibilities (Jy) per uv frame.
    Visibility {
        stations: Vec<String>,
        uv: Vec<UvFrame>,
        vis: Vec<Vec<Complex64>>,
    },
}

/// Model prediction for one frame, in the same space as the measurements.
#[derive(Clone, Debug, PartialEq)]
pub enum FrameModel {
    Image(Vec<f64>),
    Visibility(Vec<Complex64>),
}

/// Time-ordered measurements tied to an image grid.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSet {
    /// Geometric time of each frame.
    pub times: Vec<f64>,
    pub image_pixels: usize,
    /// Radians per pixel.
    pub pixel_scale: f64,
    /// Jy per unit of rendered pixel intensity.
    pub flux_scale: f64,
    pub provenance: Provenance,
    pub measurements: Measurements,
}

fn uv_pairs(frame: &UvFrame) -> Vec<(f64, f64)> {
    frame.baselines.iter().map(|b| (b.u, b.v)).collect()
}

impl ObservationSet {
    pub fn frame_count(&self) -> usize {
        self.times.len()
    }

    pub fn is_image_domain(&self) -> bool {
        matches!(self.measurements, Measurements::Image { .. })
    }

    /// Number of (real or complex) measurements.
    pub fn measurement_count(&self) -> usize {
        match &self.measurements {
            Measurements::Image { frames } => frames.iter().map(Vec::len).sum(),
            Measurements::Visibility { vis, .. } => vis.iter().map(Vec::len).sum(),
        }
    }

    /// Forward model of frame `k` applied to a rendered image.
    pub fn predict(&self, k: usize, image: &[f64]) -> FrameModel {
        match &self.measurements {
            Measurements::Image { .. } => FrameModel::Image(image.to_vec()),
            Measurements::Visibility { uv, .. } => {
                let mut v = dtft(image, self.image_pixels, &uv_pairs(&uv[k]), self.pixel_scale);
                for z in &mut v {
                    *z *= self.flux_scale;
                }
                FrameModel::Visibility(v)
            }
        }
    }

    /// χ² of frame `k` and its gradient with respect to the rendered image.
    pub fn frame_loss(&self, k: usize, image: &[f64]) -> (f64, Vec<f64>) {
        match &self.measurements {
            Measurements::Image { frames } => {
                let mut chi2 = 0.0;
                let grad = image
                    .iter()
                    .zip(&frames[k])
                    .map(|(m, y)| {
                        let r = m - y;
                        chi2 += r * r;
                        2.0 * r
                    })
                    .collect();
                (chi2, grad)
            }
            Measurements::Visibility { uv, vis, .. } => {
                let FrameModel::Visibility(model) = self.predict(k, image) else { unreachable!() };
                let mut chi2 = 0.0;
                let weights: Vec<Complex64> = model
                    .iter()
                    .zip(&vis[k])
                    .zip(&uv[k].baselines)
                    .map(|((m, y), b)| {
                        let r = m - y;
                        let w = 1.0 / (b.sigma * b.sigma);
                        chi2 += r.norm_sqr() * w;
                        r * (2.0 * w * self.flux_scale)
                    })
                    .collect();
                (chi2, dtft_adjoint(&weights, self.image_pixels, &uv_pairs(&uv[k]), self.pixel_scale))
            }
        }
    }

    /// `Σ_t Σ_k |y_k − ŷ_k|² / σ_k²` over all frames.
    pub fn chi2(&self, model: &[FrameModel]) -> Result<f64> {
        if model.len() != self.frame_count() {
            return Err(Error::ShapeMismatch(format!("{} model frames for {} observed", model.len(), self.frame_count())));
        }
        let mut total = 0.0;
        for (k, m) in model.iter().enumerate() {
            total += match (&self.measurements, m) {
                (Measurements::Image { frames }, FrameModel::Image(p)) if p.len() == frames[k].len() => {
                    p.iter().zip(&frames[k]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
                }
                (Measurements::Visibility { uv, vis, .. }, FrameModel::Visibility(p)) if p.len() == vis[k].len() => p
                    .iter()
                    .zip(&vis[k])
                    .zip(&uv[k].baselines)
                    .map(|((a, b), bl)| (a - b).norm_sqr() / (bl.sigma * bl.sigma))
                    .sum::<f64>(),
                _ => return Err(Error::ShapeMismatch(format!("frame {k}: model does not match measurements"))),
            };
        }
        Ok(total)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let meta = ObservationMeta {
            times: self.times.clone(),
            image_pixels: self.image_pixels,
            pixel_scale: self.pixel_scale,
            flux_scale: self.flux_scale,
            provenance: self.provenance,
            mode: if self.is_image_domain() { "image".into() } else { "visibility".into() },
            stations: match &self.measurements {
                Measurements::Visibility { stations, .. } => stations.clone(),
                Measurements::Image { .. } => Vec::new(),
            },
            utc: match &self.measurements {
                Measurements::Visibility { uv, .. } => uv.iter().map(|f| f.t_utc).collect(),
                Measurements::Image { .. } => Vec::new(),
            },
        };
        std::fs::write(dir.join("observations.json"), serde_json::to_string_pretty(&meta)?)?;
        match &self.measurements {
            Measurements::Image { frames } => {
                let frames_dir = dir.join("frames");
                std::fs::create_dir_all(&frames_dir)?;
                for (k, f) in frames.iter().enumerate() {
                    ImageFrame {
                        time: self.times[k],
                        image_pixels: self.image_pixels,
                        pixels: f.clone(),
                    }
                    .write(&frames_dir.join(format!("frame_{k:04}.bin")))?;
                }
            }
            Measurements::Visibility { stations, uv, vis } => {
                let mut out = BufWriter::new(std::fs::File::create(dir.join("observations.jsonl"))?);
                for (frame, values) in uv.iter().zip(vis) {
                    for (b, z) in frame.baselines.iter().zip(values) {
                        let rec = VisibilityRecord {
                            t_utc: frame.t_utc,
                            st1: stations[b.st1].clone(),
                            st2: stations[b.st2].clone(),
                            u_wav: b.u,
                            v_wav: b.v,
                            vis_re: z.re,
                            vis_im: z.im,
                            sigma: b.sigma,
                        };
                        serde_json::to_writer(&mut out, &rec)?;
                        out.write_all(b"\n")?;
                    }
                }
                out.flush()?;
            }
        }
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let meta: ObservationMeta = serde_json::from_slice(&std::fs::read(dir.join("observations.json"))?)?;
        let measurements = match meta.mode.as_str() {
            "image" => {
                let mut frames = Vec::with_capacity(meta.times.len());
                for k in 0..meta.times.len() {
                    let f = ImageFrame::read(&dir.join("frames").join(format!("frame_{k:04}.bin")))?;
                    if f.image_pixels != meta.image_pixels {
                        return Err(Error::BadHeader(format!("frame {k} is {0}×{0}", f.image_pixels)));
                    }
                    frames.push(f.pixels);
                }
                Measurements::Image { frames }
            }
            "visibility" => {
                let file = std::io::BufReader::new(std::fs::File::open(dir.join("observations.jsonl"))?);
                let mut uv: Vec<UvFrame> = meta.utc.iter().map(|t| UvFrame { t_utc: *t, baselines: Vec::new() }).collect();
                let mut vis: Vec<Vec<Complex64>> = vec![Vec::new(); uv.len()];
                let index = |name: &str| {
                    meta.stations
                        .iter()
                        .position(|s| s == name)
                        .ok_or_else(|| Error::Parse(format!("unknown station {name}")))
                };
                for line in file.lines() {
                    let line = line?;
                    if line.trim().is_empty() {
                        continue;
                    }
                    let rec: VisibilityRecord = serde_json::from_str(&line)?;
                    let k = meta
                        .utc
                        .iter()
                        .position(|t| *t == rec.t_utc)
                        .ok_or_else(|| Error::Parse(format!("record at unlisted time {}", rec.t_utc)))?;
                    uv[k].baselines.push(Baseline {
                        st1: index(&rec.st1)?,
                        st2: index(&rec.st2)?,
                        u: rec.u_wav,
                        v: rec.v_wav,
                        sigma: rec.sigma,
                    });
                    vis[k].push(Complex64::new(rec.vis_re, rec.vis_im));
                }
                Measurements::Visibility {
                    stations: meta.stations,
                    uv,
                    vis,
                }
            }
            other => return Err(Error::Parse(format!("unknown observation mode {other:?}"))),
        };
        Ok(Self {
            times: meta.times,
            image_pixels: meta.image_pixels,
            pixel_scale: meta.pixel_scale,
            flux_scale: meta.flux_scale,
            provenance: meta.provenance,
            measurements,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ObservationMeta {
    mode: String,
    times: Vec<f64>,
    image_pixels: usize,
    pixel_scale: f64,
    flux_scale: f64,
    provenance: Provenance,
    stations: Vec<String>,
    utc: Vec<DateTime<Utc>>,
}

#[derive(Serialize, Deserialize)]
struct VisibilityRecord {
    t_utc: DateTime<Utc>,
    st1: String,
    st2: String,
    u_wav: f64,
    v_wav: f64,
    vis_re: f64,
    vis_im: f64,
    sigma: f64,
}

/// Independent complex Gaussian noise per baseline, one counter-based substream per frame.
pub fn add_thermal_noise(uv: &[UvFrame], vis: &mut [Vec<Complex64>], seed: u64) {
    for (k, (frame, values)) in uv.iter().zip(vis.iter_mut()).enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(k as u64);
        for (b, z) in frame.baselines.iter().zip(values.iter_mut()) {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            *z += Complex64::new(re, im) * b.sigma;
        }
    }
}

/// Interferometric measurements of the rendered sequence.
#[allow(clippy::too_many_arguments)]
pub fn observe(
    plan: &RenderPlan,
    field: &dyn EmissionSource,
    motion: &Motion,
    times: &[f64],
    uv: Vec<UvFrame>,
    stations: Vec<String>,
    pixel_scale: f64,
    flux_scale: f64,
    noise_seed: Option<u64>,
) -> Result<ObservationSet> {
    if uv.len() != times.len() {
        return Err(Error::ShapeMismatch(format!("{} uv frames for {} timestamps", uv.len(), times.len())));
    }
    let n = plan.image_pixels;
    let mut vis: Vec<Vec<Complex64>> = times
        .iter()
        .zip(&uv)
        .map(|(&t, frame)| {
            let image = render_frame(plan, field, motion, t);
            let mut v = dtft(&image.pixels, n, &uv_pairs(frame), pixel_scale);
            for z in &mut v {
                *z *= flux_scale;
            }
            v
        })
        .collect();
    if let Some(seed) = noise_seed {
        add_thermal_noise(&uv, &mut vis, seed);
    }
    Ok(ObservationSet {
        times: times.to_vec(),
        image_pixels: n,
        pixel_scale,
        flux_scale,
        provenance: noise_seed.map_or(Provenance::Noiseless, |seed| Provenance::Noisy { seed }),
        measurements: Measurements::Visibility { stations, uv, vis },
    })
}

/// Full rendered frames used directly as unit-σ measurements.
pub fn image_domain_observe(plan: &RenderPlan, field: &dyn EmissionSource, motion: &Motion, times: &[f64]) -> ObservationSet {
    let frames = times.iter().map(|&t| render_frame(plan, field, motion, t).pixels).collect();
    ObservationSet {
        times: times.to_vec(),
        image_pixels: plan.image_pixels,
        pixel_scale: 1.0,
        flux_scale: 1.0,
        provenance: Provenance::Noiseless,
        measurements: Measurements::Image { frames },
    }
}
