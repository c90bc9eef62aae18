use std::f64::consts::PI;

use chrono::{DateTime, Utc};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::ArrayCatalog;
use crate::error::{Error, Result};

/// Minimum elevation at both ends of a baseline.
pub const ELEVATION_CUTOFF_DEG: f64 = 15.0;
/// 1.3 mm, the 230 GHz observing band.
pub const DEFAULT_WAVELENGTH_M: f64 = 1.3e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourcePosition {
    pub ra_hours: f64,
    pub dec_deg: f64,
}

impl SourcePosition {
    /// Catalog position of Sgr A* (J2000).
    pub fn sgra() -> Self {
        Self {
            ra_hours: 17.761_121,
            dec_deg: -29.007_825,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dec_deg.abs() <= 90.0) || !self.ra_hours.is_finite() {
            return Err(Error::Config(format!("invalid source position {self:?}")));
        }
        Ok(())
    }
}

/// Greenwich mean sidereal time in radians.
pub fn gmst(t: &DateTime<Utc>) -> f64 {
    let jd = t.timestamp() as f64 / 86_400.0 + t.timestamp_subsec_nanos() as f64 * 1e-9 / 86_400.0 + 2_440_587.5;
    let hours = (18.697_374_558 + 24.065_709_824_419_08 * (jd - 2_451_545.0)).rem_euclid(24.0);
    hours * PI / 12.0
}

/// One retained baseline at one timestamp; `(u, v)` in wavelengths.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub st1: usize,
    pub st2: usize,
    pub u: f64,
    pub v: f64,
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UvFrame {
    pub t_utc: DateTime<Utc>,
    pub baselines: Vec<Baseline>,
}

/// Projection of baseline `b1 − b2` (meters, Earth-fixed) onto the sky plane, in wavelengths.
pub fn project_uv(b1: [f64; 3], b2: [f64; 3], source: &SourcePosition, gmst_rad: f64, wavelength: f64) -> (f64, f64) {
    let b = [b1[0] - b2[0], b1[1] - b2[1], b1[2] - b2[2]];
    let h = gmst_rad - source.ra_hours * PI / 12.0;
    let dec = source.dec_deg.to_radians();
    let (sh, ch) = h.sin_cos();
    let (sd, cd) = dec.sin_cos();
    let u = sh * b[0] + ch * b[1];
    let v = -sd * ch * b[0] + sd * sh * b[1] + cd * b[2];
    (u / wavelength, v / wavelength)
}

/// Elevation of the source above the geocentric horizon of a station, in degrees.
pub fn elevation_deg(position: [f64; 3], source: &SourcePosition, gmst_rad: f64) -> f64 {
    let dec = source.dec_deg.to_radians();
    let lon = source.ra_hours * PI / 12.0 - gmst_rad;
    let s = [dec.cos() * lon.cos(), dec.cos() * lon.sin(), dec.sin()];
    let r = position.iter().map(|c| c * c).sum::<f64>().sqrt();
    let sin_el = (s[0] * position[0] + s[1] * position[1] + s[2] * position[2]) / r;
    sin_el.clamp(-1.0, 1.0).asin().to_degrees()
}

pub fn project_baselines(catalog: &ArrayCatalog, source: &SourcePosition, timestamps: &[DateTime<Utc>], wavelength: f64) -> Result<Vec<UvFrame>> {
    catalog.validate()?;
    source.validate()?;
    let n = catalog.stations.len();
    timestamps
        .iter()
        .map(|t| {
            let g = gmst(t);
            let up: Vec<bool> = catalog
                .stations
                .iter()
                .map(|s| elevation_deg(s.position(), source, g) >= ELEVATION_CUTOFF_DEG)
                .collect();
            let mut baselines = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    if up[i] && up[j] {
                        let (u, v) = project_uv(catalog.stations[i].position(), catalog.stations[j].position(), source, g, wavelength);
                        baselines.push(Baseline {
                            st1: i,
                            st2: j,
                            u,
                            v,
                            sigma: catalog.baseline_sigma(i, j),
                        });
                    }
                }
            }
            if baselines.is_empty() {
                return Err(Error::NoVisibleBaselines(t.to_rfc3339()));
            }
            Ok(UvFrame { t_utc: *t, baselines })
        })
        .collect()
}

/// Angular offsets (radians) of pixel centers from the image center: `α` to the
/// right along columns, `β` up along rows.
fn pixel_offsets(n: usize, pixel_scale: f64) -> Vec<f64> {
    (0..n).map(|i| (i as f64 + 0.5 - n as f64 / 2.0) * pixel_scale).collect()
}

/// `V(u, v) = Σ_p I_p exp(−2πi (u α_p + v β_p))` for a row-major `n × n` image.
pub fn dtft(image: &[f64], n: usize, uv: &[(f64, f64)], pixel_scale: f64) -> Vec<Complex64> {
    assert_eq!(image.len(), n * n);
    let offsets = pixel_offsets(n, pixel_scale);
    uv.iter()
        .map(|&(u, v)| {
            // Separable phase: exp(−2πi u α_col) · exp(−2πi v β_row).
            let col: Vec<Complex64> = offsets.iter().map(|a| Complex64::from_polar(1.0, -2.0 * PI * u * a)).collect();
            let mut acc = Complex64::new(0.0, 0.0);
            for row in 0..n {
                let phase_row = Complex64::from_polar(1.0, 2.0 * PI * v * offsets[row]);
                for c in 0..n {
                    acc += phase_row * col[c] * image[row * n + c];
                }
            }
            acc
        })
        .collect()
}

/// `∂/∂I_p Re Σ_k conj(g_k) V_k` for a real image: `Re Σ_k conj(g_k) F_kp`.
pub fn dtft_adjoint(g: &[Complex64], n: usize, uv: &[(f64, f64)], pixel_scale: f64) -> Vec<f64> {
    assert_eq!(g.len(), uv.len());
    let offsets = pixel_offsets(n, pixel_scale);
    let mut out = vec![0.0; n * n];
    for (&(u, v), gk) in uv.iter().zip(g) {
        let col: Vec<Complex64> = offsets.iter().map(|a| Complex64::from_polar(1.0, -2.0 * PI * u * a)).collect();
        let gc = gk.conj();
        for row in 0..n {
            let r = gc * Complex64::from_polar(1.0, 2.0 * PI * v * offsets[row]);
            for c in 0..n {
                out[row * n + c] += (r * col[c]).re;
            }
        }
    }
    out
}
