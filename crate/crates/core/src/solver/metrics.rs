use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::field::EmissionSource;
use crate::synth::GroundTruth;
use crate::Vec3;

/// Reconstruction quality against a ground-truth record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// dB; `+∞` when the volumes are identical.
    #[serde(serialize_with = "ser_psnr", deserialize_with = "de_psnr")]
    pub psnr: f64,
    pub axis_alignment: f64,
    pub final_chi2: f64,
}

fn ser_psnr<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
    }
}

fn de_psnr<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }
    match Repr::deserialize(d)? {
        Repr::Num(v) => Ok(v),
        Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
        Repr::Text(t) if t == "-inf" => Ok(f64::NEG_INFINITY),
        Repr::Text(t) => Err(serde::de::Error::custom(format!("invalid psnr {t:?}"))),
    }
}

/// `10·log₁₀(max(truth)² / MSE)`.
pub fn psnr(recovered: &[f64], truth: &[f64]) -> Result<f64> {
    if recovered.len() != truth.len() {
        return Err(Error::ShapeMismatch(format!("{} recovered voxels vs {} truth voxels", recovered.len(), truth.len())));
    }
    let peak = truth.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    if peak == 0.0 {
        return Err(Error::DegenerateTruth);
    }
    let mse = recovered.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / truth.len() as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { 10.0 * (peak * peak / mse).log10() })
}

/// Rasterizes `recovered` at the truth's resolution and scores it.
pub fn evaluate(recovered: &dyn EmissionSource, raw_axis: Vec3, truth: &GroundTruth, final_chi2: f64) -> Result<Metrics> {
    let norm = raw_axis.norm();
    if !(norm > 0.0) {
        return Err(Error::Config("recovered axis has zero length".into()));
    }
    Ok(Metrics {
        psnr: psnr(&recovered.rasterize(&truth.grid), &truth.volume)?,
        axis_alignment: (raw_axis / norm).dot(&truth.axis.unit()).clamp(-1.0, 1.0),
        final_chi2,
    })
}
