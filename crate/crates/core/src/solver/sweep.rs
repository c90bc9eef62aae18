use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Metrics;
use crate::dynamics::{sample_perturbation, VelocityProfile};
use crate::error::{Error, Result};

/// Grid of velocity-perturbation settings for the model-mismatch study.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub magnitudes: Vec<f64>,
    /// Correlation lengths in r_g.
    pub lengths: Vec<f64>,
    pub seeds_per_cell: usize,
    /// Profile seeds are `base_seed, base_seed + 1, …` in every cell.
    pub base_seed: u64,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            magnitudes: vec![0.0, 0.1, 0.3],
            lengths: vec![1.0, 4.0],
            seeds_per_cell: 5,
            base_seed: 0,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.magnitudes.is_empty() || self.lengths.is_empty() || self.seeds_per_cell == 0 {
            return Err(Error::Config("sweep needs at least one magnitude, one length and one seed".into()));
        }
        if self.magnitudes.iter().any(|m| !(*m >= 0.0)) || self.lengths.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::Config("sweep magnitudes must be ≥ 0 and lengths > 0".into()));
        }
        Ok(())
    }
}

/// One fit of the sweep; `error` is set when it failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub m: f64,
    pub length: f64,
    pub seed: u64,
    pub psnr: f64,
    pub axis_alignment: f64,
    pub error: Option<String>,
}

/// Mean over the successful fits of one (m, ℓ) cell.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepCell {
    pub m: f64,
    pub length: f64,
    pub mean_psnr: f64,
    pub mean_alignment: f64,
    pub succeeded: usize,
    pub failed: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    /// Cells in sweep order (lengths outer, magnitudes inner).
    pub fn cells(&self) -> Vec<SweepCell> {
        let mut cells: Vec<SweepCell> = Vec::new();
        for row in &self.rows {
            let idx = match cells.iter().position(|c| c.m == row.m && c.length == row.length) {
                Some(i) => i,
                None => {
                    cells.push(SweepCell {
                        m: row.m,
                        length: row.length,
                        mean_psnr: 0.0,
                        mean_alignment: 0.0,
                        succeeded: 0,
                        failed: 0,
                    });
                    cells.len() - 1
                }
            };
            let c = &mut cells[idx];
            if row.error.is_some() {
                c.failed += 1;
            } else {
                c.succeeded += 1;
                c.mean_psnr += row.psnr;
                c.mean_alignment += row.axis_alignment;
            }
        }
        for c in &mut cells {
            let n = c.succeeded as f64;
            c.mean_psnr = if c.succeeded > 0 { c.mean_psnr / n } else { f64::NAN };
            c.mean_alignment = if c.succeeded > 0 { c.mean_alignment / n } else { f64::NAN };
        }
        cells
    }

    /// `m, l, seed, psnr, axis_alignment, error` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["m", "l", "seed", "psnr", "axis_alignment", "error"])?;
        for r in &self.rows {
            w.write_record([
                r.m.to_string(),
                r.length.to_string(),
                r.seed.to_string(),
                r.psnr.to_string(),
                r.axis_alignment.to_string(),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Per-cell means as CSV.
    pub fn write_summary(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "m,l,mean_psnr,mean_axis_alignment,succeeded,failed")?;
        for c in self.cells() {
            writeln!(out, "{},{},{},{},{},{}", c.m, c.length, c.mean_psnr, c.mean_alignment, c.succeeded, c.failed)?;
        }
        Ok(())
    }
}

/// Samples a perturbed profile per (m, ℓ, seed) and scores `fit` on data generated with it.
///
/// A failed fit is recorded in its row and the sweep moves on.
pub fn mismatch_sweep(
    spec: &SweepSpec,
    grid_half_extent: f64,
    mut fit: impl FnMut(&VelocityProfile) -> Result<Metrics>,
) -> Result<SweepTable> {
    spec.validate()?;
    let mut table = SweepTable::default();
    for &length in &spec.lengths {
        for &m in &spec.magnitudes {
            for s in 0..spec.seeds_per_cell as u64 {
                let seed = spec.base_seed + s;
                let result = sample_perturbation(m, length, seed, grid_half_extent).and_then(|p| fit(&p));
                let row = match result {
                    Ok(metrics) => SweepRow {
                        m,
                        length,
                        seed,
                        psnr: metrics.psnr,
                        axis_alignment: metrics.axis_alignment,
                        error: None,
                    },
                    Err(e) => {
                        log::warn!("sweep cell m = {m}, ℓ = {length}, seed {seed} failed: {e}");
                        SweepRow {
                            m,
                            length,
                            seed,
                            psnr: f64::NAN,
                            axis_alignment: f64::NAN,
                            error: Some(e.to_string()),
                        }
                    }
                };
                table.rows.push(row);
            }
        }
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn failures_are_recorded_and_cells_averaged() {
        let spec = SweepSpec {
            magnitudes: vec![0.0, 0.2],
            lengths: vec![2.0],
            seeds_per_cell: 3,
            base_seed: 7,
        };
        let table = mismatch_sweep(&spec, 10.0, |p| {
            if let VelocityProfile::Perturbed(q) = p {
                if q.magnitude > 0.0 && q.seed == 8 {
                    return Err(Error::Config("boom".into()));
                }
            }
            Ok(Metrics { psnr: 20.0, axis_alignment: 1.0, final_chi2: 0.0 })
        })
        .unwrap();
        assert_eq!(table.rows.len(), 6);
        let cells = table.cells();
        assert_eq!(cells.len(), 2);
        assert_eq!((cells[0].succeeded, cells[0].failed), (3, 0));
        assert_eq!((cells[1].succeeded, cells[1].failed), (2, 1));
        assert_eq!(cells[1].mean_psnr, 20.0);
        let dir = tempfile::tempdir().unwrap();
        table.write_csv(&dir.path().join("s.csv")).unwrap();
        let text = std::fs::read_to_string(dir.path().join("s.csv")).unwrap();
        assert!(text.starts_with("m,l,seed,psnr,axis_alignment"));
        assert!(text.contains("boom"));
        assert!(mismatch_sweep(&SweepSpec { magnitudes: vec![], ..spec }, 10.0, |_| unreachable!()).is_err());
    }
}
