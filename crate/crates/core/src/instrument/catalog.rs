use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EARTH_RADIUS_M: f64 = 6_378_137.0;
/// Default correlator bandwidth and per-frame integration time.
pub const DEFAULT_BANDWIDTH_HZ: f64 = 2.0e9;
pub const DEFAULT_INTEGRATION_S: f64 = 10.0;

const EHT2017: &str = include_str!("../../data/eht2017.csv");
const NGEHT: &str = include_str!("../../data/ngeht.csv");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Station {
    pub name: String,
    pub x_m: f64,
    pub y_m: f64,
    pub z_m: f64,
    pub sefd_jy: f64,
}

impl Station {
    pub fn position(&self) -> [f64; 3] {
        [self.x_m, self.y_m, self.z_m]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayCatalog {
    pub stations: Vec<Station>,
    pub bandwidth_hz: f64,
    pub integration_s: f64,
}

impl ArrayCatalog {
    pub fn new(stations: Vec<Station>, bandwidth_hz: f64, integration_s: f64) -> Result<Self> {
        let cat = Self {
            stations,
            bandwidth_hz,
            integration_s,
        };
        cat.validate()?;
        Ok(cat)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stations.len() < 2 {
            return Err(Error::InvalidCatalog(format!("{} stations; need at least 2", self.stations.len())));
        }
        for s in &self.stations {
            if !(s.sefd_jy > 0.0) {
                return Err(Error::InvalidCatalog(format!("{}: SEFD must be positive", s.name)));
            }
            let r = s.position().iter().map(|c| c * c).sum::<f64>().sqrt();
            if !(r <= 1.05 * EARTH_RADIUS_M) {
                return Err(Error::InvalidCatalog(format!("{}: {r:.0} m from the geocenter", s.name)));
            }
        }
        if !(self.bandwidth_hz > 0.0) || !(self.integration_s > 0.0) {
            return Err(Error::InvalidCatalog("bandwidth and integration time must be positive".into()));
        }
        Ok(())
    }

    /// Parses CSV with header `name,x_m,y_m,z_m,sefd_jy`.
    pub fn from_csv_str(text: &str, bandwidth_hz: f64, integration_s: f64) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let headers = reader.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["name", "x_m", "y_m", "z_m", "sefd_jy"] {
            return Err(Error::InvalidCatalog(format!("unexpected header {headers:?}")));
        }
        let stations = reader.deserialize().collect::<std::result::Result<Vec<Station>, _>>()?;
        Self::new(stations, bandwidth_hz, integration_s)
    }

    pub fn from_csv(path: &Path, bandwidth_hz: f64, integration_s: f64) -> Result<Self> {
        Self::from_csv_str(&std::fs::read_to_string(path)?, bandwidth_hz, integration_s)
    }

    /// Bundled catalogs: `eht2017` or the denser `ngeht` superset.
    pub fn builtin(name: &str) -> Result<Self> {
        let text = match name {
            "eht2017" => EHT2017,
            "ngeht" => NGEHT,
            other => return Err(Error::InvalidCatalog(format!("no built-in catalog named {other:?}"))),
        };
        Self::from_csv_str(text, DEFAULT_BANDWIDTH_HZ, DEFAULT_INTEGRATION_S)
    }

    /// Radiometer-equation thermal noise for one baseline.
    pub fn baseline_sigma(&self, i: usize, j: usize) -> f64 {
        (self.stations[i].sefd_jy * self.stations[j].sefd_jy / (2.0 * self.bandwidth_hz * self.integration_s)).sqrt()
    }
}
