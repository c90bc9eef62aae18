//! Black-hole system parameters and geometrized units.
//!
//! Everything downstream of this module works in units where `G = M = c = 1`:
//! lengths are multiples of the gravitational radius `r_g = GM/c²` and times
//! are multiples of `r_g / c`. Conversions to SI live here and nowhere else.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Newtonian constant of gravitation, CODATA 2018 [m³ kg⁻¹ s⁻²].
pub const GRAVITATIONAL_CONSTANT: f64 = 6.674_30e-11;
/// Speed of light in vacuum [m s⁻¹].
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Solar mass [kg].
pub const SOLAR_MASS: f64 = 1.988_47e30;
/// One parsec [m].
pub const PARSEC: f64 = 3.085_677_581_491_367e16;

/// Radius of the Schwarzschild event horizon in `r_g`.
pub const HORIZON_RADIUS: f64 = 2.0;
/// Marginally stable (innermost stable circular) orbit for zero spin, in `r_g`.
pub const SCHWARZSCHILD_R_MS: f64 = 6.0;

/// Distance to the Galactic-center black hole, 8.178 kpc (catalog value).
pub const SGRA_DISTANCE_M: f64 = 8.178e3 * PARSEC;
/// Mass of the Galactic-center black hole in solar masses.
pub const SGRA_MASS_SOLAR: f64 = 4.0e6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlackHoleSystem {
    pub mass_solar: f64,
    pub spin: f64,
    /// Gravitational radius `GM/c²` [m].
    pub r_g: f64,
    /// Marginally stable orbit radius in units of `r_g`.
    pub r_ms: f64,
    /// Observer distance [m].
    pub distance: f64,
}

impl BlackHoleSystem {
    /// Derives the length and time scales for a non-spinning black hole.
    pub fn derive_scales(mass_solar: f64, spin: f64) -> Result<Self> {
        Self::with_distance(mass_solar, spin, SGRA_DISTANCE_M)
    }

    pub fn with_distance(mass_solar: f64, spin: f64, distance: f64) -> Result<Self> {
        if !(mass_solar > 0.0) || !mass_solar.is_finite() {
            return Err(Error::InvalidMass(mass_solar));
        }
        if spin != 0.0 {
            return Err(Error::NonzeroSpinUnsupported(spin));
        }
        if !(distance > 0.0) {
            return Err(Error::Config(format!("distance must be positive, got {distance}")));
        }
        let r_g = GRAVITATIONAL_CONSTANT * (mass_solar * SOLAR_MASS) / (SPEED_OF_LIGHT * SPEED_OF_LIGHT);
        Ok(Self {
            mass_solar,
            spin,
            r_g,
            r_ms: SCHWARZSCHILD_R_MS,
            distance,
        })
    }

    pub fn sgra() -> Self {
        Self::derive_scales(SGRA_MASS_SOLAR, 0.0).expect("valid constants")
    }

    /// Seconds per geometric time unit, `r_g / c`.
    pub fn time_unit_seconds(&self) -> f64 {
        self.r_g / SPEED_OF_LIGHT
    }

    pub fn seconds_to_geometric(&self, seconds: f64) -> f64 {
        seconds / self.time_unit_seconds()
    }

    pub fn geometric_to_seconds(&self, t: f64) -> f64 {
        t * self.time_unit_seconds()
    }

    pub fn length_to_meters(&self, length_rg: f64) -> f64 {
        length_rg * self.r_g
    }

    pub fn meters_to_length(&self, meters: f64) -> f64 {
        meters / self.r_g
    }

    /// Angle subtended by one `r_g` at the observer distance [rad].
    pub fn angular_scale(&self) -> f64 {
        self.r_g / self.distance
    }
}

/// Cubic voxel grid centered on the black hole, spanning `[-half_extent, half_extent]³`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub resolution: usize,
    pub half_extent: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            resolution: 64,
            half_extent: 10.0,
        }
    }
}

impl GridSpec {
    pub fn new(resolution: usize, half_extent: f64) -> Result<Self> {
        let grid = Self {
            resolution,
            half_extent,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution < 2 {
            return Err(Error::InvalidGrid(format!("resolution {} < 2", self.resolution)));
        }
        if !(self.half_extent > 0.0) || !self.half_extent.is_finite() {
            return Err(Error::InvalidGrid(format!("half_extent {} must be positive", self.half_extent)));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_extent / self.resolution as f64
    }

    pub fn voxel_count(&self) -> usize {
        self.resolution * self.resolution * self.resolution
    }

    /// Coordinate of voxel center `i` along any axis.
    pub fn center_coord(&self, i: usize) -> f64 {
        -self.half_extent + (i as f64 + 0.5) * self.spacing()
    }

    /// Row-major, z-fastest linear index.
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (ix * self.resolution + iy) * self.resolution + iz
    }

    pub fn unravel(&self, index: usize) -> [usize; 3] {
        let n = self.resolution;
        [index / (n * n), (index / n) % n, index % n]
    }

    pub fn voxel_center(&self, index: usize) -> [f64; 3] {
        let [ix, iy, iz] = self.unravel(index);
        [self.center_coord(ix), self.center_coord(iy), self.center_coord(iz)]
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing().powi(3)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn sgra_scales() {
        let sys = BlackHoleSystem::derive_scales(4e6, 0.0).unwrap();
        // G * 4e6 * M_sun / c^2 evaluated independently.
        assert_relative_eq!(sys.r_g, 5_906_678_764.133757, max_relative = 1e-12);
        assert_eq!(sys.r_ms, 6.0);
        assert_relative_eq!(sys.time_unit_seconds(), 19.702559575844155, max_relative = 1e-12);
    }

    #[test]
    fn solar_mass_time_unit() {
        let sys = BlackHoleSystem::derive_scales(1.0, 0.0).unwrap();
        assert_relative_eq!(sys.time_unit_seconds(), 4.925639893961039e-6, max_relative = 1e-12);
        let double = BlackHoleSystem::derive_scales(2.0, 0.0).unwrap();
        assert_relative_eq!(double.time_unit_seconds(), 2.0 * sys.time_unit_seconds(), max_relative = 1e-15);
    }

    #[test]
    fn rejects_spin_and_bad_mass() {
        assert!(matches!(
            BlackHoleSystem::derive_scales(4e6, 0.5),
            Err(Error::NonzeroSpinUnsupported(_))
        ));
        assert!(matches!(BlackHoleSystem::derive_scales(0.0, 0.0), Err(Error::InvalidMass(_))));
        assert!(matches!(BlackHoleSystem::derive_scales(-3.0, 0.0), Err(Error::InvalidMass(_))));
    }

    #[test]
    fn grid_centers() {
        let grid = GridSpec::new(4, 2.0).unwrap();
        assert_eq!(grid.spacing(), 1.0);
        assert_eq!(grid.center_coord(0), -1.5);
        assert_eq!(grid.center_coord(3), 1.5);
        assert_eq!(grid.unravel(grid.index(1, 2, 3)), [1, 2, 3]);
        assert!(GridSpec::new(1, 2.0).is_err());
        assert!(GridSpec::new(8, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn length_round_trip(mass in 1.0f64..1e10, len in 1e-3f64..1e4) {
            let sys = BlackHoleSystem::derive_scales(mass, 0.0).unwrap();
            let back = sys.meters_to_length(sys.length_to_meters(len));
            prop_assert!(((back - len) / len).abs() < 1e-12);
        }

        #[test]
        fn r_g_is_linear_in_mass(mass in 1.0f64..1e9, k in 1e-3f64..1e3) {
            let a = BlackHoleSystem::derive_scales(mass, 0.0).unwrap();
            let b = BlackHoleSystem::derive_scales(k * mass, 0.0).unwrap();
            prop_assert!(((b.r_g - k * a.r_g) / b.r_g).abs() < 1e-12);
        }
    }
}
