use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::{trace_ray, CameraSpec, Termination, Tolerances};
use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::Vec3;

pub const BUNDLE_FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"BHRB";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BundleKind {
    Geodesic,
    Euclidean,
}

/// Precomputed quadrature points and weights for every pixel of a camera.
///
/// Samples are stored flat; pixel `n` owns `offsets[n]..offsets[n + 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RayBundle {
    pub camera: CameraSpec,
    pub tolerances: Tolerances,
    pub kind: BundleKind,
    pub content_hash: [u8; 32],
    pub positions: Vec<Vec3>,
    pub weights: Vec<f64>,
    pub offsets: Vec<usize>,
    pub terminations: Vec<Termination>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CacheStatus {
    Hit,
    Miss,
    /// The cached file failed its checksum and was rebuilt.
    Rebuilt,
}

fn hash_inputs(camera: &CameraSpec, tol: &Tolerances, kind: BundleKind) -> [u8; 32] {
    let mut w = Writer::new();
    write_header_fields(&mut w, camera, tol, kind);
    Sha256::digest(&w.buf).into()
}

fn write_header_fields(w: &mut Writer, camera: &CameraSpec, tol: &Tolerances, kind: BundleKind) {
    w.bytes(MAGIC);
    w.u32(BUNDLE_FORMAT_VERSION);
    w.u8(match kind {
        BundleKind::Geodesic => 0,
        BundleKind::Euclidean => 1,
    });
    w.f64s(&camera.view_direction);
    w.f64s(&camera.up_direction);
    w.u64(camera.image_pixels as u64);
    w.f64(camera.field_half_width);
    w.f64(camera.start_radius);
    w.f64(tol.atol);
    w.f64(tol.rtol);
    w.f64(tol.horizon_guard);
    w.f64(tol.roi_radius);
    w.u64(tol.max_samples_per_ray as u64);
    w.f64(tol.sample_spacing);
    w.f64(tol.max_step);
    w.u64(tol.max_steps as u64);
}

impl RayBundle {
    pub fn pixel_count(&self) -> usize {
        self.terminations.len()
    }

    pub fn ray(&self, pixel: usize) -> (&[Vec3], &[f64]) {
        let range = self.offsets[pixel]..self.offsets[pixel + 1];
        (&self.positions[range.clone()], &self.weights[range])
    }

    pub fn sample_count(&self) -> usize {
        self.positions.len()
    }

    pub fn hash_hex(&self) -> String {
        hex::encode(self.content_hash)
    }

    /// Largest radius any sample reaches.
    pub fn max_radius(&self) -> f64 {
        self.positions.iter().map(|x| x.norm()).fold(0.0, f64::max)
    }

    pub fn captured_count(&self) -> usize {
        self.terminations.iter().filter(|t| **t == Termination::Captured).count()
    }

    fn from_rays(
        camera: CameraSpec,
        tolerances: Tolerances,
        kind: BundleKind,
        rays: Vec<(Vec<Vec3>, Vec<f64>, Termination)>,
    ) -> Self {
        let total: usize = rays.iter().map(|r| r.0.len()).sum();
        let mut positions = Vec::with_capacity(total);
        let mut weights = Vec::with_capacity(total);
        let mut offsets = Vec::with_capacity(rays.len() + 1);
        let mut terminations = Vec::with_capacity(rays.len());
        offsets.push(0);
        for (p, w, t) in rays {
            positions.extend(p);
            weights.extend(w);
            offsets.push(positions.len());
            terminations.push(t);
        }
        let content_hash = hash_inputs(&camera, &tolerances, kind);
        Self {
            camera,
            tolerances,
            kind,
            content_hash,
            positions,
            weights,
            offsets,
            terminations,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        write_header_fields(&mut w, &self.camera, &self.tolerances, self.kind);
        w.bytes(&self.content_hash);
        w.u64(self.pixel_count() as u64);
        for n in 0..self.pixel_count() {
            let (xs, ws) = self.ray(n);
            w.u32(xs.len() as u32);
            w.u8(self.terminations[n].as_byte());
            for x in xs {
                w.f64s(x.as_slice());
            }
            w.f64s(ws);
        }
        w.finish_with_checksum()
    }

    pub fn from_bytes(data: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::with_checksum(data).ok_or_else(|| Error::Checksum(path.to_path_buf()))?;
        r.expect_magic(MAGIC)?;
        let version = r.u32()?;
        if version != BUNDLE_FORMAT_VERSION {
            return Err(Error::BadHeader(format!("unsupported bundle version {version}")));
        }
        let kind = match r.u8()? {
            0 => BundleKind::Geodesic,
            1 => BundleKind::Euclidean,
            k => return Err(Error::BadHeader(format!("unknown bundle kind {k}"))),
        };
        let view = [r.f64()?, r.f64()?, r.f64()?];
        let up = [r.f64()?, r.f64()?, r.f64()?];
        let camera = CameraSpec {
            view_direction: view,
            up_direction: up,
            image_pixels: r.u64()? as usize,
            field_half_width: r.f64()?,
            start_radius: r.f64()?,
        };
        let tolerances = Tolerances {
            atol: r.f64()?,
            rtol: r.f64()?,
            horizon_guard: r.f64()?,
            roi_radius: r.f64()?,
            max_samples_per_ray: r.u64()? as usize,
            sample_spacing: r.f64()?,
            max_step: r.f64()?,
            max_steps: r.u64()? as usize,
        };
        let hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        if hash != hash_inputs(&camera, &tolerances, kind) {
            return Err(Error::BadHeader("content hash does not match header fields".into()));
        }
        let pixels = r.u64()? as usize;
        if pixels != camera.pixel_count() {
            return Err(Error::BadHeader(format!("{pixels} pixel records for a {}-pixel camera", camera.pixel_count())));
        }
        let mut rays = Vec::with_capacity(pixels);
        for _ in 0..pixels {
            let count = r.u32()? as usize;
            let flag = Termination::from_byte(r.u8()?).ok_or_else(|| Error::BadHeader("bad termination flag".into()))?;
            let coords = r.f64s(3 * count)?;
            let xs = coords.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect();
            let ws = r.f64s(count)?;
            rays.push((xs, ws, flag));
        }
        if r.remaining() != 0 {
            return Err(Error::BadHeader("trailing bytes after pixel records".into()));
        }
        Ok(Self::from_rays(camera, tolerances, kind, rays))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?, path)
    }
}

/// Traces every pixel of the camera. Pixels are traced in parallel and assembled in index order.
pub fn build_bundle(camera: &CameraSpec, tolerances: &Tolerances) -> Result<RayBundle> {
    camera.validate()?;
    let rays = (0..camera.pixel_count())
        .into_par_iter()
        .map(|n| {
            trace_ray(camera, n, tolerances)
                .map(|p| (p.samples, p.weights, p.termination))
                .map_err(|e| e.at_pixel(n))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RayBundle::from_rays(camera.clone(), *tolerances, BundleKind::Geodesic, rays))
}

pub fn cache_path(dir: &Path, camera: &CameraSpec, tolerances: &Tolerances) -> PathBuf {
    let hash = hash_inputs(camera, tolerances, BundleKind::Geodesic);
    dir.join(format!("bundle-{}.bhrb", &hex::encode(hash)[..16]))
}

/// Loads the bundle from `dir` when a valid cached copy exists, otherwise traces and stores it.
pub fn build_bundle_cached(camera: &CameraSpec, tolerances: &Tolerances, dir: &Path) -> Result<(RayBundle, CacheStatus)> {
    let path = cache_path(dir, camera, tolerances);
    let mut status = CacheStatus::Miss;
    if path.exists() {
        match RayBundle::read(&path) {
            Ok(bundle) if bundle.camera == *camera && bundle.tolerances == *tolerances => {
                return Ok((bundle, CacheStatus::Hit));
            }
            Ok(_) => log::warn!("cached bundle {} does not match request; retracing", path.display()),
            Err(e) => {
                log::warn!("cached bundle {} is unusable ({e}); retracing", path.display());
                status = CacheStatus::Rebuilt;
            }
        }
    }
    let bundle = build_bundle(camera, tolerances)?;
    bundle.write(&path)?;
    Ok((bundle, status))
}

/// Straight parallel rays through the same image plane, for checks against
/// classical projection. Every ray is flagged as escaped.
pub fn euclidean_bundle(camera: &CameraSpec, tolerances: &Tolerances) -> RayBundle {
    let v = camera.view();
    let radius = tolerances.roi_radius;
    let rays = (0..camera.pixel_count())
        .map(|n| {
            let (a, b) = camera.pixel_coords(n);
            let d2 = a * a + b * b;
            if d2 >= radius * radius {
                return (Vec::new(), Vec::new(), Termination::Escaped);
            }
            let half = (radius * radius - d2).sqrt();
            let length = 2.0 * half;
            let cells = ((length / tolerances.sample_spacing).ceil() as usize).clamp(1, tolerances.max_samples_per_ray);
            let ds = length / cells as f64;
            let base = camera.right() * a + camera.up() * b;
            let xs = (0..cells).map(|i| base + v * (-half + (i as f64 + 0.5) * ds)).collect();
            (xs, vec![ds; cells], Termination::Escaped)
        })
        .collect();
    RayBundle::from_rays(camera.clone(), *tolerances, BundleKind::Euclidean, rays)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn small() -> (CameraSpec, Tolerances) {
        let tol = Tolerances {
            max_samples_per_ray: 32,
            sample_spacing: 0.5,
            ..Tolerances::default()
        };
        (CameraSpec::looking_along_z(4, 12.0), tol)
    }

    #[test]
    fn single_pixel_bundle_is_captured() {
        let cam = CameraSpec::looking_along_z(1, 1e-3);
        let bundle = build_bundle(&cam, &Tolerances::default()).unwrap();
        assert_eq!(bundle.pixel_count(), 1);
        assert_eq!(bundle.terminations[0], Termination::Captured);
    }

    #[test]
    fn file_round_trip_and_determinism() {
        let (cam, tol) = small();
        let a = build_bundle(&cam, &tol).unwrap();
        let b = build_bundle(&cam, &tol).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.bhrb");
        a.write(&path).unwrap();
        assert_eq!(RayBundle::read(&path).unwrap(), a);
    }

    #[test]
    fn cache_hit_and_corruption() {
        let (cam, tol) = small();
        let dir = tempfile::tempdir().unwrap();
        let (first, s1) = build_bundle_cached(&cam, &tol, dir.path()).unwrap();
        assert_eq!(s1, CacheStatus::Miss);
        let (second, s2) = build_bundle_cached(&cam, &tol, dir.path()).unwrap();
        assert_eq!(s2, CacheStatus::Hit);
        assert_eq!(first, second);

        let path = cache_path(dir.path(), &cam, &tol);
        let mut bytes = fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(RayBundle::read(&path), Err(Error::Checksum(_))));
        let (third, s3) = build_bundle_cached(&cam, &tol, dir.path()).unwrap();
        assert_eq!(s3, CacheStatus::Rebuilt);
        assert_eq!(third, first);
    }

    #[test]
    fn euclidean_rays_are_straight() {
        let (cam, tol) = small();
        let bundle = euclidean_bundle(&cam, &tol);
        assert!(bundle.terminations.iter().all(|t| *t == Termination::Escaped));
        for n in 0..bundle.pixel_count() {
            let (xs, ws) = bundle.ray(n);
            if xs.len() < 3 {
                continue;
            }
            let dir = (xs[xs.len() - 1] - xs[0]).normalize();
            for x in xs {
                let off = (x - xs[0]) - dir * (x - xs[0]).dot(&dir);
                assert!(off.norm() < 1e-12);
            }
            let (a, b) = cam.pixel_coords(n);
            let chord = 2.0 * (tol.roi_radius.powi(2) - a * a - b * b).sqrt();
            assert_relative_eq!(ws.iter().sum::<f64>(), chord, max_relative = 1e-12);
        }
    }

    #[test]
    fn euclidean_gaussian_projection() {
        let cam = CameraSpec::looking_along_z(9, 3.0);
        let tol = Tolerances {
            sample_spacing: 0.1,
            max_samples_per_ray: 512,
            ..Tolerances::default()
        };
        let bundle = euclidean_bundle(&cam, &tol);
        let sigma: f64 = 0.8;
        for n in 0..bundle.pixel_count() {
            let (xs, ws) = bundle.ray(n);
            let p: f64 = xs
                .iter()
                .zip(ws)
                .map(|(x, w)| (-x.norm_squared() / (2.0 * sigma * sigma)).exp() * w)
                .sum();
            let (a, b) = cam.pixel_coords(n);
            let exact = (2.0 * std::f64::consts::PI).sqrt() * sigma * (-(a * a + b * b) / (2.0 * sigma * sigma)).exp();
            assert!((p - exact).abs() < 1e-3 * exact.max(1e-3), "pixel {n}: {p} vs {exact}");
        }
    }
}
