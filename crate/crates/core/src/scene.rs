//! Analytic scenes used as ground truth: signed distance primitives, a
//! sphere-traced Lambertian reference renderer, orbit camera sampling, and
//! voxelizations for cross-checking the volume renderer.
//!
//! Signed distances here use the usual negative-inside convention. World up
//! is `+z`.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::camera::{Camera, CameraError, Ray, Vec3};
use crate::image::Image;
use crate::recon::{DensityGrid, GridLayout, ReconError};

pub const TRACE_TOLERANCE: f64 = 1e-4;
pub const TRACE_MAX_STEPS: usize = 128;
pub const MAX_PRIMITIVES: usize = 4;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid scene field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
    #[error("orbit radius {radius} must exceed the scene bounding radius {bound}")]
    RadiusTooSmall { radius: f64, bound: f64 },
    #[error("need at least one camera")]
    NoCameras,
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Recon(#[from] ReconError),
}

fn invalid(field: &str, reason: impl Into<String>) -> SceneError {
    SceneError::Invalid {
        field: field.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Sphere { center: Vec3, radius: f64 },
    Box { center: Vec3, half: Vec3 },
    /// Ring in the plane `z = center.z`.
    Torus { center: Vec3, major: f64, minor: f64 },
}

impl Shape {
    pub fn name(&self) -> &'static str {
        match self {
            Shape::Sphere { .. } => "sphere",
            Shape::Box { .. } => "box",
            Shape::Torus { .. } => "torus",
        }
    }

    pub fn sdf(&self, p: &Vec3) -> f64 {
        match *self {
            Shape::Sphere { center, radius } => (p - center).norm() - radius,
            Shape::Box { center, half } => {
                let q = (p - center).abs() - half;
                let outside = q.map(|v| v.max(0.0)).norm();
                outside + q.x.max(q.y).max(q.z).min(0.0)
            }
            Shape::Torus { center, major, minor } => {
                let d = p - center;
                let ring = (d.x * d.x + d.y * d.y).sqrt() - major;
                (ring * ring + d.z * d.z).sqrt() - minor
            }
        }
    }

    fn bounding_radius(&self) -> f64 {
        match *self {
            Shape::Sphere { center, radius } => center.norm() + radius,
            Shape::Box { center, half } => center.norm() + half.norm(),
            Shape::Torus { center, major, minor } => center.norm() + major + minor,
        }
    }

    fn validate(&self, prefix: &str) -> Result<(), SceneError> {
        let bad = |key: &str, reason: &str| Err(invalid(&format!("{prefix}.{key}"), reason));
        match *self {
            Shape::Sphere { radius, .. } if !(radius > 0.0) => bad("radius", "must be positive"),
            Shape::Box { half, .. } if !half.iter().all(|h| *h > 0.0) => bad("half_extents", "must be positive"),
            Shape::Torus { major, .. } if !(major > 0.0) => bad("major_radius", "must be positive"),
            Shape::Torus { major, minor, .. } if !(minor > 0.0 && minor < major) => {
                bad("minor_radius", "must lie in (0, major_radius)")
            }
            _ => Ok(()),
        }?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Primitive {
    pub shape: Shape,
    pub albedo: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    /// One to four primitives; more than one forms a union.
    pub primitives: Vec<Primitive>,
    /// Unit vector pointing toward the light.
    pub light_dir: Vec3,
    /// Shading floor so faces turned from the light stay visible.
    pub ambient: f64,
}

impl SceneSpec {
    pub fn sphere(center: Vec3, radius: f64, albedo: [f64; 3]) -> Self {
        Self {
            primitives: vec![Primitive {
                shape: Shape::Sphere { center, radius },
                albedo,
            }],
            light_dir: Vec3::new(1.0, -1.0, 1.5).normalize(),
            ambient: 0.1,
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        if self.primitives.is_empty() || self.primitives.len() > MAX_PRIMITIVES {
            return Err(invalid(
                "scene.parts",
                format!("need 1..={MAX_PRIMITIVES} primitives, got {}", self.primitives.len()),
            ));
        }
        for (i, p) in self.primitives.iter().enumerate() {
            p.shape.validate(&format!("scene.part{i}"))?;
            if p.albedo.iter().any(|a| !(0.0..=1.0).contains(a)) {
                return Err(invalid(&format!("scene.part{i}.albedo"), "components must lie in [0, 1]"));
            }
        }
        let n = self.light_dir.norm();
        if !((n - 1.0).abs() < 1e-6) {
            return Err(invalid("scene.light", "must be a unit vector"));
        }
        if !(0.0..=1.0).contains(&self.ambient) {
            return Err(invalid("scene.ambient", "must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Radius of an origin-centred sphere enclosing every primitive.
    pub fn bounding_radius(&self) -> f64 {
        self.primitives
            .iter()
            .map(|p| p.shape.bounding_radius())
            .fold(0.0, f64::max)
    }

    /// The primitive nearest to `p` and its distance.
    fn nearest(&self, p: &Vec3) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, prim) in self.primitives.iter().enumerate() {
            let d = prim.shape.sdf(p);
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    pub fn normal(&self, p: &Vec3) -> Vec3 {
        let h = 1e-6;
        let g = Vec3::new(
            analytic_sdf(self, &(p + Vec3::x() * h)) - analytic_sdf(self, &(p - Vec3::x() * h)),
            analytic_sdf(self, &(p + Vec3::y() * h)) - analytic_sdf(self, &(p - Vec3::y() * h)),
            analytic_sdf(self, &(p + Vec3::z() * h)) - analytic_sdf(self, &(p - Vec3::z() * h)),
        );
        let n = g.norm();
        if n > 0.0 {
            g / n
        } else {
            Vec3::z()
        }
    }

    /// Lambertian color of the surface point nearest `p`.
    pub fn shade(&self, p: &Vec3) -> [f64; 3] {
        let (i, d) = self.nearest(p);
        let n = self.normal(p);
        let surface = p - n * d;
        let n = self.normal(&surface);
        let lambert = n.dot(&self.light_dir).max(0.0);
        let k = self.ambient + (1.0 - self.ambient) * lambert;
        self.primitives[i].albedo.map(|a| a * k)
    }
}

/// Signed distance, negative inside. Unions take the minimum, which bounds
/// the true distance from below outside overlapping parts.
pub fn analytic_sdf(scene: &SceneSpec, p: &Vec3) -> f64 {
    scene.nearest(p).1
}

/// Parameter `t` of the first surface hit, if any.
pub fn sphere_trace(scene: &SceneSpec, ray: &Ray) -> Option<f64> {
    let r = scene.bounding_radius() * 1.01;
    // clip to the bounding sphere
    let b = ray.origin.dot(&ray.dir);
    let c = ray.origin.norm_squared() - r * r;
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let t_far = -b + sq;
    if t_far < 0.0 {
        return None;
    }
    let mut t = (-b - sq).max(0.0);
    for _ in 0..TRACE_MAX_STEPS {
        let d = analytic_sdf(scene, &ray.at(t));
        if d < TRACE_TOLERANCE {
            return Some(t);
        }
        t += d;
        if t > t_far {
            return None;
        }
    }
    None
}

/// Sphere-traced Lambertian render on black.
pub fn ground_truth_render(scene: &SceneSpec, cam: &Camera) -> Result<Image, SceneError> {
    cam.validate()?;
    let data: Vec<[f64; 3]> = (0..cam.width * cam.height)
        .into_par_iter()
        .map(|p| {
            let ray = cam.ray(p % cam.width, p / cam.width);
            match sphere_trace(scene, &ray) {
                Some(t) => scene.shade(&ray.at(t)),
                None => [0.0; 3],
            }
        })
        .collect();
    Ok(Image::from_vec(cam.width, cam.height, 3, data.concat()).expect("camera resolution validated"))
}

/// Orbit placement and intrinsics shared by all cameras of a scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraRig {
    pub radius: f64,
    pub elevation: f64,
    pub fov_y: f64,
    pub width: usize,
    pub height: usize,
}

impl Default for CameraRig {
    fn default() -> Self {
        Self {
            radius: 2.5,
            elevation: 0.35,
            fov_y: 0.7,
            width: 32,
            height: 32,
        }
    }
}

fn check_radius(scene: &SceneSpec, rig: &CameraRig) -> Result<(), SceneError> {
    let bound = scene.bounding_radius();
    if !(rig.radius > bound) {
        return Err(SceneError::RadiusTooSmall {
            radius: rig.radius,
            bound,
        });
    }
    Ok(())
}

/// `m` orbit cameras aimed at the origin. Azimuth `k` is drawn from the
/// middle half of the `k`-th of `m` equal sectors, after a random rotation,
/// so no two cameras share a sector.
pub fn sample_sparse_cameras(
    scene: &SceneSpec,
    m: usize,
    rig: &CameraRig,
    seed: u64,
) -> Result<Vec<Camera>, SceneError> {
    if m == 0 {
        return Err(SceneError::NoCameras);
    }
    check_radius(scene, rig)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sector = TAU / m as f64;
    let offset = rng.random::<f64>() * sector;
    (0..m)
        .map(|k| {
            let u = rng.random_range(0.25..0.75);
            let az = offset + (k as f64 + u) * sector;
            Ok(Camera::orbit(
                Vec3::zeros(),
                rig.radius,
                az,
                rig.elevation,
                rig.fov_y,
                rig.width,
                rig.height,
            )?)
        })
        .collect()
}

/// `h` evaluation cameras, evenly spaced in azimuth at a fixed phase and
/// alternating slightly above and below the rig elevation.
pub fn heldout_cameras(scene: &SceneSpec, h: usize, rig: &CameraRig) -> Result<Vec<Camera>, SceneError> {
    check_radius(scene, rig)?;
    (0..h)
        .map(|j| {
            let az = (j as f64 + 0.5) * TAU / h as f64 + 0.3;
            let el = rig.elevation + if j % 2 == 0 { 0.15 } else { -0.15 };
            Ok(Camera::orbit(
                Vec3::zeros(),
                rig.radius,
                az,
                el,
                rig.fov_y,
                rig.width,
                rig.height,
            )?)
        })
        .collect()
}

/// Voxelized interior: density rises linearly from 0 at the surface to
/// `inside_density` one cell inside, colored by the shading of the nearest
/// surface point. The inward ramp offsets the one-cell blur of trilinear
/// interpolation, so silhouettes match the sphere tracer.
pub fn indicator_grid(scene: &SceneSpec, layout: GridLayout, inside_density: f64) -> DensityGrid {
    let h = layout.cell().min();
    DensityGrid::from_fn(layout, |p| {
        let d = inside_density * (-analytic_sdf(scene, p) / h).clamp(0.0, 1.0);
        (d, scene.shade(p))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::psnr;
    use crate::recon::render;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn unit_sphere_scene() -> SceneSpec {
        SceneSpec::sphere(Vec3::zeros(), 0.5, [1.0; 3])
    }

    #[test]
    fn sdf_examples() {
        let s = unit_sphere_scene();
        assert_eq!(analytic_sdf(&s, &Vec3::new(0.5, 0.0, 0.0)), 0.0);
        assert_eq!(analytic_sdf(&s, &Vec3::zeros()), -0.5);
        let b = Shape::Box {
            center: Vec3::zeros(),
            half: Vec3::new(1.0, 1.0, 1.0),
        };
        assert_eq!(b.sdf(&Vec3::new(2.0, 0.0, 0.0)), 1.0);
        let t = Shape::Torus {
            center: Vec3::zeros(),
            major: 0.5,
            minor: 0.1,
        };
        assert_abs_diff_eq!(t.sdf(&Vec3::new(0.5, 0.0, 0.0)), -0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(t.sdf(&Vec3::zeros()), 0.4, epsilon = 1e-15);
    }

    #[test]
    fn validation_names_fields() {
        let mut s = unit_sphere_scene();
        s.primitives[0].shape = Shape::Sphere {
            center: Vec3::zeros(),
            radius: -1.0,
        };
        let msg = s.validate().unwrap_err().to_string();
        assert!(msg.contains("scene.part0"), "{msg}");
        let mut s = unit_sphere_scene();
        s.primitives = vec![s.primitives[0]; 5];
        assert!(s.validate().is_err());
    }

    #[test]
    fn looking_away_is_black() {
        let s = unit_sphere_scene();
        let cam = Camera::new(
            Vec3::new(3.0, 0.0, 0.0),
            Vec3::new(6.0, 0.0, 0.0),
            Vec3::z(),
            0.6,
            16,
            16,
        )
        .unwrap();
        let img = ground_truth_render(&s, &cam).unwrap();
        assert!(img.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn headlight_sphere_brightest_at_center() {
        let mut s = unit_sphere_scene();
        let cam = Camera::orbit(Vec3::zeros(), 3.0, 0.4, 0.2, 0.5, 33, 33).unwrap();
        s.light_dir = (cam.position - cam.target).normalize();
        let img = ground_truth_render(&s, &cam).unwrap();
        let center = img.get(16, 16, 0);
        assert!(center <= 1.0 && center > 0.99);
        assert!(img.data().iter().all(|v| *v <= center + 1e-12));
    }

    #[test]
    fn silhouette_area_matches_projected_disk() {
        let s = unit_sphere_scene();
        let (dist, fov, res) = (3.0, 0.5f64, 200);
        let cam = Camera::orbit(Vec3::zeros(), dist, 0.0, 0.0, fov, res, res).unwrap();
        let img = ground_truth_render(&s, &cam).unwrap();
        let hits = (0..res * res).filter(|p| img.pixel(p % res, p / res)[0] > 0.0).count() as f64;
        // tangent cone half-angle asin(r/d), projected on the image plane
        let half = (0.5f64 / dist).asin();
        let disk_r = half.tan() * cam.focal_px();
        let expect = std::f64::consts::PI * disk_r * disk_r;
        assert!((hits - expect).abs() / expect < 0.02, "{hits} vs {expect}");
    }

    #[test]
    fn sparse_cameras_are_spread_and_deterministic() {
        let s = unit_sphere_scene();
        let rig = CameraRig::default();
        let one = sample_sparse_cameras(&s, 1, &rig, 4).unwrap();
        assert_eq!(one.len(), 1);
        assert_abs_diff_eq!(one[0].orbit_params().0, rig.radius, epsilon = 1e-12);
        for seed in 0..20 {
            let cams = sample_sparse_cameras(&s, 6, &rig, seed).unwrap();
            let mut az: Vec<f64> = cams.iter().map(|c| c.orbit_params().1.rem_euclid(TAU)).collect();
            az.sort_by(f64::total_cmp);
            for i in 0..6 {
                let gap = (az[(i + 1) % 6] - az[i]).rem_euclid(TAU);
                assert!(gap > 0.1);
            }
            assert_eq!(cams, sample_sparse_cameras(&s, 6, &rig, seed).unwrap());
        }
        let tight = CameraRig { radius: 0.4, ..rig };
        assert!(matches!(
            sample_sparse_cameras(&s, 3, &tight, 0),
            Err(SceneError::RadiusTooSmall { .. })
        ));
    }

    #[test]
    fn volume_render_agrees_with_sphere_tracer() {
        let s = unit_sphere_scene();
        let layout = GridLayout::cube(64, 0.75).unwrap();
        let grid = indicator_grid(&s, layout, 100.0);
        let rig = CameraRig {
            width: 48,
            height: 48,
            ..CameraRig::default()
        };
        for cam in heldout_cameras(&s, 3, &rig).unwrap() {
            let gt = ground_truth_render(&s, &cam).unwrap();
            let vr = render(&grid, &cam, 128).unwrap();
            let p = psnr(&gt, &vr, 1.0).unwrap();
            assert!(p > 25.0, "{p}");
        }
    }

    proptest! {
        #[test]
        fn single_primitive_sdf_has_unit_gradient(
            x in -1.5f64..1.5, y in -1.5f64..1.5, z in -1.5f64..1.5, which in 0usize..3,
        ) {
            let shape = match which {
                0 => Shape::Sphere { center: Vec3::new(0.1, 0.0, -0.1), radius: 0.5 },
                1 => Shape::Box { center: Vec3::zeros(), half: Vec3::new(0.4, 0.3, 0.5) },
                _ => Shape::Torus { center: Vec3::zeros(), major: 0.6, minor: 0.2 },
            };
            let p = Vec3::new(x, y, z);
            let h = 1e-6;
            let g = Vec3::new(
                shape.sdf(&(p + Vec3::x() * h)) - shape.sdf(&(p - Vec3::x() * h)),
                shape.sdf(&(p + Vec3::y() * h)) - shape.sdf(&(p - Vec3::y() * h)),
                shape.sdf(&(p + Vec3::z() * h)) - shape.sdf(&(p - Vec3::z() * h)),
            ) / (2.0 * h);
            // skip points within a step of a medial axis, where the gradient jumps
            let kink = {
                let mut worst: f64 = 0.0;
                for d in [Vec3::x(), Vec3::y(), Vec3::z()] {
                    let a = shape.sdf(&(p + d * 1e-3)) - shape.sdf(&p);
                    let b = shape.sdf(&p) - shape.sdf(&(p - d * 1e-3));
                    worst = worst.max((a - b).abs());
                }
                worst > 1e-5
            };
            prop_assume!(!kink);
            prop_assert!((g.norm() - 1.0).abs() < 1e-4, "{}", g.norm());
        }
    }
}
