//! Symmetric Chamfer distance between sampled surfaces.

use std::f64::consts::PI;

use crate::camera::Vec3;

use super::{Mesh, ReconError};

/// Anything that can produce `n` points on its surface, deterministically.
pub trait PointSampler {
    fn sample_points(&self, n: usize) -> Vec<Vec3>;
}

impl PointSampler for Mesh {
    fn sample_points(&self, n: usize) -> Vec<Vec3> {
        self.sample_surface(n)
    }
}

/// A fixed point cloud; ignores `n`.
impl PointSampler for Vec<Vec3> {
    fn sample_points(&self, _n: usize) -> Vec<Vec3> {
        self.to_vec()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphereSurface {
    pub center: Vec3,
    pub radius: f64,
}

impl PointSampler for SphereSurface {
    /// Fibonacci lattice.
    fn sample_points(&self, n: usize) -> Vec<Vec3> {
        let golden = PI * (3.0 - 5f64.sqrt());
        (0..n)
            .map(|i| {
                let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
                let r = (1.0 - z * z).sqrt();
                let phi = golden * i as f64;
                self.center + Vec3::new(r * phi.cos(), r * phi.sin(), z) * self.radius
            })
            .collect()
    }
}

/// Mean over `from` of the distance to the nearest point of `to`.
fn mean_nearest(from: &[Vec3], to_sorted: &[Vec3]) -> f64 {
    let total: f64 = from
        .iter()
        .map(|p| {
            // `to_sorted` is ordered by x; sweep outward from p.x and stop
            // once the x gap alone exceeds the best distance.
            let start = to_sorted.partition_point(|q| q.x < p.x);
            let mut best = f64::INFINITY;
            let mut hi = start;
            while hi < to_sorted.len() {
                let dx = to_sorted[hi].x - p.x;
                if dx * dx >= best {
                    break;
                }
                best = best.min((to_sorted[hi] - p).norm_squared());
                hi += 1;
            }
            let mut lo = start;
            while lo > 0 {
                lo -= 1;
                let dx = p.x - to_sorted[lo].x;
                if dx * dx >= best {
                    break;
                }
                best = best.min((to_sorted[lo] - p).norm_squared());
            }
            best.sqrt()
        })
        .sum();
    total / from.len() as f64
}

fn sorted_by_x(mut pts: Vec<Vec3>) -> Vec<Vec3> {
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)).then(a.z.total_cmp(&b.z)));
    pts
}

/// `(mean_a d(a, B) + mean_b d(b, A)) / 2` with `n` samples drawn from each
/// side.
pub fn chamfer_distance(
    a: &dyn PointSampler,
    b: &dyn PointSampler,
    n: usize,
) -> Result<f64, ReconError> {
    let pa = a.sample_points(n);
    let pb = b.sample_points(n);
    if pa.is_empty() || pb.is_empty() {
        return Err(ReconError::EmptyPointSet);
    }
    let sa = sorted_by_x(pa.clone());
    let sb = sorted_by_x(pb.clone());
    let ab = mean_nearest(&sa, &sb);
    let ba = mean_nearest(&sb, &sa);
    Ok(0.5 * (ab + ba))
}
