//! Dense node grids with trilinear interpolation.
//!
//! A grid of resolution `R` has `R` nodes per axis placed on the closed
//! bounds, so node `(i, j, k)` sits at `min + (i, j, k) * cell` with
//! `cell = (max - min) / (R - 1)`.

use crate::camera::{Ray, Vec3};

use super::ReconError;

#[derive(Debug, Clone, PartialEq)]
pub struct GridLayout {
    resolution: usize,
    min: Vec3,
    max: Vec3,
    cell: Vec3,
}

/// The eight nodes around a point and their trilinear weights.
#[derive(Debug, Clone, Copy)]
pub struct Stencil {
    pub nodes: [usize; 8],
    pub weights: [f64; 8],
}

impl GridLayout {
    pub fn new(resolution: usize, min: Vec3, max: Vec3) -> Result<Self, ReconError> {
        if resolution < 2 {
            return Err(ReconError::BadResolution(resolution));
        }
        let extent = max - min;
        if !(extent.x > 0.0 && extent.y > 0.0 && extent.z > 0.0) {
            return Err(ReconError::BadBounds);
        }
        Ok(Self {
            resolution,
            min,
            max,
            cell: extent / (resolution - 1) as f64,
        })
    }

    /// Cube `[-half, half]^3`.
    pub fn cube(resolution: usize, half: f64) -> Result<Self, ReconError> {
        Self::new(resolution, Vec3::repeat(-half), Vec3::repeat(half))
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn min(&self) -> Vec3 {
        self.min
    }

    pub fn max(&self) -> Vec3 {
        self.max
    }

    pub fn cell(&self) -> Vec3 {
        self.cell
    }

    pub fn cell_diagonal(&self) -> f64 {
        self.cell.norm()
    }

    pub fn node_count(&self) -> usize {
        self.resolution.pow(3)
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.resolution + j) * self.resolution + i
    }

    #[inline]
    pub fn coords(&self, index: usize) -> (usize, usize, usize) {
        let r = self.resolution;
        (index % r, (index / r) % r, index / (r * r))
    }

    pub fn node_position(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.min + Vec3::new(
            i as f64 * self.cell.x,
            j as f64 * self.cell.y,
            k as f64 * self.cell.z,
        )
    }

    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    /// Trilinear stencil; points outside the bounds are clamped onto them.
    #[inline]
    pub fn stencil(&self, p: &Vec3) -> Stencil {
        let last = (self.resolution - 1) as f64;
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let g = ((p[a] - self.min[a]) / self.cell[a]).clamp(0.0, last);
            let b = (g.floor() as usize).min(self.resolution - 2);
            base[a] = b;
            frac[a] = g - b as f64;
        }
        let r = self.resolution;
        let i0 = self.index(base[0], base[1], base[2]);
        let (dx, dy, dz) = (1, r, r * r);
        let [fx, fy, fz] = frac;
        let (gx, gy, gz) = (1.0 - fx, 1.0 - fy, 1.0 - fz);
        Stencil {
            nodes: [
                i0,
                i0 + dx,
                i0 + dy,
                i0 + dx + dy,
                i0 + dz,
                i0 + dx + dz,
                i0 + dy + dz,
                i0 + dx + dy + dz,
            ],
            weights: [
                gx * gy * gz,
                fx * gy * gz,
                gx * fy * gz,
                fx * fy * gz,
                gx * gy * fz,
                fx * gy * fz,
                gx * fy * fz,
                fx * fy * fz,
            ],
        }
    }

    /// Entry and exit distances of `ray` through the bounds, if it hits them
    /// in front of the origin.
    pub fn intersect(&self, ray: &Ray) -> Option<(f64, f64)> {
        let mut t0 = 0.0f64;
        let mut t1 = f64::INFINITY;
        for a in 0..3 {
            let d = ray.dir[a];
            let o = ray.origin[a];
            if d.abs() < 1e-300 {
                if o < self.min[a] || o > self.max[a] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / d;
            let mut ta = (self.min[a] - o) * inv;
            let mut tb = (self.max[a] - o) * inv;
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t0 >= t1 {
                return None;
            }
        }
        Some((t0, t1))
    }
}

#[inline]
pub fn interpolate(values: &[f64], st: &Stencil) -> f64 {
    let mut acc = 0.0;
    for n in 0..8 {
        acc += values[st.nodes[n]] * st.weights[n];
    }
    acc
}

#[inline]
pub fn interpolate_color(colors: &[[f64; 3]], st: &Stencil) -> [f64; 3] {
    let mut acc = [0.0; 3];
    for n in 0..8 {
        let c = &colors[st.nodes[n]];
        let w = st.weights[n];
        acc[0] += c[0] * w;
        acc[1] += c[1] * w;
        acc[2] += c[2] * w;
    }
    acc
}

fn check_len(layout: &GridLayout, a: usize, b: usize) -> Result<(), ReconError> {
    let n = layout.node_count();
    if a != n || b != n {
        return Err(ReconError::GridLength {
            expected: n,
            actual: a.min(b),
        });
    }
    Ok(())
}

/// Volumetric density plus per-node RGB, the stage-1 field.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub layout: GridLayout,
    pub density: Vec<f64>,
    pub color: Vec<[f64; 3]>,
}

impl DensityGrid {
    pub fn constant(layout: GridLayout, density: f64, color: [f64; 3]) -> Self {
        let n = layout.node_count();
        Self {
            layout,
            density: vec![density.max(0.0); n],
            color: vec![color; n],
        }
    }

    pub fn from_parts(
        layout: GridLayout,
        density: Vec<f64>,
        color: Vec<[f64; 3]>,
    ) -> Result<Self, ReconError> {
        check_len(&layout, density.len(), color.len())?;
        let mut g = Self {
            layout,
            density,
            color,
        };
        g.project();
        Ok(g)
    }

    /// Samples `f(position) -> (density, rgb)` at every node.
    pub fn from_fn<F: Fn(&Vec3) -> (f64, [f64; 3])>(layout: GridLayout, f: F) -> Self {
        let r = layout.resolution();
        let mut density = Vec::with_capacity(layout.node_count());
        let mut color = Vec::with_capacity(layout.node_count());
        for k in 0..r {
            for j in 0..r {
                for i in 0..r {
                    let (d, c) = f(&layout.node_position(i, j, k));
                    density.push(d.max(0.0));
                    color.push(c.map(|v| v.clamp(0.0, 1.0)));
                }
            }
        }
        Self {
            layout,
            density,
            color,
        }
    }

    /// Enforces `density >= 0` and colors in `[0, 1]`.
    pub fn project(&mut self) {
        for d in &mut self.density {
            if !(*d > 0.0) {
                *d = 0.0;
            }
        }
        for c in &mut self.color {
            for v in c.iter_mut() {
                *v = v.clamp(0.0, 1.0);
            }
        }
    }

    pub fn max_density(&self) -> f64 {
        self.density.iter().copied().fold(0.0, f64::max)
    }

    /// Trilinear resample onto a new layout.
    pub fn resample(&self, layout: GridLayout) -> Self {
        Self::from_fn(layout, |p| {
            let st = self.layout.stencil(p);
            (
                interpolate(&self.density, &st),
                interpolate_color(&self.color, &st),
            )
        })
    }
}

/// Signed scalar field with per-node RGB, the stage-2 field. Positive values
/// are inside the surface.
#[derive(Debug, Clone, PartialEq)]
pub struct SdfGrid {
    pub layout: GridLayout,
    pub values: Vec<f64>,
    pub color: Vec<[f64; 3]>,
}

impl SdfGrid {
    pub fn from_parts(
        layout: GridLayout,
        values: Vec<f64>,
        color: Vec<[f64; 3]>,
    ) -> Result<Self, ReconError> {
        check_len(&layout, values.len(), color.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ReconError::NonFinite("sdf value".into()));
        }
        Ok(Self {
            layout,
            values,
            color,
        })
    }

    pub fn from_fn<F: Fn(&Vec3) -> (f64, [f64; 3])>(layout: GridLayout, f: F) -> Self {
        let r = layout.resolution();
        let mut values = Vec::with_capacity(layout.node_count());
        let mut color = Vec::with_capacity(layout.node_count());
        for k in 0..r {
            for j in 0..r {
                for i in 0..r {
                    let (v, c) = f(&layout.node_position(i, j, k));
                    values.push(v);
                    color.push(c.map(|x| x.clamp(0.0, 1.0)));
                }
            }
        }
        Self {
            layout,
            values,
            color,
        }
    }

    pub fn sample(&self, p: &Vec3) -> f64 {
        interpolate(&self.values, &self.layout.stencil(p))
    }

    pub fn has_sign_change(&self, iso: f64) -> bool {
        let above = self.values.iter().any(|&v| v > iso);
        let below = self.values.iter().any(|&v| v <= iso);
        above && below
    }

    pub fn clamp_colors(&mut self) {
        for c in &mut self.color {
            for v in c.iter_mut() {
                *v = v.clamp(0.0, 1.0);
            }
        }
    }
}
