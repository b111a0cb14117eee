//! Emission-absorption volume rendering over node grids, with a recorded
//! tape for reverse-mode gradients.
//!
//! Each ray is clipped to the grid bounds and split into `samples_per_ray`
//! equal segments; the sample sits at the segment midpoint and `delta` is the
//! segment length, so the last segment ends exactly at the box exit. Pixel
//! color is `sum_i T_i (1 - exp(-sigma_i delta)) c_i` with
//! `T_i = exp(-sum_{j<i} sigma_j delta)` over a black background.

use rayon::prelude::*;

use crate::camera::{Camera, Ray};
use crate::image::Image;

use super::grid::{interpolate, interpolate_color, GridLayout, SdfGrid, Stencil};
use super::{DensityGrid, ReconError};

/// Rays stop marching once transmittance drops below this.
pub const TRANSMITTANCE_CUTOFF: f64 = 1e-9;

/// A node field that can be volume rendered: an interpolated scalar mapped to
/// density through `activate`, plus interpolated per-node color.
pub trait VolumeField: Sync {
    fn layout(&self) -> &GridLayout;
    fn scalars(&self) -> &[f64];
    fn colors(&self) -> &[[f64; 3]];
    /// Density and its derivative with respect to the interpolated scalar.
    fn activate(&self, s: f64) -> (f64, f64);
}

impl VolumeField for DensityGrid {
    fn layout(&self) -> &GridLayout {
        &self.layout
    }

    fn scalars(&self) -> &[f64] {
        &self.density
    }

    fn colors(&self) -> &[[f64; 3]] {
        &self.color
    }

    #[inline]
    fn activate(&self, s: f64) -> (f64, f64) {
        // Node densities are projected non-negative, so this is the identity
        // on every reachable state; the unit slope lets zero nodes recover.
        (s.max(0.0), 1.0)
    }
}

/// Views an SDF grid as density `scale * sigmoid(sharpness * sdf)`, which is
/// dense where the (positive-inside) SDF is positive.
#[derive(Debug, Clone, Copy)]
pub struct SdfDensity<'a> {
    pub sdf: &'a SdfGrid,
    pub scale: f64,
    pub sharpness: f64,
}

impl VolumeField for SdfDensity<'_> {
    fn layout(&self) -> &GridLayout {
        &self.sdf.layout
    }

    fn scalars(&self) -> &[f64] {
        &self.sdf.values
    }

    fn colors(&self) -> &[[f64; 3]] {
        &self.sdf.color
    }

    #[inline]
    fn activate(&self, s: f64) -> (f64, f64) {
        let sig = 1.0 / (1.0 + (-self.sharpness * s).exp());
        (
            self.scale * sig,
            self.scale * self.sharpness * sig * (1.0 - sig),
        )
    }
}

/// Gradient buffers matching a field's node layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrad {
    pub scalar: Vec<f64>,
    pub color: Vec<[f64; 3]>,
}

impl FieldGrad {
    pub fn zeros(nodes: usize) -> Self {
        Self {
            scalar: vec![0.0; nodes],
            color: vec![[0.0; 3]; nodes],
        }
    }

    pub fn scale(&mut self, k: f64) {
        self.scalar.iter_mut().for_each(|g| *g *= k);
        for c in &mut self.color {
            c.iter_mut().for_each(|g| *g *= k);
        }
    }

    pub fn add_scaled(&mut self, other: &FieldGrad, k: f64) {
        for (a, b) in self.scalar.iter_mut().zip(&other.scalar) {
            *a += k * b;
        }
        for (a, b) in self.color.iter_mut().zip(&other.color) {
            for ch in 0..3 {
                a[ch] += k * b[ch];
            }
        }
    }
}

#[derive(Debug, Clone)]
struct SampleRecord {
    stencil: Stencil,
    sigma: f64,
    dsigma: f64,
    color: [f64; 3],
}

#[derive(Debug, Clone, Default)]
struct RayTape {
    delta: f64,
    color: [f64; 3],
    samples: Vec<SampleRecord>,
}

/// Everything needed to push pixel gradients back onto the field's nodes.
#[derive(Debug, Clone)]
pub struct RenderTape {
    width: usize,
    height: usize,
    rays: Vec<RayTape>,
}

fn march(field: &dyn VolumeField, ray: &Ray, samples_per_ray: usize, keep: bool) -> (RayTape, f64) {
    let layout = field.layout();
    let Some((t0, t1)) = layout.intersect(ray) else {
        return (RayTape::default(), 0.0);
    };
    let delta = (t1 - t0) / samples_per_ray as f64;
    let scalars = field.scalars();
    let colors = field.colors();
    let mut tape = RayTape {
        delta,
        color: [0.0; 3],
        samples: if keep {
            Vec::with_capacity(samples_per_ray)
        } else {
            Vec::new()
        },
    };
    let mut transmittance = 1.0;
    let mut weight_sum = 0.0;
    for i in 0..samples_per_ray {
        let p = ray.at(t0 + (i as f64 + 0.5) * delta);
        let st = layout.stencil(&p);
        let (sigma, dsigma) = field.activate(interpolate(scalars, &st));
        let c = interpolate_color(colors, &st);
        let decay = (-sigma * delta).exp();
        let w = transmittance * (1.0 - decay);
        for ch in 0..3 {
            tape.color[ch] += w * c[ch];
        }
        weight_sum += w;
        transmittance *= decay;
        if keep {
            tape.samples.push(SampleRecord {
                stencil: st,
                sigma,
                dsigma,
                color: c,
            });
        }
        if transmittance < TRANSMITTANCE_CUTOFF {
            break;
        }
    }
    (tape, weight_sum)
}

fn check(cam: &Camera, samples_per_ray: usize) -> Result<(), ReconError> {
    cam.validate()?;
    if samples_per_ray == 0 {
        return Err(ReconError::NoSamples);
    }
    Ok(())
}

fn trace_all(
    field: &dyn VolumeField,
    cam: &Camera,
    samples_per_ray: usize,
    keep: bool,
) -> Vec<(RayTape, f64)> {
    (0..cam.width * cam.height)
        .into_par_iter()
        .map(|p| march(field, &cam.ray(p % cam.width, p / cam.width), samples_per_ray, keep))
        .collect()
}

fn to_image(cam: &Camera, rays: &[(RayTape, f64)]) -> Image {
    let mut data = Vec::with_capacity(rays.len() * 3);
    for (t, _) in rays {
        data.extend_from_slice(&t.color);
    }
    Image::from_vec(cam.width, cam.height, 3, data).expect("camera resolution validated")
}

pub fn render(field: &dyn VolumeField, cam: &Camera, samples_per_ray: usize) -> Result<Image, ReconError> {
    Ok(render_with_opacity(field, cam, samples_per_ray)?.0)
}

/// Renders and also returns the per-pixel weight sum `sum_i T_i (1 - exp(-sigma_i delta))`.
pub fn render_with_opacity(
    field: &dyn VolumeField,
    cam: &Camera,
    samples_per_ray: usize,
) -> Result<(Image, Vec<f64>), ReconError> {
    check(cam, samples_per_ray)?;
    let rays = trace_all(field, cam, samples_per_ray, false);
    let opacity = rays.iter().map(|(_, w)| *w).collect();
    Ok((to_image(cam, &rays), opacity))
}

pub fn render_taped(
    field: &dyn VolumeField,
    cam: &Camera,
    samples_per_ray: usize,
) -> Result<(Image, RenderTape), ReconError> {
    check(cam, samples_per_ray)?;
    let rays = trace_all(field, cam, samples_per_ray, true);
    let img = to_image(cam, &rays);
    Ok((
        img,
        RenderTape {
            width: cam.width,
            height: cam.height,
            rays: rays.into_iter().map(|(t, _)| t).collect(),
        },
    ))
}

impl RenderTape {
    /// Accumulates `dL/d(node)` into `grad` given `dL/d(pixel)` laid out like
    /// the rendered image.
    pub fn backprop(&self, dl_dimage: &[f64], grad: &mut FieldGrad) {
        assert_eq!(dl_dimage.len(), self.width * self.height * 3);
        // Per-sample (d scalar, d color) computed in parallel, scattered in
        // fixed pixel order so the sum does not depend on thread count.
        let per_ray: Vec<Vec<(f64, [f64; 3])>> = self
            .rays
            .par_iter()
            .enumerate()
            .map(|(p, ray)| {
                let g = &dl_dimage[3 * p..3 * p + 3];
                ray_backward(ray, [g[0], g[1], g[2]])
            })
            .collect();
        for (ray, grads) in self.rays.iter().zip(&per_ray) {
            for (s, (ds, dc)) in ray.samples.iter().zip(grads) {
                for n in 0..8 {
                    let node = s.stencil.nodes[n];
                    let w = s.stencil.weights[n];
                    grad.scalar[node] += ds * w;
                    let gc = &mut grad.color[node];
                    gc[0] += dc[0] * w;
                    gc[1] += dc[1] * w;
                    gc[2] += dc[2] * w;
                }
            }
        }
    }
}

fn ray_backward(ray: &RayTape, g: [f64; 3]) -> Vec<(f64, [f64; 3])> {
    let mut out = Vec::with_capacity(ray.samples.len());
    if g == [0.0; 3] {
        out.resize(ray.samples.len(), (0.0, [0.0; 3]));
        return out;
    }
    let delta = ray.delta;
    let mut transmittance = 1.0;
    let mut prefix = [0.0; 3];
    for s in &ray.samples {
        let decay = (-s.sigma * delta).exp();
        let w = transmittance * (1.0 - decay);
        let next = transmittance * decay;
        let mut g_dot_rest = 0.0;
        let mut g_dot_c = 0.0;
        for ch in 0..3 {
            prefix[ch] += w * s.color[ch];
            g_dot_rest += g[ch] * (ray.color[ch] - prefix[ch]);
            g_dot_c += g[ch] * s.color[ch];
        }
        let dsigma = delta * (next * g_dot_c - g_dot_rest);
        out.push((dsigma * s.dsigma, [w * g[0], w * g[1], w * g[2]]));
        transmittance = next;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Vec3;
    use approx::assert_abs_diff_eq;

    fn axis_camera(res: usize) -> Camera {
        // Looking down -X at a unit box; the central ray crosses it along x.
        Camera::new(
            Vec3::new(3.0, 0.0, 0.0),
            Vec3::zeros(),
            Vec3::z(),
            0.2,
            res,
            res,
        )
        .unwrap()
    }

    #[test]
    fn empty_medium_is_black() {
        let g = DensityGrid::constant(GridLayout::cube(4, 0.5).unwrap(), 0.0, [1.0; 3]);
        let (img, w) = render_with_opacity(&g, &axis_camera(5), 16).unwrap();
        assert!(img.data().iter().all(|&v| v == 0.0));
        assert!(w.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn homogeneous_unit_path() {
        let g = DensityGrid::constant(GridLayout::cube(4, 0.5).unwrap(), 1.0, [1.0; 3]);
        // odd resolution so a pixel center lies on the optical axis
        let cam = axis_camera(3);
        for spp in [1, 7, 64, 256] {
            let img = render(&g, &cam, spp).unwrap();
            // numeric oracle: explicit sum of the discrete weights
            let delta = 1.0 / spp as f64;
            let mut t = 1.0;
            let mut acc = 0.0;
            for _ in 0..spp {
                acc += t * (1.0 - (-delta).exp());
                t *= (-delta).exp();
            }
            assert_abs_diff_eq!(img.get(1, 1, 0), acc, epsilon = 1e-12);
            assert_abs_diff_eq!(img.get(1, 1, 2), 1.0 - (-1.0f64).exp(), epsilon = 1e-12);
        }
    }

    #[test]
    fn degenerate_inputs() {
        let g = DensityGrid::constant(GridLayout::cube(4, 0.5).unwrap(), 1.0, [1.0; 3]);
        let mut cam = axis_camera(3);
        assert!(matches!(render(&g, &cam, 0), Err(ReconError::NoSamples)));
        cam.target = cam.position;
        assert!(matches!(render(&g, &cam, 8), Err(ReconError::Camera(_))));
    }

    #[test]
    fn sdf_density_derivative() {
        let layout = GridLayout::cube(2, 1.0).unwrap();
        let sdf = SdfGrid::from_parts(layout, vec![0.0; 8], vec![[0.0; 3]; 8]).unwrap();
        let f = SdfDensity {
            sdf: &sdf,
            scale: 50.0,
            sharpness: 8.0,
        };
        for s in [-0.7, 0.0, 0.2] {
            let h = 1e-6;
            let fd = (f.activate(s + h).0 - f.activate(s - h).0) / (2.0 * h);
            assert_abs_diff_eq!(f.activate(s).1, fd, epsilon = 1e-6);
        }
        assert_abs_diff_eq!(f.activate(0.0).0, 25.0);
        assert!(f.activate(1.0).0 > f.activate(-1.0).0);
    }
}
