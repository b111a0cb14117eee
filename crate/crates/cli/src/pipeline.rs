//! The end-to-end reconstruction pipeline on in-memory data. Commands wrap
//! these functions with file I/O.

use rayon::prelude::*;
use sparsefuse::bandit::{ActionSpace, BanditState};
use sparsefuse::consensus::{PerceptualDistance, SsimDistance};
use sparsefuse::enhancer::{EnhanceError, ToyEnhancer};
use sparsefuse::image::{psnr, ssim};
use sparsefuse::recon::{
    chamfer_distance, clean_topology, density_to_sdf, extract_mesh, render, theta_from_top_decile,
    DensityGrid, GridLayout, Mesh, SdfGrid, SphereSurface, Stage1Log, Stage2Config, Stage2Outcome,
    TopologyCleanup, View, VolumeField,
};
use sparsefuse::scene::{
    analytic_sdf, ground_truth_render, heldout_cameras, sample_sparse_cameras, SceneSpec, Shape,
};
use sparsefuse::{Camera, Image, Ray, Vec3};

use crate::config::RunConfig;
use crate::CliError;

/// Ground-truth observations: the sparse training views and the held-out
/// evaluation views.
#[derive(Debug, Clone)]
pub struct Assets {
    pub sparse: Vec<View>,
    pub heldout: Vec<View>,
}

fn render_views(scene: &SceneSpec, cams: Vec<Camera>) -> Result<Vec<View>, CliError> {
    cams.into_iter()
        .map(|camera| {
            let image = ground_truth_render(scene, &camera)?;
            Ok(View { camera, image })
        })
        .collect()
}

/// Renders the assets for `cfg.seed`.
pub fn render_assets(cfg: &RunConfig) -> Result<Assets, CliError> {
    let sparse = sample_sparse_cameras(&cfg.scene, cfg.sparse_views, &cfg.rig, cfg.seed)?;
    let heldout = heldout_cameras(&cfg.scene, cfg.heldout_views, &cfg.rig)?;
    Ok(Assets {
        sparse: render_views(&cfg.scene, sparse)?,
        heldout: render_views(&cfg.scene, heldout)?,
    })
}

/// The toy enhancer, conditioned on ground-truth renders of `scene`.
pub fn oracle_enhancer<'a>(cfg: &RunConfig, scene: &'a SceneSpec) -> Result<ToyEnhancer<'a>, CliError> {
    let enhancer = ToyEnhancer::new(cfg.enhancer.clone(), cfg.schedule.build(), move |cam| {
        ground_truth_render(scene, cam).map_err(|e| EnhanceError::Oracle(e.to_string()))
    })?;
    Ok(enhancer)
}

fn layout(cfg: &RunConfig, resolution: usize) -> Result<GridLayout, CliError> {
    Ok(GridLayout::cube(resolution, cfg.grid_half_extent)?)
}

pub fn run_stage1(cfg: &RunConfig, assets: &Assets) -> Result<(DensityGrid, Vec<Stage1Log>), CliError> {
    let grid = DensityGrid::constant(
        layout(cfg, cfg.stage1_resolution)?,
        cfg.stage1_init_density,
        [0.5; 3],
    );
    Ok(sparsefuse::recon::train_stage1(grid, &assets.sparse, &cfg.stage1, &assets.heldout)?)
}

/// The stage-1 field resampled to the stage-2 resolution and converted to an
/// SDF at the configured iso level.
#[derive(Debug, Clone)]
pub struct CoarseSdf {
    pub sdf: SdfGrid,
    pub theta: f64,
    pub cleanup: Option<TopologyCleanup>,
}

pub fn coarse_sdf(cfg: &RunConfig, grid: &DensityGrid) -> Result<CoarseSdf, CliError> {
    let fine = grid.resample(layout(cfg, cfg.stage2_resolution)?);
    let theta = theta_from_top_decile(&fine, cfg.theta_fraction);
    let mut sdf = density_to_sdf(&fine, theta)?;
    let cleanup = cfg.cleanup.then(|| clean_topology(&mut sdf));
    Ok(CoarseSdf { sdf, theta, cleanup })
}

pub fn run_stage2(
    cfg: &RunConfig,
    stage2: &Stage2Config,
    assets: &Assets,
    sdf: SdfGrid,
) -> Result<Stage2Outcome, CliError> {
    let cams: Vec<Camera> = assets.sparse.iter().map(|v| v.camera.clone()).collect();
    let actions = ActionSpace::build(&cams, cfg.interpolated_views)?;
    let bandit = BanditState::new(actions.len(), cfg.bandit_c)?;
    let enhancer = oracle_enhancer(cfg, &cfg.scene)?;
    Ok(sparsefuse::recon::train_stage2(
        sdf,
        &assets.sparse,
        &actions,
        bandit,
        &enhancer,
        stage2,
        &assets.heldout,
    )?)
}

/// Zero level set of `sdf`, after topology cleanup when configured.
pub fn final_mesh(cfg: &RunConfig, sdf: &SdfGrid) -> Result<Mesh, CliError> {
    if cfg.cleanup {
        let mut s = sdf.clone();
        clean_topology(&mut s);
        Ok(extract_mesh(&s, 0.0)?)
    } else {
        Ok(extract_mesh(sdf, 0.0)?)
    }
}

/// Held-out image quality; the perceptual proxy is `(1 - SSIM) / 2`, not
/// LPIPS.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ImageMetrics {
    pub psnr: f64,
    pub ssim: f64,
    pub perceptual_proxy: f64,
}

pub fn image_metrics(renders: &[Image], views: &[View]) -> Result<ImageMetrics, CliError> {
    let mut m = ImageMetrics::default();
    for (img, v) in renders.iter().zip(views) {
        m.psnr += psnr(img, &v.image, 1.0)?;
        m.ssim += ssim(img, &v.image)?;
        m.perceptual_proxy += SsimDistance.distance(img, &v.image)?;
    }
    let n = views.len() as f64;
    m.psnr /= n;
    m.ssim /= n;
    m.perceptual_proxy /= n;
    Ok(m)
}

pub fn render_field(field: &dyn VolumeField, views: &[View], spp: usize) -> Result<Vec<Image>, CliError> {
    views
        .iter()
        .map(|v| Ok(render(field, &v.camera, spp)?))
        .collect()
}

/// Points on the scene surface: exact for a lone sphere, otherwise from a
/// fine marching-cubes extraction of the analytic SDF.
pub fn scene_surface_points(scene: &SceneSpec, n: usize) -> Result<Vec<Vec3>, CliError> {
    use sparsefuse::recon::PointSampler;
    if let [p] = scene.primitives.as_slice() {
        if let Shape::Sphere { center, radius } = p.shape {
            return Ok(SphereSurface { center, radius }.sample_points(n));
        }
    }
    let half = scene.bounding_radius() * 1.05;
    let fine = GridLayout::cube(160, half)?;
    let sdf = SdfGrid::from_fn(fine, |p| (-analytic_sdf(scene, p), [0.0; 3]));
    Ok(extract_mesh(&sdf, 0.0)?.sample_surface(n))
}

pub fn scene_chamfer(scene: &SceneSpec, mesh: &Mesh, n: usize) -> Result<f64, CliError> {
    let truth = scene_surface_points(scene, n)?;
    Ok(chamfer_distance(mesh, &truth, n)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunMetrics {
    pub image: ImageMetrics,
    pub chamfer: f64,
}

/// Everything a reconstruction run produces.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub stage1_grid: DensityGrid,
    pub stage1_log: Vec<Stage1Log>,
    pub coarse: CoarseSdf,
    pub stage2: Option<Stage2Outcome>,
    pub mesh: Mesh,
    pub heldout_renders: Vec<Image>,
    pub metrics: RunMetrics,
}

impl Reconstruction {
    /// The SDF the mesh was extracted from.
    pub fn final_sdf(&self) -> &SdfGrid {
        self.stage2.as_ref().map_or(&self.coarse.sdf, |o| &o.sdf)
    }
}

/// Metrics of a stage-2 SDF: held-out volume renders and the mesh Chamfer.
pub fn evaluate_sdf(
    cfg: &RunConfig,
    stage2: &Stage2Config,
    assets: &Assets,
    sdf: &SdfGrid,
) -> Result<(Mesh, Vec<Image>, RunMetrics), CliError> {
    let renders = render_field(&stage2.field(sdf), &assets.heldout, stage2.samples_per_ray)?;
    let image = image_metrics(&renders, &assets.heldout)?;
    let mesh = final_mesh(cfg, sdf)?;
    let chamfer = scene_chamfer(&cfg.scene, &mesh, cfg.chamfer_samples)?;
    Ok((mesh, renders, RunMetrics { image, chamfer }))
}

/// Stage 1, conversion, and (unless skipped) stage 2 with `cfg`'s settings.
/// Without stage 2 the held-out renders come from the stage-1 density grid.
pub fn reconstruct(cfg: &RunConfig, assets: &Assets, skip_stage2: bool) -> Result<Reconstruction, CliError> {
    let (grid, stage1_log) = run_stage1(cfg, assets)?;
    let coarse = coarse_sdf(cfg, &grid)?;
    if skip_stage2 {
        let renders = render_field(&grid, &assets.heldout, cfg.stage1.samples_per_ray)?;
        let image = image_metrics(&renders, &assets.heldout)?;
        let mesh = final_mesh(cfg, &coarse.sdf)?;
        let chamfer = scene_chamfer(&cfg.scene, &mesh, cfg.chamfer_samples)?;
        return Ok(Reconstruction {
            stage1_grid: grid,
            stage1_log,
            coarse,
            stage2: None,
            mesh,
            heldout_renders: renders,
            metrics: RunMetrics { image, chamfer },
        });
    }
    let stage2 = cfg.stage2_config();
    let outcome = run_stage2(cfg, &stage2, assets, coarse.sdf.clone())?;
    let (mesh, renders, metrics) = evaluate_sdf(cfg, &stage2, assets, &outcome.sdf)?;
    Ok(Reconstruction {
        stage1_grid: grid,
        stage1_log,
        coarse,
        stage2: Some(outcome),
        mesh,
        heldout_renders: renders,
        metrics,
    })
}

/// Möller–Trumbore; returns the hit distance for `t > 1e-9`.
fn intersect(ray: &Ray, [a, b, c]: [Vec3; 3]) -> Option<f64> {
    let e1 = b - a;
    let e2 = c - a;
    let p = ray.dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv = 1.0 / det;
    let s = ray.origin - a;
    let u = s.dot(&p) * inv;
    if !(0.0..=1.0).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = ray.dir.dot(&q) * inv;
    if v < 0.0 || u + v > 1.0 {
        return None;
    }
    let t = e2.dot(&q) * inv;
    (t > 1e-9).then_some(t)
}

/// Ray-casts `mesh` with the scene's Lambertian shading: flat face normals
/// and the albedo of the nearest scene primitive. Background is black.
pub fn render_mesh(mesh: &Mesh, scene: &SceneSpec, cam: &Camera) -> Result<Image, CliError> {
    cam.validate().map_err(sparsefuse::scene::SceneError::from)?;
    let tris: Vec<[Vec3; 3]> = (0..mesh.triangles.len()).map(|t| mesh.triangle(t)).collect();
    let center = mesh.vertices.iter().fold(Vec3::zeros(), |a, v| a + v) / mesh.vertices.len().max(1) as f64;
    let bound = mesh.vertices.iter().map(|v| (v - center).norm()).fold(0.0, f64::max);
    let data: Vec<[f64; 3]> = (0..cam.width * cam.height)
        .into_par_iter()
        .map(|px| {
            let ray = cam.ray(px % cam.width, px / cam.width);
            let oc = ray.origin - center;
            let b = oc.dot(&ray.dir);
            if b * b - (oc.norm_squared() - bound * bound) < 0.0 {
                return [0.0; 3];
            }
            let mut best: Option<(f64, usize)> = None;
            for (i, tri) in tris.iter().enumerate() {
                if let Some(t) = intersect(&ray, *tri) {
                    if best.is_none_or(|(bt, _)| t < bt) {
                        best = Some((t, i));
                    }
                }
            }
            let Some((t, i)) = best else {
                return [0.0; 3];
            };
            let [a, b, c] = tris[i];
            let mut n = (b - a).cross(&(c - a)).normalize();
            if n.dot(&ray.dir) > 0.0 {
                n = -n;
            }
            let hit = ray.at(t);
            let albedo = scene
                .primitives
                .iter()
                .min_by(|p, q| p.shape.sdf(&hit).total_cmp(&q.shape.sdf(&hit)))
                .map_or([1.0; 3], |p| p.albedo);
            let k = scene.ambient + (1.0 - scene.ambient) * n.dot(&scene.light_dir).max(0.0);
            albedo.map(|a| a * k)
        })
        .collect();
    Ok(Image::from_vec(cam.width, cam.height, 3, data.concat())?)
}
