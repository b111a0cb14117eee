//! Stage-1 density fitting and stage-2 SDF refinement.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bandit::{ActionSpace, BanditLogRow, BanditState, RewardNormalizer, SelectionStrategy};
use crate::camera::Camera;
use crate::consensus::{consensus_enhance, diffusion_loss_with_grad, FusionConfig, FusionStrategy};
use crate::enhancer::Enhancer;
use crate::image::{psnr, Image};

use super::loss::{charbonnier_with_grad, nerf_loss_with_grad, tv_reg_with_grad};
use super::optim::{Optimizer, OptimizerKind};
use super::render::{render, render_taped, FieldGrad, SdfDensity, VolumeField};
use super::{DensityGrid, ReconError, SdfGrid};

/// A camera with its target image.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub camera: Camera,
    pub image: Image,
}

fn flatten(colors: &[[f64; 3]]) -> Vec<f64> {
    colors.iter().flatten().copied().collect()
}

fn unflatten(flat: &[f64], colors: &mut [[f64; 3]]) {
    for (c, f) in colors.iter_mut().zip(flat.chunks_exact(3)) {
        c.copy_from_slice(f);
    }
}

fn mean_psnr(field: &dyn VolumeField, views: &[View], spp: usize) -> Result<f64, ReconError> {
    let mut total = 0.0;
    for v in views {
        let img = render(field, &v.camera, spp)?;
        total += psnr(&img, &v.image, 1.0)?.min(99.0);
    }
    Ok(total / views.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Config {
    pub steps: usize,
    pub optimizer: OptimizerKind,
    pub lr_density: f64,
    pub lr_color: f64,
    pub samples_per_ray: usize,
    /// Held-out PSNR is logged every this many steps; 0 disables it.
    pub eval_every: usize,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            steps: 2000,
            optimizer: OptimizerKind::Adam,
            lr_density: 0.3,
            lr_color: 0.02,
            samples_per_ray: 64,
            eval_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Log {
    pub step: usize,
    pub loss: f64,
    pub heldout_psnr: Option<f64>,
}

/// Summed squared error over all views and its gradient on the grid nodes.
pub fn stage1_loss_and_grad(
    grid: &DensityGrid,
    views: &[View],
    samples_per_ray: usize,
) -> Result<(f64, FieldGrad), ReconError> {
    if views.is_empty() {
        return Err(ReconError::NoViews);
    }
    let mut grad = FieldGrad::zeros(grid.layout.node_count());
    let mut loss = 0.0;
    for v in views {
        let (img, tape) = render_taped(grid, &v.camera, samples_per_ray)?;
        let (l, g) = nerf_loss_with_grad(&img, &v.image)?;
        loss += l;
        tape.backprop(&g, &mut grad);
    }
    Ok((loss, grad))
}

/// Fits densities and colors to `views` by descending the summed squared
/// error; densities are projected to `>= 0` and colors to `[0, 1]` after
/// every step.
pub fn train_stage1(
    mut grid: DensityGrid,
    views: &[View],
    cfg: &Stage1Config,
    heldout: &[View],
) -> Result<(DensityGrid, Vec<Stage1Log>), ReconError> {
    let n = grid.layout.node_count();
    let mut opt_d = Optimizer::new(cfg.optimizer, cfg.lr_density, n);
    let mut opt_c = Optimizer::new(cfg.optimizer, cfg.lr_color, 3 * n);
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let (loss, grad) = stage1_loss_and_grad(&grid, views, cfg.samples_per_ray)?;
        if !loss.is_finite() {
            return Err(ReconError::NonFinite(format!("stage-1 loss at step {step}")));
        }
        let heldout_psnr = if cfg.eval_every > 0 && !heldout.is_empty() && step % cfg.eval_every == 0 {
            Some(mean_psnr(&grid, heldout, cfg.samples_per_ray)?)
        } else {
            None
        };
        log.push(Stage1Log {
            step,
            loss,
            heldout_psnr,
        });
        opt_d.step(&mut grid.density, &grad.scalar);
        let mut colors = flatten(&grid.color);
        opt_c.step(&mut colors, &flatten(&grad.color));
        unflatten(&colors, &mut grid.color);
        grid.project();
    }
    Ok((grid, log))
}

/// Weights of the stage-2 objective. Each term is normalized: the color term
/// is the per-element mean Charbonnier averaged over views, and the TV term is
/// the mean squared difference per grid edge.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights {
    pub lambda_color: f64,
    pub lambda_tv: f64,
    pub lambda_diff: f64,
    pub charbonnier_epsilon: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_color: 1.0,
            lambda_tv: 0.01,
            lambda_diff: 0.5,
            charbonnier_epsilon: 1e-3,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), ReconError> {
        let w = [self.lambda_color, self.lambda_tv, self.lambda_diff];
        if w.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(ReconError::Config("loss weights must be non-negative".into()));
        }
        if !(w.iter().sum::<f64>() > 0.0) {
            return Err(ReconError::Config("at least one loss weight must be positive".into()));
        }
        if !(self.charbonnier_epsilon > 0.0) {
            return Err(ReconError::Config("charbonnier epsilon must be positive".into()));
        }
        Ok(())
    }
}

/// Which views stage 2 enhances.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage2Selection {
    /// No view is enhanced; stage 2 is plain fine-tuning on the inputs.
    Off,
    Select(SelectionStrategy),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Config {
    pub steps: usize,
    pub optimizer: OptimizerKind,
    pub lr_sdf: f64,
    pub lr_color: f64,
    pub samples_per_ray: usize,
    pub weights: LossWeights,
    pub fusion: FusionConfig,
    pub fusion_strategy: FusionStrategy,
    pub selection: Stage2Selection,
    /// Density `scale * sigmoid(sharpness * sdf)`.
    pub density_scale: f64,
    pub sharpness: f64,
    pub seed: u64,
    pub eval_every: usize,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            steps: 500,
            optimizer: OptimizerKind::Adam,
            lr_sdf: 5e-3,
            lr_color: 5e-3,
            samples_per_ray: 64,
            weights: LossWeights::default(),
            fusion: FusionConfig::default(),
            fusion_strategy: FusionStrategy::Consensus { iqr: true },
            selection: Stage2Selection::Select(SelectionStrategy::Ucb),
            density_scale: 50.0,
            sharpness: 8.0,
            seed: 0,
            eval_every: 0,
        }
    }
}

impl Stage2Config {
    pub fn field<'a>(&self, sdf: &'a SdfGrid) -> SdfDensity<'a> {
        SdfDensity {
            sdf,
            scale: self.density_scale,
            sharpness: self.sharpness,
        }
    }

    /// Whether any enhancement work happens at all.
    pub fn enhances(&self) -> bool {
        self.selection != Stage2Selection::Off
    }
}

/// Values of the stage-2 terms before weighting.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Stage2Terms {
    pub color: f64,
    pub tv: f64,
    pub diff: f64,
    pub total: f64,
}

/// The stage-2 objective and its gradient on SDF values and colors.
///
/// `pseudo` is the enhanced view: its camera and the fused target, held
/// constant. The diffusion term is skipped when it is absent or weighted 0.
pub fn stage2_objective(
    sdf: &SdfGrid,
    gt_views: &[View],
    pseudo: Option<(&Camera, &Image)>,
    cfg: &Stage2Config,
) -> Result<(Stage2Terms, FieldGrad), ReconError> {
    if gt_views.is_empty() {
        return Err(ReconError::NoViews);
    }
    let w = &cfg.weights;
    let field = cfg.field(sdf);
    let mut grad = FieldGrad::zeros(sdf.layout.node_count());
    let mut terms = Stage2Terms::default();
    if w.lambda_color > 0.0 {
        let k = w.lambda_color / gt_views.len() as f64;
        for v in gt_views {
            let (img, tape) = render_taped(&field, &v.camera, cfg.samples_per_ray)?;
            let (l, mut g) = charbonnier_with_grad(&img, &v.image, w.charbonnier_epsilon)?;
            let per = 1.0 / img.len() as f64;
            terms.color += l * per / gt_views.len() as f64;
            g.iter_mut().for_each(|x| *x *= k * per);
            tape.backprop(&g, &mut grad);
        }
    }
    if w.lambda_tv > 0.0 {
        let r = sdf.layout.resolution();
        let edges = (3 * r * r * (r - 1)) as f64;
        let mut g = vec![0.0; sdf.values.len()];
        terms.tv = tv_reg_with_grad(sdf, &mut g) / edges;
        for (a, b) in grad.scalar.iter_mut().zip(&g) {
            *a += w.lambda_tv * b / edges;
        }
    }
    if let (Some((cam, target)), true) = (pseudo, w.lambda_diff > 0.0) {
        let (img, tape) = render_taped(&field, cam, cfg.samples_per_ray)?;
        let (l, mut g) = diffusion_loss_with_grad(&img, target, &cfg.fusion)?;
        terms.diff = l;
        g.iter_mut().for_each(|x| *x *= w.lambda_diff);
        tape.backprop(&g, &mut grad);
    }
    terms.total = w.lambda_color * terms.color + w.lambda_tv * terms.tv + w.lambda_diff * terms.diff;
    Ok((terms, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Log {
    pub step: usize,
    pub terms: Stage2Terms,
    pub action: Option<usize>,
    pub kept: Option<usize>,
    pub heldout_psnr: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Stage2Outcome {
    pub sdf: SdfGrid,
    pub log: Vec<Stage2Log>,
    pub bandit_log: Vec<BanditLogRow>,
    pub bandit: BanditState,
}

/// Refines the SDF. Each iteration selects a view, renders it, fuses
/// enhancer samples into a pseudo target, descends the stage-2 objective,
/// and rewards the selection with the pre-step diffusion loss.
pub fn train_stage2(
    mut sdf: SdfGrid,
    gt_views: &[View],
    actions: &ActionSpace,
    mut bandit: BanditState,
    enhancer: &dyn Enhancer,
    cfg: &Stage2Config,
    heldout: &[View],
) -> Result<Stage2Outcome, ReconError> {
    cfg.weights.validate()?;
    if cfg.enhances() {
        cfg.fusion.validate()?;
        if bandit.len() != actions.len() {
            return Err(ReconError::Config(format!(
                "bandit has {} arms for {} actions",
                bandit.len(),
                actions.len()
            )));
        }
    }
    let n = sdf.layout.node_count();
    let mut opt_s = Optimizer::new(cfg.optimizer, cfg.lr_sdf, n);
    let mut opt_c = Optimizer::new(cfg.optimizer, cfg.lr_color, 3 * n);
    let mut select_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5e1e_c7);
    let mut enhance_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xe4_4a_4c_e0);
    let mut normalizer = RewardNormalizer::new();
    let mut log = Vec::with_capacity(cfg.steps);
    let mut bandit_log = Vec::new();

    for step in 0..cfg.steps {
        let mut pseudo = None;
        let mut selection = None;
        if let Stage2Selection::Select(strategy) = cfg.selection {
            let action = strategy.select(&bandit, &mut select_rng)?;
            let ucb = bandit.ucb_values()[action];
            let cam = &actions.viewpoints[action];
            let rendered = render(&cfg.field(&sdf), cam, cfg.samples_per_ray)?;
            let out = consensus_enhance(
                &rendered,
                cam,
                enhancer,
                &cfg.fusion,
                cfg.fusion_strategy,
                &mut enhance_rng,
            )?;
            selection = Some((action, out.loss, out.kept_count(), ucb));
            pseudo = Some((cam, out.fused));
        }

        let (terms, grad) = stage2_objective(
            &sdf,
            gt_views,
            pseudo.as_ref().map(|(c, img)| (*c, img)),
            cfg,
        )?;
        if !terms.total.is_finite() {
            return Err(ReconError::NonFinite(format!("stage-2 loss at step {step}")));
        }
        let heldout_psnr = if cfg.eval_every > 0 && !heldout.is_empty() && step % cfg.eval_every == 0 {
            Some(mean_psnr(&cfg.field(&sdf), heldout, cfg.samples_per_ray)?)
        } else {
            None
        };

        opt_s.step(&mut sdf.values, &grad.scalar);
        let mut colors = flatten(&sdf.color);
        opt_c.step(&mut colors, &flatten(&grad.color));
        unflatten(&colors, &mut sdf.color);
        sdf.clamp_colors();
        if sdf.values.iter().any(|v| !v.is_finite()) {
            return Err(ReconError::NonFinite(format!("SDF value after step {step}")));
        }

        if let Some((action, raw, _, ucb)) = selection {
            let reward = normalizer.reward(raw)?;
            bandit.update(action, reward)?;
            bandit_log.push(BanditLogRow {
                step: step as u64,
                action,
                raw_loss: raw,
                reward,
                count: bandit.counts()[action],
                mean_reward: bandit.mean_rewards()[action],
                ucb,
            });
        }
        log.push(Stage2Log {
            step,
            terms,
            action: selection.map(|s| s.0),
            kept: selection.map(|s| s.2),
            heldout_psnr,
        });
    }
    Ok(Stage2Outcome {
        sdf,
        log,
        bandit_log,
        bandit,
    })
}
