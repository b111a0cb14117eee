//! A toy conditioned diffusion sampler standing in for a pretrained view
//! enhancer.
//!
//! The sampler partially noises the conditioning render, then runs the
//! ε-parameterized ancestral chain back to step 0. Its denoiser is analytic:
//! it predicts noise as if the clean image were drawn from an isotropic
//! Gaussian of spread `sample_spread` around a target that mixes an oracle
//! image with the condition. A controllable blob artifact model makes outlier
//! rejection testable.

use std::collections::HashMap;
use std::sync::Mutex;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::camera::Camera;
use crate::image::{Image, ImageError};

#[derive(Debug, Error)]
pub enum EnhanceError {
    #[error("diffusion step {t} outside 1..={steps}")]
    BadStep { t: usize, steps: usize },
    #[error("invalid noise schedule: {0}")]
    BadSchedule(String),
    #[error("invalid enhancer config: {0}")]
    BadConfig(String),
    #[error("oracle unavailable: {0}")]
    Oracle(String),
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// Variance schedule; step `t` is 1-based and `alpha_bar(0) = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self, EnhanceError> {
        if betas.is_empty() {
            return Err(EnhanceError::BadSchedule("no steps".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(EnhanceError::BadSchedule(format!("beta {b} outside (0, 1)")));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
        })
    }

    /// `steps` betas ramped linearly from `beta_1` to `beta_t`.
    pub fn linear(steps: usize, beta_1: f64, beta_t: f64) -> Result<Self, EnhanceError> {
        if steps == 0 {
            return Err(EnhanceError::BadSchedule("no steps".into()));
        }
        let betas = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_1
                } else {
                    beta_1 + (beta_t - beta_1) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn check(&self, t: usize) -> Result<(), EnhanceError> {
        if t == 0 || t > self.steps() {
            return Err(EnhanceError::BadStep {
                t,
                steps: self.steps(),
            });
        }
        Ok(())
    }

    /// Panics unless `1 <= t <= steps`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// Panics unless `1 <= t <= steps`.
    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// Panics unless `t <= steps`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(50, 1e-4, 0.02).expect("default schedule is valid")
    }
}

/// `x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps`.
pub fn forward_noise(
    x0: &Image,
    t: usize,
    eps: &Image,
    sched: &NoiseSchedule,
) -> Result<Image, EnhanceError> {
    sched.check(t)?;
    x0.ensure_same_shape(eps)?;
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let data = x0.data().iter().zip(eps.data()).map(|(x, e)| a * x + b * e).collect();
    Ok(Image::from_vec(x0.width(), x0.height(), x0.channels(), data)?)
}

/// Reverse-process mean
/// `mu = (x_t - beta_t / sqrt(1 - abar_t) eps_hat) / sqrt(alpha_t)`.
pub fn reverse_mean(
    xt: &Image,
    t: usize,
    eps_hat: &Image,
    sched: &NoiseSchedule,
) -> Result<Image, EnhanceError> {
    sched.check(t)?;
    xt.ensure_same_shape(eps_hat)?;
    let coef = sched.beta(t) / (1.0 - sched.alpha_bar(t)).sqrt();
    let inv_sqrt_alpha = 1.0 / sched.alpha(t).sqrt();
    let data = xt
        .data()
        .iter()
        .zip(eps_hat.data())
        .map(|(x, e)| (x - coef * e) * inv_sqrt_alpha)
        .collect();
    Ok(Image::from_vec(xt.width(), xt.height(), xt.channels(), data)?)
}

/// One ancestral step `x_{t-1} = mu + sqrt(beta_t) z`; no noise is drawn at
/// `t = 1`.
pub fn reverse_step(
    xt: &Image,
    t: usize,
    eps_hat: &Image,
    sched: &NoiseSchedule,
    rng: &mut dyn RngCore,
) -> Result<Image, EnhanceError> {
    let mut mu = reverse_mean(xt, t, eps_hat, sched)?;
    if t > 1 {
        let sigma = sched.beta(t).sqrt();
        for v in mu.data_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v += sigma * z;
        }
    }
    Ok(mu)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnhancerConfig {
    /// Noising depth as a fraction of the schedule, in `(0, 1]`.
    pub t_start_fraction: f64,
    pub artifact_probability: f64,
    pub artifact_magnitude: f64,
    /// Weight of the oracle in the denoiser's target, in `[0, 1]`.
    pub oracle_pull: f64,
    /// Per-pixel std of the denoiser's Gaussian prior; sets sample diversity.
    pub sample_spread: f64,
}

impl Default for EnhancerConfig {
    fn default() -> Self {
        Self {
            t_start_fraction: 0.5,
            artifact_probability: 0.1,
            artifact_magnitude: 0.5,
            oracle_pull: 0.8,
            sample_spread: 0.05,
        }
    }
}

impl EnhancerConfig {
    pub fn validate(&self) -> Result<(), EnhanceError> {
        let bad = |m: String| Err(EnhanceError::BadConfig(m));
        if !(self.t_start_fraction > 0.0 && self.t_start_fraction <= 1.0) {
            return bad(format!("t_start_fraction {} outside (0, 1]", self.t_start_fraction));
        }
        if !(0.0..=1.0).contains(&self.artifact_probability) {
            return bad(format!(
                "artifact_probability {} outside [0, 1]",
                self.artifact_probability
            ));
        }
        if !self.artifact_magnitude.is_finite() || self.artifact_magnitude < 0.0 {
            return bad(format!("artifact_magnitude {} must be >= 0", self.artifact_magnitude));
        }
        if !(0.0..=1.0).contains(&self.oracle_pull) {
            return bad(format!("oracle_pull {} outside [0, 1]", self.oracle_pull));
        }
        if !self.sample_spread.is_finite() || self.sample_spread < 0.0 {
            return bad(format!("sample_spread {} must be >= 0", self.sample_spread));
        }
        Ok(())
    }

    /// First reverse step, `ceil(fraction * T)`.
    pub fn start_step(&self, sched: &NoiseSchedule) -> usize {
        ((self.t_start_fraction * sched.steps() as f64).ceil() as usize).clamp(1, sched.steps())
    }
}

/// Independent generator for sample `index` of a draw seeded by `master`.
pub fn sample_rng(master: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng
}

/// A Gaussian-splat artifact composited into a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Blob {
    pub cx: f64,
    pub cy: f64,
    pub radius: f64,
    /// Signed offset at the blob center.
    pub amplitude: f64,
}

/// Noise prediction at `x_t` for a Gaussian prior `N(target, spread^2 I)`.
fn predict_eps(xt: f64, target: f64, ab: f64, spread2: f64) -> f64 {
    let sa = ab.sqrt();
    let gain = sa * spread2 / (ab * spread2 + 1.0 - ab);
    let x0_hat = target + gain * (xt - sa * target);
    (xt - sa * x0_hat) / (1.0 - ab).sqrt()
}

/// Like [`toy_sample`], also reporting the artifact if one was drawn.
pub fn toy_sample_detailed(
    condition: &Image,
    oracle: &Image,
    cfg: &EnhancerConfig,
    sched: &NoiseSchedule,
    rng: &mut dyn RngCore,
) -> Result<(Image, Option<Blob>), EnhanceError> {
    cfg.validate()?;
    condition.ensure_same_shape(oracle)?;
    let (w, h, c) = condition.shape();
    let t0 = cfg.start_step(sched);
    let eps = Image::from_fn(w, h, c, |_, _, _| StandardNormal.sample(&mut *rng))?;
    let mut x = forward_noise(condition, t0, &eps, sched)?;
    let spread2 = cfg.sample_spread * cfg.sample_spread;
    let pull = cfg.oracle_pull;
    for t in (1..=t0).rev() {
        let ab = sched.alpha_bar(t);
        // The prediction is affine in the prior mean, so mixing the two
        // predictions equals predicting for the mixed target.
        let eps_hat: Vec<f64> = x
            .data()
            .iter()
            .zip(condition.data().iter().zip(oracle.data()))
            .map(|(&xt, (&cond, &orc))| {
                pull * predict_eps(xt, orc, ab, spread2) + (1.0 - pull) * predict_eps(xt, cond, ab, spread2)
            })
            .collect();
        let eps_hat = Image::from_vec(w, h, c, eps_hat)?;
        x = reverse_step(&x, t, &eps_hat, sched, rng)?;
    }

    let blob = if cfg.artifact_probability > 0.0 && rng.random::<f64>() < cfg.artifact_probability {
        let cx = rng.random::<f64>() * w as f64;
        let cy = rng.random::<f64>() * h as f64;
        let radius = (0.1 * w as f64).max(0.5);
        let (px, py) = ((cx as usize).min(w - 1), (cy as usize).min(h - 1));
        let center_mean = x.pixel(px, py).iter().sum::<f64>() / c as f64;
        // Push away from the nearer end of the range so the blob survives clamping.
        let amplitude = if center_mean < 0.5 {
            cfg.artifact_magnitude
        } else {
            -cfg.artifact_magnitude
        };
        let blob = Blob {
            cx,
            cy,
            radius,
            amplitude,
        };
        for y in 0..h {
            for xx in 0..w {
                let dx = xx as f64 + 0.5 - cx;
                let dy = y as f64 + 0.5 - cy;
                let g = amplitude * (-(dx * dx + dy * dy) / (2.0 * radius * radius)).exp();
                for ch in 0..c {
                    let v = x.get(xx, y, ch) + g;
                    x.set(xx, y, ch, v);
                }
            }
        }
        Some(blob)
    } else {
        None
    };
    Ok((x.clamped(), blob))
}

/// Partially noises `condition`, reverse-samples toward a mix of `oracle` and
/// `condition`, optionally adds a blob artifact, and clamps to `[0, 1]`.
pub fn toy_sample(
    condition: &Image,
    oracle: &Image,
    cfg: &EnhancerConfig,
    sched: &NoiseSchedule,
    rng: &mut dyn RngCore,
) -> Result<Image, EnhanceError> {
    Ok(toy_sample_detailed(condition, oracle, cfg, sched, rng)?.0)
}

/// A stochastic image refiner conditioned on a viewpoint and its render.
pub trait Enhancer: Sync {
    /// Must return an image shaped like `rendered` and be a pure function of
    /// its inputs and the generator state.
    fn sample(&self, viewpoint: &Camera, rendered: &Image, rng: &mut dyn RngCore) -> Result<Image, EnhanceError>;
}

/// Returns the render unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct Echo;

impl Enhancer for Echo {
    fn sample(&self, _: &Camera, rendered: &Image, _: &mut dyn RngCore) -> Result<Image, EnhanceError> {
        Ok(rendered.clone())
    }
}

type OracleFn<'a> = dyn Fn(&Camera) -> Result<Image, EnhanceError> + Sync + 'a;

/// The toy sampler with an oracle render per viewpoint, cached by pose.
pub struct ToyEnhancer<'a> {
    pub cfg: EnhancerConfig,
    pub schedule: NoiseSchedule,
    oracle: Box<OracleFn<'a>>,
    cache: Mutex<HashMap<[u64; 8], Image>>,
}

impl<'a> ToyEnhancer<'a> {
    pub fn new(
        cfg: EnhancerConfig,
        schedule: NoiseSchedule,
        oracle: impl Fn(&Camera) -> Result<Image, EnhanceError> + Sync + 'a,
    ) -> Result<Self, EnhanceError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            schedule,
            oracle: Box::new(oracle),
            cache: Mutex::new(HashMap::new()),
        })
    }

    fn key(cam: &Camera) -> [u64; 8] {
        let p = cam.position;
        let t = cam.target;
        [
            p.x.to_bits(),
            p.y.to_bits(),
            p.z.to_bits(),
            t.x.to_bits(),
            t.y.to_bits(),
            t.z.to_bits(),
            cam.fov_y.to_bits(),
            ((cam.width as u64) << 32) | cam.height as u64,
        ]
    }

    pub fn oracle(&self, cam: &Camera) -> Result<Image, EnhanceError> {
        let key = Self::key(cam);
        if let Some(img) = self.cache.lock().expect("cache poisoned").get(&key) {
            return Ok(img.clone());
        }
        let img = (self.oracle)(cam)?;
        self.cache
            .lock()
            .expect("cache poisoned")
            .insert(key, img.clone());
        Ok(img)
    }
}

impl Enhancer for ToyEnhancer<'_> {
    fn sample(&self, viewpoint: &Camera, rendered: &Image, rng: &mut dyn RngCore) -> Result<Image, EnhanceError> {
        let oracle = self.oracle(viewpoint)?;
        toy_sample(rendered, &oracle, &self.cfg, &self.schedule, rng)
    }
}
