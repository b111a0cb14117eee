//! Consensus fusion of stochastic enhancer samples.
//!
//! N samples are scored against the render, outliers are dropped with an
//! upper IQR fence, and the survivors' mean is blended with the render under
//! a per-pixel confidence derived from the survivors' variance.

use std::fmt::Write as _;
use std::path::Path;

use rand::RngCore;
use rayon::prelude::*;
use thiserror::Error;

use crate::camera::Camera;
use crate::enhancer::{sample_rng, EnhanceError, Enhancer};
use crate::image::{mse, save_image, ssim, ssim_with_grad, Image, ImageError};

#[derive(Debug, Error)]
pub enum ConsensusError {
    #[error("invalid fusion config: {0}")]
    Config(String),
    #[error("empty input")]
    Empty,
    #[error("need at least {need} images, got {got}")]
    TooFewImages { need: usize, got: usize },
    #[error("loss {0} must be a non-negative number")]
    BadLoss(f64),
    #[error("map is {got:?}, expected {expected:?}")]
    MapShape { expected: (usize, usize), got: (usize, usize) },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Enhance(#[from] EnhanceError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionConfig {
    pub n_samples: usize,
    pub alpha: f64,
    /// Sigmoid center in variance units; `None` uses the median of the
    /// variance map.
    pub beta: Option<f64>,
    pub lambda_mse: f64,
    pub lambda_perc: f64,
    pub iqr_multiplier: f64,
    /// Puts the confidence weight on the sample mean instead of the render.
    pub invert_confidence: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            n_samples: 8,
            alpha: 50.0,
            beta: None,
            lambda_mse: 1.0,
            lambda_perc: 0.1,
            iqr_multiplier: 1.5,
            invert_confidence: false,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), ConsensusError> {
        let bad = |m: String| Err(ConsensusError::Config(m));
        if self.n_samples < 2 {
            return bad(format!("n_samples {} must be at least 2", self.n_samples));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return bad(format!("alpha {} must be positive", self.alpha));
        }
        if let Some(b) = self.beta {
            if !(b >= 0.0) || !b.is_finite() {
                return bad(format!("beta {b} must be non-negative"));
            }
        }
        if !(self.lambda_mse >= 0.0) || !(self.lambda_perc >= 0.0) {
            return bad("loss weights must be non-negative".into());
        }
        if !(self.lambda_mse + self.lambda_perc > 0.0) {
            return bad("at least one loss weight must be positive".into());
        }
        if !(self.iqr_multiplier >= 0.0) || !self.iqr_multiplier.is_finite() {
            return bad(format!("iqr_multiplier {} must be non-negative", self.iqr_multiplier));
        }
        Ok(())
    }
}

/// A distance between images in `[0, 1]`, zero for identical inputs.
pub trait PerceptualDistance: Sync {
    fn distance(&self, a: &Image, b: &Image) -> Result<f64, ImageError>;
    /// Distance and its gradient with respect to `a`.
    fn distance_with_grad(&self, a: &Image, b: &Image) -> Result<(f64, Vec<f64>), ImageError>;
}

/// `(1 - ssim) / 2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SsimDistance;

impl PerceptualDistance for SsimDistance {
    fn distance(&self, a: &Image, b: &Image) -> Result<f64, ImageError> {
        Ok(((1.0 - ssim(a, b)?) / 2.0).clamp(0.0, 1.0))
    }

    fn distance_with_grad(&self, a: &Image, b: &Image) -> Result<(f64, Vec<f64>), ImageError> {
        let (s, g) = ssim_with_grad(a, b)?;
        Ok((
            ((1.0 - s) / 2.0).clamp(0.0, 1.0),
            g.into_iter().map(|v| -0.5 * v).collect(),
        ))
    }
}

/// `lambda_mse * mse + lambda_perc * (1 - ssim) / 2`.
pub fn diffusion_loss(rendered: &Image, candidate: &Image, cfg: &FusionConfig) -> Result<f64, ImageError> {
    diffusion_loss_using(&SsimDistance, rendered, candidate, cfg)
}

pub fn diffusion_loss_using(
    perceptual: &dyn PerceptualDistance,
    rendered: &Image,
    candidate: &Image,
    cfg: &FusionConfig,
) -> Result<f64, ImageError> {
    let m = mse(rendered, candidate)?;
    let p = if cfg.lambda_perc == 0.0 {
        0.0
    } else {
        perceptual.distance(rendered, candidate)?
    };
    Ok(cfg.lambda_mse * m + cfg.lambda_perc * p)
}

/// Diffusion loss and its gradient with respect to `rendered`.
pub fn diffusion_loss_with_grad(
    rendered: &Image,
    candidate: &Image,
    cfg: &FusionConfig,
) -> Result<(f64, Vec<f64>), ImageError> {
    let m = mse(rendered, candidate)?;
    let n = rendered.len() as f64;
    let mut grad: Vec<f64> = rendered
        .data()
        .iter()
        .zip(candidate.data())
        .map(|(r, c)| cfg.lambda_mse * 2.0 * (r - c) / n)
        .collect();
    let mut loss = cfg.lambda_mse * m;
    if cfg.lambda_perc != 0.0 {
        let (p, pg) = SsimDistance.distance_with_grad(rendered, candidate)?;
        loss += cfg.lambda_perc * p;
        for (g, v) in grad.iter_mut().zip(pg) {
            *g += cfg.lambda_perc * v;
        }
    }
    Ok((loss, grad))
}

/// Linear-interpolation quantile of sorted data at position `(n - 1) q`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Indices (ascending) of losses at or below `Q3 + multiplier * (Q3 - Q1)`.
pub fn iqr_filter(losses: &[f64], multiplier: f64) -> Result<Vec<usize>, ConsensusError> {
    if losses.is_empty() {
        return Err(ConsensusError::Empty);
    }
    if let Some(&l) = losses.iter().find(|l| !(**l >= 0.0) || !l.is_finite()) {
        return Err(ConsensusError::BadLoss(l));
    }
    let mut sorted = losses.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    let bound = q3 + multiplier * (q3 - q1);
    Ok((0..losses.len()).filter(|&i| losses[i] <= bound).collect())
}

/// Per-element mean, accumulated incrementally so copies of one image
/// average to that image exactly.
pub fn pixel_mean(images: &[&Image]) -> Result<Image, ConsensusError> {
    let first = images.first().ok_or(ConsensusError::Empty)?;
    let mut acc = first.data().to_vec();
    for (k, img) in images.iter().enumerate().skip(1) {
        first.ensure_same_shape(img)?;
        let n = (k + 1) as f64;
        for (a, v) in acc.iter_mut().zip(img.data()) {
            *a += (v - *a) / n;
        }
    }
    Ok(Image::from_vec(first.width(), first.height(), first.channels(), acc)?)
}

macro_rules! pixel_map {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name {
            pub width: usize,
            pub height: usize,
            pub values: Vec<f64>,
        }

        impl $name {
            pub fn get(&self, x: usize, y: usize) -> f64 {
                self.values[y * self.width + x]
            }

            /// Single-channel image scaled to `[0, 1]`, with the original range.
            pub fn to_image(&self) -> (Image, f64, f64) {
                Image::from_vec(self.width, self.height, 1, self.values.clone())
                    .expect("map dimensions are consistent")
                    .normalized()
            }

            /// Writes a PGM plus a `<path>.range` sidecar holding `min max`.
            pub fn export(&self, path: impl AsRef<Path>) -> Result<(), ConsensusError> {
                let path = path.as_ref();
                let (img, lo, hi) = self.to_image();
                save_image(&img, path)?;
                let mut sidecar = path.as_os_str().to_owned();
                sidecar.push(".range");
                std::fs::write(sidecar, format!("{lo:.9} {hi:.9}\n"))?;
                Ok(())
            }
        }
    };
}

pixel_map!(
    /// Channel-averaged per-pixel population variance.
    VarianceMap
);
pixel_map!(
    /// Per-pixel confidence in `(0, 1)`.
    ConfidenceMap
);

/// Population variance across `images` about `mean`, averaged over channels.
pub fn pixel_variance(images: &[&Image], mean: &Image) -> Result<VarianceMap, ConsensusError> {
    if images.len() < 2 {
        return Err(ConsensusError::TooFewImages {
            need: 2,
            got: images.len(),
        });
    }
    let (w, h, c) = mean.shape();
    let mut acc = vec![0.0; w * h];
    for img in images {
        mean.ensure_same_shape(img)?;
        for (p, a) in acc.iter_mut().enumerate() {
            for ch in 0..c {
                let d = img.data()[p * c + ch] - mean.data()[p * c + ch];
                *a += d * d;
            }
        }
    }
    let denom = (images.len() * c) as f64;
    acc.iter_mut().for_each(|a| *a /= denom);
    Ok(VarianceMap {
        width: w,
        height: h,
        values: acc,
    })
}

/// `V = 1 - 1 / (1 + exp(-alpha (var - beta)))`, kept strictly inside `(0, 1)`.
pub fn confidence_map(var: &VarianceMap, alpha: f64, beta: f64) -> Result<ConfidenceMap, ConsensusError> {
    if !(alpha > 0.0) {
        return Err(ConsensusError::Config(format!("alpha {alpha} must be positive")));
    }
    let values = var
        .values
        .iter()
        .map(|&v| (1.0 - 1.0 / (1.0 + (-alpha * (v - beta)).exp())).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON))
        .collect();
    Ok(ConfidenceMap {
        width: var.width,
        height: var.height,
        values,
    })
}

/// `V * rendered + (1 - V) * diff_mean` per pixel, or with the weights
/// swapped when `invert` is set. Each output value lies between its inputs.
pub fn fuse(
    rendered: &Image,
    diff_mean: &Image,
    conf: &ConfidenceMap,
    invert: bool,
) -> Result<Image, ConsensusError> {
    rendered.ensure_same_shape(diff_mean)?;
    let (w, h, c) = rendered.shape();
    if (conf.width, conf.height) != (w, h) {
        return Err(ConsensusError::MapShape {
            expected: (w, h),
            got: (conf.width, conf.height),
        });
    }
    let data = rendered
        .data()
        .iter()
        .zip(diff_mean.data())
        .enumerate()
        .map(|(i, (&r, &m))| {
            let v = conf.values[i / c];
            let (a, b) = if invert { (m, r) } else { (r, m) };
            (v * a + (1.0 - v) * b).clamp(r.min(m), r.max(m))
        })
        .collect();
    Ok(Image::from_vec(w, h, c, data)?)
}

/// How survivors become the pseudo ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionStrategy {
    /// Variance-confidence fusion; `iqr` toggles outlier rejection.
    Consensus { iqr: bool },
    /// Per pixel, the survivor farthest from the render.
    MaxPixel,
    /// Per pixel, the survivor closest to the render.
    MinPixel,
    /// The survivor with the highest diffusion loss.
    MaxImage,
    /// The survivor with the lowest diffusion loss.
    MinImage,
    /// One sample taken as is; fusion disabled.
    Single,
}

impl FusionStrategy {
    pub const ALL: [FusionStrategy; 6] = [
        FusionStrategy::Consensus { iqr: true },
        FusionStrategy::MaxPixel,
        FusionStrategy::MinPixel,
        FusionStrategy::MinImage,
        FusionStrategy::MaxImage,
        FusionStrategy::Consensus { iqr: false },
    ];

    pub fn name(self) -> &'static str {
        match self {
            FusionStrategy::Consensus { iqr: true } => "ours",
            FusionStrategy::Consensus { iqr: false } => "no-iqr",
            FusionStrategy::MaxPixel => "max-pixel",
            FusionStrategy::MinPixel => "min-pixel",
            FusionStrategy::MaxImage => "max-image",
            FusionStrategy::MinImage => "min-image",
            FusionStrategy::Single => "single",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL
            .into_iter()
            .chain([FusionStrategy::Single])
            .find(|f| f.name() == s)
    }
}

#[derive(Debug, Clone)]
pub struct ConsensusOutcome {
    pub fused: Image,
    /// Diffusion loss between the render and the fused image.
    pub loss: f64,
    pub kept: Vec<usize>,
    pub sample_losses: Vec<f64>,
    pub variance: Option<VarianceMap>,
    pub confidence: Option<ConfidenceMap>,
}

impl ConsensusOutcome {
    pub fn kept_count(&self) -> usize {
        self.kept.len()
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, 0.5)
}

fn pick_per_pixel(rendered: &Image, survivors: &[&Image], farthest: bool) -> Result<Image, ImageError> {
    let (w, h, c) = rendered.shape();
    let mut out = rendered.clone();
    for p in 0..w * h {
        let dist = |img: &Image| -> f64 {
            (0..c)
                .map(|ch| (img.data()[p * c + ch] - rendered.data()[p * c + ch]).abs())
                .sum()
        };
        let mut best = 0;
        let mut best_d = dist(survivors[0]);
        for (i, s) in survivors.iter().enumerate().skip(1) {
            let d = dist(s);
            if (farthest && d > best_d) || (!farthest && d < best_d) {
                best = i;
                best_d = d;
            }
        }
        out.data_mut()[p * c..(p + 1) * c].copy_from_slice(&survivors[best].data()[p * c..(p + 1) * c]);
    }
    Ok(out)
}

/// Fuses `samples` (already drawn) against `rendered`.
pub fn fuse_samples(
    rendered: &Image,
    samples: &[Image],
    cfg: &FusionConfig,
    strategy: FusionStrategy,
) -> Result<ConsensusOutcome, ConsensusError> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(ConsensusError::Empty);
    }
    let sample_losses = samples
        .iter()
        .map(|s| diffusion_loss(rendered, s, cfg))
        .collect::<Result<Vec<f64>, _>>()?;
    let kept = if strategy == FusionStrategy::Single {
        vec![0]
    } else if strategy == (FusionStrategy::Consensus { iqr: false }) {
        (0..samples.len()).collect()
    } else {
        iqr_filter(&sample_losses, cfg.iqr_multiplier)?
    };
    let survivors: Vec<&Image> = kept.iter().map(|&i| &samples[i]).collect();
    let (fused, variance, confidence) = match strategy {
        FusionStrategy::Consensus { .. } => {
            let mean = pixel_mean(&survivors)?;
            let variance = if survivors.len() >= 2 {
                pixel_variance(&survivors, &mean)?
            } else {
                VarianceMap {
                    width: mean.width(),
                    height: mean.height(),
                    values: vec![0.0; mean.width() * mean.height()],
                }
            };
            let beta = cfg.beta.unwrap_or_else(|| median(&variance.values));
            let conf = confidence_map(&variance, cfg.alpha, beta)?;
            let fused = fuse(rendered, &mean, &conf, cfg.invert_confidence)?;
            (fused, Some(variance), Some(conf))
        }
        FusionStrategy::MaxPixel | FusionStrategy::MinPixel => (
            pick_per_pixel(rendered, &survivors, strategy == FusionStrategy::MaxPixel)?,
            None,
            None,
        ),
        FusionStrategy::Single => (samples[0].clone(), None, None),
        FusionStrategy::MaxImage | FusionStrategy::MinImage => {
            let mut best = kept[0];
            for &i in &kept[1..] {
                let better = if strategy == FusionStrategy::MaxImage {
                    sample_losses[i] > sample_losses[best]
                } else {
                    sample_losses[i] < sample_losses[best]
                };
                if better {
                    best = i;
                }
            }
            (samples[best].clone(), None, None)
        }
    };
    let loss = diffusion_loss(rendered, &fused, cfg)?;
    Ok(ConsensusOutcome {
        fused,
        loss,
        kept,
        sample_losses,
        variance,
        confidence,
    })
}

/// Draws `cfg.n_samples` enhancer samples (one for [`FusionStrategy::Single`])
/// in parallel and fuses them.
///
/// Sample `i` uses a generator derived from one draw of `rng` and `i`, so the
/// result does not depend on thread scheduling.
pub fn consensus_enhance(
    rendered: &Image,
    viewpoint: &Camera,
    enhancer: &dyn Enhancer,
    cfg: &FusionConfig,
    strategy: FusionStrategy,
    rng: &mut dyn RngCore,
) -> Result<ConsensusOutcome, ConsensusError> {
    cfg.validate()?;
    let master = rng.next_u64();
    let n = if strategy == FusionStrategy::Single {
        1
    } else {
        cfg.n_samples
    };
    let samples = (0..n)
        .into_par_iter()
        .map(|i| {
            let s = enhancer.sample(viewpoint, rendered, &mut sample_rng(master, i as u64))?;
            rendered.ensure_same_shape(&s)?;
            Ok(s)
        })
        .collect::<Result<Vec<Image>, ConsensusError>>()?;
    fuse_samples(rendered, &samples, cfg, strategy)
}

/// One line per sample: index, loss, kept flag.
pub fn outcome_summary(o: &ConsensusOutcome) -> String {
    let mut s = String::from("sample,loss,kept\n");
    for (i, l) in o.sample_losses.iter().enumerate() {
        let _ = writeln!(s, "{i},{l:.9},{}", o.kept.contains(&i) as u8);
    }
    s
}
