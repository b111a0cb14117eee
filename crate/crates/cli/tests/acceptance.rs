//! Acceptance suite. Prints one line per criterion and exits non-zero if any
//! fails or overruns its time budget.
//!
//! `ACCEPTANCE_ONLY=4,5` runs a subset.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sparsefuse::bandit::{BanditState, SelectionStrategy};
use sparsefuse::consensus::{
    confidence_map, fuse, fuse_samples, iqr_filter, pixel_mean, pixel_variance, ConfidenceMap, FusionConfig,
    FusionStrategy, VarianceMap,
};
use sparsefuse::enhancer::{forward_noise, sample_rng, toy_sample_detailed, EnhancerConfig, NoiseSchedule};
use sparsefuse::image::mse;
use sparsefuse::recon::{
    density_to_sdf, render, render_with_opacity, stage1_loss_and_grad, stage2_objective, DensityGrid, GridLayout,
    SdfGrid, Stage2Config, Stage2Selection, View,
};
use sparsefuse::scene::{ground_truth_render, SceneSpec};
use sparsefuse::{Camera, Image, Vec3};
use sparsefuse_cli::commands::{
    cmd_ablate, cmd_evaluate, cmd_reconstruct, cmd_scene, run_variant, AblationReport, Variant,
};
use sparsefuse_cli::pipeline::{coarse_sdf, render_assets, run_stage1, Assets, CoarseSdf};
use sparsefuse_cli::RunConfig;

struct Outcome {
    pass: bool,
    details: String,
}

impl Outcome {
    fn new(pass: bool, details: impl Into<String>) -> Self {
        Self {
            pass,
            details: details.into(),
        }
    }
}

/// Collects named sub-checks; the criterion passes when all do.
#[derive(Default)]
struct Checks {
    failed: Vec<String>,
    count: usize,
}

impl Checks {
    fn check(&mut self, ok: bool, name: impl Into<String>) {
        self.count += 1;
        if !ok {
            self.failed.push(name.into());
        }
    }

    fn outcome(self, extra: &str) -> Outcome {
        let mut details = format!("{}/{} checks", self.count - self.failed.len(), self.count);
        if !self.failed.is_empty() {
            details += &format!("; failed: {}", self.failed.join(", "));
        }
        if !extra.is_empty() {
            details += &format!("; {extra}");
        }
        Outcome::new(self.failed.is_empty(), details)
    }
}

// ---------------------------------------------------------------- criterion 1

fn linear_alpha_bar(steps: usize, b1: f64, bt: f64, t: usize) -> f64 {
    (1..=t)
        .map(|s| 1.0 - (b1 + (bt - b1) * (s - 1) as f64 / (steps - 1) as f64))
        .product()
}

/// Type-7 quartile bound computed from a sorted copy, independently of the
/// library's quantile helper.
fn iqr_oracle(losses: &[f64], k: f64) -> Vec<usize> {
    let mut s = losses.to_vec();
    s.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let h = (s.len() - 1) as f64 * p;
        let i = h as usize;
        if i + 1 < s.len() {
            s[i] * (1.0 - (h - i as f64)) + s[i + 1] * (h - i as f64)
        } else {
            s[i]
        }
    };
    let bound = q(0.75) + k * (q(0.75) - q(0.25));
    (0..losses.len()).filter(|&i| losses[i] <= bound).collect()
}

fn equation_suite() -> Outcome {
    let mut c = Checks::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);

    // Forward noising moments.
    let (steps, b1, bt, t, x0) = (1000, 1e-4, 0.02, 250, 0.8);
    let sched = NoiseSchedule::linear(steps, b1, bt).unwrap();
    let ab = linear_alpha_bar(steps, b1, bt, t);
    let clean = Image::filled(100, 100, 1, x0).unwrap();
    let eps = Image::from_fn(100, 100, 1, |_, _, _| rng.sample(StandardNormal)).unwrap();
    let xt = forward_noise(&clean, t, &eps, &sched).unwrap();
    let n = xt.len() as f64;
    let mean = xt.data().iter().sum::<f64>() / n;
    let var = xt.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    c.check(((mean - ab.sqrt() * x0) / (ab.sqrt() * x0)).abs() < 0.05, "noise mean");
    c.check(((var - (1.0 - ab)) / (1.0 - ab)).abs() < 0.05, "noise variance");

    // Outlier filter on hand-built loss sets.
    let sets: [&[f64]; 6] = [
        &[0.10, 0.11, 0.12, 0.13, 0.12, 0.11, 0.10, 0.95],
        &[1.0, 2.0, 3.0, 4.0, 100.0],
        &[0.5; 8],
        &[0.2, 0.21, 0.19, 0.2, 0.22, 0.18, 0.6, 0.61],
        &[3.0, 1.0, 2.0],
        &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1e-3],
    ];
    for (i, set) in sets.iter().enumerate() {
        c.check(iqr_filter(set, 1.5).unwrap() == iqr_oracle(set, 1.5), format!("iqr set {i}"));
    }
    c.check(!iqr_filter(sets[0], 1.5).unwrap().contains(&7), "iqr rejects 0.95");

    // Variance against a brute-force sum.
    let images: Vec<Image> = (0..6)
        .map(|_| Image::from_fn(7, 5, 3, |_, _, _| rng.random::<f64>()).unwrap())
        .collect();
    let refs: Vec<&Image> = images.iter().collect();
    let var = pixel_variance(&refs, &pixel_mean(&refs).unwrap()).unwrap();
    let mut worst: f64 = 0.0;
    for y in 0..5 {
        for x in 0..7 {
            let mut acc = 0.0;
            for ch in 0..3 {
                let m = images.iter().map(|im| im.get(x, y, ch)).sum::<f64>() / 6.0;
                acc += images.iter().map(|im| (im.get(x, y, ch) - m).powi(2)).sum::<f64>();
            }
            let brute = acc / 18.0;
            worst = worst.max(((var.get(x, y) - brute) / brute).abs());
        }
    }
    c.check(worst < 1e-9, format!("variance rel {worst:e}"));

    // Confidence scalars: 1 - sigmoid(alpha (v - beta)), alpha 50, beta 0.02.
    let vm = VarianceMap {
        width: 3,
        height: 1,
        values: vec![0.02, 0.03, 0.0],
    };
    let conf = confidence_map(&vm, 50.0, 0.02).unwrap();
    for (got, want) in conf.values.iter().zip([0.5, 0.3775406687981454, 0.7310585786300049]) {
        c.check((got - want).abs() < 1e-9, format!("confidence {want}"));
    }

    // Fusion endpoints and convexity.
    let r = Image::from_fn(4, 4, 3, |_, _, _| rng.random::<f64>()).unwrap();
    let m = Image::from_fn(4, 4, 3, |_, _, _| rng.random::<f64>()).unwrap();
    let constant = |v: f64| ConfidenceMap {
        width: 4,
        height: 4,
        values: vec![v; 16],
    };
    c.check(fuse(&r, &m, &constant(1.0), false).unwrap() == r, "fuse V=1 is render");
    c.check(fuse(&r, &m, &constant(0.0), false).unwrap() == m, "fuse V=0 is mean");
    c.check(fuse(&r, &m, &constant(1.0), true).unwrap() == m, "inverted V=1 is mean");
    let mut convex = true;
    let mut prev: Option<Image> = None;
    for k in 0..=20 {
        let f = fuse(&r, &m, &constant(k as f64 / 20.0), false).unwrap();
        for i in 0..f.len() {
            let (a, b, v) = (r.data()[i], m.data()[i], f.data()[i]);
            convex &= a.min(b) <= v && v <= a.max(b);
            if let Some(p) = &prev {
                // moving V toward 1 moves the output toward the render
                convex &= (v - a).abs() <= (p.data()[i] - a).abs() + 1e-15;
            }
        }
        prev = Some(f);
    }
    c.check(convex, "fuse convexity");

    // UCB value after 100 pulls, 4 of them on an arm with mean 0.5.
    let mut bandit = BanditState::new(2, 1.0).unwrap();
    for _ in 0..4 {
        bandit.update(0, 0.5).unwrap();
    }
    for _ in 0..96 {
        bandit.update(1, 0.0).unwrap();
    }
    let ucb = bandit.ucb_values()[0].finite().unwrap();
    c.check((ucb - 2.01743).abs() < 1e-5, format!("ucb {ucb:.6}"));

    // Density-to-SDF map endpoints.
    let layout = GridLayout::cube(2, 1.0).unwrap();
    let grid = DensityGrid::from_parts(layout, vec![0.0, 0.3, 2.0, 1.0, 0.1, 0.5, 0.0, 0.0], vec![[0.5; 3]; 8]).unwrap();
    let sdf = density_to_sdf(&grid, 0.3).unwrap();
    c.check(sdf.values[0] == -1.0 && sdf.values[1] == 0.0 && sdf.values[2] == 1.0, "sdf map endpoints");

    c.outcome("")
}

// ---------------------------------------------------------------- criterion 2

fn rendering_oracle() -> Outcome {
    let mut c = Checks::default();
    let box_grid = DensityGrid::constant(GridLayout::cube(4, 0.5).unwrap(), 1.0, [1.0; 3]);
    let cam = Camera::new(Vec3::new(3.0, 0.0, 0.0), Vec3::zeros(), Vec3::z(), 0.2, 3, 3).unwrap();
    let img = render(&box_grid, &cam, 256).unwrap();
    let want = 1.0 - (-1.0f64).exp();
    let worst = (0..3).map(|ch| (img.get(1, 1, ch) - want).abs()).fold(0.0, f64::max);
    c.check(worst < 1e-4, format!("homogeneous pixel err {worst:e}"));

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut max_weight: f64 = 0.0;
    for trial in 0..12 {
        let layout = GridLayout::cube(8, 0.75).unwrap();
        let scale = [0.5, 5.0, 50.0, 500.0][trial % 4];
        let density: Vec<f64> = (0..layout.node_count()).map(|_| scale * rng.random::<f64>()).collect();
        let grid = DensityGrid::from_parts(layout, density.clone(), vec![[1.0; 3]; density.len()]).unwrap();
        let cam = Camera::orbit(Vec3::zeros(), 2.5, rng.random::<f64>() * 6.28, 0.4, 0.7, 12, 12).unwrap();
        for spp in [1, 16, 128] {
            let (img, weights) = render_with_opacity(&grid, &cam, spp).unwrap();
            max_weight = weights.iter().copied().fold(max_weight, f64::max);
            c.check(
                weights.iter().all(|&w| (0.0..=1.0).contains(&w)),
                format!("weights trial {trial} spp {spp}"),
            );
            // colors accumulate separately from the weights, so allow rounding
            c.check(img.data().iter().all(|&v| v <= 1.0 + 1e-12), format!("pixel bound trial {trial}"));
        }
    }
    c.outcome(&format!("max weight sum {max_weight:.15}"))
}

// ---------------------------------------------------------------- criterion 3

fn probe_views(field_render: impl Fn(&Camera) -> Image) -> Vec<View> {
    (0..3)
        .map(|i| {
            let camera = Camera::orbit(Vec3::zeros(), 2.5, 0.4 + 2.1 * i as f64, 0.3, 0.6, 12, 12).unwrap();
            let image = field_render(&camera);
            View { camera, image }
        })
        .collect()
}

fn probes(layout: &GridLayout, seed: u64, n: usize) -> Vec<usize> {
    let pool: Vec<usize> = (0..layout.node_count())
        .filter(|&i| {
            let (a, b, c) = layout.coords(i);
            layout.node_position(a, b, c).norm() < 0.55
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample(&mut rng, pool.len(), n).into_iter().map(|i| pool[i]).collect()
}

fn rel_err(fd: f64, analytic: f64) -> f64 {
    (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-8)
}

fn gradient_suite() -> Outcome {
    let layout = GridLayout::cube(10, 0.75).unwrap();
    let h = 1e-6;

    let target = DensityGrid::from_fn(layout.clone(), |p| {
        (6.0 * (-p.norm_squared() / 0.1).exp(), [0.8, 0.5 - 0.3 * p.z, 0.3 + 0.2 * p.x])
    });
    let views = probe_views(|cam| render(&target, cam, 32).unwrap());
    let start = DensityGrid::from_fn(layout.clone(), |p| {
        (3.0 * (-p.norm_squared() / 0.2).exp() + 0.2, [0.4 + 0.2 * p.y, 0.5, 0.6])
    });
    let (_, g1) = stage1_loss_and_grad(&start, &views, 32).unwrap();
    let loss1 = |g: &DensityGrid| stage1_loss_and_grad(g, &views, 32).unwrap().0;
    let mut worst1: f64 = 0.0;
    let mut n1 = 0;
    for (k, node) in probes(&layout, 31, 24).into_iter().enumerate() {
        let (mut p, mut m) = (start.clone(), start.clone());
        let analytic = if k % 2 == 0 {
            p.density[node] += h;
            m.density[node] -= h;
            g1.scalar[node]
        } else {
            p.color[node][k % 3] += h;
            m.color[node][k % 3] -= h;
            g1.color[node][k % 3]
        };
        worst1 = worst1.max(rel_err((loss1(&p) - loss1(&m)) / (2.0 * h), analytic));
        n1 += 1;
    }

    let cfg = Stage2Config {
        samples_per_ray: 32,
        ..Stage2Config::default()
    };
    let truth = SdfGrid::from_fn(layout.clone(), |p| (0.4 - p.norm(), [0.9, 0.6, 0.3]));
    let views2 = probe_views(|cam| render(&cfg.field(&truth), cam, 32).unwrap());
    let start2 = SdfGrid::from_fn(layout.clone(), |p| (0.33 - p.norm() + 0.05 * p.x * p.y, [0.5 + 0.2 * p.z, 0.5, 0.4]));
    let pseudo_cam = Camera::orbit(Vec3::zeros(), 2.5, 1.3, 0.5, 0.6, 12, 12).unwrap();
    let pseudo = Image::from_fn(12, 12, 3, |x, y, ch| 0.2 + 0.05 * ((x + 2 * y + ch) % 7) as f64).unwrap();
    let obj = |s: &SdfGrid| {
        stage2_objective(s, &views2, Some((&pseudo_cam, &pseudo)), &cfg)
            .unwrap()
    };
    let (terms, g2) = obj(&start2);
    let mut worst2: f64 = 0.0;
    let mut n2 = 0;
    for (k, node) in probes(&layout, 32, 24).into_iter().enumerate() {
        let (mut p, mut m) = (start2.clone(), start2.clone());
        let analytic = if k % 2 == 0 {
            p.values[node] += h;
            m.values[node] -= h;
            g2.scalar[node]
        } else {
            p.color[node][k % 3] += h;
            m.color[node][k % 3] -= h;
            g2.color[node][k % 3]
        };
        worst2 = worst2.max(rel_err((obj(&p).0.total - obj(&m).0.total) / (2.0 * h), analytic));
        n2 += 1;
    }
    let mut c = Checks::default();
    c.check(n1 >= 20 && worst1 < 1e-3, "stage 1");
    c.check(n2 >= 20 && worst2 < 1e-3 && terms.diff > 0.0, "stage 2");
    c.outcome(&format!(
        "stage 1: {n1} params, max rel {worst1:.2e}; stage 2 (with diffusion term): {n2} params, max rel {worst2:.2e}"
    ))
}

// ---------------------------------------------------------------- criterion 4

fn box_blur(img: &Image) -> Image {
    let (w, h, c) = img.shape();
    Image::from_fn(w, h, c, |x, y, ch| {
        let mut acc = 0.0;
        let mut n = 0.0;
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let (xx, yy) = (x as i64 + dx, y as i64 + dy);
                if xx >= 0 && yy >= 0 && (xx as usize) < w && (yy as usize) < h {
                    acc += img.get(xx as usize, yy as usize, ch);
                    n += 1.0;
                }
            }
        }
        acc / n
    })
    .unwrap()
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Eight enhancer samples of a blurred render, exactly one carrying a blob
/// artifact; the enhancer is pulled toward the ground-truth render.
fn consensus_efficacy() -> Outcome {
    let scene = SceneSpec::sphere(Vec3::zeros(), 0.5, [0.9, 0.6, 0.3]);
    let sched = NoiseSchedule::linear(50, 1e-4, 0.02).unwrap();
    let fusion = FusionConfig::default();
    let n = fusion.n_samples;
    let (mut rejected, mut better) = (0, 0);
    let seeds = 100;
    for seed in 0..seeds as u64 {
        let cam = Camera::orbit(Vec3::zeros(), 2.5, 0.7 * seed as f64, 0.35, 0.7, 32, 32).unwrap();
        let gt = ground_truth_render(&scene, &cam).unwrap();
        let rendered = box_blur(&gt);
        let bad = (seed as usize) % n;
        let mut samples = Vec::with_capacity(n);
        for i in 0..n {
            let cfg = EnhancerConfig {
                artifact_probability: if i == bad { 1.0 } else { 0.0 },
                ..EnhancerConfig::default()
            };
            let mut rng = sample_rng(seed, i as u64);
            let (s, blob) = toy_sample_detailed(&rendered, &gt, &cfg, &sched, &mut rng).unwrap();
            assert_eq!(blob.is_some(), i == bad);
            samples.push(s);
        }
        let out = fuse_samples(&rendered, &samples, &fusion, FusionStrategy::Consensus { iqr: true }).unwrap();
        rejected += usize::from(!out.kept.contains(&bad));
        let single: Vec<f64> = samples.iter().map(|s| mse(s, &gt).unwrap()).collect();
        better += usize::from(mse(&out.fused, &gt).unwrap() < median(&single));
    }
    let ra = rejected as f64 / seeds as f64;
    let rb = better as f64 / seeds as f64;
    Outcome::new(
        ra > 0.95 && rb >= 0.90,
        format!("artifact rejected in {rejected}/{seeds} seeds; fused beats median sample in {better}/{seeds}"),
    )
}

// ---------------------------------------------------------------- criterion 5

fn bandit_suite() -> Outcome {
    let mut c = Checks::default();
    for arms in [1, 2, 5, 17] {
        let mut b = BanditState::new(arms, 1.0).unwrap();
        let mut seen = vec![false; arms];
        let mut rng = ChaCha8Rng::seed_from_u64(arms as u64);
        for _ in 0..arms {
            let a = b.select_action().unwrap();
            seen[a] = true;
            b.update(a, rng.random::<f64>()).unwrap();
        }
        c.check(seen.iter().all(|&s| s), format!("coverage |A|={arms}"));
    }
    let mut total = 0.0;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let mut b = BanditState::new(2, 1.0).unwrap();
        let p = [0.9, 0.1];
        for _ in 0..1000 {
            let a = SelectionStrategy::Ucb.select(&b, &mut rng).unwrap();
            let r = if rng.random::<f64>() < p[a] { 1.0 } else { 0.0 };
            b.update(a, r).unwrap();
        }
        total += b.counts()[0] as f64 / 1000.0;
    }
    let frac = total / 20.0;
    c.check(frac > 0.85, "best-arm fraction");
    c.outcome(&format!("best-arm fraction {frac:.4} over 20 seeds"))
}

// ------------------------------------------------------------ criteria 6 and 7

const SPHERE_SEEDS: u64 = 10;

/// Held-out PSNR gain of the full method over the baseline, per seed.
const GOLDEN_DELTA_DB: Option<[f64; SPHERE_SEEDS as usize]> = Some([
    2.129473, 0.410424, 0.581326, 1.795765, 0.564804, 1.754783, 2.852675, 0.509560, 0.580866, 1.349624,
]);
const GOLDEN_TOLERANCE_DB: f64 = 1e-3;

fn sphere_config(seed: u64) -> RunConfig {
    RunConfig::from_text(&format!(
        "seed = {seed}\n\
         stage1.steps = 300\n\
         stage1.eval_every = 0\n\
         stage2.steps = 300\n\
         stage2.eval_every = 0\n"
    ))
    .unwrap()
}

struct SeedRun {
    cfg: RunConfig,
    assets: Assets,
    coarse: CoarseSdf,
}

static STAGE1: Mutex<BTreeMap<u64, std::sync::Arc<SeedRun>>> = Mutex::new(BTreeMap::new());

fn seed_run(seed: u64) -> std::sync::Arc<SeedRun> {
    if let Some(r) = STAGE1.lock().unwrap().get(&seed) {
        return r.clone();
    }
    let cfg = sphere_config(seed);
    let assets = render_assets(&cfg).unwrap();
    let (grid, _) = run_stage1(&cfg, &assets).unwrap();
    let coarse = coarse_sdf(&cfg, &grid).unwrap();
    let run = std::sync::Arc::new(SeedRun { cfg, assets, coarse });
    STAGE1.lock().unwrap().insert(seed, run.clone());
    run
}

fn variant(selection: Stage2Selection, fusion: FusionStrategy) -> Variant {
    Variant { fusion, selection }
}

const FULL: FusionStrategy = FusionStrategy::Consensus { iqr: true };

fn end_to_end() -> Outcome {
    let cell = 2.0 * 0.75 / 63.0;
    let mut wins = 0;
    let mut chamfers = Vec::new();
    let mut deltas = Vec::new();
    for seed in 0..SPHERE_SEEDS {
        let run = seed_run(seed);
        let full = run_variant(
            &run.cfg,
            &run.assets,
            &run.coarse,
            variant(Stage2Selection::Select(SelectionStrategy::Ucb), FULL),
        )
        .unwrap();
        let base = run_variant(&run.cfg, &run.assets, &run.coarse, variant(Stage2Selection::Off, FULL)).unwrap();
        let delta = full.image.psnr - base.image.psnr;
        println!(
            "    seed {seed}: full {:.4} dB, baseline {:.4} dB, delta {delta:+.4} dB, chamfer {:.5}",
            full.image.psnr, base.image.psnr, full.chamfer
        );
        wins += usize::from(delta > 0.0);
        chamfers.push(full.chamfer);
        deltas.push(delta);
        RESULTS.lock().unwrap().insert((seed, "ucb"), full.image.psnr);
    }
    let mean_chamfer = chamfers.iter().sum::<f64>() / chamfers.len() as f64;
    let mut c = Checks::default();
    c.check(wins as f64 >= 0.8 * SPHERE_SEEDS as f64, "win rate");
    c.check(mean_chamfer < 2.0 * cell, "chamfer");
    let golden = match GOLDEN_DELTA_DB {
        Some(g) => {
            let drift = g.iter().zip(&deltas).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            c.check(drift < GOLDEN_TOLERANCE_DB, "golden deltas");
            format!("golden drift {drift:.2e} dB")
        }
        None => format!(
            "golden deltas not pinned; recorded [{}]",
            deltas.iter().map(|d| format!("{d:.6}")).collect::<Vec<_>>().join(", ")
        ),
    };
    c.outcome(&format!(
        "full beats baseline in {wins}/{SPHERE_SEEDS}; mean chamfer {mean_chamfer:.5} (2 cells = {:.5}); {golden}",
        2.0 * cell
    ))
}

static RESULTS: Mutex<BTreeMap<(u64, &'static str), f64>> = Mutex::new(BTreeMap::new());

fn psnr_of(seed: u64, strategy: SelectionStrategy) -> f64 {
    if let Some(v) = RESULTS.lock().unwrap().get(&(seed, strategy.name())) {
        return *v;
    }
    let run = seed_run(seed);
    let m = run_variant(&run.cfg, &run.assets, &run.coarse, variant(Stage2Selection::Select(strategy), FULL)).unwrap();
    RESULTS.lock().unwrap().insert((seed, strategy.name()), m.image.psnr);
    m.image.psnr
}

fn ablation_structure(report: &AblationReport) -> Vec<String> {
    let mut problems = Vec::new();
    let if_vs: Vec<_> = report.rows.iter().filter(|r| r.block == "if_vs").collect();
    let fusion: Vec<_> = report.rows.iter().filter(|r| r.block == "fusion").collect();
    if if_vs.len() != 6 || fusion.len() != 6 {
        problems.push(format!("rows {}+{}", if_vs.len(), fusion.len()));
    }
    let fusions: Vec<&str> = fusion.iter().map(|r| r.variant.fusion.name()).collect();
    if fusions != ["ours", "max-pixel", "min-pixel", "min-image", "max-image", "no-iqr"] {
        problems.push(format!("fusion rows {fusions:?}"));
    }
    for section in [
        "## Image fusion and viewpoint selection",
        "## Fusion strategy",
        "## Viewpoint selection strategy",
        "| IF | VS | PSNR | SSIM | Chamfer |",
    ] {
        if !report.markdown.contains(section) {
            problems.push(format!("missing `{section}`"));
        }
    }
    let table_rows = report.markdown.lines().filter(|l| l.starts_with("| ") && !l.starts_with("| IF") && !l.starts_with("| Strategy")).count();
    if table_rows != 6 + 6 + 3 {
        problems.push(format!("{table_rows} markdown rows"));
    }
    if report.csv.lines().count() != 13 {
        problems.push("csv rows".into());
    }
    problems
}

fn ablation_shape() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let report = cmd_ablate(&small_config(), tmp.path()).unwrap();
    let problems = ablation_structure(&report);

    let mut holds = 0;
    let mut lines = Vec::new();
    let sets: Vec<Vec<u64>> = (0..3).map(|k| (3 * k..3 * k + 3).collect()).collect();
    for set in &sets {
        let mean = |s: SelectionStrategy| set.iter().map(|&seed| psnr_of(seed, s)).sum::<f64>() / set.len() as f64;
        let (u, r, q) = (
            mean(SelectionStrategy::Ucb),
            mean(SelectionStrategy::Random),
            mean(SelectionStrategy::Sequential),
        );
        let ok = u >= r && r >= q;
        holds += usize::from(ok);
        lines.push(format!("{set:?}: ucb {u:.3} random {r:.3} sequential {q:.3}"));
    }
    for l in &lines {
        println!("    {l}");
    }
    let mut c = Checks::default();
    c.check(problems.is_empty(), format!("structure {problems:?}"));
    c.check(2 * holds > sets.len(), "ordering majority");
    c.outcome(&format!("ordering holds in {holds}/{} seed sets", sets.len()))
}

// ---------------------------------------------------------------- criterion 8

fn small_config() -> RunConfig {
    RunConfig::from_text(
        "seed = 11\n\
         camera.width = 16\n\
         camera.height = 16\n\
         stage1.resolution = 16\n\
         stage1.steps = 20\n\
         stage1.samples_per_ray = 24\n\
         stage1.eval_every = 5\n\
         stage2.resolution = 24\n\
         stage2.steps = 8\n\
         stage2.samples_per_ray = 24\n\
         stage2.eval_every = 4\n\
         eval.chamfer_samples = 2000\n\
         ablate.seeds = 2\n",
    )
    .unwrap()
}

fn all_commands(cfg: &RunConfig, dir: &Path) {
    cmd_scene(cfg, dir).unwrap();
    cmd_reconstruct(cfg, dir, false).unwrap();
    cmd_evaluate(cfg, &dir.join("mesh.obj"), dir).unwrap();
    let ablate_dir = dir.join("ablate");
    fs::create_dir_all(&ablate_dir).unwrap();
    cmd_ablate(cfg, &ablate_dir).unwrap();
}

fn outputs(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut found = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if matches!(p.extension().and_then(|e| e.to_str()), Some("csv" | "obj")) {
                let key = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                found.insert(key, fs::read(&p).unwrap());
            }
        }
    }
    found
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    all_commands(&cfg, &a);
    all_commands(&cfg, &b);
    let (fa, fb) = (outputs(&a), outputs(&b));
    let differing: Vec<&String> = fa.keys().filter(|k| fa.get(*k) != fb.get(*k)).collect();
    let same_set = fa.keys().eq(fb.keys());
    Outcome::new(
        same_set && differing.is_empty() && fa.len() >= 7,
        format!("{} csv/obj files compared; differing: {differing:?}", fa.len()),
    )
}

// ---------------------------------------------------------------------- main

type Criterion = (usize, &'static str, Duration, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        (1, "equation unit suite", Duration::from_secs(10), equation_suite),
        (2, "rendering oracle", Duration::from_secs(10), rendering_oracle),
        (3, "gradient suite", Duration::from_secs(60), gradient_suite),
        (4, "consensus efficacy", Duration::from_secs(120), consensus_efficacy),
        (5, "bandit suite", Duration::from_secs(10), bandit_suite),
        (6, "end-to-end sphere benchmark", Duration::from_secs(30 * 60), end_to_end),
        (7, "ablation shape and ordering", Duration::from_secs(30 * 60), ablation_shape),
        (8, "determinism", Duration::from_secs(10 * 60), determinism),
    ];
    let only: Option<Vec<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let mut failures = 0;
    for (n, name, budget, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let in_time = elapsed <= budget;
        let pass = outcome.pass && in_time;
        failures += usize::from(!pass);
        let budget_note = if in_time {
            String::new()
        } else {
            format!("; over the {} s budget", budget.as_secs())
        };
        println!(
            "criterion {n} [{name}]: {} ({:.1} s) {}{budget_note}",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            outcome.details
        );
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
