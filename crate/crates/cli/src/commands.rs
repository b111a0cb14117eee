//! The subcommands. Each is a pure function of its config, flags and input
//! files; all output goes under the given directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sparsefuse::bandit::{bandit_log_csv, SelectionStrategy};
use sparsefuse::consensus::FusionStrategy;
use sparsefuse::image::{load_image, save_image};
use sparsefuse::recon::{Checkpoint, Mesh, Stage2Selection, View};
use sparsefuse::scene::{ground_truth_render, heldout_cameras};
use sparsefuse::{Camera, Vec3};

use crate::config::{selection_name, RunConfig};
use crate::pipeline::{
    self, coarse_sdf, evaluate_sdf, image_metrics, render_assets, render_mesh, reconstruct, run_stage1,
    run_stage2, scene_chamfer, Assets, Reconstruction, RunMetrics,
};
use crate::CliError;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, bytes).map_err(io_err(path))
}

fn save_ppm(img: &sparsefuse::Image, path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    save_image(img, path).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        source: std::io::Error::other(e.to_string()),
    })
}

const CAMERAS_HEADER: &str = "split,index,file,px,py,pz,tx,ty,tz,ux,uy,uz,fov_y,width,height";

fn camera_row(split: &str, index: usize, file: &str, c: &Camera) -> String {
    let (p, t, u) = (c.position, c.target, c.up);
    format!(
        "{split},{index},{file},{},{},{},{},{},{},{},{},{},{},{},{}",
        p.x, p.y, p.z, t.x, t.y, t.z, u.x, u.y, u.z, c.fov_y, c.width, c.height
    )
}

/// What `cmd_scene` wrote.
#[derive(Debug, Clone)]
pub struct SceneSummary {
    pub files: Vec<PathBuf>,
}

/// Renders the ground-truth sparse and held-out views and writes them with a
/// camera table and the resolved config.
pub fn cmd_scene(cfg: &RunConfig, out: &Path) -> Result<SceneSummary, CliError> {
    let assets = render_assets(cfg)?;
    let mut files = Vec::new();
    let mut csv = format!("{CAMERAS_HEADER}\n");
    for (split, views) in [("sparse", &assets.sparse), ("heldout", &assets.heldout)] {
        for (i, v) in views.iter().enumerate() {
            let name = format!("views/{split}_{i:02}.ppm");
            let path = out.join(&name);
            save_ppm(&v.image, &path)?;
            files.push(path);
            csv.push_str(&camera_row(split, i, &name, &v.camera));
            csv.push('\n');
        }
    }
    let cams = out.join("cameras.csv");
    write(&cams, csv)?;
    files.push(cams);
    let spec = out.join("scene.cfg");
    write(&spec, cfg.to_text())?;
    files.push(spec);
    Ok(SceneSummary { files })
}

fn missing(path: &Path, reason: impl Into<String>) -> CliError {
    CliError::MissingAsset {
        path: path.display().to_string(),
        reason: reason.into(),
    }
}

/// Reads the views written by [`cmd_scene`].
pub fn load_assets(dir: &Path) -> Result<Assets, CliError> {
    let table = dir.join("cameras.csv");
    let text = fs::read_to_string(&table).map_err(|e| missing(&table, format!("{e}; run `sparsefuse scene` first")))?;
    let mut lines = text.lines();
    if lines.next() != Some(CAMERAS_HEADER) {
        return Err(missing(&table, "unexpected header"));
    }
    let mut assets = Assets {
        sparse: Vec::new(),
        heldout: Vec::new(),
    };
    for (no, line) in lines.enumerate() {
        let bad = || missing(&table, format!("malformed row {}", no + 2));
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 15 {
            return Err(bad());
        }
        let f: Vec<f64> = cols[3..13]
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad())?;
        let width: usize = cols[13].parse().map_err(|_| bad())?;
        let height: usize = cols[14].parse().map_err(|_| bad())?;
        let camera = Camera::new(
            Vec3::new(f[0], f[1], f[2]),
            Vec3::new(f[3], f[4], f[5]),
            Vec3::new(f[6], f[7], f[8]),
            f[9],
            width,
            height,
        )
        .map_err(|e| missing(&table, format!("row {}: {e}", no + 2)))?;
        let path = dir.join(cols[2]);
        let image = load_image(&path).map_err(|e| missing(&path, e.to_string()))?;
        if (image.width(), image.height()) != (width, height) {
            return Err(missing(&path, "image size does not match its camera"));
        }
        let view = View { camera, image };
        match cols[0] {
            "sparse" => assets.sparse.push(view),
            "heldout" => assets.heldout.push(view),
            _ => return Err(bad()),
        }
    }
    if assets.sparse.is_empty() || assets.heldout.is_empty() {
        return Err(missing(&table, "needs both sparse and held-out views"));
    }
    Ok(assets)
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

fn train_log_csv(rec: &Reconstruction) -> String {
    let mut s = String::from("stage,step,loss,color,tv,diff,action,kept,heldout_psnr\n");
    for l in &rec.stage1_log {
        let _ = writeln!(s, "1,{},{},,,,,,{}", l.step, fmt(l.loss), opt(l.heldout_psnr));
    }
    if let Some(o) = &rec.stage2 {
        for l in &o.log {
            let t = l.terms;
            let _ = writeln!(
                s,
                "2,{},{},{},{},{},{},{},{}",
                l.step,
                fmt(t.total),
                fmt(t.color),
                fmt(t.tv),
                fmt(t.diff),
                l.action.map(|a| a.to_string()).unwrap_or_default(),
                l.kept.map(|k| k.to_string()).unwrap_or_default(),
                opt(l.heldout_psnr)
            );
        }
    }
    s
}

fn metrics_csv(rec: &Reconstruction) -> String {
    let m = &rec.metrics;
    let mut s = String::from("metric,value\n");
    let mut row = |k: &str, v: String| {
        let _ = writeln!(s, "{k},{v}");
    };
    row("heldout_psnr", fmt(m.image.psnr));
    row("heldout_ssim", fmt(m.image.ssim));
    row("perceptual_proxy_ssim", fmt(m.image.perceptual_proxy));
    row("chamfer", fmt(m.chamfer));
    row("theta", fmt(rec.coarse.theta));
    row("mesh_vertices", rec.mesh.vertices.len().to_string());
    row("mesh_triangles", rec.mesh.triangles.len().to_string());
    row("stage2", (rec.stage2.is_some() as u8).to_string());
    s
}

/// Runs stage 1, the SDF conversion, and stage 2 (unless skipped) on the
/// assets in `out`, then writes the mesh, checkpoints, logs, metrics and
/// held-out renders next to them.
pub fn cmd_reconstruct(cfg: &RunConfig, out: &Path, skip_stage2: bool) -> Result<RunMetrics, CliError> {
    let assets = load_assets(out)?;
    let rec = reconstruct(cfg, &assets, skip_stage2)?;
    let save_ckpt = |c: Checkpoint, name: &str| -> Result<(), CliError> { write(&out.join(name), c.to_bytes()) };
    save_ckpt(Checkpoint::Density(rec.stage1_grid.clone()), "stage1.sfg")?;
    if rec.stage2.is_some() {
        save_ckpt(Checkpoint::Sdf(rec.final_sdf().clone()), "stage2.sfg")?;
    }
    write(&out.join("mesh.obj"), rec.mesh.to_obj())?;
    write(&out.join("train_log.csv"), train_log_csv(&rec))?;
    let bandit_rows = rec.stage2.as_ref().map(|o| o.bandit_log.as_slice()).unwrap_or(&[]);
    write(&out.join("bandit_log.csv"), bandit_log_csv(bandit_rows))?;
    write(&out.join("metrics.csv"), metrics_csv(&rec))?;
    for (i, img) in rec.heldout_renders.iter().enumerate() {
        save_ppm(img, &out.join(format!("heldout/render_{i:02}.ppm")))?;
    }
    write(&out.join("resolved.cfg"), cfg.to_text())?;
    Ok(rec.metrics)
}

/// One stage-2 setting of the ablation matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Variant {
    pub fusion: FusionStrategy,
    pub selection: Stage2Selection,
}

impl Variant {
    fn key(&self) -> (String, String) {
        (self.fusion.name().to_string(), selection_name(self.selection).to_string())
    }
}

const SELECTIONS: [SelectionStrategy; 3] = [
    SelectionStrategy::Ucb,
    SelectionStrategy::Random,
    SelectionStrategy::Sequential,
];

/// Image fusion on/off crossed with the three selection strategies; fusion
/// off takes a single enhancer sample as the target.
pub fn fusion_selection_rows() -> Vec<(bool, Variant)> {
    [true, false]
        .into_iter()
        .flat_map(|on| {
            SELECTIONS.into_iter().map(move |s| {
                let fusion = if on {
                    FusionStrategy::Consensus { iqr: true }
                } else {
                    FusionStrategy::Single
                };
                (
                    on,
                    Variant {
                        fusion,
                        selection: Stage2Selection::Select(s),
                    },
                )
            })
        })
        .collect()
}

/// The six fusion strategies, each with UCB selection.
pub fn fusion_strategy_rows() -> Vec<Variant> {
    FusionStrategy::ALL
        .into_iter()
        .map(|fusion| Variant {
            fusion,
            selection: Stage2Selection::Select(SelectionStrategy::Ucb),
        })
        .collect()
}

/// Stage-2 run of one variant from a shared coarse SDF.
pub fn run_variant(
    cfg: &RunConfig,
    assets: &Assets,
    coarse: &pipeline::CoarseSdf,
    v: Variant,
) -> Result<RunMetrics, CliError> {
    let mut s2 = cfg.stage2_config();
    s2.fusion_strategy = v.fusion;
    s2.selection = v.selection;
    let out = run_stage2(cfg, &s2, assets, coarse.sdf.clone())?;
    let (_, _, m) = evaluate_sdf(cfg, &s2, assets, &out.sdf)?;
    Ok(m)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

/// Mean and sample standard deviation (0 for a single value).
pub fn stat(values: &[f64]) -> Stat {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    Stat { mean, std }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub block: &'static str,
    pub variant: Variant,
    pub psnr: Stat,
    pub ssim: Stat,
    pub perceptual: Stat,
    pub chamfer: Stat,
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub rows: Vec<AblationRow>,
    pub markdown: String,
    pub csv: String,
    pub runs_csv: String,
}

fn pm(s: Stat, digits: usize) -> String {
    format!("{:.*} ± {:.*}", digits, s.mean, digits, s.std)
}

fn ablation_markdown(seeds: &[u64], rows: &[AblationRow]) -> String {
    let mut s = String::new();
    let first = seeds.first().copied().unwrap_or(0);
    let last = seeds.last().copied().unwrap_or(0);
    let _ = writeln!(s, "Mean ± std over {} seeds ({first}..={last}).\n", seeds.len());
    let line = |r: &AblationRow| format!("{} | {} | {}", pm(r.psnr, 2), pm(r.ssim, 4), pm(r.chamfer, 4));

    let _ = writeln!(s, "## Image fusion and viewpoint selection\n");
    let _ = writeln!(s, "| IF | VS | PSNR | SSIM | Chamfer |\n|---|---|---|---|---|");
    for r in rows.iter().filter(|r| r.block == "if_vs") {
        let on = if r.variant.fusion == FusionStrategy::Single { "off" } else { "on" };
        let _ = writeln!(s, "| {on} | {} | {} |", selection_name(r.variant.selection), line(r));
    }
    let _ = writeln!(s, "\n## Fusion strategy\n");
    let _ = writeln!(s, "| Strategy | PSNR | SSIM | Chamfer |\n|---|---|---|---|");
    for r in rows.iter().filter(|r| r.block == "fusion") {
        let _ = writeln!(s, "| {} | {} |", r.variant.fusion.name(), line(r));
    }
    let _ = writeln!(s, "\n## Viewpoint selection strategy\n");
    let _ = writeln!(s, "| Strategy | PSNR | SSIM | Chamfer |\n|---|---|---|---|");
    for r in rows
        .iter()
        .filter(|r| r.block == "if_vs" && r.variant.fusion != FusionStrategy::Single)
    {
        let _ = writeln!(s, "| {} | {} |", selection_name(r.variant.selection), line(r));
    }
    s
}

const ABLATION_HEADER: &str = "block,fusion,selection,seeds,psnr_mean,psnr_std,ssim_mean,ssim_std,\
perceptual_proxy_mean,perceptual_proxy_std,chamfer_mean,chamfer_std";

/// Runs the ablation matrix over `cfg.ablate_seeds` consecutive seeds
/// starting at `cfg.seed`. Each seed draws its own sparse cameras and shares
/// one stage-1 run across all variants.
pub fn ablate(cfg: &RunConfig) -> Result<AblationReport, CliError> {
    let seeds: Vec<u64> = (0..cfg.ablate_seeds as u64).map(|k| cfg.seed + k).collect();
    let mut layout: Vec<(&'static str, Variant)> = fusion_selection_rows()
        .into_iter()
        .map(|(_, v)| ("if_vs", v))
        .collect();
    layout.extend(fusion_strategy_rows().into_iter().map(|v| ("fusion", v)));

    let mut per_run: BTreeMap<(String, String), Vec<RunMetrics>> = BTreeMap::new();
    let mut runs_csv = String::from("seed,fusion,selection,psnr,ssim,perceptual_proxy,chamfer\n");
    for &seed in &seeds {
        let mut c = cfg.clone();
        c.seed = seed;
        let assets = render_assets(&c)?;
        let (grid, _) = run_stage1(&c, &assets)?;
        let coarse = coarse_sdf(&c, &grid)?;
        let mut done: BTreeMap<(String, String), RunMetrics> = BTreeMap::new();
        for (_, v) in &layout {
            if done.contains_key(&v.key()) {
                continue;
            }
            let m = run_variant(&c, &assets, &coarse, *v)?;
            let (f, s) = v.key();
            let _ = writeln!(
                runs_csv,
                "{seed},{f},{s},{},{},{},{}",
                fmt(m.image.psnr),
                fmt(m.image.ssim),
                fmt(m.image.perceptual_proxy),
                fmt(m.chamfer)
            );
            done.insert(v.key(), m);
        }
        for (k, m) in done {
            per_run.entry(k).or_default().push(m);
        }
    }

    let rows: Vec<AblationRow> = layout
        .iter()
        .map(|(block, v)| {
            let ms = &per_run[&v.key()];
            let col = |f: fn(&RunMetrics) -> f64| stat(&ms.iter().map(f).collect::<Vec<_>>());
            AblationRow {
                block,
                variant: *v,
                psnr: col(|m| m.image.psnr),
                ssim: col(|m| m.image.ssim),
                perceptual: col(|m| m.image.perceptual_proxy),
                chamfer: col(|m| m.chamfer),
            }
        })
        .collect();

    let mut csv = format!("{ABLATION_HEADER}\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.block,
            r.variant.fusion.name(),
            selection_name(r.variant.selection),
            seeds.len(),
            fmt(r.psnr.mean),
            fmt(r.psnr.std),
            fmt(r.ssim.mean),
            fmt(r.ssim.std),
            fmt(r.perceptual.mean),
            fmt(r.perceptual.std),
            fmt(r.chamfer.mean),
            fmt(r.chamfer.std)
        );
    }
    Ok(AblationReport {
        markdown: ablation_markdown(&seeds, &rows),
        seeds,
        rows,
        csv,
        runs_csv,
    })
}

/// [`ablate`], written to `ablation.md`, `ablation.csv` and
/// `ablation_runs.csv`.
pub fn cmd_ablate(cfg: &RunConfig, out: &Path) -> Result<AblationReport, CliError> {
    let report = ablate(cfg)?;
    write(&out.join("ablation.md"), &report.markdown)?;
    write(&out.join("ablation.csv"), &report.csv)?;
    write(&out.join("ablation_runs.csv"), &report.runs_csv)?;
    write(&out.join("resolved.cfg"), cfg.to_text())?;
    Ok(report)
}

/// Scores a mesh against the configured scene: the mesh is ray-cast with
/// scene shading from the held-out cameras and compared with the reference
/// renders; Chamfer is measured against the analytic surface.
pub fn cmd_evaluate(cfg: &RunConfig, mesh_path: &Path, out: &Path) -> Result<RunMetrics, CliError> {
    let text = fs::read_to_string(mesh_path).map_err(|e| missing(mesh_path, e.to_string()))?;
    let mesh = Mesh::from_obj(&text)?;
    let cams = heldout_cameras(&cfg.scene, cfg.heldout_views, &cfg.rig)?;
    let mut views = Vec::with_capacity(cams.len());
    let mut renders = Vec::with_capacity(cams.len());
    for camera in cams {
        renders.push(render_mesh(&mesh, &cfg.scene, &camera)?);
        let image = ground_truth_render(&cfg.scene, &camera)?;
        views.push(View { camera, image });
    }
    let image = image_metrics(&renders, &views)?;
    let chamfer = scene_chamfer(&cfg.scene, &mesh, cfg.chamfer_samples)?;
    let m = RunMetrics { image, chamfer };
    let csv = format!(
        "metric,value\nheldout_psnr,{}\nheldout_ssim,{}\nperceptual_proxy_ssim,{}\nchamfer,{}\n",
        fmt(image.psnr),
        fmt(image.ssim),
        fmt(image.perceptual_proxy),
        fmt(chamfer)
    );
    write(&out.join("evaluation.csv"), csv)?;
    Ok(m)
}
