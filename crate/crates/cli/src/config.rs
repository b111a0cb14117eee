//! Plain-text run configuration: one `key = value` pair per line, dotted
//! section keys, `#` comments. Every key has a default except `seed`.
//! Unknown keys are errors so that typos cannot silently fall back to a
//! default.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use sparsefuse::bandit::SelectionStrategy;
use sparsefuse::consensus::{FusionConfig, FusionStrategy};
use sparsefuse::enhancer::{EnhancerConfig, NoiseSchedule};
use sparsefuse::recon::{
    LossWeights, OptimizerKind, Stage1Config, Stage2Config, Stage2Selection, DEFAULT_THETA_FRACTION,
};
use sparsefuse::scene::{CameraRig, Primitive, SceneSpec, Shape, MAX_PRIMITIVES};
use sparsefuse::Vec3;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("`{field}`: {reason}")]
pub struct ConfigError {
    pub field: String,
    pub reason: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

/// Splits config text into key/value pairs. Duplicate keys are rejected.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut map = BTreeMap::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::new(format!("line {}", no + 1), "expected `key = value`"));
        };
        let key = key.trim();
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(ConfigError::new(format!("line {}", no + 1), "malformed key"));
        }
        if map.insert(key.to_string(), value.trim().to_string()).is_some() {
            return Err(ConfigError::new(key, "given more than once"));
        }
    }
    Ok(map)
}

/// Key lookup that records which keys were consumed.
struct Reader {
    map: BTreeMap<String, String>,
    used: BTreeSet<String>,
}

impl Reader {
    fn raw(&mut self, key: &str) -> Option<String> {
        let v = self.map.get(key).cloned();
        if v.is_some() {
            self.used.insert(key.to_string());
        }
        v
    }

    fn has(&self, key: &str) -> bool {
        self.map.contains_key(key)
    }

    fn get<T: FromStr>(&mut self, key: &str, default: T) -> Result<T, ConfigError> {
        match self.raw(key) {
            None => Ok(default),
            Some(s) => s
                .parse()
                .map_err(|_| ConfigError::new(key, format!("cannot parse `{s}`"))),
        }
    }

    fn bool(&mut self, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.raw(key).as_deref() {
            None => Ok(default),
            Some("true" | "on" | "yes") => Ok(true),
            Some("false" | "off" | "no") => Ok(false),
            Some(s) => Err(ConfigError::new(key, format!("expected true or false, got `{s}`"))),
        }
    }

    fn triple(&mut self, key: &str, default: [f64; 3]) -> Result<[f64; 3], ConfigError> {
        let Some(s) = self.raw(key) else {
            return Ok(default);
        };
        let parts: Vec<f64> = s
            .split_whitespace()
            .map(|p| p.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| ConfigError::new(key, format!("cannot parse `{s}`")))?;
        match parts[..] {
            [a, b, c] if parts.iter().all(|v| v.is_finite()) => Ok([a, b, c]),
            _ => Err(ConfigError::new(key, "expected three finite numbers")),
        }
    }

    fn finish(self) -> Result<(), ConfigError> {
        match self.map.keys().find(|k| !self.used.contains(*k)) {
            Some(k) => Err(ConfigError::new(k.clone(), "unknown key")),
            None => Ok(()),
        }
    }
}

fn check(ok: bool, field: &str, reason: &str) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::new(field, reason))
    }
}

/// Attributes a validation message to the first key whose parameter name it
/// mentions, else to `section`.
fn blame(reason: String, section: &str, names: &[(&str, &str)]) -> ConfigError {
    let field = names
        .iter()
        .find(|(word, _)| reason.contains(word))
        .map_or(section, |(_, key)| key);
    ConfigError::new(field, reason)
}

fn vec3(v: [f64; 3]) -> Vec3 {
    Vec3::new(v[0], v[1], v[2])
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl ScheduleConfig {
    pub fn build(&self) -> NoiseSchedule {
        NoiseSchedule::linear(self.steps, self.beta_start, self.beta_end)
            .expect("schedule validated when the config was read")
    }
}

/// Everything one run depends on.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub scene: SceneSpec,
    pub sparse_views: usize,
    pub heldout_views: usize,
    /// Interpolated viewpoints per arc between adjacent sparse views.
    pub interpolated_views: usize,
    pub rig: CameraRig,
    /// Half side of the cubic reconstruction volume centred at the origin.
    pub grid_half_extent: f64,
    pub stage1_resolution: usize,
    pub stage1_init_density: f64,
    pub stage1: Stage1Config,
    pub stage2_resolution: usize,
    pub theta_fraction: f64,
    pub cleanup: bool,
    /// `fusion_strategy` here is the requested one; see [`Self::stage2_config`].
    pub stage2: Stage2Config,
    pub fusion_enabled: bool,
    pub enhancer: EnhancerConfig,
    pub schedule: ScheduleConfig,
    pub bandit_c: f64,
    pub ablate_seeds: usize,
    pub chamfer_samples: usize,
}

fn read_primitive(r: &mut Reader, prefix: &str) -> Result<Primitive, ConfigError> {
    let key = |k: &str| format!("{prefix}{k}");
    let name = r.get(&key("primitive"), "sphere".to_string())?;
    let center = vec3(r.triple(&key("center"), [0.0; 3])?);
    let shape = match name.as_str() {
        "sphere" => Shape::Sphere {
            center,
            radius: r.get(&key("radius"), 0.5)?,
        },
        "box" => Shape::Box {
            center,
            half: vec3(r.triple(&key("half_extents"), [0.35; 3])?),
        },
        "torus" => Shape::Torus {
            center,
            major: r.get(&key("major_radius"), 0.45)?,
            minor: r.get(&key("minor_radius"), 0.15)?,
        },
        other => {
            return Err(ConfigError::new(
                key("primitive"),
                format!("unknown primitive `{other}` (expected sphere, box or torus)"),
            ))
        }
    };
    let albedo = r.triple(&key("albedo"), [0.9, 0.6, 0.3])?;
    Ok(Primitive { shape, albedo })
}

fn read_scene(r: &mut Reader) -> Result<SceneSpec, ConfigError> {
    let primitives = if r.has("scene.parts") {
        let n: usize = r.get("scene.parts", 1)?;
        check(
            (1..=MAX_PRIMITIVES).contains(&n),
            "scene.parts",
            &format!("must lie in 1..={MAX_PRIMITIVES}"),
        )?;
        (0..n)
            .map(|i| read_primitive(r, &format!("scene.part{i}.")))
            .collect::<Result<Vec<_>, _>>()?
    } else {
        vec![read_primitive(r, "scene.")?]
    };
    let light = vec3(r.triple("scene.light", [1.0, -1.0, 1.5])?);
    check(light.norm() > 0.0, "scene.light", "must be non-zero")?;
    let scene = SceneSpec {
        primitives,
        light_dir: light.normalize(),
        ambient: r.get("scene.ambient", 0.1)?,
    };
    scene.validate().map_err(|e| match e {
        sparsefuse::scene::SceneError::Invalid { field, reason } => {
            // A single primitive is configured without the part prefix.
            let field = if scene.primitives.len() == 1 && !r.has("scene.parts") {
                field.replacen("scene.part0", "scene", 1)
            } else {
                field
            };
            ConfigError::new(field, reason)
        }
        other => ConfigError::new("scene", other.to_string()),
    })?;
    Ok(scene)
}

fn read_optimizer(r: &mut Reader, key: &str) -> Result<OptimizerKind, ConfigError> {
    let s = r.get(key, "adam".to_string())?;
    OptimizerKind::parse(&s).ok_or_else(|| ConfigError::new(key, format!("unknown optimizer `{s}`")))
}

/// Parses a selection name as accepted by `bandit.strategy` and `--vs`.
pub fn parse_selection(s: &str) -> Option<Stage2Selection> {
    if s == "off" {
        Some(Stage2Selection::Off)
    } else {
        SelectionStrategy::parse(s).map(Stage2Selection::Select)
    }
}

pub fn selection_name(s: Stage2Selection) -> &'static str {
    match s {
        Stage2Selection::Off => "off",
        Stage2Selection::Select(st) => st.name(),
    }
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        Self::from_pairs(parse_pairs(text)?)
    }

    pub fn from_pairs(map: BTreeMap<String, String>) -> Result<Self, ConfigError> {
        let mut r = Reader {
            map,
            used: BTreeSet::new(),
        };
        let seed = match r.raw("seed") {
            None => return Err(ConfigError::new("seed", "required (set it in the config or pass --seed)")),
            Some(s) => s
                .parse::<u64>()
                .map_err(|_| ConfigError::new("seed", format!("cannot parse `{s}` as an unsigned integer")))?,
        };
        let scene = read_scene(&mut r)?;

        let sparse_views = r.get("views.sparse", 6usize)?;
        check(sparse_views >= 2, "views.sparse", "need at least 2 sparse views")?;
        let heldout_views = r.get("views.heldout", 4usize)?;
        check(heldout_views >= 1, "views.heldout", "need at least 1 held-out view")?;
        let interpolated_views = r.get("views.interpolated", sparse_views)?;
        check(interpolated_views >= 1, "views.interpolated", "must be at least 1")?;

        let rig = CameraRig {
            radius: r.get("camera.radius", 2.5)?,
            elevation: r.get("camera.elevation", 0.35)?,
            fov_y: r.get("camera.fov", 0.7)?,
            width: r.get("camera.width", 32usize)?,
            height: r.get("camera.height", 32usize)?,
        };
        check(
            rig.radius > scene.bounding_radius(),
            "camera.radius",
            "must exceed the scene bounding radius",
        )?;
        check(rig.elevation.abs() < 1.5, "camera.elevation", "must lie in (-1.5, 1.5) radians")?;
        check(rig.fov_y > 0.0 && rig.fov_y < 3.0, "camera.fov", "must lie in (0, 3) radians")?;
        check(rig.width >= 8, "camera.width", "must be at least 8")?;
        check(rig.height >= 8, "camera.height", "must be at least 8")?;

        let grid_half_extent = r.get("grid.half_extent", 0.75)?;
        check(grid_half_extent > 0.0, "grid.half_extent", "must be positive")?;

        let s1 = Stage1Config::default();
        let stage1_resolution = r.get("stage1.resolution", 32usize)?;
        check(stage1_resolution >= 4, "stage1.resolution", "must be at least 4")?;
        let stage1_init_density = r.get("stage1.init_density", 5.0)?;
        check(stage1_init_density >= 0.0, "stage1.init_density", "must be non-negative")?;
        let stage1 = Stage1Config {
            steps: r.get("stage1.steps", s1.steps)?,
            optimizer: read_optimizer(&mut r, "stage1.optimizer")?,
            lr_density: r.get("stage1.lr_density", s1.lr_density)?,
            lr_color: r.get("stage1.lr_color", s1.lr_color)?,
            samples_per_ray: r.get("stage1.samples_per_ray", s1.samples_per_ray)?,
            eval_every: r.get("stage1.eval_every", 100usize)?,
        };
        check(stage1.lr_density > 0.0, "stage1.lr_density", "must be positive")?;
        check(stage1.lr_color > 0.0, "stage1.lr_color", "must be positive")?;
        check(stage1.samples_per_ray >= 1, "stage1.samples_per_ray", "must be at least 1")?;

        let s2 = Stage2Config::default();
        let stage2_resolution = r.get("stage2.resolution", 64usize)?;
        check(stage2_resolution >= 4, "stage2.resolution", "must be at least 4")?;
        let theta_fraction = r.get("stage2.theta_fraction", DEFAULT_THETA_FRACTION)?;
        check(
            theta_fraction > 0.0 && theta_fraction < 1.0,
            "stage2.theta_fraction",
            "must lie in (0, 1)",
        )?;
        let cleanup = r.bool("mesh.cleanup", true)?;

        let weights = LossWeights {
            lambda_color: r.get("loss.lambda_color", s2.weights.lambda_color)?,
            lambda_tv: r.get("loss.lambda_tv", s2.weights.lambda_tv)?,
            lambda_diff: r.get("loss.lambda_diff", s2.weights.lambda_diff)?,
            charbonnier_epsilon: r.get("loss.epsilon", s2.weights.charbonnier_epsilon)?,
        };
        weights.validate().map_err(|e| ConfigError::new("loss", e.to_string()))?;

        let fd = FusionConfig::default();
        let beta = match r.raw("fusion.beta").as_deref() {
            None | Some("auto") => None,
            Some(s) => Some(
                s.parse::<f64>()
                    .map_err(|_| ConfigError::new("fusion.beta", format!("cannot parse `{s}`")))?,
            ),
        };
        let fusion = FusionConfig {
            n_samples: r.get("fusion.samples", fd.n_samples)?,
            alpha: r.get("fusion.alpha", fd.alpha)?,
            beta,
            lambda_mse: r.get("fusion.lambda_mse", fd.lambda_mse)?,
            lambda_perc: r.get("fusion.lambda_perc", fd.lambda_perc)?,
            iqr_multiplier: r.get("fusion.iqr_multiplier", fd.iqr_multiplier)?,
            invert_confidence: r.bool("fusion.invert_confidence", fd.invert_confidence)?,
        };
        fusion.validate().map_err(|e| {
            blame(
                e.to_string(),
                "fusion",
                &[
                    ("n_samples", "fusion.samples"),
                    ("alpha", "fusion.alpha"),
                    ("beta", "fusion.beta"),
                    ("iqr_multiplier", "fusion.iqr_multiplier"),
                    ("loss weight", "fusion.lambda_mse"),
                ],
            )
        })?;
        let fusion_enabled = r.bool("fusion.enabled", true)?;
        let strategy_name = r.get("fusion.strategy", "ours".to_string())?;
        let fusion_strategy = FusionStrategy::parse(&strategy_name).ok_or_else(|| {
            ConfigError::new("fusion.strategy", format!("unknown fusion strategy `{strategy_name}`"))
        })?;

        let enhancer = EnhancerConfig {
            t_start_fraction: r.get("enhancer.t_start_fraction", 0.5)?,
            artifact_probability: r.get("enhancer.artifact_probability", 0.1)?,
            artifact_magnitude: r.get("enhancer.artifact_magnitude", 0.5)?,
            oracle_pull: r.get("enhancer.oracle_pull", 0.8)?,
            sample_spread: r.get("enhancer.sample_spread", 0.05)?,
        };
        enhancer.validate().map_err(|e| {
            blame(
                e.to_string(),
                "enhancer",
                &[
                    "enhancer.t_start_fraction",
                    "enhancer.artifact_probability",
                    "enhancer.artifact_magnitude",
                    "enhancer.oracle_pull",
                    "enhancer.sample_spread",
                ]
                .map(|k| (&k["enhancer.".len()..], k)),
            )
        })?;
        let schedule = ScheduleConfig {
            steps: r.get("enhancer.steps", 50usize)?,
            beta_start: r.get("enhancer.beta_start", 1e-4)?,
            beta_end: r.get("enhancer.beta_end", 0.02)?,
        };
        NoiseSchedule::linear(schedule.steps, schedule.beta_start, schedule.beta_end)
            .map_err(|e| ConfigError::new("enhancer.steps", e.to_string()))?;

        let selection_name = r.get("bandit.strategy", "ucb".to_string())?;
        let selection = parse_selection(&selection_name).ok_or_else(|| {
            ConfigError::new(
                "bandit.strategy",
                format!("unknown strategy `{selection_name}` (expected ucb, random, sequential or off)"),
            )
        })?;
        let bandit_c: f64 = r.get("bandit.c", 1.0)?;
        check(bandit_c >= 0.0 && bandit_c.is_finite(), "bandit.c", "must be non-negative")?;

        let stage2 = Stage2Config {
            steps: r.get("stage2.steps", s2.steps)?,
            optimizer: read_optimizer(&mut r, "stage2.optimizer")?,
            lr_sdf: r.get("stage2.lr_sdf", s2.lr_sdf)?,
            lr_color: r.get("stage2.lr_color", s2.lr_color)?,
            samples_per_ray: r.get("stage2.samples_per_ray", s2.samples_per_ray)?,
            weights,
            fusion,
            fusion_strategy,
            selection,
            density_scale: r.get("stage2.density_scale", s2.density_scale)?,
            sharpness: r.get("stage2.sharpness", s2.sharpness)?,
            seed,
            eval_every: r.get("stage2.eval_every", 50usize)?,
        };
        check(stage2.lr_sdf > 0.0, "stage2.lr_sdf", "must be positive")?;
        check(stage2.lr_color > 0.0, "stage2.lr_color", "must be positive")?;
        check(stage2.samples_per_ray >= 1, "stage2.samples_per_ray", "must be at least 1")?;
        check(stage2.density_scale > 0.0, "stage2.density_scale", "must be positive")?;
        check(stage2.sharpness > 0.0, "stage2.sharpness", "must be positive")?;

        let ablate_seeds = r.get("ablate.seeds", 3usize)?;
        check(ablate_seeds >= 1, "ablate.seeds", "must be at least 1")?;
        let chamfer_samples = r.get("eval.chamfer_samples", 20_000usize)?;
        check(chamfer_samples >= 100, "eval.chamfer_samples", "must be at least 100")?;

        r.finish()?;
        Ok(Self {
            seed,
            scene,
            sparse_views,
            heldout_views,
            interpolated_views,
            rig,
            grid_half_extent,
            stage1_resolution,
            stage1_init_density,
            stage1,
            stage2_resolution,
            theta_fraction,
            cleanup,
            stage2,
            fusion_enabled,
            enhancer,
            schedule,
            bandit_c,
            ablate_seeds,
            chamfer_samples,
        })
    }

    /// The stage-2 settings actually used: image fusion off means a single
    /// enhancer sample is taken as the target.
    pub fn stage2_config(&self) -> Stage2Config {
        let mut c = self.stage2.clone();
        if !self.fusion_enabled {
            c.fusion_strategy = FusionStrategy::Single;
        }
        c.seed = self.seed;
        c
    }

    /// Canonical text form; parsing it yields an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        let t = |v: [f64; 3]| format!("{} {} {}", v[0], v[1], v[2]);
        let tv = |v: Vec3| format!("{} {} {}", v.x, v.y, v.z);

        kv("seed", self.seed.to_string());
        let single = self.scene.primitives.len() == 1;
        if !single {
            kv("scene.parts", self.scene.primitives.len().to_string());
        }
        for (i, p) in self.scene.primitives.iter().enumerate() {
            let pre = if single { "scene.".to_string() } else { format!("scene.part{i}.") };
            kv(&format!("{pre}primitive"), p.shape.name().to_string());
            match p.shape {
                Shape::Sphere { center, radius } => {
                    kv(&format!("{pre}center"), tv(center));
                    kv(&format!("{pre}radius"), radius.to_string());
                }
                Shape::Box { center, half } => {
                    kv(&format!("{pre}center"), tv(center));
                    kv(&format!("{pre}half_extents"), tv(half));
                }
                Shape::Torus { center, major, minor } => {
                    kv(&format!("{pre}center"), tv(center));
                    kv(&format!("{pre}major_radius"), major.to_string());
                    kv(&format!("{pre}minor_radius"), minor.to_string());
                }
            }
            kv(&format!("{pre}albedo"), t(p.albedo));
        }
        kv("scene.light", tv(self.scene.light_dir));
        kv("scene.ambient", self.scene.ambient.to_string());

        kv("views.sparse", self.sparse_views.to_string());
        kv("views.heldout", self.heldout_views.to_string());
        kv("views.interpolated", self.interpolated_views.to_string());
        kv("camera.radius", self.rig.radius.to_string());
        kv("camera.elevation", self.rig.elevation.to_string());
        kv("camera.fov", self.rig.fov_y.to_string());
        kv("camera.width", self.rig.width.to_string());
        kv("camera.height", self.rig.height.to_string());
        kv("grid.half_extent", self.grid_half_extent.to_string());

        let s1 = &self.stage1;
        kv("stage1.resolution", self.stage1_resolution.to_string());
        kv("stage1.init_density", self.stage1_init_density.to_string());
        kv("stage1.steps", s1.steps.to_string());
        kv("stage1.optimizer", s1.optimizer.name().to_string());
        kv("stage1.lr_density", s1.lr_density.to_string());
        kv("stage1.lr_color", s1.lr_color.to_string());
        kv("stage1.samples_per_ray", s1.samples_per_ray.to_string());
        kv("stage1.eval_every", s1.eval_every.to_string());

        let s2 = &self.stage2;
        kv("stage2.resolution", self.stage2_resolution.to_string());
        kv("stage2.theta_fraction", self.theta_fraction.to_string());
        kv("stage2.steps", s2.steps.to_string());
        kv("stage2.optimizer", s2.optimizer.name().to_string());
        kv("stage2.lr_sdf", s2.lr_sdf.to_string());
        kv("stage2.lr_color", s2.lr_color.to_string());
        kv("stage2.samples_per_ray", s2.samples_per_ray.to_string());
        kv("stage2.density_scale", s2.density_scale.to_string());
        kv("stage2.sharpness", s2.sharpness.to_string());
        kv("stage2.eval_every", s2.eval_every.to_string());
        kv("mesh.cleanup", self.cleanup.to_string());

        let w = &s2.weights;
        kv("loss.lambda_color", w.lambda_color.to_string());
        kv("loss.lambda_tv", w.lambda_tv.to_string());
        kv("loss.lambda_diff", w.lambda_diff.to_string());
        kv("loss.epsilon", w.charbonnier_epsilon.to_string());

        let f = &s2.fusion;
        kv("fusion.enabled", self.fusion_enabled.to_string());
        kv("fusion.strategy", s2.fusion_strategy.name().to_string());
        kv("fusion.samples", f.n_samples.to_string());
        kv("fusion.alpha", f.alpha.to_string());
        kv("fusion.beta", f.beta.map_or("auto".to_string(), |b| b.to_string()));
        kv("fusion.lambda_mse", f.lambda_mse.to_string());
        kv("fusion.lambda_perc", f.lambda_perc.to_string());
        kv("fusion.iqr_multiplier", f.iqr_multiplier.to_string());
        kv("fusion.invert_confidence", f.invert_confidence.to_string());

        let e = &self.enhancer;
        kv("enhancer.steps", self.schedule.steps.to_string());
        kv("enhancer.beta_start", self.schedule.beta_start.to_string());
        kv("enhancer.beta_end", self.schedule.beta_end.to_string());
        kv("enhancer.t_start_fraction", e.t_start_fraction.to_string());
        kv("enhancer.artifact_probability", e.artifact_probability.to_string());
        kv("enhancer.artifact_magnitude", e.artifact_magnitude.to_string());
        kv("enhancer.oracle_pull", e.oracle_pull.to_string());
        kv("enhancer.sample_spread", e.sample_spread.to_string());

        kv("bandit.strategy", selection_name(s2.selection).to_string());
        kv("bandit.c", self.bandit_c.to_string());
        kv("ablate.seeds", self.ablate_seeds.to_string());
        kv("eval.chamfer_samples", self.chamfer_samples.to_string());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_alone_gives_defaults() {
        let c = RunConfig::from_text("seed = 7\n").unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.sparse_views, 6);
        assert_eq!(c.stage1_resolution, 32);
        assert_eq!(c.stage2_resolution, 64);
        assert_eq!(c.stage1.steps, 2000);
        assert_eq!(c.stage2.steps, 500);
        assert_eq!(c.stage2_config().seed, 7);
        assert!(matches!(c.scene.primitives[0].shape, Shape::Sphere { radius, .. } if radius == 0.5));
    }

    #[test]
    fn text_form_round_trips() {
        let text = "seed = 3\nscene.parts = 2\nscene.part0.primitive = box\n\
                    scene.part1.primitive = torus\nscene.part1.center = 0 0 0.1\n\
                    fusion.beta = 0.02\nfusion.enabled = off\nbandit.strategy = sequential\n";
        let c = RunConfig::from_text(text).unwrap();
        let again = RunConfig::from_text(&c.to_text()).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.stage2_config().fusion_strategy, FusionStrategy::Single);

        let d = RunConfig::from_text("seed = 1").unwrap();
        assert_eq!(RunConfig::from_text(&d.to_text()).unwrap(), d);
    }

    #[test]
    fn errors_name_the_field() {
        let field = |text: &str| RunConfig::from_text(text).unwrap_err().field;
        assert_eq!(field("views.sparse = 6"), "seed");
        assert_eq!(field("seed = 1\nscene.primitive = cube"), "scene.primitive");
        assert_eq!(field("seed = 1\nscene.radius = -1"), "scene.radius");
        assert_eq!(field("seed = 1\nfusion.alpha = 0"), "fusion.alpha");
        assert_eq!(field("seed = 1\nenhancer.oracle_pull = 2"), "enhancer.oracle_pull");
        assert_eq!(field("seed = 1\nscene.albedo = 2 0 0"), "scene.albedo");
        assert_eq!(field("seed = 1\nscene.parts = 2\nscene.part1.primitive = cone"), "scene.part1.primitive");
        assert_eq!(field("seed = 1\nstage1.stpes = 3"), "stage1.stpes");
        assert_eq!(field("seed = 1\nscene.half_extents = 1 1 1"), "scene.half_extents");
        assert_eq!(field("seed = 1\nfusion.strategy = best"), "fusion.strategy");
        assert_eq!(field("seed = 1\ncamera.radius = 0.3"), "camera.radius");
        assert_eq!(field("seed = x"), "seed");
        assert_eq!(field("seed = 1\nseed = 2"), "seed");
        assert_eq!(field("seed = 1\nnonsense"), "line 2");
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let c = RunConfig::from_text("# run\n\nseed = 9 # trailing\n  views.heldout = 2\n").unwrap();
        assert_eq!((c.seed, c.heldout_views), (9, 2));
    }
}
