//! UCB viewpoint selection over sparse and interpolated cameras.
//!
//! Each candidate camera is an arm. The policy keeps only pull counts, running
//! mean rewards and the global step; arms that were never pulled rank above
//! every explored arm, so the first `|A|` selections sweep the action space
//! in index order.

use std::cmp::Ordering;
use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;

use rand::Rng;
use thiserror::Error;

use crate::camera::{Camera, CameraError};

#[derive(Debug, Error, PartialEq)]
pub enum BanditError {
    #[error("action space is empty")]
    EmptyActionSpace,
    #[error("action {action} out of range for {size} actions")]
    ActionOutOfRange { action: usize, size: usize },
    #[error("reward {0} is not finite")]
    NonFiniteReward(f64),
    #[error("loss {0} must be a non-negative number")]
    NegativeLoss(f64),
    #[error("exploration constant {0} must be non-negative")]
    BadExploration(f64),
    #[error("need at least two cameras to interpolate, got {0}")]
    TooFewCameras(usize),
    #[error("cameras do not share a look-at target")]
    MixedTargets,
    #[error("cameras {0} and {1} are antipodal; the interpolation arc is ambiguous")]
    Antipodal(usize, usize),
    #[error("all cameras coincide; nothing to interpolate between")]
    Coincident,
    #[error(transparent)]
    Camera(#[from] CameraError),
}

/// Candidate viewpoints: the `m` sparse cameras followed by `n` interpolated.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSpace {
    pub viewpoints: Vec<Camera>,
    pub m: usize,
    pub n: usize,
}

impl ActionSpace {
    pub fn build(sparse: &[Camera], n: usize) -> Result<Self, BanditError> {
        if sparse.is_empty() {
            return Err(BanditError::EmptyActionSpace);
        }
        let extra = if n == 0 {
            Vec::new()
        } else {
            interpolate_viewpoints(sparse, n)?
        };
        let mut viewpoints = sparse.to_vec();
        viewpoints.extend(extra);
        Ok(Self {
            viewpoints,
            m: sparse.len(),
            n,
        })
    }

    pub fn len(&self) -> usize {
        self.viewpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.viewpoints.is_empty()
    }
}

fn wrap_angle(a: f64) -> f64 {
    let mut x = a.rem_euclid(TAU);
    if x > PI {
        x -= TAU;
    }
    x
}

/// Inserts `n` cameras between angularly adjacent sparse cameras.
///
/// Cameras are treated as orbiting a shared target: azimuth is interpolated
/// along the arc between neighbours while radius and elevation are linearly
/// interpolated. With two cameras the shorter arc is used; with three or
/// more, arcs run counter-clockwise between azimuth-sorted neighbours,
/// wrapping around. New cameras go one at a time to the arc whose spacing
/// would otherwise be largest (ties to the lowest arc), and are placed evenly
/// inside their arc. Up vector, fov and resolution come from the arc's first
/// camera.
pub fn interpolate_viewpoints(sparse: &[Camera], n: usize) -> Result<Vec<Camera>, BanditError> {
    if sparse.len() < 2 {
        return Err(BanditError::TooFewCameras(sparse.len()));
    }
    let target = sparse[0].target;
    if sparse.iter().any(|c| (c.target - target).norm() > 1e-9) {
        return Err(BanditError::MixedTargets);
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    let params: Vec<(f64, f64, f64)> = sparse.iter().map(|c| c.orbit_params()).collect();

    // (from, to, signed azimuth sweep)
    let arcs: Vec<(usize, usize, f64)> = if sparse.len() == 2 {
        let sweep = wrap_angle(params[1].1 - params[0].1);
        if (sweep.abs() - PI).abs() < 1e-9 {
            return Err(BanditError::Antipodal(0, 1));
        }
        vec![(0, 1, sweep)]
    } else {
        let mut order: Vec<usize> = (0..sparse.len()).collect();
        order.sort_by(|&a, &b| {
            params[a]
                .1
                .rem_euclid(TAU)
                .total_cmp(&params[b].1.rem_euclid(TAU))
                .then(a.cmp(&b))
        });
        (0..order.len())
            .map(|i| {
                let a = order[i];
                let b = order[(i + 1) % order.len()];
                (a, b, (params[b].1 - params[a].1).rem_euclid(TAU))
            })
            .collect()
    };

    // Arc length on the unit orbit, including the elevation change.
    let arc_len = |&(a, b, sweep): &(usize, usize, f64)| {
        let de = params[b].2 - params[a].2;
        (sweep * sweep + de * de).sqrt()
    };
    let lengths: Vec<f64> = arcs.iter().map(arc_len).collect();
    if lengths.iter().all(|&l| l < 1e-12) {
        return Err(BanditError::Coincident);
    }
    let mut counts = vec![0usize; arcs.len()];
    for _ in 0..n {
        let mut best = 0;
        let mut best_gap = -1.0;
        for (i, &len) in lengths.iter().enumerate() {
            let gap = len / (counts[i] + 1) as f64;
            if gap > best_gap + 1e-12 {
                best = i;
                best_gap = gap;
            }
        }
        counts[best] += 1;
    }

    let mut out = Vec::with_capacity(n);
    for (&(a, b, sweep), &count) in arcs.iter().zip(&counts) {
        let (ra, aza, ela) = params[a];
        let (rb, _, elb) = params[b];
        let src = &sparse[a];
        for s in 1..=count {
            let f = s as f64 / (count + 1) as f64;
            let cam = Camera::orbit(
                target,
                ra + (rb - ra) * f,
                aza + sweep * f,
                ela + (elb - ela) * f,
                src.fov_y,
                src.width,
                src.height,
            )?;
            out.push(Camera { up: src.up, ..cam });
        }
    }
    Ok(out)
}

/// A UCB index; unexplored arms order above every finite value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UcbValue {
    Unexplored,
    Finite(f64),
}

impl UcbValue {
    pub fn finite(self) -> Option<f64> {
        match self {
            UcbValue::Finite(v) => Some(v),
            UcbValue::Unexplored => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BanditState {
    counts: Vec<u64>,
    mean_rewards: Vec<f64>,
    t: u64,
    c: f64,
}

impl BanditState {
    pub fn new(actions: usize, c: f64) -> Result<Self, BanditError> {
        if actions == 0 {
            return Err(BanditError::EmptyActionSpace);
        }
        if !(c >= 0.0) || !c.is_finite() {
            return Err(BanditError::BadExploration(c));
        }
        Ok(Self {
            counts: vec![0; actions],
            mean_rewards: vec![0.0; actions],
            t: 0,
            c,
        })
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn mean_rewards(&self) -> &[f64] {
        &self.mean_rewards
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn exploration(&self) -> f64 {
        self.c
    }

    /// `mean_a + c * sqrt(2 ln t / N_a)` for every arm.
    pub fn ucb_values(&self) -> Vec<UcbValue> {
        let ln_t = (self.t.max(1) as f64).ln();
        self.counts
            .iter()
            .zip(&self.mean_rewards)
            .map(|(&n, &mean)| {
                if n == 0 {
                    UcbValue::Unexplored
                } else {
                    UcbValue::Finite(mean + self.c * (2.0 * ln_t / n as f64).sqrt())
                }
            })
            .collect()
    }

    /// Argmax of the UCB values; values within `1e-12` (relative) of the
    /// current best do not displace it, so ties go to the lowest index.
    pub fn select_action(&self) -> Result<usize, BanditError> {
        let values = self.ucb_values();
        if values.is_empty() {
            return Err(BanditError::EmptyActionSpace);
        }
        let mut best = 0;
        for i in 1..values.len() {
            if beats(values[i], values[best]) {
                best = i;
            }
        }
        Ok(best)
    }

    pub fn update(&mut self, action: usize, reward: f64) -> Result<(), BanditError> {
        if action >= self.counts.len() {
            return Err(BanditError::ActionOutOfRange {
                action,
                size: self.counts.len(),
            });
        }
        if !reward.is_finite() {
            return Err(BanditError::NonFiniteReward(reward));
        }
        self.counts[action] += 1;
        self.t += 1;
        let n = self.counts[action] as f64;
        let mean = &mut self.mean_rewards[action];
        *mean += (reward - *mean) / n;
        Ok(())
    }
}

fn beats(candidate: UcbValue, best: UcbValue) -> bool {
    match (candidate, best) {
        (UcbValue::Unexplored, UcbValue::Finite(_)) => true,
        (_, UcbValue::Unexplored) => false,
        (UcbValue::Finite(c), UcbValue::Finite(b)) => c - b > 1e-12 * b.abs().max(1.0),
    }
}

impl PartialOrd for UcbValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match (self, other) {
            (UcbValue::Unexplored, UcbValue::Unexplored) => Some(Ordering::Equal),
            (UcbValue::Unexplored, UcbValue::Finite(_)) => Some(Ordering::Greater),
            (UcbValue::Finite(_), UcbValue::Unexplored) => Some(Ordering::Less),
            (UcbValue::Finite(a), UcbValue::Finite(b)) => a.partial_cmp(b),
        }
    }
}

/// Online min-max scaling of raw losses into `[0, 1]` rewards.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RewardNormalizer {
    range: Option<(f64, f64)>,
}

impl RewardNormalizer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_range(min: f64, max: f64) -> Self {
        Self {
            range: Some((min, max)),
        }
    }

    pub fn range(&self) -> Option<(f64, f64)> {
        self.range
    }

    /// Extends the tracked range with `loss`, then scales it. Returns 0.5
    /// while the range is degenerate.
    pub fn reward(&mut self, loss: f64) -> Result<f64, BanditError> {
        if !(loss >= 0.0) || !loss.is_finite() {
            return Err(BanditError::NegativeLoss(loss));
        }
        let (lo, hi) = match self.range {
            None => (loss, loss),
            Some((lo, hi)) => (lo.min(loss), hi.max(loss)),
        };
        self.range = Some((lo, hi));
        if hi > lo {
            Ok(((loss - lo) / (hi - lo)).clamp(0.0, 1.0))
        } else {
            Ok(0.5)
        }
    }
}

/// How stage 2 picks the view to enhance each iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionStrategy {
    Ucb,
    Random,
    Sequential,
}

impl SelectionStrategy {
    pub fn name(self) -> &'static str {
        match self {
            SelectionStrategy::Ucb => "ucb",
            SelectionStrategy::Random => "random",
            SelectionStrategy::Sequential => "sequential",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ucb" => Some(SelectionStrategy::Ucb),
            "random" => Some(SelectionStrategy::Random),
            "sequential" => Some(SelectionStrategy::Sequential),
            _ => None,
        }
    }

    /// Picks an action. Only `Random` touches `rng`.
    pub fn select<R: Rng + ?Sized>(self, state: &BanditState, rng: &mut R) -> Result<usize, BanditError> {
        if state.is_empty() {
            return Err(BanditError::EmptyActionSpace);
        }
        match self {
            SelectionStrategy::Ucb => state.select_action(),
            SelectionStrategy::Random => Ok(rng.random_range(0..state.len())),
            SelectionStrategy::Sequential => Ok((state.steps() % state.len() as u64) as usize),
        }
    }
}

/// One stage-2 selection, for offline regret analysis.
#[derive(Debug, Clone, PartialEq)]
pub struct BanditLogRow {
    pub step: u64,
    pub action: usize,
    pub raw_loss: f64,
    pub reward: f64,
    pub count: u64,
    pub mean_reward: f64,
    pub ucb: UcbValue,
}

pub const BANDIT_LOG_HEADER: &str = "step,action,raw_loss,reward,count,mean_reward,ucb";

pub fn bandit_log_csv(rows: &[BanditLogRow]) -> String {
    let mut s = String::from(BANDIT_LOG_HEADER);
    s.push('\n');
    for r in rows {
        let ucb = match r.ucb {
            UcbValue::Unexplored => "unexplored".to_string(),
            UcbValue::Finite(v) => format!("{v:.9}"),
        };
        let _ = writeln!(
            s,
            "{},{},{:.9},{:.9},{},{:.9},{}",
            r.step, r.action, r.raw_loss, r.reward, r.count, r.mean_reward, ucb
        );
    }
    s
}
