//! Two-stage grid reconstruction: a density grid trained by volume rendering,
//! converted to a positive-inside SDF, refined with fused pseudo-supervision,
//! and meshed with marching cubes.

mod chamfer;
mod checkpoint;
mod grid;
mod loss;
mod mc_tables;
mod mesh;
mod optim;
mod render;
mod sdf;
mod train;

pub use chamfer::{chamfer_distance, PointSampler, SphereSurface};
pub use checkpoint::Checkpoint;
pub use grid::{interpolate, interpolate_color, DensityGrid, GridLayout, SdfGrid, Stencil};
pub use loss::{charbonnier, charbonnier_with_grad, nerf_loss, nerf_loss_with_grad, tv_reg, tv_reg_with_grad};
pub use mesh::{extract_mesh, Mesh};
pub use optim::{Optimizer, OptimizerKind};
pub use render::{
    render, render_taped, render_with_opacity, FieldGrad, RenderTape, SdfDensity, VolumeField,
    TRANSMITTANCE_CUTOFF,
};
pub use sdf::{
    clean_topology, default_theta, density_to_sdf, theta_from_top_decile, TopologyCleanup,
    DEFAULT_THETA_FRACTION,
};
pub use train::{
    stage1_loss_and_grad, stage2_objective, train_stage1, train_stage2, LossWeights, Stage1Config,
    Stage1Log, Stage2Config, Stage2Log, Stage2Outcome, Stage2Selection, Stage2Terms, View,
};

use thiserror::Error;

use crate::bandit::BanditError;
use crate::camera::CameraError;
use crate::consensus::ConsensusError;
use crate::enhancer::EnhanceError;
use crate::image::ImageError;

#[derive(Debug, Error)]
pub enum ReconError {
    #[error("grid resolution must be at least 2, got {0}")]
    BadResolution(usize),
    #[error("grid bounds must have positive extent on every axis")]
    BadBounds,
    #[error("grid buffer has {actual} entries, expected {expected}")]
    GridLength { expected: usize, actual: usize },
    #[error("non-finite {0}")]
    NonFinite(String),
    #[error("samples per ray must be at least 1")]
    NoSamples,
    #[error("no training views")]
    NoViews,
    #[error("iso threshold {theta} must lie in (0, {max})")]
    BadTheta { theta: f64, max: f64 },
    #[error("SDF has no sign change; mesh would be empty")]
    EmptyMesh,
    #[error("OBJ line {line}: {reason}")]
    ObjParse { line: usize, reason: String },
    #[error("point set is empty")]
    EmptyPointSet,
    #[error("checkpoint byte {offset}: {reason}")]
    Checkpoint { offset: usize, reason: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Camera(#[from] CameraError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Consensus(#[from] ConsensusError),
    #[error(transparent)]
    Bandit(#[from] BanditError),
    #[error(transparent)]
    Enhance(#[from] EnhanceError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
