//! Sparse-view reconstruction with consensus-fused pseudo-supervision and
//! UCB viewpoint selection, at desk scale on synthetic analytic scenes.

pub mod bandit;
pub mod camera;
pub mod consensus;
pub mod enhancer;
pub mod image;
pub mod recon;
pub mod scene;

pub use camera::{Camera, Ray, Vec3};
pub use image::Image;
