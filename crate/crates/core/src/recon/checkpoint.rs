//! Versioned binary grid checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! | offset | size      | field                                              |
//! |--------|-----------|----------------------------------------------------|
//! | 0      | 8         | magic `SFGRID\0\0`                                 |
//! | 8      | 4 (u32)   | format version, currently 1                        |
//! | 12     | 4 (u32)   | kind: 0 = density grid, 1 = SDF grid               |
//! | 16     | 4 (u32)   | resolution `R`                                     |
//! | 20     | 4 (u32)   | reserved, 0                                        |
//! | 24     | 48 (6xf64)| bounds `min.xyz`, `max.xyz`                        |
//! | 72     | 8·R³      | scalar per node (x fastest, then y, then z)        |
//! | …      | 24·R³     | RGB per node, same order, channels interleaved     |

use std::path::Path;

use crate::camera::Vec3;

use super::{DensityGrid, GridLayout, ReconError, SdfGrid};

pub const MAGIC: &[u8; 8] = b"SFGRID\0\0";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 72;

#[derive(Debug, Clone, PartialEq)]
pub enum Checkpoint {
    Density(DensityGrid),
    Sdf(SdfGrid),
}

fn encode(kind: u32, layout: &GridLayout, scalars: &[f64], colors: &[[f64; 3]]) -> Vec<u8> {
    let n = layout.node_count();
    let mut out = Vec::with_capacity(HEADER_LEN + 32 * n);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&kind.to_le_bytes());
    out.extend_from_slice(&(layout.resolution() as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for v in layout.min().iter().chain(layout.max().iter()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in scalars {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for c in colors {
        for v in c {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            Checkpoint::Density(g) => encode(0, &g.layout, &g.density, &g.color),
            Checkpoint::Sdf(g) => encode(1, &g.layout, &g.values, &g.color),
        }
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ReconError> {
        let bad = |offset: usize, reason: &str| ReconError::Checkpoint {
            offset,
            reason: reason.to_string(),
        };
        if bytes.len() < HEADER_LEN {
            return Err(bad(bytes.len(), "truncated header"));
        }
        if &bytes[..8] != MAGIC {
            return Err(bad(0, "bad magic"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let version = u32_at(8);
        if version != VERSION {
            return Err(bad(8, &format!("unsupported version {version}")));
        }
        let kind = u32_at(12);
        let res = u32_at(16) as usize;
        let min = Vec3::new(f64_at(24), f64_at(32), f64_at(40));
        let max = Vec3::new(f64_at(48), f64_at(56), f64_at(64));
        let layout = GridLayout::new(res, min, max)?;
        let n = layout.node_count();
        let need = HEADER_LEN + 32 * n;
        if bytes.len() != need {
            return Err(bad(
                bytes.len().min(need),
                &format!("expected {need} bytes, found {}", bytes.len()),
            ));
        }
        let scalars: Vec<f64> = (0..n).map(|i| f64_at(HEADER_LEN + 8 * i)).collect();
        let base = HEADER_LEN + 8 * n;
        let colors: Vec<[f64; 3]> = (0..n)
            .map(|i| {
                let o = base + 24 * i;
                [f64_at(o), f64_at(o + 8), f64_at(o + 16)]
            })
            .collect();
        match kind {
            0 => Ok(Checkpoint::Density(DensityGrid::from_parts(layout, scalars, colors)?)),
            1 => Ok(Checkpoint::Sdf(SdfGrid::from_parts(layout, scalars, colors)?)),
            k => Err(bad(12, &format!("unknown grid kind {k}"))),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ReconError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ReconError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
