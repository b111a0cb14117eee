use super::{DensityGrid, ReconError, SdfGrid};

/// Maps densities to a normalized signed field, positive inside:
/// `(s - theta) / (max - theta)` above the threshold and `(s - theta) / theta`
/// at or below it, so `[0, max]` lands on `[-1, 1]` with `theta -> 0`.
pub fn density_to_sdf(grid: &DensityGrid, theta: f64) -> Result<SdfGrid, ReconError> {
    let max = grid.max_density();
    if !(theta > 0.0) || !(theta < max) {
        return Err(ReconError::BadTheta { theta, max });
    }
    let values = grid
        .density
        .iter()
        .map(|&s| {
            if s > theta {
                (s - theta) / (max - theta)
            } else {
                (s - theta) / theta
            }
        })
        .collect();
    SdfGrid::from_parts(grid.layout.clone(), values, grid.color.clone())
}

/// Fraction of the top-decile mean density used as the default iso level.
pub const DEFAULT_THETA_FRACTION: f64 = 0.2;

/// `fraction` times the mean of the top decile of node densities.
pub fn theta_from_top_decile(grid: &DensityGrid, fraction: f64) -> f64 {
    let mut d = grid.density.clone();
    d.sort_by(|a, b| b.total_cmp(a));
    let top = (d.len() / 10).max(1);
    fraction * d[..top].iter().sum::<f64>() / top as f64
}

pub fn default_theta(grid: &DensityGrid) -> f64 {
    theta_from_top_decile(grid, DEFAULT_THETA_FRACTION)
}

/// Counts of nodes whose sign [`clean_topology`] flipped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TopologyCleanup {
    pub filled: usize,
    pub pruned: usize,
}

/// Makes the inside region a single solid: outside pockets that do not reach
/// the grid boundary become inside, then every inside component but the
/// largest becomes outside. Components use 6-connectivity; flipped nodes keep
/// their magnitude.
pub fn clean_topology(sdf: &mut SdfGrid) -> TopologyCleanup {
    let r = sdf.layout.resolution();
    let mut report = TopologyCleanup::default();

    let outside = components(&sdf.layout, |i| sdf.values[i] <= 0.0);
    for comp in &outside {
        let open = comp.iter().any(|&i| {
            let (x, y, z) = sdf.layout.coords(i);
            [x, y, z].iter().any(|&c| c == 0 || c + 1 == r)
        });
        if !open {
            for &i in comp {
                sdf.values[i] = (-sdf.values[i]).max(f64::EPSILON);
            }
            report.filled += comp.len();
        }
    }

    let inside = components(&sdf.layout, |i| sdf.values[i] > 0.0);
    if let Some(keep) = (0..inside.len()).max_by_key(|&c| (inside[c].len(), std::cmp::Reverse(c))) {
        for (c, comp) in inside.iter().enumerate() {
            if c != keep {
                for &i in comp {
                    sdf.values[i] = -sdf.values[i];
                }
                report.pruned += comp.len();
            }
        }
    }
    report
}

fn components(layout: &super::GridLayout, member: impl Fn(usize) -> bool) -> Vec<Vec<usize>> {
    let r = layout.resolution();
    let mut seen = vec![false; layout.node_count()];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..layout.node_count() {
        if seen[start] || !member(start) {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let mut comp = Vec::new();
        while let Some(i) = stack.pop() {
            comp.push(i);
            let (x, y, z) = layout.coords(i);
            let mut visit = |n: usize| {
                if !seen[n] && member(n) {
                    seen[n] = true;
                    stack.push(n);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < r {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - r);
            }
            if y + 1 < r {
                visit(i + r);
            }
            if z > 0 {
                visit(i - r * r);
            }
            if z + 1 < r {
                visit(i + r * r);
            }
        }
        out.push(comp);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Vec3;
    use crate::recon::GridLayout;
    use approx::assert_abs_diff_eq;

    fn grid_with(values: &[f64]) -> DensityGrid {
        let layout = GridLayout::cube(2, 1.0).unwrap();
        let mut d = values.to_vec();
        d.resize(8, 0.0);
        DensityGrid::from_parts(layout, d, vec![[0.2; 3]; 8]).unwrap()
    }

    fn scalar_oracle(s: f64, theta: f64, max: f64) -> f64 {
        if s > theta {
            (s - theta) / (max - theta)
        } else {
            (s - theta) / theta
        }
    }

    #[test]
    fn endpoint_map_is_exact() {
        let g = grid_with(&[0.0, 10.0, 50.0, 5.0, 30.0]);
        let sdf = density_to_sdf(&g, 10.0).unwrap();
        assert_eq!(&sdf.values[..5], &[-1.0, 0.0, 1.0, -0.5, 0.5]);
        for (s, v) in g.density.iter().zip(&sdf.values) {
            assert_abs_diff_eq!(*v, scalar_oracle(*s, 10.0, 50.0), epsilon = 1e-15);
        }
        assert_eq!(sdf.color, g.color);
    }

    #[test]
    fn rejects_bad_threshold() {
        let g = grid_with(&[0.0, 4.0]);
        assert!(matches!(density_to_sdf(&g, 0.0), Err(ReconError::BadTheta { .. })));
        assert!(matches!(density_to_sdf(&g, 4.0), Err(ReconError::BadTheta { .. })));
        assert!(matches!(density_to_sdf(&g, -1.0), Err(ReconError::BadTheta { .. })));
    }

    #[test]
    fn monotone_and_bounded() {
        let vals: Vec<f64> = (0..8).map(|i| i as f64 * 1.3).collect();
        let g = grid_with(&vals);
        let sdf = density_to_sdf(&g, 3.0).unwrap();
        for w in sdf.values.windows(2) {
            assert!(w[1] >= w[0]);
        }
        assert!(sdf.values.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn cleanup_fills_cavities_and_drops_islands() {
        let layout = GridLayout::cube(12, 1.0).unwrap();
        let shell = |p: &Vec3| {
            let r = p.norm();
            if (0.3..0.7).contains(&r) {
                0.5
            } else if (p - Vec3::new(0.85, 0.85, 0.85)).norm() < 0.2 {
                0.2
            } else {
                -0.5
            }
        };
        let mut sdf = SdfGrid::from_fn(layout.clone(), |p| (shell(p), [0.0; 3]));
        let cavity = sdf.values.iter().enumerate().filter(|(i, v)| {
            let (x, y, z) = layout.coords(*i);
            **v < 0.0 && layout.node_position(x, y, z).norm() < 0.3
        });
        let cavity: Vec<usize> = cavity.map(|(i, _)| i).collect();
        let island = sdf.values.iter().filter(|&&v| v == 0.2).count();
        assert!(!cavity.is_empty() && island > 0);

        let report = clean_topology(&mut sdf);
        assert_eq!(report.filled, cavity.len());
        assert_eq!(report.pruned, island);
        assert!(cavity.iter().all(|&i| sdf.values[i] == 0.5));
        assert!(sdf.values.iter().all(|&v| v != 0.2));
        assert_eq!(clean_topology(&mut sdf), TopologyCleanup::default());
    }

    #[test]
    fn default_theta_uses_top_decile() {
        let layout = GridLayout::cube(10, 1.0).unwrap();
        let mut d = vec![1.0; 1000];
        for v in d.iter_mut().take(100) {
            *v = 20.0;
        }
        let g = DensityGrid::from_parts(layout, d, vec![[0.0; 3]; 1000]).unwrap();
        assert_abs_diff_eq!(theta_from_top_decile(&g, 0.6), 12.0, epsilon = 1e-12);
        assert_abs_diff_eq!(default_theta(&g), 4.0, epsilon = 1e-12);
    }
}
