use crate::image::{Image, ImageError};

use super::SdfGrid;

/// Sum (not mean) of squared element errors.
pub fn nerf_loss(rendered: &Image, gt: &Image) -> Result<f64, ImageError> {
    Ok(nerf_loss_with_grad(rendered, gt)?.0)
}

pub fn nerf_loss_with_grad(rendered: &Image, gt: &Image) -> Result<(f64, Vec<f64>), ImageError> {
    rendered.ensure_same_shape(gt)?;
    let mut loss = 0.0;
    let grad = rendered
        .data()
        .iter()
        .zip(gt.data())
        .map(|(x, y)| {
            let d = x - y;
            loss += d * d;
            2.0 * d
        })
        .collect();
    Ok((loss, grad))
}

/// Sum over elements of `sqrt((x - x*)^2 + eps^2)`.
pub fn charbonnier(pred: &Image, target: &Image, eps: f64) -> Result<f64, ImageError> {
    Ok(charbonnier_with_grad(pred, target, eps)?.0)
}

pub fn charbonnier_with_grad(
    pred: &Image,
    target: &Image,
    eps: f64,
) -> Result<(f64, Vec<f64>), ImageError> {
    pred.ensure_same_shape(target)?;
    let e2 = eps * eps;
    let mut loss = 0.0;
    let grad = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(x, y)| {
            let d = x - y;
            let r = (d * d + e2).sqrt();
            loss += r;
            d / r
        })
        .collect();
    Ok((loss, grad))
}

/// Sum over axis-aligned neighbour pairs of squared value differences.
pub fn tv_reg(sdf: &SdfGrid) -> f64 {
    tv_impl(sdf, None)
}

/// TV value, accumulating its gradient into `grad` (one entry per node).
pub fn tv_reg_with_grad(sdf: &SdfGrid, grad: &mut [f64]) -> f64 {
    tv_impl(sdf, Some(grad))
}

fn tv_impl(sdf: &SdfGrid, mut grad: Option<&mut [f64]>) -> f64 {
    let layout = &sdf.layout;
    let r = layout.resolution();
    let v = &sdf.values;
    let strides = [1, r, r * r];
    let mut total = 0.0;
    for k in 0..r {
        for j in 0..r {
            for i in 0..r {
                let idx = layout.index(i, j, k);
                let pos = [i, j, k];
                for axis in 0..3 {
                    if pos[axis] + 1 >= r {
                        continue;
                    }
                    let nb = idx + strides[axis];
                    let d = v[nb] - v[idx];
                    total += d * d;
                    if let Some(g) = grad.as_deref_mut() {
                        g[nb] += 2.0 * d;
                        g[idx] -= 2.0 * d;
                    }
                }
            }
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recon::GridLayout;
    use approx::assert_abs_diff_eq;

    #[test]
    fn nerf_loss_examples() {
        let a = Image::from_fn(3, 2, 3, |x, y, c| (x + y + c) as f64 * 0.1).unwrap();
        assert_eq!(nerf_loss(&a, &a).unwrap(), 0.0);
        let mut b = a.clone();
        b.set(1, 1, 2, a.get(1, 1, 2) + 0.5);
        assert_abs_diff_eq!(nerf_loss(&a, &b).unwrap(), 0.25, epsilon = 1e-15);
        let c = a.map(|v| v * 0.7 + 0.05);
        let mse = crate::image::mse(&a, &c).unwrap();
        assert_abs_diff_eq!(nerf_loss(&a, &c).unwrap(), 18.0 * mse, epsilon = 1e-12);
    }

    #[test]
    fn charbonnier_examples() {
        let a = Image::filled(2, 2, 1, 0.3).unwrap();
        assert_abs_diff_eq!(charbonnier(&a, &a, 1e-3).unwrap(), 4e-3, epsilon = 1e-15);
        let p = Image::filled(1, 1, 1, 3.0).unwrap();
        let t = Image::filled(1, 1, 1, 0.0).unwrap();
        assert_abs_diff_eq!(charbonnier(&p, &t, 4.0).unwrap(), 5.0, epsilon = 1e-15);
    }

    #[test]
    fn charbonnier_gradient_at_zero_residual() {
        let t = Image::filled(1, 1, 1, 0.4).unwrap();
        let (_, g) = charbonnier_with_grad(&t, &t, 1e-2).unwrap();
        let h = 1e-7;
        let f = |x: f64| charbonnier(&Image::filled(1, 1, 1, x).unwrap(), &t, 1e-2).unwrap();
        let fd = (f(0.4 + h) - f(0.4 - h)) / (2.0 * h);
        assert_eq!(g[0], 0.0);
        assert!(fd.abs() < 1e-4);
        // away from zero the analytic slope matches too
        let (_, g) = charbonnier_with_grad(&Image::filled(1, 1, 1, 0.45).unwrap(), &t, 1e-2).unwrap();
        let fd = (f(0.45 + h) - f(0.45 - h)) / (2.0 * h);
        assert!(((g[0] - fd) / fd).abs() < 1e-4);
    }

    fn edge_oracle(sdf: &SdfGrid) -> f64 {
        // enumerate every node pair and keep those one unit apart
        let mut total = 0.0;
        for a in 0..sdf.values.len() {
            for b in (a + 1)..sdf.values.len() {
                let (ai, aj, ak) = sdf.layout.coords(a);
                let (bi, bj, bk) = sdf.layout.coords(b);
                let dist = ai.abs_diff(bi) + aj.abs_diff(bj) + ak.abs_diff(bk);
                if dist == 1 {
                    let d = sdf.values[a] - sdf.values[b];
                    total += d * d;
                }
            }
        }
        total
    }

    #[test]
    fn tv_examples() {
        let layout = GridLayout::cube(2, 1.0).unwrap();
        let mut values = vec![0.0; 8];
        values[0] = 1.0;
        let sdf = SdfGrid::from_parts(layout.clone(), values, vec![[0.0; 3]; 8]).unwrap();
        assert_eq!(edge_oracle(&sdf), 3.0);
        assert_eq!(tv_reg(&sdf), 3.0);

        let flat = SdfGrid::from_parts(layout, vec![0.7; 8], vec![[0.0; 3]; 8]).unwrap();
        assert_eq!(tv_reg(&flat), 0.0);
    }

    #[test]
    fn tv_shift_invariant_and_gradient() {
        let layout = GridLayout::cube(4, 1.0).unwrap();
        let vals: Vec<f64> = (0..64).map(|i| ((i * 37) % 11) as f64 * 0.1).collect();
        let sdf = SdfGrid::from_parts(layout.clone(), vals.clone(), vec![[0.0; 3]; 64]).unwrap();
        let shifted =
            SdfGrid::from_parts(layout, vals.iter().map(|v| v + 3.0).collect(), vec![[0.0; 3]; 64]).unwrap();
        assert_abs_diff_eq!(tv_reg(&sdf), tv_reg(&shifted), epsilon = 1e-9);
        assert_abs_diff_eq!(tv_reg(&sdf), edge_oracle(&sdf), epsilon = 1e-12);

        let mut g = vec![0.0; 64];
        tv_reg_with_grad(&sdf, &mut g);
        for idx in [0, 21, 42, 63] {
            let h = 1e-6;
            let mut p = sdf.clone();
            p.values[idx] += h;
            let mut m = sdf.clone();
            m.values[idx] -= h;
            let fd = (tv_reg(&p) - tv_reg(&m)) / (2.0 * h);
            assert_abs_diff_eq!(g[idx], fd, epsilon = 1e-6);
        }
    }
}
