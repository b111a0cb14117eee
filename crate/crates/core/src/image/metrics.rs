use super::{Image, ImageError};

/// Side length of the uniform SSIM window.
pub const SSIM_WINDOW: usize = 8;

const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Mean squared error over every element.
pub fn mse(a: &Image, b: &Image) -> Result<f64, ImageError> {
    a.ensure_same_shape(b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.len() as f64)
}

/// Peak signal-to-noise ratio in dB. Identical images yield `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64, ImageError> {
    let err = mse(a, b)?;
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / err).log10())
}

/// Mean SSIM over all 8x8 windows (stride 1) of every channel, `peak = 1`.
pub fn ssim(a: &Image, b: &Image) -> Result<f64, ImageError> {
    Ok(ssim_impl(a, b, false)?.0)
}

/// SSIM together with its gradient with respect to every element of `a`.
pub fn ssim_with_grad(a: &Image, b: &Image) -> Result<(f64, Vec<f64>), ImageError> {
    let (value, grad) = ssim_impl(a, b, true)?;
    Ok((value, grad.unwrap_or_default()))
}

fn ssim_impl(a: &Image, b: &Image, want_grad: bool) -> Result<(f64, Option<Vec<f64>>), ImageError> {
    a.ensure_same_shape(b)?;
    let (w, h, ch) = a.shape();
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(ImageError::TooSmallForWindow {
            width: w,
            height: h,
            window: SSIM_WINDOW,
        });
    }
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let windows_x = w - SSIM_WINDOW + 1;
    let windows_y = h - SSIM_WINDOW + 1;
    let total_windows = (windows_x * windows_y * ch) as f64;

    let mut grad = want_grad.then(|| vec![0.0; a.len()]);
    let mut acc = 0.0;
    for c in 0..ch {
        for wy in 0..windows_y {
            for wx in 0..windows_x {
                let mut mx = 0.0;
                let mut my = 0.0;
                for y in wy..wy + SSIM_WINDOW {
                    for x in wx..wx + SSIM_WINDOW {
                        mx += a.get(x, y, c);
                        my += b.get(x, y, c);
                    }
                }
                mx /= n;
                my /= n;
                let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
                for y in wy..wy + SSIM_WINDOW {
                    for x in wx..wx + SSIM_WINDOW {
                        let dx = a.get(x, y, c) - mx;
                        let dy = b.get(x, y, c) - my;
                        vx += dx * dx;
                        vy += dy * dy;
                        cxy += dx * dy;
                    }
                }
                vx /= n;
                vy /= n;
                cxy /= n;

                let lum_num = 2.0 * mx * my + c1;
                let con_num = 2.0 * cxy + c2;
                let lum_den = mx * mx + my * my + c1;
                let con_den = vx + vy + c2;
                let num = lum_num * con_num;
                let den = lum_den * con_den;
                let s = num / den;
                acc += s;

                if let Some(g) = grad.as_mut() {
                    for y in wy..wy + SSIM_WINDOW {
                        for x in wx..wx + SSIM_WINDOW {
                            let xv = a.get(x, y, c);
                            let yv = b.get(x, y, c);
                            let d_lum_num = 2.0 * my / n;
                            let d_con_num = 2.0 * (yv - my) / n;
                            let d_lum_den = 2.0 * mx / n;
                            let d_con_den = 2.0 * (xv - mx) / n;
                            let d_num = d_lum_num * con_num + lum_num * d_con_num;
                            let d_den = d_lum_den * con_den + lum_den * d_con_den;
                            let ds = (d_num - s * d_den) / den;
                            g[a.index(x, y, c)] += ds / total_windows;
                        }
                    }
                }
            }
        }
    }
    Ok((acc / total_windows, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn img1(w: usize, h: usize, v: &[f64]) -> Image {
        Image::from_vec(w, h, 1, v.to_vec()).unwrap()
    }

    #[test]
    fn mse_examples() {
        let z = Image::filled(2, 2, 1, 0.0).unwrap();
        let o = Image::filled(2, 2, 1, 1.0).unwrap();
        assert_eq!(mse(&z, &z).unwrap(), 0.0);
        assert_eq!(mse(&z, &o).unwrap(), 1.0);

        let a = img1(2, 2, &[0.0, 0.5, 1.0, 0.5]);
        let b = img1(2, 2, &[0.1, 0.5, 0.8, 0.5]);
        // scalar-loop oracle
        let mut oracle = 0.0;
        for i in 0..4 {
            let d = a.data()[i] - b.data()[i];
            oracle += d * d;
        }
        oracle /= 4.0;
        assert_abs_diff_eq!(oracle, 0.0125, epsilon = 1e-15);
        assert_abs_diff_eq!(mse(&a, &b).unwrap(), oracle, epsilon = 1e-15);
    }

    #[test]
    fn mse_rejects_shape_mismatch() {
        let a = Image::new(2, 2, 1).unwrap();
        let b = Image::new(2, 2, 3).unwrap();
        assert!(matches!(mse(&a, &b), Err(ImageError::ShapeMismatch(..))));
    }

    #[test]
    fn psnr_examples() {
        let a = img1(2, 2, &[0.0, 0.5, 1.0, 0.5]);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);

        let b = img1(2, 2, &[0.1, 0.5, 0.8, 0.5]);
        assert_abs_diff_eq!(psnr(&a, &b, 1.0).unwrap(), 19.030_899_869_919_435, epsilon = 1e-9);

        // constant offset 0.1 gives mse 0.01
        let c = Image::filled(4, 4, 1, 0.3).unwrap();
        let d = Image::filled(4, 4, 1, 0.4).unwrap();
        assert_abs_diff_eq!(psnr(&c, &d, 1.0).unwrap(), 20.0, epsilon = 1e-9);
    }

    #[test]
    fn ssim_identical_is_one() {
        let a = Image::from_fn(12, 10, 3, |x, y, c| ((x * 7 + y * 3 + c) % 11) as f64 / 10.0).unwrap();
        assert_abs_diff_eq!(ssim(&a, &a).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ssim_constant_with_vanishing_noise() {
        let a = Image::filled(16, 16, 1, 0.5).unwrap();
        let mut prev = 0.0;
        for eps in [1e-2, 1e-3, 1e-4, 1e-6] {
            let b = Image::from_fn(16, 16, 1, |x, y, _| 0.5 + eps * if (x + y) % 2 == 0 { 1.0 } else { -1.0 })
                .unwrap();
            let s = ssim(&a, &b).unwrap();
            assert!(s >= prev - 1e-12);
            prev = s;
        }
        assert_abs_diff_eq!(prev, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn ssim_window_too_large() {
        let a = Image::new(7, 20, 1).unwrap();
        assert!(matches!(ssim(&a, &a), Err(ImageError::TooSmallForWindow { .. })));
    }

    #[test]
    fn ssim_gradient_matches_finite_differences() {
        let a = Image::from_fn(10, 9, 3, |x, y, c| 0.2 + 0.6 * (((x * 5 + y * 3 + c * 7) % 13) as f64 / 13.0)).unwrap();
        let b = Image::from_fn(10, 9, 3, |x, y, c| 0.1 + 0.8 * (((x * 2 + y * 11 + c) % 7) as f64 / 7.0)).unwrap();
        let (_, g) = ssim_with_grad(&a, &b).unwrap();
        let h = 1e-6;
        for i in (0..a.len()).step_by(17) {
            let mut p = a.clone();
            p.data_mut()[i] += h;
            let mut m = a.clone();
            m.data_mut()[i] -= h;
            let fd = (ssim(&p, &b).unwrap() - ssim(&m, &b).unwrap()) / (2.0 * h);
            assert_abs_diff_eq!(g[i], fd, epsilon = 1e-8);
        }
    }
}
