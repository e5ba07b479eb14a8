//! Photometric loss `(1 - lambda) * L1 + lambda * (1 - SSIM)` and image
//! metrics.
//!
//! SSIM uses an 11x11 Gaussian window with sigma 1.5 applied as a separable
//! correlation with zero padding, so the window is not renormalized at the
//! borders.

use crate::error::{Error, Result};
use crate::image::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
pub const PSNR_CAP: f64 = 100.0;

fn window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut w = [0.0; SSIM_WINDOW];
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable "same" correlation of one `w x h` plane. The kernel is
/// symmetric, so this is also its own adjoint.
fn blur(plane: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let r = SSIM_WINDOW as isize / 2;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                let xx = x as isize + j as isize - r;
                if xx >= 0 && (xx as usize) < w {
                    acc += kv * plane[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, kv) in k.iter().enumerate() {
                let yy = y as isize + j as isize - r;
                if yy >= 0 && (yy as usize) < h {
                    acc += kv * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn channel(img: &Image, c: usize) -> Vec<f64> {
    img.data.iter().skip(c).step_by(3).copied().collect()
}

fn check_shapes(a: &Image, b: &Image) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::DimensionMismatch {
            what: "image pixels",
            expected: a.width * a.height,
            got: b.width * b.height,
        });
    }
    if a.data.is_empty() {
        return Err(Error::InvalidInput("empty image".into()));
    }
    Ok(())
}

/// Mean SSIM over pixels and channels, with its gradient w.r.t. `a` when
/// `want_grad` is set.
fn ssim_impl(a: &Image, b: &Image, want_grad: bool) -> (f64, Option<Vec<f64>>) {
    let (w, h) = (a.width, a.height);
    let k = window();
    let n = (w * h * 3) as f64;
    let mut total = 0.0;
    let mut grad = want_grad.then(|| vec![0.0; w * h * 3]);
    for c in 0..3 {
        let x = channel(a, c);
        let y = channel(b, c);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let mx = blur(&x, w, h, &k);
        let my = blur(&y, w, h, &k);
        let exx = blur(&xx, w, h, &k);
        let eyy = blur(&yy, w, h, &k);
        let exy = blur(&xy, w, h, &k);
        let mut d_mx = vec![0.0; w * h];
        let mut d_exx = vec![0.0; w * h];
        let mut d_exy = vec![0.0; w * h];
        for i in 0..w * h {
            let (ux, uy) = (mx[i], my[i]);
            let a1 = 2.0 * ux * uy + SSIM_C1;
            let a2 = 2.0 * (exy[i] - ux * uy) + SSIM_C2;
            let b1 = ux * ux + uy * uy + SSIM_C1;
            let b2 = (exx[i] - ux * ux) + (eyy[i] - uy * uy) + SSIM_C2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if want_grad {
                let bb = b1 * b2;
                d_mx[i] = (2.0 * uy * a2 - 2.0 * uy * a1) / bb - s * (2.0 * ux / b1 - 2.0 * ux / b2);
                d_exx[i] = -s / b2;
                d_exy[i] = 2.0 * a1 / bb;
            }
        }
        if let Some(g) = grad.as_mut() {
            let gm = blur(&d_mx, w, h, &k);
            let gxx = blur(&d_exx, w, h, &k);
            let gxy = blur(&d_exy, w, h, &k);
            for i in 0..w * h {
                g[i * 3 + c] = (gm[i] + 2.0 * x[i] * gxx[i] + y[i] * gxy[i]) / n;
            }
        }
    }
    (total / n, grad)
}

pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_shapes(a, b)?;
    Ok(ssim_impl(a, b, false).0)
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check_shapes(a, b)?;
    Ok(a.data.iter().zip(&b.data).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / a.data.len() as f64)
}

/// Peak 1.0; capped at 100 dB once the MSE drops below 1e-10.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m < 1e-10 { PSNR_CAP } else { (10.0 * (1.0 / m).log10()).min(PSNR_CAP) })
}

/// Loss value and its gradient w.r.t. `pred`.
pub fn loss(pred: &Image, target: &Image, lambda_dssim: f64) -> Result<(f64, Image)> {
    check_shapes(pred, target)?;
    if !(0.0..1.0).contains(&lambda_dssim) {
        return Err(Error::InvalidInput(format!("lambda_dssim {lambda_dssim} outside [0, 1)")));
    }
    let n = pred.data.len() as f64;
    let mut l1 = 0.0;
    let mut grad = vec![0.0; pred.data.len()];
    for (i, (p, t)) in pred.data.iter().zip(&target.data).enumerate() {
        let d = p - t;
        l1 += d.abs();
        grad[i] = (1.0 - lambda_dssim) * if d > 0.0 { 1.0 } else if d < 0.0 { -1.0 } else { 0.0 } / n;
    }
    let mut value = (1.0 - lambda_dssim) * l1 / n;
    if lambda_dssim > 0.0 {
        let (s, g) = ssim_impl(pred, target, true);
        value += lambda_dssim * (1.0 - s);
        for (a, b) in grad.iter_mut().zip(g.unwrap()) {
            *a -= lambda_dssim * b;
        }
    }
    Ok((value.max(0.0), Image::from_data(pred.width, pred.height, grad)))
}
