//! Image quality metrics.

use crate::imaging::{ImageTensor, ImagingError};

/// Reported PSNR when the images are identical.
pub const PSNR_CAP_DB: f64 = 99.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Psnr {
    pub db: f64,
    /// The value hit [`PSNR_CAP_DB`] (zero or negligible error).
    pub capped: bool,
}

/// `10·log10(max_val²/MSE)`, capped at 99 dB.
pub fn psnr(x: &ImageTensor, reference: &ImageTensor, max_val: f64) -> Result<Psnr, ImagingError> {
    x.check_same_shape(reference)?;
    if !(max_val > 0.0 && max_val.is_finite()) {
        return Err(ImagingError::InvalidParameter(format!("max_val must be positive, got {max_val}")));
    }
    let mse = x
        .as_slice()
        .iter()
        .zip(reference.as_slice())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / x.len() as f64;
    if mse == 0.0 {
        return Ok(Psnr { db: PSNR_CAP_DB, capped: true });
    }
    let db = 10.0 * (max_val * max_val / mse).log10();
    Ok(if db >= PSNR_CAP_DB {
        Psnr { db: PSNR_CAP_DB, capped: true }
    } else {
        Psnr { db, capped: false }
    })
}

const WIN: usize = 11;
const WIN_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn window() -> [f64; WIN] {
    let mut w = [0.0; WIN];
    let c = (WIN / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * WIN_SIGMA * WIN_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable Gaussian filter over valid positions of an `h × w` plane.
fn filter_valid(p: &[f64], h: usize, w: usize, k: &[f64; WIN]) -> Vec<f64> {
    let ow = w - WIN + 1;
    let oh = h - WIN + 1;
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for q in 0..ow {
            rows[r * ow + q] = (0..WIN).map(|j| k[j] * p[r * w + q + j]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for q in 0..ow {
            out[r * ow + q] = (0..WIN).map(|j| k[j] * rows[(r + j) * ow + q]).sum();
        }
    }
    out
}

/// Mean SSIM over valid 11×11 Gaussian windows (σ = 1.5, K1 = 0.01,
/// K2 = 0.03, dynamic range 1), averaged over channels.
pub fn ssim(x: &ImageTensor, reference: &ImageTensor) -> Result<f64, ImagingError> {
    x.check_same_shape(reference)?;
    let s = x.shape();
    if s.height < WIN || s.width < WIN {
        return Err(ImagingError::InvalidParameter(format!(
            "SSIM needs at least {WIN}x{WIN} pixels, image is {s}"
        )));
    }
    let k = window();
    let (c1, c2) = (K1 * K1, K2 * K2);
    let mut total = 0.0;
    for ch in 0..s.channels {
        let a = x.channel(ch);
        let b = reference.channel(ch);
        let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(u, v)| f(*u, *v)).collect() };
        let mu_a = filter_valid(a, s.height, s.width, &k);
        let mu_b = filter_valid(b, s.height, s.width, &k);
        let aa = filter_valid(&prod(&|u, _| u * u), s.height, s.width, &k);
        let bb = filter_valid(&prod(&|_, v| v * v), s.height, s.width, &k);
        let ab = filter_valid(&prod(&|u, v| u * v), s.height, s.width, &k);
        let n = mu_a.len();
        let mut sum = 0.0;
        for i in 0..n {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += sum / n as f64;
    }
    Ok(total / s.channels as f64)
}
