//! Reconstruction quality metrics on aligned cubes, peak 1 by default.
//! Both metrics are computed per band and averaged over bands.

use crate::cube::{HsiCube, Plane};
use crate::error::{dim, Result};

/// Returned by [`psnr`] for identical inputs.
pub const PSNR_CAP: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_shapes(a: &HsiCube, b: &HsiCube) -> Result<()> {
    if !a.same_shape(b) {
        return Err(dim(format!(
            "cubes {}x{}x{} and {}x{}x{}",
            a.height, a.width, a.bands, b.height, b.width, b.bands
        )));
    }
    Ok(())
}

pub fn band_psnr(a: &[f64], b: &[f64], peak: f64) -> f64 {
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (peak * peak / mse).log10()).min(PSNR_CAP)
}

/// Mean over bands of `10 log10(peak^2 / MSE_b)`; each band is capped at
/// [`PSNR_CAP`].
pub fn psnr(a: &HsiCube, b: &HsiCube, peak: f64) -> Result<f64> {
    check_shapes(a, b)?;
    let s: f64 = (0..a.bands)
        .map(|k| band_psnr(a.band(k), b.band(k), peak))
        .sum();
    Ok(s / a.bands as f64)
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian filter over the valid region only.
fn filter_valid(p: &Plane, g: &[f64]) -> Plane {
    let n = g.len();
    let (h, w) = (p.height, p.width);
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut tmp = Plane::zeros(h, ow);
    for r in 0..h {
        for c in 0..ow {
            tmp.data[r * ow + c] = (0..n).map(|k| g[k] * p.data[r * w + c + k]).sum();
        }
    }
    let mut out = Plane::zeros(oh, ow);
    for r in 0..oh {
        for c in 0..ow {
            out.data[r * ow + c] = (0..n).map(|k| g[k] * tmp.data[(r + k) * ow + c]).sum();
        }
    }
    out
}

pub fn band_ssim(a: &Plane, b: &Plane, peak: f64) -> f64 {
    let g = gaussian_window();
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let prod = |x: &Plane, y: &Plane| Plane {
        height: x.height,
        width: x.width,
        data: x.data.iter().zip(&y.data).map(|(u, v)| u * v).collect(),
    };
    let mu_a = filter_valid(a, &g);
    let mu_b = filter_valid(b, &g);
    let aa = filter_valid(&prod(a, a), &g);
    let bb = filter_valid(&prod(b, b), &g);
    let ab = filter_valid(&prod(a, b), &g);
    let mut total = 0.0;
    for i in 0..mu_a.data.len() {
        let (ma, mb) = (mu_a.data[i], mu_b.data[i]);
        let va = aa.data[i] - ma * ma;
        let vb = bb.data[i] - mb * mb;
        let cov = ab.data[i] - ma * mb;
        total +=
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    total / mu_a.data.len() as f64
}

/// Gaussian-window SSIM (11x11, sigma 1.5, valid region), per band then mean.
pub fn ssim(a: &HsiCube, b: &HsiCube, peak: f64) -> Result<f64> {
    check_shapes(a, b)?;
    if a.height < SSIM_WINDOW || a.width < SSIM_WINDOW {
        return Err(dim(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            a.height, a.width
        )));
    }
    if a == b {
        return Ok(1.0);
    }
    let s: f64 = (0..a.bands)
        .map(|k| band_ssim(&a.band_plane(k), &b.band_plane(k), peak))
        .sum();
    Ok(s / a.bands as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_offset_is_six_db() {
        let a = HsiCube::zeros(4, 4, 2);
        let mut b = a.clone();
        b.data.iter_mut().for_each(|v| *v = 0.5);
        assert!((psnr(&a, &b, 1.0).unwrap() - 6.0206).abs() < 1e-3);
    }

    #[test]
    fn identical_is_capped() {
        let a = HsiCube::new(2, 2, 1, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP);
        let big = HsiCube::new(12, 12, 1, vec![0.3; 144]).unwrap();
        assert_eq!(ssim(&big, &big, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn window_sums_to_one() {
        assert!((gaussian_window().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn small_extent_rejected() {
        let a = HsiCube::zeros(10, 20, 1);
        assert!(ssim(&a, &a, 1.0).is_err());
    }
}
