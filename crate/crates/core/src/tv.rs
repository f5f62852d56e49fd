//! Classical baseline: generalized alternating projection with a
//! channel-wise total-variation denoiser solved by Chambolle's dual
//! projection iteration.

use crate::bp::CassiSystem;
use crate::cassi::{shift_cube, unshift_cube};
use crate::cube::{HsiCube, Measurement, Plane};
use crate::error::{Error, Result};
use crate::exec::{ordered_range, ExecMode};
use crate::unfold::init_estimate;

const TAU: f64 = 0.125;

fn divergence(px: &[f64], py: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut d = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            let mut v = 0.0;
            if c + 1 < w {
                v += px[i];
            }
            if c > 0 {
                v -= px[i - 1];
            }
            if r + 1 < h {
                v += py[i];
            }
            if r > 0 {
                v -= py[i - w];
            }
            d[i] = v;
        }
    }
    d
}

/// `argmin_u 0.5 |u - f|^2 + weight * TV(u)` (isotropic TV, Neumann
/// boundary) after `iterations` dual steps.
pub fn tv_denoise(f: &Plane, weight: f64, iterations: usize) -> Plane {
    if weight <= 0.0 || iterations == 0 {
        return f.clone();
    }
    let (h, w) = (f.height, f.width);
    let n = h * w;
    let mut px = vec![0.0; n];
    let mut py = vec![0.0; n];
    for _ in 0..iterations {
        let d = divergence(&px, &py, h, w);
        let v: Vec<f64> = d.iter().zip(&f.data).map(|(a, b)| a - b / weight).collect();
        for r in 0..h {
            for c in 0..w {
                let i = r * w + c;
                let gx = if c + 1 < w { v[i + 1] - v[i] } else { 0.0 };
                let gy = if r + 1 < h { v[i + w] - v[i] } else { 0.0 };
                let norm = 1.0 + TAU * (gx * gx + gy * gy).sqrt();
                px[i] = (px[i] + TAU * gx) / norm;
                py[i] = (py[i] + TAU * gy) / norm;
            }
        }
    }
    let d = divergence(&px, &py, h, w);
    Plane {
        height: h,
        width: w,
        data: f.data.iter().zip(&d).map(|(a, b)| a - weight * b).collect(),
    }
}

pub fn tv_denoise_cube(cube: &HsiCube, weight: f64, iterations: usize, mode: ExecMode) -> HsiCube {
    let bands = ordered_range(mode, cube.bands, |b| {
        tv_denoise(&cube.band_plane(b), weight, iterations)
    });
    let mut out = HsiCube::zeros(cube.height, cube.width, cube.bands);
    for (b, p) in bands.into_iter().enumerate() {
        out.band_mut(b).copy_from_slice(&p.data);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct GapTvConfig {
    pub iterations: usize,
    pub inner_iterations: usize,
    pub tv_weight: f64,
    /// Accumulate the measurement residual between outer steps.
    pub accelerate: bool,
}

impl Default for GapTvConfig {
    fn default() -> Self {
        GapTvConfig {
            iterations: 30,
            inner_iterations: 20,
            tv_weight: 0.02,
            accelerate: false,
        }
    }
}

/// Alternates an exact back-projection with per-band TV denoising.
pub fn gap_tv_baseline(
    sys: &CassiSystem,
    y: &Measurement,
    config: &GapTvConfig,
    mode: ExecMode,
) -> Result<HsiCube> {
    if config.iterations == 0 {
        return Err(Error::InvalidParameter(
            "gap-tv needs at least one iteration".into(),
        ));
    }
    let mut x = init_estimate(sys, y)?;
    let mut y_acc = y.clone();
    for _ in 0..config.iterations {
        if config.accelerate {
            let ax = sys.forward(&x)?;
            for ((a, &m), &p) in y_acc.plane.data.iter_mut().zip(&y.plane.data).zip(&ax.data) {
                *a += m - p;
            }
        }
        x = sys.bp_update(&x, &y_acc, 0.0)?.x;
        let aligned = unshift_cube(&x);
        let den = tv_denoise_cube(&aligned, config.tv_weight, config.inner_iterations, mode);
        x = shift_cube(&den, sys.spec);
    }
    Ok(unshift_cube(&x))
}
