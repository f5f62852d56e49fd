//! Seeded synthetic hyperspectral scenes: every pixel spectrum is a convex
//! mixture of a few smooth endmember spectra, with abundance maps built from
//! smooth blobs and sharp-edged shapes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cube::HsiCube;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSceneSpec {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub endmembers: usize,
    /// Spatial scale (pixels) of the smooth abundance blobs.
    pub blob_scale: f64,
    /// Number of sharp-edged rectangles and discs per scene.
    pub shapes: usize,
    /// Bound on `|e[b+1] - 2 e[b] + e[b-1]|` for every endmember.
    pub max_second_diff: f64,
    pub seed: u64,
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        SyntheticSceneSpec {
            height: 48,
            width: 48,
            bands: 8,
            endmembers: 4,
            blob_scale: 8.0,
            shapes: 6,
            max_second_diff: 0.15,
            seed: 2024,
        }
    }
}

impl SyntheticSceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.bands == 0 || self.endmembers == 0 {
            return Err(Error::InvalidParameter(
                "synthetic extents must be positive".into(),
            ));
        }
        if !(self.blob_scale > 0.0) || !(self.max_second_diff >= 0.0) {
            return Err(Error::InvalidParameter(
                "blob_scale > 0 and max_second_diff >= 0 required".into(),
            ));
        }
        Ok(())
    }
}

pub fn max_second_difference(spectrum: &[f64]) -> f64 {
    spectrum
        .windows(3)
        .map(|w| (w[2] - 2.0 * w[1] + w[0]).abs())
        .fold(0.0, f64::max)
}

fn endmember(rng: &mut ChaCha8Rng, bands: usize, bound: f64) -> Vec<f64> {
    let bumps = rng.random_range(1..=3);
    let params: Vec<(f64, f64, f64)> = (0..bumps)
        .map(|_| {
            (
                rng.random_range(-1.0..1.0),
                rng.random_range(0.0..1.0),
                rng.random_range(0.15..0.45),
            )
        })
        .collect();
    let raw: Vec<f64> = (0..bands)
        .map(|b| {
            let t = if bands > 1 {
                b as f64 / (bands - 1) as f64
            } else {
                0.5
            };
            params
                .iter()
                .map(|&(a, mu, s)| a * (-(t - mu) * (t - mu) / (2.0 * s * s)).exp())
                .sum()
        })
        .collect();
    let (lo, hi) = raw
        .iter()
        .fold((f64::MAX, f64::MIN), |(l, h), &v| (l.min(v), h.max(v)));
    let target_lo = rng.random_range(0.02..0.4);
    let target_hi = rng.random_range(target_lo + 0.2..0.98);
    let mut e: Vec<f64> = if hi > lo {
        raw.iter()
            .map(|v| target_lo + (v - lo) / (hi - lo) * (target_hi - target_lo))
            .collect()
    } else {
        vec![0.5 * (target_lo + target_hi); bands]
    };
    let d2 = max_second_difference(&e);
    if d2 > bound {
        let mean = e.iter().sum::<f64>() / bands as f64;
        let s = bound / d2;
        e.iter_mut().for_each(|v| *v = mean + (*v - mean) * s);
    }
    e.iter().map(|v| v.clamp(0.0, 1.0)).collect()
}

fn abundance_field(rng: &mut ChaCha8Rng, spec: &SyntheticSceneSpec) -> Vec<f64> {
    let (h, w) = (spec.height, spec.width);
    let mut f = vec![0.0; h * w];
    let blobs = 3;
    for _ in 0..blobs {
        let cy = rng.random_range(0.0..h as f64);
        let cx = rng.random_range(0.0..w as f64);
        let s = spec.blob_scale * rng.random_range(0.5..1.5);
        let a = rng.random_range(-1.0..1.0);
        for r in 0..h {
            for c in 0..w {
                let d2 = (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2);
                f[r * w + c] += a * (-d2 / (2.0 * s * s)).exp();
            }
        }
    }
    f
}

fn add_shape(rng: &mut ChaCha8Rng, spec: &SyntheticSceneSpec, field: &mut [f64]) {
    let (h, w) = (spec.height, spec.width);
    let amp = rng.random_range(1.5..3.0);
    let cy = rng.random_range(0.0..h as f64);
    let cx = rng.random_range(0.0..w as f64);
    let size = rng.random_range(3.0..(h.min(w) as f64 / 3.0).max(4.0));
    let disc = rng.random_bool(0.5);
    for r in 0..h {
        for c in 0..w {
            let (dy, dx) = (r as f64 - cy, c as f64 - cx);
            let inside = if disc {
                dy * dy + dx * dx <= size * size
            } else {
                dy.abs() <= size && dx.abs() <= 0.6 * size
            };
            if inside {
                field[r * w + c] += amp;
            }
        }
    }
}

/// Scene `index` of the dataset described by `spec`.
pub fn make_scene(spec: &SyntheticSceneSpec, index: usize) -> Result<HsiCube> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64 + 1);
    let e: Vec<Vec<f64>> = (0..spec.endmembers)
        .map(|_| endmember(&mut rng, spec.bands, spec.max_second_diff))
        .collect();
    let mut fields: Vec<Vec<f64>> = (0..spec.endmembers)
        .map(|_| abundance_field(&mut rng, spec))
        .collect();
    for _ in 0..spec.shapes {
        let k = rng.random_range(0..spec.endmembers);
        add_shape(&mut rng, spec, &mut fields[k]);
    }
    let sharpness = 2.5;
    let n = spec.height * spec.width;
    let mut cube = HsiCube::zeros(spec.height, spec.width, spec.bands);
    for p in 0..n {
        let m = fields.iter().map(|f| f[p]).fold(f64::MIN, f64::max);
        let wts: Vec<f64> = fields
            .iter()
            .map(|f| (sharpness * (f[p] - m)).exp())
            .collect();
        let z: f64 = wts.iter().sum();
        for b in 0..spec.bands {
            let v: f64 = wts.iter().zip(&e).map(|(a, s)| a * s[b]).sum::<f64>() / z;
            cube.data[b * n + p] = v.clamp(0.0, 1.0);
        }
    }
    Ok(cube)
}

/// Scenes `0..count`, each reproducible on its own.
pub fn make_synthetic_dataset(spec: &SyntheticSceneSpec, count: usize) -> Result<Vec<HsiCube>> {
    (0..count).map(|i| make_scene(spec, i)).collect()
}
