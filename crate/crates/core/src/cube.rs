//! Data containers: planes, hyperspectral cubes (band-major), coded masks,
//! detector measurements and cubes in dispersed (shifted) coordinates.

use serde::{Deserialize, Serialize};
use tensorgrad::{Scalar, Tensor};

use crate::error::{dim, Error, Result};

/// Row-major 2-D real image.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(dim(format!(
                "plane {height}x{width} with {} values",
                data.len()
            )));
        }
        Ok(Plane {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Plane {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn at_mut(&mut self, row: usize, col: usize) -> &mut f64 {
        &mut self.data[row * self.width + col]
    }
}

/// Lateral dispersion along the width axis: band `b` (0-based) lands
/// `step * b` pixels to the right.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispersionSpec {
    pub step: usize,
}

impl Default for DispersionSpec {
    fn default() -> Self {
        DispersionSpec { step: 1 }
    }
}

impl DispersionSpec {
    pub fn new(step: usize) -> Result<Self> {
        if step == 0 {
            return Err(Error::InvalidParameter(
                "dispersion step must be >= 1".into(),
            ));
        }
        Ok(DispersionSpec { step })
    }

    /// Detector width for a `width`-pixel scene with `bands` bands.
    pub fn frame_width(&self, width: usize, bands: usize) -> usize {
        width + self.step * (bands - 1)
    }

    pub fn offset(&self, band: usize) -> usize {
        self.step * band
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum NoiseSpec {
    None,
    Gaussian { sigma: f64, seed: u64 },
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec::None
    }
}

/// `H x W x L` cube stored as `L` row-major planes.
#[derive(Clone, Debug, PartialEq)]
pub struct HsiCube {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub data: Vec<f64>,
}

impl HsiCube {
    pub fn new(height: usize, width: usize, bands: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 || data.len() != height * width * bands {
            return Err(dim(format!(
                "cube {height}x{width}x{bands} with {} values",
                data.len()
            )));
        }
        Ok(HsiCube {
            height,
            width,
            bands,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, bands: usize) -> Self {
        HsiCube {
            height,
            width,
            bands,
            data: vec![0.0; height * width * bands],
        }
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn band(&self, b: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn band_mut(&mut self, b: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[b * n..(b + 1) * n]
    }

    pub fn band_plane(&self, b: usize) -> Plane {
        Plane {
            height: self.height,
            width: self.width,
            data: self.band(b).to_vec(),
        }
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize, band: usize) -> f64 {
        self.data[(band * self.height + row) * self.width + col]
    }

    pub fn same_shape(&self, other: &HsiCube) -> bool {
        self.height == other.height && self.width == other.width && self.bands == other.bands
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Fraction of entries outside `[0, 1]`.
    pub fn out_of_range_fraction(&self) -> f64 {
        let n = self
            .data
            .iter()
            .filter(|v| !(0.0..=1.0).contains(*v))
            .count();
        n as f64 / self.data.len() as f64
    }

    /// Spatial crop `rows x cols` starting at `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, rows: usize, cols: usize) -> Result<HsiCube> {
        if top + rows > self.height || left + cols > self.width || rows == 0 || cols == 0 {
            return Err(dim(format!(
                "crop {rows}x{cols} at ({top},{left}) of {}x{}",
                self.height, self.width
            )));
        }
        let mut out = HsiCube::zeros(rows, cols, self.bands);
        for b in 0..self.bands {
            for r in 0..rows {
                for c in 0..cols {
                    out.data[(b * rows + r) * cols + c] = self.at(top + r, left + c, b);
                }
            }
        }
        Ok(out)
    }

    pub fn flipped(&self, horizontal: bool, vertical: bool) -> HsiCube {
        let mut out = self.clone();
        for b in 0..self.bands {
            for r in 0..self.height {
                for c in 0..self.width {
                    let sr = if vertical { self.height - 1 - r } else { r };
                    let sc = if horizontal { self.width - 1 - c } else { c };
                    out.data[(b * self.height + r) * self.width + c] = self.at(sr, sc, b);
                }
            }
        }
        out
    }
}

/// Binary coded aperture.
#[derive(Clone, Debug, PartialEq)]
pub struct CodedMask {
    pub height: usize,
    pub width: usize,
    pub pattern: Vec<f64>,
}

impl CodedMask {
    pub fn new(height: usize, width: usize, pattern: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || pattern.len() != height * width {
            return Err(dim(format!(
                "mask {height}x{width} with {} entries",
                pattern.len()
            )));
        }
        if pattern.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidParameter(
                "mask entries must be 0 or 1".into(),
            ));
        }
        Ok(CodedMask {
            height,
            width,
            pattern,
        })
    }

    pub fn ones(height: usize, width: usize) -> Self {
        CodedMask {
            height,
            width,
            pattern: vec![1.0; height * width],
        }
    }

    pub fn as_plane(&self) -> Plane {
        Plane {
            height: self.height,
            width: self.width,
            data: self.pattern.clone(),
        }
    }

    pub fn density(&self) -> f64 {
        self.pattern.iter().sum::<f64>() / self.pattern.len() as f64
    }

    pub fn check_matches(&self, height: usize, width: usize) -> Result<()> {
        if self.height != height || self.width != width {
            return Err(dim(format!(
                "mask {}x{} vs scene {height}x{width}",
                self.height, self.width
            )));
        }
        Ok(())
    }
}

/// Snapshot on the detector: `H x (W + step (L - 1))`.
#[derive(Clone, Debug, PartialEq)]
pub struct Measurement {
    pub plane: Plane,
    /// Scene width and band count that produced this snapshot.
    pub scene_width: usize,
    pub bands: usize,
    pub spec: DispersionSpec,
}

impl Measurement {
    pub fn new(
        plane: Plane,
        scene_width: usize,
        bands: usize,
        spec: DispersionSpec,
    ) -> Result<Self> {
        if bands == 0 || plane.width != spec.frame_width(scene_width, bands) {
            return Err(dim(format!(
                "measurement width {} inconsistent with W={scene_width}, L={bands}, step={}",
                plane.width, spec.step
            )));
        }
        Ok(Measurement {
            plane,
            scene_width,
            bands,
            spec,
        })
    }

    pub fn height(&self) -> usize {
        self.plane.height
    }

    pub fn width(&self) -> usize {
        self.plane.width
    }

    pub fn norm(&self) -> f64 {
        self.plane.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Cube in dispersed coordinates: band `b` occupies columns
/// `[step b, step b + W)` of an `H x W+` frame and is zero elsewhere
/// (after `shift`; solvers may write anywhere in the frame).
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftedCube {
    pub height: usize,
    pub scene_width: usize,
    pub bands: usize,
    pub spec: DispersionSpec,
    pub data: Vec<f64>,
}

impl ShiftedCube {
    pub fn zeros(height: usize, scene_width: usize, bands: usize, spec: DispersionSpec) -> Self {
        let fw = spec.frame_width(scene_width, bands);
        ShiftedCube {
            height,
            scene_width,
            bands,
            spec,
            data: vec![0.0; height * fw * bands],
        }
    }

    pub fn frame_width(&self) -> usize {
        self.spec.frame_width(self.scene_width, self.bands)
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.frame_width()
    }

    pub fn band(&self, b: usize) -> &[f64] {
        let n = self.frame_len();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn band_mut(&mut self, b: usize) -> &mut [f64] {
        let n = self.frame_len();
        &mut self.data[b * n..(b + 1) * n]
    }

    pub fn same_layout(&self, other: &ShiftedCube) -> bool {
        self.height == other.height
            && self.scene_width == other.scene_width
            && self.bands == other.bands
            && self.spec == other.spec
    }

    pub fn matches_measurement(&self, y: &Measurement) -> Result<()> {
        if self.height != y.height()
            || self.scene_width != y.scene_width
            || self.bands != y.bands
            || self.spec != y.spec
        {
            return Err(dim(format!(
                "shifted cube {}x{}x{} (step {}) vs measurement {}x{} (W={}, L={}, step {})",
                self.height,
                self.scene_width,
                self.bands,
                self.spec.step,
                y.height(),
                y.width(),
                y.scene_width,
                y.bands,
                y.spec.step
            )));
        }
        Ok(())
    }

    /// Channel-last `[H, W+, L]` tensor for the network.
    pub fn to_hwc<T: Scalar>(&self) -> Tensor<T> {
        let (h, fw, l) = (self.height, self.frame_width(), self.bands);
        let n = h * fw;
        Tensor::from_fn(vec![h, fw, l], |i| {
            let (p, b) = (i / l, i % l);
            T::lit(self.data[b * n + p])
        })
    }

    pub fn from_hwc<T: Scalar>(
        t: &Tensor<T>,
        scene_width: usize,
        spec: DispersionSpec,
    ) -> Result<ShiftedCube> {
        let [h, fw, l] = t.shape() else {
            return Err(dim(format!("expected [H, W+, L], got {:?}", t.shape())));
        };
        let (h, fw, l) = (*h, *fw, *l);
        if spec.frame_width(scene_width, l) != fw {
            return Err(dim(format!("frame width {fw} for W={scene_width}, L={l}")));
        }
        let n = h * fw;
        let mut data = vec![0.0; n * l];
        for (i, v) in t.data().iter().enumerate() {
            data[(i % l) * n + i / l] = v.as_f64();
        }
        Ok(ShiftedCube {
            height: h,
            scene_width,
            bands: l,
            spec,
            data,
        })
    }
}
