//! Data fidelity: regularized back-projection onto `{x : Ax = y}` using the
//! diagonal of `A A^T`, plus a plain weighted gradient step.

use std::hash::{DefaultHasher, Hash, Hasher};

use crate::cassi::{apply_adjoint, apply_forward, shifted_masks};
use crate::cube::{CodedMask, DispersionSpec, Measurement, Plane, ShiftedCube};
use crate::error::{dim, Error, Result};

/// Default back-projection regularizer.
pub const DEFAULT_ETA: f64 = 1e-2;

/// Diagonal of `A A^T`: per detector pixel, the sum over bands of the
/// squared shifted mask value.
#[derive(Clone, Debug, PartialEq)]
pub struct AAtDiag {
    pub values: Plane,
    pub mask_hash: u64,
}

fn hash_mask(mask: &CodedMask) -> u64 {
    let mut h = DefaultHasher::new();
    (mask.height, mask.width).hash(&mut h);
    for v in &mask.pattern {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

pub fn compute_aat_diag(mask: &CodedMask, bands: usize, spec: DispersionSpec) -> AAtDiag {
    let masks = shifted_masks(mask, bands, spec);
    let mut values = Plane::zeros(mask.height, masks.frame_width());
    for b in 0..bands {
        for (o, &m) in values.data.iter_mut().zip(masks.band(b)) {
            *o += m * m;
        }
    }
    AAtDiag {
        values,
        mask_hash: hash_mask(mask),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum WeightMode {
    Identity,
    /// Per-detector-pixel weights (e.g. inverse noise std).
    Diagonal(Plane),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FidelityParams {
    pub eta: f64,
    pub gamma: f64,
    pub weight: WeightMode,
}

impl Default for FidelityParams {
    fn default() -> Self {
        FidelityParams {
            eta: DEFAULT_ETA,
            gamma: 0.5,
            weight: WeightMode::Identity,
        }
    }
}

/// Precomputed operator data for one mask, band count and dispersion.
#[derive(Clone, Debug)]
pub struct CassiSystem {
    pub mask: CodedMask,
    pub bands: usize,
    pub spec: DispersionSpec,
    pub masks: ShiftedCube,
    pub diag: AAtDiag,
}

#[derive(Clone, Debug)]
pub struct BpOutcome {
    pub x: ShiftedCube,
    /// Detector pixels with `diag + eta == 0` whose residual was dropped.
    pub uncovered: usize,
}

impl CassiSystem {
    pub fn new(mask: CodedMask, bands: usize, spec: DispersionSpec) -> Self {
        let masks = shifted_masks(&mask, bands, spec);
        let diag = compute_aat_diag(&mask, bands, spec);
        CassiSystem {
            mask,
            bands,
            spec,
            masks,
            diag,
        }
    }

    pub fn height(&self) -> usize {
        self.mask.height
    }

    pub fn scene_width(&self) -> usize {
        self.mask.width
    }

    pub fn frame_width(&self) -> usize {
        self.masks.frame_width()
    }

    pub fn forward(&self, x: &ShiftedCube) -> Result<Plane> {
        apply_forward(x, &self.masks)
    }

    pub fn adjoint(&self, r: &Plane) -> Result<ShiftedCube> {
        apply_adjoint(r, &self.masks)
    }

    fn check(&self, x: &ShiftedCube, y: &Measurement) -> Result<()> {
        x.matches_measurement(y)?;
        if !x.same_layout(&self.masks) {
            return Err(dim("estimate does not match the system layout"));
        }
        Ok(())
    }

    fn residual(&self, x: &ShiftedCube, y: &Measurement) -> Result<Plane> {
        let mut r = self.forward(x)?;
        for (a, &b) in r.data.iter_mut().zip(&y.plane.data) {
            *a -= b;
        }
        Ok(r)
    }

    /// `x' = x - A^T ((A x - y) / (diag + eta))`. Pixels where
    /// `diag + eta == 0` contribute nothing and are counted.
    pub fn bp_update(&self, x: &ShiftedCube, y: &Measurement, eta: f64) -> Result<BpOutcome> {
        if !(eta >= 0.0) {
            return Err(Error::InvalidParameter(format!("eta {eta}")));
        }
        self.check(x, y)?;
        let mut r = self.residual(x, y)?;
        let mut uncovered = 0;
        for (v, &d) in r.data.iter_mut().zip(&self.diag.values.data) {
            let denom = d + eta;
            if denom > 0.0 {
                *v /= denom;
            } else {
                if *v != 0.0 {
                    uncovered += 1;
                }
                *v = 0.0;
            }
        }
        let corr = self.adjoint(&r)?;
        let mut out = x.clone();
        for (o, c) in out.data.iter_mut().zip(&corr.data) {
            *o -= c;
        }
        Ok(BpOutcome { x: out, uncovered })
    }

    /// `x - gamma * d/dx |W (y - A x)|^2 = x - 2 gamma A^T W^T W (A x - y)`.
    pub fn gradient_step(
        &self,
        x: &ShiftedCube,
        y: &Measurement,
        params: &FidelityParams,
    ) -> Result<ShiftedCube> {
        if !(params.gamma > 0.0) {
            return Err(Error::InvalidParameter(format!("gamma {}", params.gamma)));
        }
        self.check(x, y)?;
        let mut r = self.residual(x, y)?;
        if let WeightMode::Diagonal(w) = &params.weight {
            if w.height != r.height || w.width != r.width {
                return Err(dim("weight plane does not match the detector"));
            }
            for (v, &wt) in r.data.iter_mut().zip(&w.data) {
                *v *= wt * wt;
            }
        }
        let corr = self.adjoint(&r)?;
        let mut out = x.clone();
        let s = 2.0 * params.gamma;
        for (o, c) in out.data.iter_mut().zip(&corr.data) {
            *o -= s * c;
        }
        Ok(out)
    }

    /// `|Ax - y| / |y|`, or the absolute norm when `y = 0`.
    pub fn residual_norm(&self, x: &ShiftedCube, y: &Measurement) -> Result<f64> {
        self.check(x, y)?;
        let r = self.residual(x, y)?;
        let rn = r.data.iter().map(|v| v * v).sum::<f64>().sqrt();
        let yn = y.norm();
        Ok(if yn > 0.0 { rn / yn } else { rn })
    }
}
