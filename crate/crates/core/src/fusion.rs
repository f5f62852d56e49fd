//! Frequency-aware skip fusion between an encoder feature `[h, w, C]` and
//! the next-deeper decoder feature `[h/2, w/2, C']`: channel alignment,
//! predicted low-pass filtering with 2x upsampling of the decoder path,
//! high-pass enhancement of the encoder path, and addition.

use serde::{Deserialize, Serialize};
use tensorgrad::{Graph, Scalar, Var};

use crate::error::{Error, Result};
use crate::layout::neighbour_index;
use crate::nn::{Init, Scope};

/// Offsets predicted by the optional resampler are limited to this many
/// pixels (via `OFFSET_RANGE * tanh`).
pub const OFFSET_RANGE: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub lpf_kernel: usize,
    pub hpf_kernel: usize,
    pub use_offset: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            lpf_kernel: 3,
            hpf_kernel: 3,
            use_offset: false,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lpf_kernel % 2 == 0 || self.hpf_kernel % 2 == 0 {
            return Err(Error::InvalidParameter(
                "fusion kernel sizes must be odd".into(),
            ));
        }
        Ok(())
    }
}

/// Graph handles of the intermediate quantities, for inspection.
#[derive(Clone, Copy, Debug)]
pub struct FusionProbes {
    pub lpf_kernels: Var,
    pub hpf_kernels: Var,
    pub offsets: Option<Var>,
}

pub(crate) fn register_fusion(
    init: &mut Init<'_>,
    name: &str,
    c_enc: usize,
    c_dec: usize,
    cfg: &FusionConfig,
) -> Result<()> {
    init.linear(&format!("{name}.align"), c_dec, c_enc, true, 1.0)?;
    init.linear(
        &format!("{name}.lpf"),
        2 * c_enc,
        cfg.lpf_kernel * cfg.lpf_kernel,
        true,
        0.5,
    )?;
    init.linear(
        &format!("{name}.hpf"),
        2 * c_enc,
        cfg.hpf_kernel * cfg.hpf_kernel,
        true,
        0.5,
    )?;
    if cfg.use_offset {
        init.linear(&format!("{name}.offset"), 4, 2, true, 0.0)?;
    }
    Ok(())
}

pub(crate) fn register_plain_skip(
    init: &mut Init<'_>,
    name: &str,
    c_enc: usize,
    c_dec: usize,
) -> Result<()> {
    init.linear(&format!("{name}.align"), c_dec, c_enc, true, 1.0)
}

/// conv1x1 from decoder to encoder channels.
pub fn align_channels<T: Scalar>(
    g: &mut Graph<T>,
    s: Scope<'_>,
    name: &str,
    dec: Var,
) -> Result<Var> {
    s.linear(g, &format!("{name}.align"), dec)
}

/// Per-pixel `k x k` kernels: conv1x1 head followed by a softmax over taps,
/// so taps are positive and sum to one.
pub fn predict_kernels<T: Scalar>(
    g: &mut Graph<T>,
    s: Scope<'_>,
    head: &str,
    guide: Var,
) -> Result<Var> {
    let logits = s.linear(g, head, guide)?;
    Ok(g.softmax(logits)?)
}

/// Smooths `x` with the given per-pixel kernels, then bilinear 2x upsampling.
pub fn lpf_upsample<T: Scalar>(g: &mut Graph<T>, x: Var, kernels: Var, k: usize) -> Result<Var> {
    let low = g.dynamic_filter(x, kernels, k)?;
    Ok(g.bilinear_upsample2d(low, 2)?)
}

/// `x + (x - blur(x))`, where `blur` uses the given per-pixel kernels.
pub fn hpf_enhance<T: Scalar>(g: &mut Graph<T>, x: Var, kernels: Var, k: usize) -> Result<Var> {
    let blur = g.dynamic_filter(x, kernels, k)?;
    let high = g.sub(x, blur)?;
    Ok(g.add(x, high)?)
}

/// Cosine similarity of every pixel with its four neighbours, `[h, w, 4]`.
pub fn local_similarity<T: Scalar>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let &[h, w, c] = g.shape(x) else {
        return Err(Error::Dimension(format!(
            "expected [h, w, c], got {:?}",
            g.shape(x)
        )));
    };
    let n = g.l2_normalize_last(x, 1e-6)?;
    let mut sims = Vec::with_capacity(4);
    for (dy, dx) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
        let nb = g.gather(n, neighbour_index(h, w, c, dy, dx), &[h, w, c])?;
        let prod = g.mul(n, nb)?;
        sims.push(g.sum_last(prod)?);
    }
    Ok(g.concat(&sims, 2)?)
}

/// Resamples `x` at offsets predicted from its local similarity structure.
pub fn offset_resample<T: Scalar>(
    g: &mut Graph<T>,
    s: Scope<'_>,
    name: &str,
    x: Var,
) -> Result<(Var, Var)> {
    let sim = local_similarity(g, x)?;
    let raw = s.linear(g, &format!("{name}.offset"), sim)?;
    let t = g.tanh(raw)?;
    let offsets = g.scale(t, OFFSET_RANGE)?;
    Ok((g.offset_resample(x, offsets)?, offsets))
}

/// Full fusion path; returns a feature with the encoder's shape.
pub fn fuse<T: Scalar>(
    g: &mut Graph<T>,
    s: Scope<'_>,
    name: &str,
    cfg: &FusionConfig,
    enc: Var,
    dec: Var,
) -> Result<(Var, FusionProbes)> {
    let aligned = align_channels(g, s, name, dec)?;
    let context = g.avg_pool2d(enc, 2)?;
    let lp_guide = g.concat(&[aligned, context], 2)?;
    let lpf_kernels = predict_kernels(g, s, &format!("{name}.lpf"), lp_guide)?;
    let mut up = lpf_upsample(g, aligned, lpf_kernels, cfg.lpf_kernel)?;
    let mut offsets = None;
    if cfg.use_offset {
        let (r, o) = offset_resample(g, s, name, up)?;
        up = r;
        offsets = Some(o);
    }
    let hp_guide = g.concat(&[enc, up], 2)?;
    let hpf_kernels = predict_kernels(g, s, &format!("{name}.hpf"), hp_guide)?;
    let enhanced = hpf_enhance(g, enc, hpf_kernels, cfg.hpf_kernel)?;
    let out = g.add(enhanced, up)?;
    Ok((
        out,
        FusionProbes {
            lpf_kernels,
            hpf_kernels,
            offsets,
        },
    ))
}

/// Plain additive skip: `enc + up2(align(dec))`.
pub fn plain_skip<T: Scalar>(
    g: &mut Graph<T>,
    s: Scope<'_>,
    name: &str,
    enc: Var,
    dec: Var,
) -> Result<Var> {
    let aligned = align_channels(g, s, name, dec)?;
    let up = g.bilinear_upsample2d(aligned, 2)?;
    Ok(g.add(enc, up)?)
}
