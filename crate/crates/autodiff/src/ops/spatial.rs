//! Spatial ops on channel-last `[H, W, C]` feature maps.

use crate::error::{shape_err, Result};
use crate::graph::{GradBuf, Graph, Op, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn hwc(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape {
        [h, w, c] => Ok((*h, *w, *c)),
        _ => Err(shape_err(op, format!("expected [H, W, C], got {shape:?}"))),
    }
}

/// Source taps `(i0, i1, t)` for half-pixel bilinear upsampling of one axis.
pub(crate) fn bilinear_taps(n: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..n * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

fn clamp_index(v: isize, n: usize) -> usize {
    v.clamp(0, n as isize - 1) as usize
}

/// Bilinear sample position along one axis with edge clamping. Returns
/// `(i0, i1, t, clamped)`.
fn sample_axis(p: f64, n: usize) -> (usize, usize, f64, bool) {
    let max = (n - 1) as f64;
    let clamped = !(0.0..=max).contains(&p);
    let p = p.clamp(0.0, max);
    let i0 = (p.floor() as usize).min(n - 1);
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, p - i0 as f64, clamped)
}

impl<T: Scalar> Graph<T> {
    /// Non-overlapping `factor x factor` mean pooling.
    pub fn avg_pool2d(&mut self, x: Var, factor: usize) -> Result<Var> {
        self.check(x)?;
        let (h, w, c) = hwc("avg_pool2d", self.shape(x))?;
        if factor == 0 || h % factor != 0 || w % factor != 0 {
            return Err(shape_err(
                "avg_pool2d",
                format!("{h}x{w} by factor {factor}"),
            ));
        }
        let (oh, ow) = (h / factor, w / factor);
        let src = self.value(x).data();
        let norm = T::lit(1.0 / (factor * factor) as f64);
        let mut out = vec![T::zero(); oh * ow * c];
        for y in 0..h {
            for xx in 0..w {
                let o = ((y / factor) * ow + xx / factor) * c;
                let s = (y * w + xx) * c;
                for ch in 0..c {
                    out[o + ch] = out[o + ch] + src[s + ch] * norm;
                }
            }
        }
        self.push(
            Tensor::new(vec![oh, ow, c], out)?,
            Op::AvgPool2d { x, factor },
            &[x],
        )
    }

    pub fn nearest_upsample2d(&mut self, x: Var, factor: usize) -> Result<Var> {
        self.check(x)?;
        let (h, w, c) = hwc("nearest_upsample2d", self.shape(x))?;
        if factor == 0 {
            return Err(shape_err("nearest_upsample2d", "factor 0"));
        }
        let (oh, ow) = (h * factor, w * factor);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(oh * ow * c);
        for y in 0..oh {
            for xx in 0..ow {
                let s = ((y / factor) * w + xx / factor) * c;
                out.extend_from_slice(&src[s..s + c]);
            }
        }
        self.push(
            Tensor::new(vec![oh, ow, c], out)?,
            Op::NearestUpsample2d { x, factor },
            &[x],
        )
    }

    /// Half-pixel bilinear upsampling with edge clamping; interpolation
    /// weights sum to one, so constant maps stay constant.
    pub fn bilinear_upsample2d(&mut self, x: Var, factor: usize) -> Result<Var> {
        self.check(x)?;
        let (h, w, c) = hwc("bilinear_upsample2d", self.shape(x))?;
        if factor == 0 {
            return Err(shape_err("bilinear_upsample2d", "factor 0"));
        }
        let ty = bilinear_taps(h, factor);
        let tx = bilinear_taps(w, factor);
        let src = self.value(x).data();
        let (oh, ow) = (h * factor, w * factor);
        let mut out = vec![T::zero(); oh * ow * c];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            let fy = T::lit(fy);
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let fx = T::lit(fx);
                let w00 = (T::one() - fy) * (T::one() - fx);
                let w01 = (T::one() - fy) * fx;
                let w10 = fy * (T::one() - fx);
                let w11 = fy * fx;
                let o = (oy * ow + ox) * c;
                let (s00, s01, s10, s11) = (
                    (y0 * w + x0) * c,
                    (y0 * w + x1) * c,
                    (y1 * w + x0) * c,
                    (y1 * w + x1) * c,
                );
                for ch in 0..c {
                    out[o + ch] = w00 * src[s00 + ch]
                        + w01 * src[s01 + ch]
                        + w10 * src[s10 + ch]
                        + w11 * src[s11 + ch];
                }
            }
        }
        self.push(
            Tensor::new(vec![oh, ow, c], out)?,
            Op::BilinearUpsample2d { x, factor },
            &[x],
        )
    }

    /// Spatially varying `k x k` filtering with per-pixel kernels
    /// `kernels[H, W, k*k]` (row-major taps) and replicate padding.
    pub fn dynamic_filter(&mut self, x: Var, kernels: Var, k: usize) -> Result<Var> {
        self.check(x)?;
        self.check(kernels)?;
        let (h, w, c) = hwc("dynamic_filter", self.shape(x))?;
        if k % 2 == 0 || self.shape(kernels) != [h, w, k * k] {
            return Err(shape_err(
                "dynamic_filter",
                format!("kernels {:?} for {h}x{w}, k={k}", self.shape(kernels)),
            ));
        }
        let r = (k / 2) as isize;
        let src = self.value(x).data();
        let kern = self.value(kernels).data();
        let mut out = vec![T::zero(); h * w * c];
        for y in 0..h {
            for xx in 0..w {
                let o = (y * w + xx) * c;
                let kb = (y * w + xx) * k * k;
                for dy in -r..=r {
                    let sy = clamp_index(y as isize + dy, h);
                    for dx in -r..=r {
                        let sx = clamp_index(xx as isize + dx, w);
                        let tap = kern[kb + ((dy + r) as usize) * k + (dx + r) as usize];
                        let s = (sy * w + sx) * c;
                        for ch in 0..c {
                            out[o + ch] = out[o + ch] + tap * src[s + ch];
                        }
                    }
                }
            }
        }
        self.push(
            Tensor::new(vec![h, w, c], out)?,
            Op::DynamicFilter { x, kernels, k },
            &[x, kernels],
        )
    }

    /// Bilinear resampling of `x` at `(y + offsets[..,0], x + offsets[..,1])`,
    /// clamped to the image.
    pub fn offset_resample(&mut self, x: Var, offsets: Var) -> Result<Var> {
        self.check(x)?;
        self.check(offsets)?;
        let (h, w, c) = hwc("offset_resample", self.shape(x))?;
        if self.shape(offsets) != [h, w, 2] {
            return Err(shape_err(
                "offset_resample",
                format!("offsets {:?} for {h}x{w}", self.shape(offsets)),
            ));
        }
        let src = self.value(x).data();
        let off = self.value(offsets).data();
        let mut out = vec![T::zero(); h * w * c];
        for y in 0..h {
            for xx in 0..w {
                let p = y * w + xx;
                let (y0, y1, fy, _) = sample_axis(y as f64 + off[2 * p].as_f64(), h);
                let (x0, x1, fx, _) = sample_axis(xx as f64 + off[2 * p + 1].as_f64(), w);
                let (fy, fx) = (T::lit(fy), T::lit(fx));
                let w00 = (T::one() - fy) * (T::one() - fx);
                let w01 = (T::one() - fy) * fx;
                let w10 = fy * (T::one() - fx);
                let w11 = fy * fx;
                for ch in 0..c {
                    out[p * c + ch] = w00 * src[(y0 * w + x0) * c + ch]
                        + w01 * src[(y0 * w + x1) * c + ch]
                        + w10 * src[(y1 * w + x0) * c + ch]
                        + w11 * src[(y1 * w + x1) * c + ch];
                }
            }
        }
        self.push(
            Tensor::new(vec![h, w, c], out)?,
            Op::OffsetResample { x, offsets },
            &[x, offsets],
        )
    }
}

pub(crate) fn backward<T: Scalar>(g: &Graph<T>, id: usize, grad: &[T], gb: &mut GradBuf<T>) {
    let node = &g.nodes[id];
    match &node.op {
        Op::AvgPool2d { x, factor } => {
            let (h, w, c) = hwc("avg_pool2d", g.shape(*x)).unwrap();
            let ow = w / factor;
            let norm = T::lit(1.0 / (factor * factor) as f64);
            let dx = gb.slot(*x, h * w * c);
            for y in 0..h {
                for xx in 0..w {
                    let o = ((y / factor) * ow + xx / factor) * c;
                    let s = (y * w + xx) * c;
                    for ch in 0..c {
                        dx[s + ch] = dx[s + ch] + grad[o + ch] * norm;
                    }
                }
            }
        }
        Op::NearestUpsample2d { x, factor } => {
            let (h, w, c) = hwc("nearest_upsample2d", g.shape(*x)).unwrap();
            let ow = w * factor;
            let dx = gb.slot(*x, h * w * c);
            for y in 0..h * factor {
                for xx in 0..ow {
                    let s = ((y / factor) * w + xx / factor) * c;
                    let o = (y * ow + xx) * c;
                    for ch in 0..c {
                        dx[s + ch] = dx[s + ch] + grad[o + ch];
                    }
                }
            }
        }
        Op::BilinearUpsample2d { x, factor } => {
            let (h, w, c) = hwc("bilinear_upsample2d", g.shape(*x)).unwrap();
            let ty = bilinear_taps(h, *factor);
            let tx = bilinear_taps(w, *factor);
            let ow = w * factor;
            let dx = gb.slot(*x, h * w * c);
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                let fy = T::lit(fy);
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let fx = T::lit(fx);
                    let o = (oy * ow + ox) * c;
                    let taps = [
                        ((y0 * w + x0) * c, (T::one() - fy) * (T::one() - fx)),
                        ((y0 * w + x1) * c, (T::one() - fy) * fx),
                        ((y1 * w + x0) * c, fy * (T::one() - fx)),
                        ((y1 * w + x1) * c, fy * fx),
                    ];
                    for (s, wt) in taps {
                        for ch in 0..c {
                            dx[s + ch] = dx[s + ch] + wt * grad[o + ch];
                        }
                    }
                }
            }
        }
        Op::DynamicFilter { x, kernels, k } => {
            let (h, w, c) = hwc("dynamic_filter", g.shape(*x)).unwrap();
            let k = *k;
            let r = (k / 2) as isize;
            let src = g.value(*x).data();
            let kern = g.value(*kernels).data();
            if g.requires_grad(*kernels) {
                let dk = gb.slot(*kernels, h * w * k * k);
                for y in 0..h {
                    for xx in 0..w {
                        let o = (y * w + xx) * c;
                        let kb = (y * w + xx) * k * k;
                        for dy in -r..=r {
                            let sy = clamp_index(y as isize + dy, h);
                            for dxo in -r..=r {
                                let sx = clamp_index(xx as isize + dxo, w);
                                let s = (sy * w + sx) * c;
                                let t = kb + ((dy + r) as usize) * k + (dxo + r) as usize;
                                let dot: T = (0..c).map(|ch| grad[o + ch] * src[s + ch]).sum();
                                dk[t] = dk[t] + dot;
                            }
                        }
                    }
                }
            }
            if g.requires_grad(*x) {
                let dx = gb.slot(*x, h * w * c);
                for y in 0..h {
                    for xx in 0..w {
                        let o = (y * w + xx) * c;
                        let kb = (y * w + xx) * k * k;
                        for dy in -r..=r {
                            let sy = clamp_index(y as isize + dy, h);
                            for dxo in -r..=r {
                                let sx = clamp_index(xx as isize + dxo, w);
                                let s = (sy * w + sx) * c;
                                let tap = kern[kb + ((dy + r) as usize) * k + (dxo + r) as usize];
                                for ch in 0..c {
                                    dx[s + ch] = dx[s + ch] + tap * grad[o + ch];
                                }
                            }
                        }
                    }
                }
            }
        }
        Op::OffsetResample { x, offsets } => {
            let (h, w, c) = hwc("offset_resample", g.shape(*x)).unwrap();
            let src = g.value(*x).data();
            let off = g.value(*offsets).data();
            let need_x = g.requires_grad(*x);
            let need_off = g.requires_grad(*offsets);
            let mut dx = need_x.then(|| vec![T::zero(); h * w * c]);
            let mut doff = need_off.then(|| vec![T::zero(); h * w * 2]);
            for y in 0..h {
                for xx in 0..w {
                    let p = y * w + xx;
                    let (y0, y1, fy, cy) = sample_axis(y as f64 + off[2 * p].as_f64(), h);
                    let (x0, x1, fx, cx) = sample_axis(xx as f64 + off[2 * p + 1].as_f64(), w);
                    let (fy, fx) = (T::lit(fy), T::lit(fx));
                    let i00 = (y0 * w + x0) * c;
                    let i01 = (y0 * w + x1) * c;
                    let i10 = (y1 * w + x0) * c;
                    let i11 = (y1 * w + x1) * c;
                    if let Some(dx) = dx.as_mut() {
                        let taps = [
                            (i00, (T::one() - fy) * (T::one() - fx)),
                            (i01, (T::one() - fy) * fx),
                            (i10, fy * (T::one() - fx)),
                            (i11, fy * fx),
                        ];
                        for (s, wt) in taps {
                            for ch in 0..c {
                                dx[s + ch] = dx[s + ch] + wt * grad[p * c + ch];
                            }
                        }
                    }
                    if let Some(doff) = doff.as_mut() {
                        let mut gy = T::zero();
                        let mut gx = T::zero();
                        for ch in 0..c {
                            let d = grad[p * c + ch];
                            let (a, b, cc, dd) =
                                (src[i00 + ch], src[i01 + ch], src[i10 + ch], src[i11 + ch]);
                            gy = gy + d * ((T::one() - fx) * (cc - a) + fx * (dd - b));
                            gx = gx + d * ((T::one() - fy) * (b - a) + fy * (dd - cc));
                        }
                        if !cy && y1 != y0 {
                            doff[2 * p] = doff[2 * p] + gy;
                        }
                        if !cx && x1 != x0 {
                            doff[2 * p + 1] = doff[2 * p + 1] + gx;
                        }
                    }
                }
            }
            if let Some(dx) = dx {
                for (o, d) in gb.slot(*x, h * w * c).iter_mut().zip(dx) {
                    *o = *o + d;
                }
            }
            if let Some(doff) = doff {
                for (o, d) in gb.slot(*offsets, h * w * 2).iter_mut().zip(doff) {
                    *o = *o + d;
                }
            }
        }
        _ => unreachable!("not a spatial op"),
    }
}
