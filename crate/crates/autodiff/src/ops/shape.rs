use std::sync::Arc;

use crate::error::{shape_err, Result};
use crate::graph::{GradBuf, Graph, Op, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, inner)
}

impl<T: Scalar> Graph<T> {
    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.check(x)?;
        let out = self.value(x).clone().reshaped(shape.to_vec())?;
        self.push(out, Op::Reshape(x), &[x])
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| shape_err("concat", "no inputs"))?;
        for &v in inputs {
            self.check(v)?;
        }
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(shape_err(
                "concat",
                format!("axis {axis} for rank {}", base.len()),
            ));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(shape_err(
                    "concat",
                    format!("{s:?} vs {base:?} on axis {axis}"),
                ));
            }
            total += s[axis];
        }
        let (outer, inner) = outer_inner(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let len = self.shape(v)[axis] * inner;
                out.extend_from_slice(&self.value(v).data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        self.push(
            Tensor::new(shape, out)?,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        )
    }

    /// `x[.., start..end, ..]` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        self.check(x)?;
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start >= end || end > shape[axis] {
            return Err(shape_err(
                "slice",
                format!("{start}..{end} on axis {axis} of {shape:?}"),
            ));
        }
        let (outer, inner) = outer_inner(&shape, axis);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * (end - start) * inner);
        for o in 0..outer {
            let base = o * shape[axis] * inner;
            out.extend_from_slice(&src[base + start * inner..base + end * inner]);
        }
        let mut new_shape = shape;
        new_shape[axis] = end - start;
        self.push(
            Tensor::new(new_shape, out)?,
            Op::Slice { x, axis, start },
            &[x],
        )
    }

    /// `out[i] = x.flat[index[i]]`, or zero where `index[i] < 0`.
    ///
    /// Covers permutations, padding, cropping and window partitioning.
    pub fn gather(&mut self, x: Var, index: Arc<Vec<i64>>, shape: &[usize]) -> Result<Var> {
        self.check(x)?;
        let numel: usize = shape.iter().product();
        let src = self.value(x).data();
        if index.len() != numel {
            return Err(shape_err(
                "gather",
                format!("{} indices for shape {shape:?}", index.len()),
            ));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= src.len() as i64) {
            return Err(shape_err(
                "gather",
                format!("index {bad} out of range for {} elements", src.len()),
            ));
        }
        let out = index
            .iter()
            .map(|&i| if i < 0 { T::zero() } else { src[i as usize] })
            .collect();
        self.push(
            Tensor::new(shape.to_vec(), out)?,
            Op::Gather { x, index },
            &[x],
        )
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let t = self.value(x);
        let s = t.sum() / T::lit(t.numel() as f64);
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// Sums the last axis, keeping it with extent 1.
    pub fn sum_last(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let t = self.value(x);
        let c = t.last_dim();
        let out: Vec<T> = t
            .data()
            .chunks(c)
            .map(|r| r.iter().copied().sum())
            .collect();
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() = 1;
        self.push(Tensor::new(shape, out)?, Op::SumLast(x), &[x])
    }

    /// Repeats a trailing extent-1 axis `n` times.
    pub fn expand_last(&mut self, x: Var, n: usize) -> Result<Var> {
        self.check(x)?;
        let t = self.value(x);
        if t.last_dim() != 1 || n == 0 {
            return Err(shape_err("expand_last", format!("{:?} to {n}", t.shape())));
        }
        let out = t
            .data()
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, n))
            .collect();
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        self.push(Tensor::new(shape, out)?, Op::ExpandLast(x), &[x])
    }
}

fn accumulate<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (o, &d) in dst.iter_mut().zip(src) {
        *o = *o + d;
    }
}

pub(crate) fn backward<T: Scalar>(g: &Graph<T>, id: usize, grad: &[T], gb: &mut GradBuf<T>) {
    let node = &g.nodes[id];
    match &node.op {
        Op::Reshape(x) => accumulate(gb.slot(*x, grad.len()), grad),
        Op::Concat { inputs, axis } => {
            let (outer, inner) = outer_inner(node.value.shape(), *axis);
            let total = node.value.shape()[*axis];
            let mut offset = 0;
            for &v in inputs {
                let ext = g.shape(v)[*axis];
                if g.requires_grad(v) {
                    let n = g.value(v).numel();
                    let dst = gb.slot(v, n);
                    for o in 0..outer {
                        let src =
                            &grad[(o * total + offset) * inner..(o * total + offset + ext) * inner];
                        accumulate(&mut dst[o * ext * inner..(o + 1) * ext * inner], src);
                    }
                }
                offset += ext;
            }
        }
        Op::Slice { x, axis, start } => {
            let shape = g.shape(*x);
            let (outer, inner) = outer_inner(shape, *axis);
            let full = shape[*axis];
            let ext = node.value.shape()[*axis];
            let dst = gb.slot(*x, g.value(*x).numel());
            for o in 0..outer {
                let base = (o * full + start) * inner;
                accumulate(
                    &mut dst[base..base + ext * inner],
                    &grad[o * ext * inner..(o + 1) * ext * inner],
                );
            }
        }
        Op::Gather { x, index } => {
            let dst = gb.slot(*x, g.value(*x).numel());
            for (&i, &d) in index.iter().zip(grad) {
                if i >= 0 {
                    dst[i as usize] = dst[i as usize] + d;
                }
            }
        }
        Op::Sum(x) => {
            let d = grad[0];
            for o in gb.slot(*x, g.value(*x).numel()) {
                *o = *o + d;
            }
        }
        Op::Mean(x) => {
            let n = g.value(*x).numel();
            let d = grad[0] / T::lit(n as f64);
            for o in gb.slot(*x, n) {
                *o = *o + d;
            }
        }
        Op::SumLast(x) => {
            let t = g.value(*x);
            let c = t.last_dim();
            let dst = gb.slot(*x, t.numel());
            for (row, &d) in dst.chunks_mut(c).zip(grad) {
                for o in row {
                    *o = *o + d;
                }
            }
        }
        Op::ExpandLast(x) => {
            let n = node.value.last_dim();
            let dst = gb.slot(*x, g.value(*x).numel());
            for (o, row) in dst.iter_mut().zip(grad.chunks(n)) {
                *o = *o + row.iter().copied().sum();
            }
        }
        _ => unreachable!("not a shape op"),
    }
}
