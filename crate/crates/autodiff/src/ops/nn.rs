use crate::error::{shape_err, Result};
use crate::graph::{GradBuf, Graph, Op, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

impl<T: Scalar> Graph<T> {
    /// Normalizes every vector along the last axis to zero mean and unit
    /// (biased) variance, then applies the optional affine `gamma`, `beta`.
    pub fn layernorm(
        &mut self,
        x: Var,
        gamma: Option<Var>,
        beta: Option<Var>,
        eps: f64,
    ) -> Result<Var> {
        self.check(x)?;
        let c = self.value(x).last_dim();
        for p in [gamma, beta].into_iter().flatten() {
            self.check(p)?;
            if self.shape(p) != [c] {
                return Err(shape_err(
                    "layernorm",
                    format!("affine {:?} for {c}", self.shape(p)),
                ));
            }
        }
        let eps = T::lit(eps);
        let inv_c = T::lit(1.0 / c as f64);
        let src = self.value(x).data();
        let rows = src.len() / c;
        let mut xhat = vec![T::zero(); src.len()];
        let mut rstd = vec![T::zero(); rows];
        for (r, (row, out)) in src.chunks(c).zip(xhat.chunks_mut(c)).enumerate() {
            let mean = row.iter().copied().sum::<T>() * inv_c;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_c;
            let rs = (var + eps).sqrt().recip();
            rstd[r] = rs;
            for (o, &v) in out.iter_mut().zip(row) {
                *o = (v - mean) * rs;
            }
        }
        let mut out = xhat.clone();
        if let Some(gv) = gamma {
            let gd = self.value(gv).data();
            for row in out.chunks_mut(c) {
                for (o, &s) in row.iter_mut().zip(gd) {
                    *o = *o * s;
                }
            }
        }
        if let Some(bv) = beta {
            let bd = self.value(bv).data();
            for row in out.chunks_mut(c) {
                for (o, &s) in row.iter_mut().zip(bd) {
                    *o = *o + s;
                }
            }
        }
        let shape = self.shape(x).to_vec();
        let inputs: Vec<Var> = [Some(x), gamma, beta].into_iter().flatten().collect();
        self.push(
            Tensor::new(shape, out)?,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            &inputs,
        )
    }

    /// Softmax over the last axis, computed with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let t = self.value(x);
        let c = t.last_dim();
        let mut out = t.data().to_vec();
        for row in out.chunks_mut(c) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                total = total + *v;
            }
            for v in row.iter_mut() {
                *v = *v / total;
            }
        }
        let shape = t.shape().to_vec();
        self.push(Tensor::new(shape, out)?, Op::Softmax(x), &[x])
    }

    /// Scales each last-axis vector to unit Euclidean norm: `x / sqrt(|x|^2 + eps)`.
    pub fn l2_normalize_last(&mut self, x: Var, eps: f64) -> Result<Var> {
        self.check(x)?;
        let t = self.value(x);
        let c = t.last_dim();
        let eps = T::lit(eps);
        let mut out = t.data().to_vec();
        let mut norm = Vec::with_capacity(out.len() / c);
        for row in out.chunks_mut(c) {
            let n = (row.iter().map(|&v| v * v).sum::<T>() + eps).sqrt();
            norm.push(n);
            for v in row.iter_mut() {
                *v = *v / n;
            }
        }
        let shape = t.shape().to_vec();
        self.push(
            Tensor::new(shape, out)?,
            Op::L2NormalizeLast { x, norm },
            &[x],
        )
    }
}

pub(crate) fn backward<T: Scalar>(g: &Graph<T>, id: usize, grad: &[T], gb: &mut GradBuf<T>) {
    let node = &g.nodes[id];
    match &node.op {
        Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            rstd,
        } => {
            let c = node.value.last_dim();
            let inv_c = T::lit(1.0 / c as f64);
            if let Some(gv) = gamma {
                if g.requires_grad(*gv) {
                    let dg = gb.slot(*gv, c);
                    for (gr, xr) in grad.chunks(c).zip(xhat.chunks(c)) {
                        for ((o, &d), &h) in dg.iter_mut().zip(gr).zip(xr) {
                            *o = *o + d * h;
                        }
                    }
                }
            }
            if let Some(bv) = beta {
                if g.requires_grad(*bv) {
                    let db = gb.slot(*bv, c);
                    for gr in grad.chunks(c) {
                        for (o, &d) in db.iter_mut().zip(gr) {
                            *o = *o + d;
                        }
                    }
                }
            }
            if g.requires_grad(*x) {
                let gamma_v = gamma.map(|gv| g.value(gv).data());
                let dx = gb.slot(*x, grad.len());
                let mut gh = vec![T::zero(); c];
                for (r, ((gr, xr), dr)) in grad
                    .chunks(c)
                    .zip(xhat.chunks(c))
                    .zip(dx.chunks_mut(c))
                    .enumerate()
                {
                    for j in 0..c {
                        gh[j] = match gamma_v {
                            Some(gd) => gr[j] * gd[j],
                            None => gr[j],
                        };
                    }
                    let mean_g = gh.iter().copied().sum::<T>() * inv_c;
                    let mean_gx = gh.iter().zip(xr).map(|(&a, &b)| a * b).sum::<T>() * inv_c;
                    for j in 0..c {
                        dr[j] = dr[j] + rstd[r] * (gh[j] - mean_g - xr[j] * mean_gx);
                    }
                }
            }
        }
        Op::Softmax(x) => {
            let c = node.value.last_dim();
            let y = node.value.data();
            let dx = gb.slot(*x, grad.len());
            for ((gr, yr), dr) in grad.chunks(c).zip(y.chunks(c)).zip(dx.chunks_mut(c)) {
                let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                for j in 0..c {
                    dr[j] = dr[j] + yr[j] * (gr[j] - dot);
                }
            }
        }
        Op::L2NormalizeLast { x, norm } => {
            let c = node.value.last_dim();
            let y = node.value.data();
            let dx = gb.slot(*x, grad.len());
            for (((gr, yr), dr), &n) in grad
                .chunks(c)
                .zip(y.chunks(c))
                .zip(dx.chunks_mut(c))
                .zip(norm)
            {
                let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                for j in 0..c {
                    dr[j] = dr[j] + (gr[j] - yr[j] * dot) / n;
                }
            }
        }
        _ => unreachable!("not a normalization op"),
    }
}
