use crate::error::{shape_err, Result};
use crate::graph::{GradBuf, Graph, Op, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn map<T: Scalar>(x: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect()).expect("same shape")
}

fn zip<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape().to_vec(), data).expect("same shape")
}

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Scalar>(v: T) -> T {
    v.max(T::zero()) + (-v.abs()).exp().ln_1p()
}

fn gelu<T: Scalar>(v: T) -> T {
    let c = T::lit(GELU_C);
    let a = T::lit(GELU_A);
    let half = T::lit(0.5);
    half * v * (T::one() + (c * (v + a * v * v * v)).tanh())
}

fn gelu_grad<T: Scalar>(v: T) -> T {
    let c = T::lit(GELU_C);
    let a = T::lit(GELU_A);
    let half = T::lit(0.5);
    let t = (c * (v + a * v * v * v)).tanh();
    half * (T::one() + t) + half * v * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * a * v * v)
}

impl<T: Scalar> Graph<T> {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        self.check(a)?;
        self.check(b)?;
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn single(&self, op: &'static str, s: Var) -> Result<T> {
        self.check(s)?;
        let t = self.value(s);
        if t.numel() != 1 {
            return Err(shape_err(
                op,
                format!("expected one element, got {:?}", t.shape()),
            ));
        }
        Ok(t.data()[0])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = zip(self.value(a), self.value(b), |x, y| x + y);
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = zip(self.value(a), self.value(b), |x, y| x - y);
        self.push(out, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = zip(self.value(a), self.value(b), |x, y| x * y);
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    /// Multiplication by a constant scalar.
    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        self.check(x)?;
        let c = T::lit(c);
        let out = map(self.value(x), |v| v * c);
        self.push(out, Op::Scale(x, c), &[x])
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Result<Var> {
        self.check(x)?;
        let c = T::lit(c);
        let out = map(self.value(x), |v| v + c);
        self.push(out, Op::AddConst(x), &[x])
    }

    /// `s * x` where `s` is a single-element node.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        self.check(x)?;
        let sv = self.single("scale_by", s)?;
        let out = map(self.value(x), |v| v * sv);
        self.push(out, Op::ScaleBy(x, s), &[x, s])
    }

    /// `x + s` where `s` is a single-element node.
    pub fn shift_by(&mut self, x: Var, s: Var) -> Result<Var> {
        self.check(x)?;
        let sv = self.single("shift_by", s)?;
        let out = map(self.value(x), |v| v + sv);
        self.push(out, Op::ShiftBy(x, s), &[x, s])
    }

    /// Adds `b` (shape `[C]`) along the last axis of `x` (shape `[..., C]`).
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        self.check(x)?;
        self.check(b)?;
        let c = self.value(x).last_dim();
        if self.shape(b) != [c] {
            return Err(shape_err(
                "add_bias",
                format!("bias {:?} for channels {c}", self.shape(b)),
            ));
        }
        let bias = self.value(b).data();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(c) {
            for (o, &bb) in row.iter_mut().zip(bias) {
                *o = *o + bb;
            }
        }
        self.push(out, Op::AddBias(x, b), &[x, b])
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let out = map(self.value(x), gelu);
        self.push(out, Op::Gelu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let out = map(self.value(x), sigmoid);
        self.push(out, Op::Sigmoid(x), &[x])
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let out = map(self.value(x), softplus);
        self.push(out, Op::Softplus(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let out = map(self.value(x), |v| v.tanh());
        self.push(out, Op::Tanh(x), &[x])
    }

    /// Elementwise square root; inputs must be positive for a finite gradient.
    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let out = map(self.value(x), |v| v.sqrt());
        self.push(out, Op::Sqrt(x), &[x])
    }

    /// `1 / x`, with zero wherever `x == 0`.
    pub fn recip_safe(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let out = map(self.value(x), |v| {
            if v == T::zero() {
                T::zero()
            } else {
                v.recip()
            }
        });
        self.push(out, Op::RecipSafe(x), &[x])
    }
}

pub(crate) fn backward<T: Scalar>(g: &Graph<T>, id: usize, grad: &[T], gb: &mut GradBuf<T>) {
    let node = &g.nodes[id];
    let n = grad.len();
    match &node.op {
        Op::Add(a, b) => {
            for v in [*a, *b] {
                if g.requires_grad(v) {
                    for (o, &d) in gb.slot(v, n).iter_mut().zip(grad) {
                        *o = *o + d;
                    }
                }
            }
        }
        Op::Sub(a, b) => {
            if g.requires_grad(*a) {
                for (o, &d) in gb.slot(*a, n).iter_mut().zip(grad) {
                    *o = *o + d;
                }
            }
            if g.requires_grad(*b) {
                for (o, &d) in gb.slot(*b, n).iter_mut().zip(grad) {
                    *o = *o - d;
                }
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (g.value(*a).data(), g.value(*b).data());
            if g.requires_grad(*a) {
                for ((o, &d), &y) in gb.slot(*a, n).iter_mut().zip(grad).zip(bv) {
                    *o = *o + d * y;
                }
            }
            if g.requires_grad(*b) {
                for ((o, &d), &x) in gb.slot(*b, n).iter_mut().zip(grad).zip(av) {
                    *o = *o + d * x;
                }
            }
        }
        Op::Scale(x, c) => {
            for (o, &d) in gb.slot(*x, n).iter_mut().zip(grad) {
                *o = *o + d * *c;
            }
        }
        Op::AddConst(x) => {
            for (o, &d) in gb.slot(*x, n).iter_mut().zip(grad) {
                *o = *o + d;
            }
        }
        Op::ScaleBy(x, s) => {
            let sv = g.value(*s).data()[0];
            if g.requires_grad(*x) {
                for (o, &d) in gb.slot(*x, n).iter_mut().zip(grad) {
                    *o = *o + d * sv;
                }
            }
            if g.requires_grad(*s) {
                let dot: T = grad
                    .iter()
                    .zip(g.value(*x).data())
                    .map(|(&d, &v)| d * v)
                    .sum();
                let slot = gb.slot(*s, 1);
                slot[0] = slot[0] + dot;
            }
        }
        Op::ShiftBy(x, s) => {
            if g.requires_grad(*x) {
                for (o, &d) in gb.slot(*x, n).iter_mut().zip(grad) {
                    *o = *o + d;
                }
            }
            if g.requires_grad(*s) {
                let total: T = grad.iter().copied().sum();
                let slot = gb.slot(*s, 1);
                slot[0] = slot[0] + total;
            }
        }
        Op::AddBias(x, b) => {
            if g.requires_grad(*x) {
                for (o, &d) in gb.slot(*x, n).iter_mut().zip(grad) {
                    *o = *o + d;
                }
            }
            if g.requires_grad(*b) {
                let c = g.value(*b).numel();
                let slot = gb.slot(*b, c);
                for row in grad.chunks(c) {
                    for (o, &d) in slot.iter_mut().zip(row) {
                        *o = *o + d;
                    }
                }
            }
        }
        Op::Gelu(x) => {
            let xv = g.value(*x).data();
            for ((o, &d), &v) in gb.slot(*x, n).iter_mut().zip(grad).zip(xv) {
                *o = *o + d * gelu_grad(v);
            }
        }
        Op::Sigmoid(x) => {
            let y = node.value.data();
            for ((o, &d), &s) in gb.slot(*x, n).iter_mut().zip(grad).zip(y) {
                *o = *o + d * s * (T::one() - s);
            }
        }
        Op::Softplus(x) => {
            let xv = g.value(*x).data();
            for ((o, &d), &v) in gb.slot(*x, n).iter_mut().zip(grad).zip(xv) {
                *o = *o + d * sigmoid(v);
            }
        }
        Op::Tanh(x) => {
            let y = node.value.data();
            for ((o, &d), &t) in gb.slot(*x, n).iter_mut().zip(grad).zip(y) {
                *o = *o + d * (T::one() - t * t);
            }
        }
        Op::Sqrt(x) => {
            let y = node.value.data();
            let half = T::lit(0.5);
            for ((o, &d), &r) in gb.slot(*x, n).iter_mut().zip(grad).zip(y) {
                *o = *o + d * half / r;
            }
        }
        Op::RecipSafe(x) => {
            let y = node.value.data();
            for ((o, &d), &r) in gb.slot(*x, n).iter_mut().zip(grad).zip(y) {
                *o = *o - d * r * r;
            }
        }
        _ => unreachable!("not an elementwise op"),
    }
}
