use crate::error::{shape_err, Result};
use crate::graph::{GradBuf, Graph, Op, Var};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Batch, rows, inner and cols of a matmul plus whether `b` is shared
/// across the batch.
struct MatMulDims {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    shared_rhs: bool,
}

fn matmul_dims(a: &[usize], b: &[usize]) -> Result<MatMulDims> {
    let bad = || shape_err("matmul", format!("{a:?} x {b:?}"));
    let (batch, m, k) = match a {
        [m, k] => (1, *m, *k),
        [bt, m, k] => (*bt, *m, *k),
        _ => return Err(bad()),
    };
    let (shared_rhs, kb, n) = match b {
        [kb, n] => (true, *kb, *n),
        [bb, kb, n] if a.len() == 3 && *bb == batch => (false, *kb, *n),
        _ => return Err(bad()),
    };
    if kb != k {
        return Err(bad());
    }
    Ok(MatMulDims {
        batch,
        m,
        k,
        n,
        shared_rhs,
    })
}

impl<T: Scalar> Graph<T> {
    /// `[M,K] x [K,N]`, `[B,M,K] x [B,K,N]` or `[B,M,K] x [K,N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let d = matmul_dims(self.shape(a), self.shape(b))?;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); d.batch * d.m * d.n];
        for bi in 0..d.batch {
            let a_s = &av[bi * d.m * d.k..(bi + 1) * d.m * d.k];
            let b_s = if d.shared_rhs {
                bv
            } else {
                &bv[bi * d.k * d.n..(bi + 1) * d.k * d.n]
            };
            let c_s = &mut out[bi * d.m * d.n..(bi + 1) * d.m * d.n];
            T::gemm(
                d.m,
                d.k,
                d.n,
                T::one(),
                a_s,
                d.k as isize,
                1,
                b_s,
                d.n as isize,
                1,
                T::zero(),
                c_s,
                d.n as isize,
                1,
            );
        }
        let shape = if self.shape(a).len() == 3 {
            vec![d.batch, d.m, d.n]
        } else {
            vec![d.m, d.n]
        };
        self.push(Tensor::new(shape, out)?, Op::MatMul(a, b), &[a, b])
    }

    /// Swaps the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(shape_err("transpose", format!("rank {} < 2", shape.len())));
        }
        let (r, c) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        for (o, s) in out.chunks_mut(r * c).zip(src.chunks(r * c)) {
            transpose_into(s, o, r, c);
        }
        let mut new_shape = shape;
        let len = new_shape.len();
        new_shape.swap(len - 2, len - 1);
        self.push(Tensor::new(new_shape, out)?, Op::Transpose(x), &[x])
    }

    /// Per-pixel channel mixing: `x[..., Cin] * w[Cin, Cout] + b[Cout]`.
    pub fn conv1x1(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        self.check(x)?;
        self.check(w)?;
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let cin = *xs.last().unwrap();
        if ws.len() != 2 || ws[0] != cin {
            return Err(shape_err("conv1x1", format!("input {xs:?}, weight {ws:?}")));
        }
        let cout = ws[1];
        if let Some(b) = b {
            self.check(b)?;
            if self.shape(b) != [cout] {
                return Err(shape_err("conv1x1", format!("bias {:?}", self.shape(b))));
            }
        }
        let rows = self.value(x).numel() / cin;
        let mut out = vec![T::zero(); rows * cout];
        if let Some(b) = b {
            let bias = self.value(b).data();
            for row in out.chunks_mut(cout) {
                row.copy_from_slice(bias);
            }
        }
        T::gemm(
            rows,
            cin,
            cout,
            T::one(),
            self.value(x).data(),
            cin as isize,
            1,
            self.value(w).data(),
            cout as isize,
            1,
            if b.is_some() { T::one() } else { T::zero() },
            &mut out,
            cout as isize,
            1,
        );
        let mut shape = xs;
        *shape.last_mut().unwrap() = cout;
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        self.push(Tensor::new(shape, out)?, Op::Conv1x1 { x, w, b }, &inputs)
    }
}

fn transpose_into<T: Copy>(src: &[T], dst: &mut [T], rows: usize, cols: usize) {
    for i in 0..rows {
        for j in 0..cols {
            dst[j * rows + i] = src[i * cols + j];
        }
    }
}

pub(crate) fn backward<T: Scalar>(g: &Graph<T>, id: usize, grad: &[T], gb: &mut GradBuf<T>) {
    let node = &g.nodes[id];
    match &node.op {
        Op::MatMul(a, b) => {
            let d = matmul_dims(g.shape(*a), g.shape(*b)).expect("validated in forward");
            let (av, bv) = (g.value(*a).data(), g.value(*b).data());
            if g.requires_grad(*a) {
                let da = gb.slot(*a, av.len());
                for bi in 0..d.batch {
                    let g_s = &grad[bi * d.m * d.n..(bi + 1) * d.m * d.n];
                    let b_s = if d.shared_rhs {
                        bv
                    } else {
                        &bv[bi * d.k * d.n..(bi + 1) * d.k * d.n]
                    };
                    let da_s = &mut da[bi * d.m * d.k..(bi + 1) * d.m * d.k];
                    // dA = G * B^T
                    T::gemm(
                        d.m,
                        d.n,
                        d.k,
                        T::one(),
                        g_s,
                        d.n as isize,
                        1,
                        b_s,
                        1,
                        d.n as isize,
                        T::one(),
                        da_s,
                        d.k as isize,
                        1,
                    );
                }
            }
            if g.requires_grad(*b) {
                let db = gb.slot(*b, bv.len());
                for bi in 0..d.batch {
                    let g_s = &grad[bi * d.m * d.n..(bi + 1) * d.m * d.n];
                    let a_s = &av[bi * d.m * d.k..(bi + 1) * d.m * d.k];
                    let db_s = if d.shared_rhs {
                        &mut db[..]
                    } else {
                        &mut db[bi * d.k * d.n..(bi + 1) * d.k * d.n]
                    };
                    // dB = A^T * G
                    T::gemm(
                        d.k,
                        d.m,
                        d.n,
                        T::one(),
                        a_s,
                        1,
                        d.k as isize,
                        g_s,
                        d.n as isize,
                        1,
                        T::one(),
                        db_s,
                        d.n as isize,
                        1,
                    );
                }
            }
        }
        Op::Transpose(x) => {
            let shape = g.shape(*x);
            let (r, c) = (shape[shape.len() - 2], shape[shape.len() - 1]);
            let dx = gb.slot(*x, grad.len());
            // grad has the transposed layout [.., c, r]
            for (o, s) in dx.chunks_mut(r * c).zip(grad.chunks(r * c)) {
                for i in 0..c {
                    for j in 0..r {
                        o[j * c + i] = o[j * c + i] + s[i * r + j];
                    }
                }
            }
        }
        Op::Conv1x1 { x, w, b } => {
            let ws = g.shape(*w);
            let (cin, cout) = (ws[0], ws[1]);
            let xv = g.value(*x).data();
            let rows = xv.len() / cin;
            if g.requires_grad(*x) {
                let dx = gb.slot(*x, xv.len());
                T::gemm(
                    rows,
                    cout,
                    cin,
                    T::one(),
                    grad,
                    cout as isize,
                    1,
                    g.value(*w).data(),
                    1,
                    cout as isize,
                    T::one(),
                    dx,
                    cin as isize,
                    1,
                );
            }
            if g.requires_grad(*w) {
                let dw = gb.slot(*w, cin * cout);
                T::gemm(
                    cin,
                    rows,
                    cout,
                    T::one(),
                    xv,
                    1,
                    cin as isize,
                    grad,
                    cout as isize,
                    1,
                    T::one(),
                    dw,
                    cout as isize,
                    1,
                );
            }
            if let Some(b) = b {
                if g.requires_grad(*b) {
                    let db = gb.slot(*b, cout);
                    for row in grad.chunks(cout) {
                        for (o, &d) in db.iter_mut().zip(row) {
                            *o = *o + d;
                        }
                    }
                }
            }
        }
        _ => unreachable!("not a linear-algebra op"),
    }
}
