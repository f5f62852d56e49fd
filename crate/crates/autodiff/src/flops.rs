//! Forward-pass floating-point operation estimate for a recorded graph.
//!
//! Cost per op, with `n` the output element count:
//!
//! | op | FLOPs |
//! |----|-------|
//! | add, sub, mul, scale, add_const, scale_by, shift_by, add_bias, sqrt, recip_safe | `n` |
//! | matmul `[B,M,K] x [K,N]` | `2 B M K N` (one multiply-accumulate = 2) |
//! | conv1x1 (`rows x Cin -> Cout`) | `2 rows Cin Cout`, plus `rows Cout` with bias |
//! | layernorm | `8 n` (mean, variance, normalize, affine) |
//! | softmax | `4 n` (max, exp, row sum, divide) |
//! | gelu | `8 n`; sigmoid, softplus, tanh: `4 n` |
//! | l2_normalize | `3 n` |
//! | avg_pool2d, sum, mean, sum_last | input element count |
//! | bilinear_upsample2d, offset_resample | `8 n` (four taps, multiply-add each) |
//! | dynamic_filter (`k x k`) | `2 k^2 n` |
//! | reshape, transpose, concat, slice, gather, expand_last, nearest upsample | 0 |

use crate::graph::{Graph, Op};
use crate::scalar::Scalar;

impl<T: Scalar> Graph<T> {
    pub fn flop_estimate(&self) -> u64 {
        self.nodes
            .iter()
            .map(|node| {
                let n = node.value.numel() as u64;
                let input_len = |v: crate::Var| self.value(v).numel() as u64;
                match &node.op {
                    Op::Leaf
                    | Op::Transpose(..)
                    | Op::Reshape(..)
                    | Op::Concat { .. }
                    | Op::Slice { .. }
                    | Op::Gather { .. }
                    | Op::ExpandLast(..)
                    | Op::NearestUpsample2d { .. } => 0,
                    Op::Add(..)
                    | Op::Sub(..)
                    | Op::Mul(..)
                    | Op::Scale(..)
                    | Op::AddConst(..)
                    | Op::ScaleBy(..)
                    | Op::ShiftBy(..)
                    | Op::AddBias(..)
                    | Op::Sqrt(..)
                    | Op::RecipSafe(..) => n,
                    Op::MatMul(a, _) => {
                        let k = *self.shape(*a).last().unwrap() as u64;
                        2 * n * k
                    }
                    Op::Conv1x1 { w, b, .. } => {
                        let cin = self.shape(*w)[0] as u64;
                        2 * n * cin + if b.is_some() { n } else { 0 }
                    }
                    Op::LayerNorm { .. } => 8 * n,
                    Op::Softmax(..) => 4 * n,
                    Op::Gelu(..) => 8 * n,
                    Op::Sigmoid(..) | Op::Softplus(..) | Op::Tanh(..) => 4 * n,
                    Op::L2NormalizeLast { .. } => 3 * n,
                    Op::AvgPool2d { x, .. } | Op::Sum(x) | Op::Mean(x) | Op::SumLast(x) => {
                        input_len(*x)
                    }
                    Op::BilinearUpsample2d { .. } | Op::OffsetResample { .. } => 8 * n,
                    Op::DynamicFilter { k, .. } => 2 * (*k as u64) * (*k as u64) * n,
                }
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use crate::{Graph, Tensor};

    #[test]
    fn conv_with_bias() {
        let mut g = Graph::<f64>::new();
        let x = g.input(Tensor::zeros(vec![5, 3]));
        let w = g.param("w", Tensor::zeros(vec![3, 4])).unwrap();
        let b = g.param("b", Tensor::zeros(vec![4])).unwrap();
        g.conv1x1(x, w, Some(b)).unwrap();
        assert_eq!(g.flop_estimate(), 2 * 5 * 3 * 4 + 5 * 4);
    }
}
