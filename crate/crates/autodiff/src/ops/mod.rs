mod elementwise;
mod linalg;
mod nn;
mod shape;
mod spatial;

pub(crate) use spatial::bilinear_taps;

use crate::graph::{GradBuf, Graph, Op};
use crate::scalar::Scalar;

pub(crate) fn backward_node<T: Scalar>(g: &Graph<T>, id: usize, grad: &[T], gb: &mut GradBuf<T>) {
    match &g.nodes[id].op {
        Op::Leaf => {}
        Op::Add(..)
        | Op::Sub(..)
        | Op::Mul(..)
        | Op::Scale(..)
        | Op::AddConst(..)
        | Op::ScaleBy(..)
        | Op::ShiftBy(..)
        | Op::AddBias(..)
        | Op::Gelu(..)
        | Op::Sigmoid(..)
        | Op::Softplus(..)
        | Op::Tanh(..)
        | Op::Sqrt(..)
        | Op::RecipSafe(..) => elementwise::backward(g, id, grad, gb),
        Op::MatMul(..) | Op::Transpose(..) | Op::Conv1x1 { .. } => {
            linalg::backward(g, id, grad, gb)
        }
        Op::Reshape(..)
        | Op::Concat { .. }
        | Op::Slice { .. }
        | Op::Gather { .. }
        | Op::Sum(..)
        | Op::Mean(..)
        | Op::SumLast(..)
        | Op::ExpandLast(..) => shape::backward(g, id, grad, gb),
        Op::LayerNorm { .. } | Op::Softmax(..) | Op::L2NormalizeLast { .. } => {
            nn::backward(g, id, grad, gb)
        }
        Op::AvgPool2d { .. }
        | Op::NearestUpsample2d { .. }
        | Op::BilinearUpsample2d { .. }
        | Op::DynamicFilter { .. }
        | Op::OffsetResample { .. } => spatial::backward(g, id, grad, gb),
    }
}
