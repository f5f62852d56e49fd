use std::sync::Arc;

use indexmap::IndexMap;

use crate::error::{AutodiffError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddConst(Var),
    ScaleBy(Var, Var),
    ShiftBy(Var, Var),
    AddBias(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    Gather {
        x: Var,
        index: Arc<Vec<i64>>,
    },
    Conv1x1 {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    LayerNorm {
        x: Var,
        gamma: Option<Var>,
        beta: Option<Var>,
        xhat: Vec<T>,
        rstd: Vec<T>,
    },
    Softmax(Var),
    Gelu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Tanh(Var),
    Sqrt(Var),
    RecipSafe(Var),
    L2NormalizeLast {
        x: Var,
        norm: Vec<T>,
    },
    AvgPool2d {
        x: Var,
        factor: usize,
    },
    NearestUpsample2d {
        x: Var,
        factor: usize,
    },
    BilinearUpsample2d {
        x: Var,
        factor: usize,
    },
    Sum(Var),
    Mean(Var),
    SumLast(Var),
    ExpandLast(Var),
    DynamicFilter {
        x: Var,
        kernels: Var,
        k: usize,
    },
    OffsetResample {
        x: Var,
        offsets: Var,
    },
}

impl<T> Op<T> {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddConst(..) => "add_const",
            Op::ScaleBy(..) => "scale_by",
            Op::ShiftBy(..) => "shift_by",
            Op::AddBias(..) => "add_bias",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Reshape(..) => "reshape",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Gather { .. } => "gather",
            Op::Conv1x1 { .. } => "conv1x1",
            Op::LayerNorm { .. } => "layernorm",
            Op::Softmax(..) => "softmax",
            Op::Gelu(..) => "gelu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Softplus(..) => "softplus",
            Op::Tanh(..) => "tanh",
            Op::Sqrt(..) => "sqrt",
            Op::RecipSafe(..) => "recip_safe",
            Op::L2NormalizeLast { .. } => "l2_normalize",
            Op::AvgPool2d { .. } => "avg_pool2d",
            Op::NearestUpsample2d { .. } => "nearest_upsample2d",
            Op::BilinearUpsample2d { .. } => "bilinear_upsample2d",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SumLast(..) => "sum_last",
            Op::ExpandLast(..) => "expand_last",
            Op::DynamicFilter { .. } => "dynamic_filter",
            Op::OffsetResample { .. } => "offset_resample",
        }
    }
}

pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
    pub(crate) requires_grad: bool,
}

/// Define-by-run tape. Every op evaluates eagerly and records what its
/// vector-Jacobian product needs; nodes are stored in creation order, which
/// is a valid topological order.
pub struct Graph<T: Scalar> {
    pub(crate) nodes: Vec<Node<T>>,
    params: IndexMap<String, Var>,
    check_finite: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: IndexMap::new(),
            check_finite: true,
        }
    }

    /// Disables the per-op finite check (used by throughput benchmarks).
    pub fn without_finite_check(mut self) -> Self {
        self.check_finite = false;
        self
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf registered under `name`.
    pub fn param(&mut self, name: &str, value: Tensor<T>) -> Result<Var> {
        if self.params.contains_key(name) {
            return Err(AutodiffError::DuplicateParam(name.to_string()));
        }
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn param_var(&self, name: &str) -> Option<Var> {
        self.params.get(name).copied()
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn check(&self, v: Var) -> Result<()> {
        if v.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(AutodiffError::UnknownVar(v.0))
        }
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let id = self.nodes.len();
        if self.check_finite && !value.is_finite() {
            return Err(AutodiffError::NonFinite {
                node: id,
                op: op.name(),
            });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(id))
    }

    /// Reverse sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        self.check(loss)?;
        let shape = self.nodes[loss.0].value.shape();
        if self.nodes[loss.0].value.numel() != 1 {
            return Err(AutodiffError::NotScalar(shape.to_vec()));
        }
        let mut grads = GradBuf::new(self.nodes.len());
        if self.nodes[loss.0].requires_grad {
            grads.slot(loss, 1)[0] = T::one();
        }
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads.take(id) else { continue };
            if matches!(node.op, Op::Leaf) {
                grads.put(id, g);
                continue;
            }
            crate::ops::backward_node(self, id, &g, &mut grads);
        }
        let params = self
            .params
            .iter()
            .map(|(name, &v)| {
                let value = &self.nodes[v.0].value;
                let data = grads
                    .take(v.0)
                    .unwrap_or_else(|| vec![T::zero(); value.numel()]);
                let t = Tensor::new(value.shape().to_vec(), data).expect("gradient shape");
                (name.clone(), t)
            })
            .collect();
        Ok(Gradients {
            params,
            nodes: grads.bufs,
        })
    }
}

pub(crate) struct GradBuf<T> {
    pub(crate) bufs: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> GradBuf<T> {
    fn new(n: usize) -> Self {
        GradBuf {
            bufs: (0..n).map(|_| None).collect(),
        }
    }

    pub(crate) fn slot(&mut self, v: Var, len: usize) -> &mut [T] {
        self.bufs[v.0].get_or_insert_with(|| vec![T::zero(); len])
    }

    fn take(&mut self, id: usize) -> Option<Vec<T>> {
        self.bufs[id].take()
    }

    fn put(&mut self, id: usize, g: Vec<T>) {
        self.bufs[id] = Some(g);
    }
}

/// Result of a reverse sweep.
pub struct Gradients<T> {
    params: IndexMap<String, Tensor<T>>,
    nodes: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name)
    }

    pub fn params(&self) -> &IndexMap<String, Tensor<T>> {
        &self.params
    }

    pub fn into_params(self) -> IndexMap<String, Tensor<T>> {
        self.params
    }

    /// Gradient with respect to a non-parameter node, if it was reached.
    /// Parameter gradients are moved into [`Gradients::param`].
    pub fn var(&self, v: Var) -> Option<&[T]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }
}
