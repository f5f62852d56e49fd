//! Central finite-difference oracle for reverse-mode gradients.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{AutodiffError, Result};
use crate::graph::{Graph, Var};
use crate::params::{ParamStore, Vars};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub step: f64,
    /// Lower bound on the relative-error denominator, so entries whose
    /// gradient is essentially zero are compared in absolute terms.
    pub floor: f64,
    /// Check at most this many evenly spaced entries per parameter.
    pub max_entries_per_param: Option<usize>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            floor: 1e-3,
            max_entries_per_param: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamError {
    pub name: String,
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub checked: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamError>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_err)
            .fold(0.0, f64::max)
    }

    /// Fails with the worst parameter and index when `tolerance` is exceeded.
    pub fn ensure(&self, tolerance: f64) -> Result<()> {
        match self
            .params
            .iter()
            .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
        {
            Some(p) if p.max_rel_err > tolerance => Err(AutodiffError::GradCheck {
                param: p.name.clone(),
                index: p.worst_index,
                rel_err: p.max_rel_err,
                tolerance,
            }),
            _ => Ok(()),
        }
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}

fn eval_loss<F>(params: &ParamStore<f64>, build: &F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &Vars) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars = params.bind(&mut g)?;
    let loss = build(&mut g, &vars)?;
    let t = g.value(loss);
    if t.numel() != 1 {
        return Err(AutodiffError::NotScalar(t.shape().to_vec()));
    }
    Ok(t.data()[0])
}

/// Compares [`Graph::backward`] against central differences for every
/// parameter in `params`. `build` constructs the scalar loss from bound
/// parameter handles and must be deterministic.
pub fn grad_check<F>(
    params: &ParamStore<f64>,
    config: GradCheckConfig,
    build: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &Vars) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars = params.bind(&mut g)?;
    let loss = build(&mut g, &vars)?;
    let grads = g.backward(loss)?;

    let mut probe = params.clone();
    let mut report = Vec::with_capacity(params.len());
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in names {
        let analytic = grads
            .param(&name)
            .ok_or_else(|| AutodiffError::Missing(name.clone()))?
            .data()
            .to_vec();
        let n = analytic.len();
        let indices: Vec<usize> = match config.max_entries_per_param {
            Some(m) if m < n => (0..m).map(|i| i * n / m).collect(),
            _ => (0..n).collect(),
        };
        let mut worst = (0.0f64, 0usize);
        for &i in &indices {
            let orig = params.get(&name).unwrap().data()[i];
            probe.get_mut(&name).unwrap().data_mut()[i] = orig + config.step;
            let plus = eval_loss(&probe, &build)?;
            probe.get_mut(&name).unwrap().data_mut()[i] = orig - config.step;
            let minus = eval_loss(&probe, &build)?;
            probe.get_mut(&name).unwrap().data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * config.step);
            let err = relative_error(analytic[i], numeric, config.floor);
            if err > worst.0 {
                worst = (err, i);
            }
        }
        report.push(ParamError {
            name,
            max_rel_err: worst.0,
            worst_index: worst.1,
            checked: indices.len(),
        });
    }
    Ok(GradCheckReport { params: report })
}

/// One entry of [`op_suite`].
#[derive(Debug, Clone)]
pub struct OpCheck {
    pub op: &'static str,
    pub max_rel_err: f64,
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

/// Contracts `out` against a fixed random weighting so every output entry
/// contributes a distinct amount to the loss.
fn weighted_sum(g: &mut Graph<f64>, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(g.shape(out), &mut rng, -1.0, 1.0);
    let w = g.input(w);
    let prod = g.mul(out, w)?;
    g.sum(prod)
}

/// Gradient check of one op on random inputs drawn from `U(-1.5, 1.5)`.
pub fn check_op<F>(inputs: &[(&str, &[usize])], seed: u64, build: F) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &Vars) -> Result<Var>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    for (name, shape) in inputs {
        store.insert(*name, random(shape, &mut rng, -1.5, 1.5))?;
    }
    let report = grad_check(&store, GradCheckConfig::default(), |g, v| {
        let out = build(g, v)?;
        weighted_sum(g, out, seed ^ 0x5eed)
    })?;
    Ok(report.max_rel_err())
}

/// Every differentiable op in the vocabulary on a small random instance.
pub fn op_suite() -> Result<Vec<OpCheck>> {
    let s: &[usize] = &[3, 4];
    let perm: Arc<Vec<i64>> = Arc::new(vec![5, -1, 0, 3, 3, 1, 2, -1]);
    let mut out = Vec::new();
    let mut push = |op: &'static str, r: Result<f64>| -> Result<()> {
        out.push(OpCheck {
            op,
            max_rel_err: r?,
        });
        Ok(())
    };
    push(
        "add",
        check_op(&[("a", s), ("b", s)], 10, |g, v| {
            g.add(v.get("a")?, v.get("b")?)
        }),
    )?;
    push(
        "sub",
        check_op(&[("a", s), ("b", s)], 11, |g, v| {
            g.sub(v.get("a")?, v.get("b")?)
        }),
    )?;
    push(
        "mul",
        check_op(&[("a", s), ("b", s)], 12, |g, v| {
            g.mul(v.get("a")?, v.get("b")?)
        }),
    )?;
    push(
        "scale",
        check_op(&[("a", s)], 13, |g, v| g.scale(v.get("a")?, -2.5)),
    )?;
    push(
        "add_const",
        check_op(&[("a", s)], 14, |g, v| g.add_const(v.get("a")?, 0.7)),
    )?;
    push(
        "scale_by",
        check_op(&[("a", s), ("s", &[1])], 15, |g, v| {
            g.scale_by(v.get("a")?, v.get("s")?)
        }),
    )?;
    push(
        "shift_by",
        check_op(&[("a", s), ("s", &[1])], 16, |g, v| {
            g.shift_by(v.get("a")?, v.get("s")?)
        }),
    )?;
    push(
        "add_bias",
        check_op(&[("a", s), ("b", &[4])], 17, |g, v| {
            g.add_bias(v.get("a")?, v.get("b")?)
        }),
    )?;
    push(
        "gelu",
        check_op(&[("a", s)], 18, |g, v| g.gelu(v.get("a")?)),
    )?;
    push(
        "sigmoid",
        check_op(&[("a", s)], 19, |g, v| g.sigmoid(v.get("a")?)),
    )?;
    push(
        "softplus",
        check_op(&[("a", s)], 20, |g, v| g.softplus(v.get("a")?)),
    )?;
    push(
        "tanh",
        check_op(&[("a", s)], 21, |g, v| g.tanh(v.get("a")?)),
    )?;
    push(
        "recip_safe",
        check_op(&[("a", s)], 22, |g, v| {
            let shifted = g.add_const(v.get("a")?, 3.0)?;
            g.recip_safe(shifted)
        }),
    )?;
    push(
        "sqrt",
        check_op(&[("a", s)], 23, |g, v| {
            let shifted = g.add_const(v.get("a")?, 3.0)?;
            g.sqrt(shifted)
        }),
    )?;
    push(
        "matmul",
        check_op(&[("a", &[3, 4]), ("b", &[4, 2])], 30, |g, v| {
            g.matmul(v.get("a")?, v.get("b")?)
        }),
    )?;
    push(
        "matmul_batched",
        check_op(&[("a", &[2, 3, 4]), ("b", &[2, 4, 5])], 31, |g, v| {
            g.matmul(v.get("a")?, v.get("b")?)
        }),
    )?;
    push(
        "matmul_broadcast",
        check_op(&[("a", &[2, 3, 4]), ("b", &[4, 5])], 32, |g, v| {
            g.matmul(v.get("a")?, v.get("b")?)
        }),
    )?;
    push(
        "transpose",
        check_op(&[("a", &[2, 3, 4])], 33, |g, v| g.transpose(v.get("a")?)),
    )?;
    push(
        "conv1x1",
        check_op(
            &[("x", &[3, 2, 4]), ("w", &[4, 5]), ("b", &[5])],
            34,
            |g, v| g.conv1x1(v.get("x")?, v.get("w")?, Some(v.get("b")?)),
        ),
    )?;
    push(
        "conv1x1_nobias",
        check_op(&[("x", &[3, 2, 4]), ("w", &[4, 3])], 35, |g, v| {
            g.conv1x1(v.get("x")?, v.get("w")?, None)
        }),
    )?;
    push(
        "reshape",
        check_op(&[("a", &[2, 6])], 40, |g, v| {
            g.reshape(v.get("a")?, &[3, 4])
        }),
    )?;
    push(
        "concat",
        check_op(&[("a", &[2, 3]), ("b", &[2, 2])], 41, |g, v| {
            g.concat(&[v.get("a")?, v.get("b")?], 1)
        }),
    )?;
    push(
        "slice",
        check_op(&[("a", &[3, 5, 2])], 42, |g, v| {
            g.slice(v.get("a")?, 1, 1, 4)
        }),
    )?;
    push(
        "gather",
        check_op(&[("a", &[6])], 43, |g, v| {
            g.gather(v.get("a")?, perm.clone(), &[2, 4])
        }),
    )?;
    push(
        "sum",
        check_op(&[("a", &[3, 2])], 44, |g, v| g.sum(v.get("a")?)),
    )?;
    push(
        "mean",
        check_op(&[("a", &[3, 2])], 45, |g, v| g.mean(v.get("a")?)),
    )?;
    push(
        "sum_last",
        check_op(&[("a", &[3, 4])], 46, |g, v| g.sum_last(v.get("a")?)),
    )?;
    push(
        "expand_last",
        check_op(&[("a", &[3, 1])], 47, |g, v| g.expand_last(v.get("a")?, 4)),
    )?;
    push(
        "layernorm",
        check_op(&[("x", &[4, 5]), ("g", &[5]), ("b", &[5])], 50, |g, v| {
            g.layernorm(v.get("x")?, Some(v.get("g")?), Some(v.get("b")?), 1e-6)
        }),
    )?;
    push(
        "layernorm_plain",
        check_op(&[("x", &[3, 6])], 51, |g, v| {
            g.layernorm(v.get("x")?, None, None, 1e-6)
        }),
    )?;
    push(
        "softmax",
        check_op(&[("x", &[4, 5])], 52, |g, v| g.softmax(v.get("x")?)),
    )?;
    push(
        "l2_normalize_last",
        check_op(&[("x", &[4, 3])], 53, |g, v| {
            g.l2_normalize_last(v.get("x")?, 1e-8)
        }),
    )?;
    push(
        "avg_pool2d",
        check_op(&[("x", &[4, 6, 2])], 60, |g, v| {
            g.avg_pool2d(v.get("x")?, 2)
        }),
    )?;
    push(
        "nearest_upsample2d",
        check_op(&[("x", &[2, 3, 2])], 61, |g, v| {
            g.nearest_upsample2d(v.get("x")?, 2)
        }),
    )?;
    push(
        "bilinear_upsample2d",
        check_op(&[("x", &[3, 2, 2])], 62, |g, v| {
            g.bilinear_upsample2d(v.get("x")?, 2)
        }),
    )?;
    push(
        "dynamic_filter",
        check_op(&[("x", &[4, 3, 2]), ("k", &[4, 3, 9])], 63, |g, v| {
            g.dynamic_filter(v.get("x")?, v.get("k")?, 3)
        }),
    )?;
    push(
        "offset_resample",
        check_op(&[("x", &[4, 4, 2]), ("o", &[4, 4, 2])], 64, |g, v| {
            // samples stay inside the grid and away from integer kinks
            let o = g.tanh(v.get("o")?)?;
            let o = g.scale(o, 0.4)?;
            let o = g.add_const(o, 0.3)?;
            g.offset_resample(v.get("x")?, o)
        }),
    )?;
    Ok(out)
}
