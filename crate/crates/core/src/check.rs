//! Finite-difference checks of the network building blocks, the full
//! proximal network and the training loss on micro configurations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensorgrad::gradcheck::{grad_check, op_suite, GradCheckConfig, GradCheckReport};
use tensorgrad::{AutodiffError, Graph, ParamStore, Tensor};

use crate::cassi::generate_mask;
use crate::config::TrainConfig;
use crate::cube::{HsiCube, NoiseSpec};
use crate::error::{Error, Result};
use crate::nn::Scope;
use crate::prox::{
    prox_forward, register_prox, transformer_block, AttentionKind, ProxConfig, ProxProbes,
};
use crate::train::{build_loss, Sample, TrajectoryLossConfig};
use crate::unfold::{UnfoldConfig, UnfoldModel};

/// Tolerance for single ops and the transformer block.
pub const OP_TOLERANCE: f64 = 1e-5;
/// Tolerance for the full network and the loss.
pub const MODEL_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: String,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

fn to_autodiff(e: Error) -> AutodiffError {
    match e {
        Error::Autodiff(a) => a,
        other => AutodiffError::Format(other.to_string()),
    }
}

/// Replaces every parameter with small random values so no path is
/// trivially zero (e.g. the zero-initialized output head).
fn randomize(store: &mut ParamStore<f64>, seed: u64, amp: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (_, t) in store.iter_mut() {
        for v in t.data_mut() {
            *v += rng.random_range(-amp..amp);
        }
    }
}

fn random_input(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(0.0..1.0))
}

fn weighting(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

/// One transformer block with `C = 8`, `C' = 4`, window 2 on a 4x4 map.
pub fn block_check(kind: AttentionKind) -> Result<GradCheckReport> {
    let cfg = ProxConfig {
        levels: 1,
        base_channels: 8,
        window: 2,
        attention_schedule: vec![kind],
        lowrank_dim: vec![4],
        use_freq_fusion: false,
        ..ProxConfig::default()
    };
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    register_prox(&mut store, &mut rng, "", &cfg, 8, 1)?;
    let names: Vec<String> = store
        .names()
        .filter(|n| n.starts_with("enc0."))
        .map(str::to_string)
        .collect();
    let mut block = ParamStore::new();
    for n in names {
        block.insert(n.clone(), store.get(&n).expect("listed").clone())?;
    }
    randomize(&mut block, 4, 0.3);
    block.insert("x", random_input(&[4, 4, 8], 5))?;
    let w = weighting(&[4, 4, 8], 6);
    Ok(grad_check(
        &block,
        GradCheckConfig::default(),
        |g, vars| {
            let x = vars.get("x")?;
            let mut probes = ProxProbes::default();
            let y = transformer_block(g, Scope::new(vars, ""), "enc0", &cfg, 0, x, &mut probes)
                .map_err(to_autodiff)?;
            let wv = g.input(w.clone());
            let p = g.mul(y, wv)?;
            g.sum(p)
        },
    )?)
}

/// Micro proximal network: `H = W = 8`, `L = 4`, `C0 = 8`, two levels.
pub fn micro_prox_config() -> ProxConfig {
    ProxConfig {
        levels: 2,
        base_channels: 8,
        window: 2,
        ..ProxConfig::default()
    }
}

pub fn prox_check() -> Result<GradCheckReport> {
    let cfg = micro_prox_config();
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    register_prox(&mut store, &mut rng, "", &cfg, 4, 2)?;
    randomize(&mut store, 8, 0.2);
    let x = random_input(&[8, 8, 4], 9);
    let w = weighting(&[8, 8, 4], 10);
    Ok(grad_check(
        &store,
        GradCheckConfig::default(),
        |g, vars| {
            let xv = g.input(x.clone());
            let out = prox_forward(g, Scope::new(vars, ""), &cfg, xv, 1).map_err(to_autodiff)?;
            let wv = g.input(w.clone());
            let p = g.mul(out.out, wv)?;
            g.sum(p)
        },
    )?)
}

/// Full unfolding plus trajectory-supervised loss on an `8 x 8 x 4` scene.
pub fn loss_check() -> Result<GradCheckReport> {
    let ucfg = UnfoldConfig {
        stages: 2,
        prox: micro_prox_config(),
        ..UnfoldConfig::default()
    };
    let mut model = UnfoldModel::new(ucfg, 4, 11)?;
    randomize(&mut model.params, 12, 0.2);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let gt = HsiCube::new(
        8,
        8,
        4,
        (0..256).map(|_| rng.random_range(0.0..1.0)).collect(),
    )?;
    let mask = generate_mask(8, 8, 0.5, 14)?;
    let sample = Sample::new(gt, mask, &TrainConfig::default(), NoiseSpec::None)?;
    let loss = TrajectoryLossConfig::default();
    Ok(grad_check(
        &model.params,
        GradCheckConfig::default(),
        |g: &mut Graph<f64>, vars| {
            let (total, _) = build_loss(g, vars, &model, &sample, &loss).map_err(to_autodiff)?;
            Ok(total)
        },
    )?)
}

/// Every op, both attention blocks, the micro network and the loss.
pub fn full_suite() -> Result<Vec<CheckResult>> {
    let mut out: Vec<CheckResult> = op_suite()?
        .into_iter()
        .map(|c| CheckResult {
            name: format!("op/{}", c.op),
            max_rel_err: c.max_rel_err,
            tolerance: OP_TOLERANCE,
        })
        .collect();
    for (name, kind) in [
        ("block/spectral", AttentionKind::Spectral),
        ("block/spatial", AttentionKind::Spatial),
    ] {
        out.push(CheckResult {
            name: name.into(),
            max_rel_err: block_check(kind)?.max_rel_err(),
            tolerance: OP_TOLERANCE,
        });
    }
    out.push(CheckResult {
        name: "prox/micro".into(),
        max_rel_err: prox_check()?.max_rel_err(),
        tolerance: MODEL_TOLERANCE,
    });
    out.push(CheckResult {
        name: "loss/total".into(),
        max_rel_err: loss_check()?.max_rel_err(),
        tolerance: MODEL_TOLERANCE,
    });
    Ok(out)
}
