//! Trajectory-supervised training: stage targets and weights, losses, Adam
//! with cosine annealing, the epoch loop with validation, and the ablation
//! harness.

use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tensorgrad::{checkpoint, Graph, ParamStore, Scalar, Tensor, Var};

use crate::bp::CassiSystem;
use crate::cassi::{forward_measure, generate_mask, unshift_cube};
use crate::config::{escape_meta, TrainConfig};
use crate::cube::{CodedMask, HsiCube, Measurement, NoiseSpec};
use crate::error::{dim, Error, Result};
use crate::exec::{ordered_map, ExecMode};
use crate::io::{fmt_f64, CsvTable};
use crate::metrics::{psnr, ssim};
use crate::synth::make_scene;
use crate::tv::{gap_tv_baseline, GapTvConfig};
use crate::unfold::{
    cube_to_hwc, init_estimate, unfold_graph, unshift_graph, StageInputs, UnfoldModel,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinalLoss {
    Mse,
    Charbonnier,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajectoryLossConfig {
    /// Exponential rate `c` of the stage weights.
    pub rate: f64,
    /// Weight of the trajectory term; 0 leaves final-stage supervision only.
    pub weight: f64,
    pub final_loss: FinalLoss,
    pub charbonnier_eps: f64,
}

impl Default for TrajectoryLossConfig {
    fn default() -> Self {
        TrajectoryLossConfig {
            rate: 3.0,
            weight: 0.5,
            final_loss: FinalLoss::Mse,
            charbonnier_eps: 1e-3,
        }
    }
}

impl TrajectoryLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rate > 0.0) || !(self.weight >= 0.0) || !(self.charbonnier_eps > 0.0) {
            return Err(Error::InvalidParameter(
                "loss needs rate > 0, weight >= 0, eps > 0".into(),
            ));
        }
        Ok(())
    }
}

/// `T_k = (k/K) x_gt + (1 - k/K) x0` for `k = 1..=K`.
pub fn trajectory_targets(x_gt: &HsiCube, x0: &HsiCube, stages: usize) -> Result<Vec<HsiCube>> {
    if !x_gt.same_shape(x0) {
        return Err(dim("ground truth and initial estimate differ in shape"));
    }
    Ok((1..=stages)
        .map(|k| {
            if k == stages {
                return x_gt.clone();
            }
            let t = k as f64 / stages as f64;
            let mut out = x0.clone();
            for (o, &g) in out.data.iter_mut().zip(&x_gt.data) {
                *o = t * g + (1.0 - t) * *o;
            }
            out
        })
        .collect())
}

/// `alpha_k = 1 - exp(-c k / K)`.
pub fn stage_weight(k: usize, stages: usize, rate: f64) -> f64 {
    1.0 - (-rate * k as f64 / stages as f64).exp()
}

pub fn mse(a: &HsiCube, b: &HsiCube) -> f64 {
    a.data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data.len() as f64
}

fn final_term(a: &HsiCube, b: &HsiCube, cfg: &TrajectoryLossConfig) -> f64 {
    match cfg.final_loss {
        FinalLoss::Mse => mse(a, b),
        FinalLoss::Charbonnier => {
            let e2 = cfg.charbonnier_eps * cfg.charbonnier_eps;
            a.data
                .iter()
                .zip(&b.data)
                .map(|(x, y)| ((x - y) * (x - y) + e2).sqrt())
                .sum::<f64>()
                / a.data.len() as f64
        }
    }
}

/// `sum_k alpha_k MSE(x_k, T_k)` over stages `1..=K`; `states` holds
/// `x_1 ... x_K`.
pub fn trajectory_loss(
    states: &[HsiCube],
    targets: &[HsiCube],
    cfg: &TrajectoryLossConfig,
) -> Result<f64> {
    if states.len() != targets.len() || states.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "{} states for {} targets",
            states.len(),
            targets.len()
        )));
    }
    let k_total = states.len();
    let mut total = 0.0;
    for (i, (s, t)) in states.iter().zip(targets).enumerate() {
        if !s.same_shape(t) {
            return Err(dim("state and target differ in shape"));
        }
        total += stage_weight(i + 1, k_total, cfg.rate) * mse(s, t);
    }
    Ok(total)
}

/// Final-stage loss plus `weight * trajectory_loss`; `states` holds
/// `x_1 ... x_K`.
pub fn total_loss(
    states: &[HsiCube],
    x_gt: &HsiCube,
    x0: &HsiCube,
    cfg: &TrajectoryLossConfig,
) -> Result<f64> {
    let last = states
        .last()
        .ok_or_else(|| Error::InvalidParameter("empty trajectory".into()))?;
    if !last.same_shape(x_gt) {
        return Err(dim("final state and ground truth differ in shape"));
    }
    let mut loss = final_term(last, x_gt, cfg);
    if cfg.weight > 0.0 {
        let targets = trajectory_targets(x_gt, x0, states.len())?;
        loss += cfg.weight * trajectory_loss(states, &targets, cfg)?;
    }
    Ok(loss)
}

fn mse_graph<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    let sq = g.mul(d, d)?;
    Ok(g.mean(sq)?)
}

fn final_graph<T: Scalar>(
    g: &mut Graph<T>,
    a: Var,
    b: Var,
    cfg: &TrajectoryLossConfig,
) -> Result<Var> {
    match cfg.final_loss {
        FinalLoss::Mse => mse_graph(g, a, b),
        FinalLoss::Charbonnier => {
            let d = g.sub(a, b)?;
            let sq = g.mul(d, d)?;
            let sh = g.add_const(sq, cfg.charbonnier_eps * cfg.charbonnier_eps)?;
            let r = g.sqrt(sh)?;
            Ok(g.mean(r)?)
        }
    }
}

/// Graph form of [`trajectory_loss`]; `targets` are `T_1 ... T_K`.
pub fn trajectory_loss_graph<T: Scalar>(
    g: &mut Graph<T>,
    states: &[Var],
    targets: &[Var],
    cfg: &TrajectoryLossConfig,
) -> Result<Var> {
    if states.len() != targets.len() || states.is_empty() {
        return Err(Error::InvalidParameter(
            "trajectory and targets differ in length".into(),
        ));
    }
    let k_total = states.len();
    let mut acc: Option<Var> = None;
    for (i, (&s, &t)) in states.iter().zip(targets).enumerate() {
        let m = mse_graph(g, s, t)?;
        let w = g.scale(m, stage_weight(i + 1, k_total, cfg.rate))?;
        acc = Some(match acc {
            Some(a) => g.add(a, w)?,
            None => w,
        });
    }
    Ok(acc.expect("non-empty"))
}

/// Graph form of [`total_loss`]; returns `(total, trajectory term)`. The
/// trajectory term is only added when its weight is positive.
pub fn total_loss_graph<T: Scalar>(
    g: &mut Graph<T>,
    states: &[Var],
    gt: Var,
    targets: &[Var],
    cfg: &TrajectoryLossConfig,
) -> Result<(Var, Var)> {
    let last = *states
        .last()
        .ok_or_else(|| Error::InvalidParameter("empty trajectory".into()))?;
    let fin = final_graph(g, last, gt, cfg)?;
    let traj = trajectory_loss_graph(g, states, targets, cfg)?;
    if cfg.weight > 0.0 {
        let w = g.scale(traj, cfg.weight)?;
        Ok((g.add(fin, w)?, traj))
    } else {
        Ok((fin, traj))
    }
}

/// Adam with bias correction; moments are kept per parameter name.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: IndexMap<String, Vec<f64>>,
    v: IndexMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Result<Self> {
        if !(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0) {
            return Err(Error::InvalidParameter(
                "adam betas must lie in (0, 1)".into(),
            ));
        }
        Ok(Adam {
            beta1,
            beta2,
            eps,
            t: 0,
            m: IndexMap::new(),
            v: IndexMap::new(),
        })
    }

    pub fn step<T: Scalar>(
        &mut self,
        params: &mut ParamStore<T>,
        grads: &IndexMap<String, Tensor<T>>,
        lr: f64,
    ) -> Result<()> {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            if g.shape() != p.shape() {
                return Err(dim(format!(
                    "gradient shape {:?} for {name} {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            let n = p.numel();
            let m = self
                .m
                .entry(name.to_string())
                .or_insert_with(|| vec![0.0; n]);
            let v = self
                .v
                .entry(name.to_string())
                .or_insert_with(|| vec![0.0; n]);
            for i in 0..n {
                let gi = g.data()[i].as_f64();
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                let pi = p.data()[i].as_f64() - lr * mh / (vh.sqrt() + self.eps);
                p.data_mut()[i] = T::lit(pi);
            }
        }
        Ok(())
    }
}

/// `lr_min + (lr_max - lr_min) (1 + cos(pi epoch / total)) / 2`.
pub fn cosine_lr(epoch: usize, total: usize, lr_max: f64, lr_min: f64) -> f64 {
    if total == 0 {
        return lr_max;
    }
    let t = epoch.min(total) as f64 / total as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
}

/// One training or validation example: scene, its mask crop and snapshot.
#[derive(Clone, Debug)]
pub struct Sample {
    pub gt: HsiCube,
    pub system: CassiSystem,
    pub y: Measurement,
}

impl Sample {
    pub fn new(
        gt: HsiCube,
        mask: CodedMask,
        config: &TrainConfig,
        noise: NoiseSpec,
    ) -> Result<Self> {
        let spec = config.dispersion()?;
        let y = forward_measure(&gt, &mask, spec, noise)?;
        let system = CassiSystem::new(mask, gt.bands, spec);
        Ok(Sample { gt, system, y })
    }
}

fn crop_mask(
    mask: &CodedMask,
    top: usize,
    left: usize,
    rows: usize,
    cols: usize,
) -> Result<CodedMask> {
    let mut p = Vec::with_capacity(rows * cols);
    for r in top..top + rows {
        p.extend_from_slice(&mask.pattern[r * mask.width + left..r * mask.width + left + cols]);
    }
    CodedMask::new(rows, cols, p)
}

/// Loss and parameter gradients for one sample.
pub struct SampleGrad<T> {
    pub loss: f64,
    pub traj_loss: f64,
    pub grads: IndexMap<String, Tensor<T>>,
}

pub fn sample_gradients<T: Scalar>(
    model: &UnfoldModel,
    params: &ParamStore<T>,
    sample: &Sample,
    loss: &TrajectoryLossConfig,
) -> Result<SampleGrad<T>> {
    let mut g = Graph::<T>::new();
    let vars = params.bind(&mut g)?;
    let (total, traj) = build_loss(&mut g, &vars, model, sample, loss)?;
    let lv = g.value(total).data()[0].as_f64();
    let tv = g.value(traj).data()[0].as_f64();
    let grads = g.backward(total)?.into_params();
    Ok(SampleGrad {
        loss: lv,
        traj_loss: tv,
        grads,
    })
}

/// Records the full unfolding and loss for one sample on `g`.
pub fn build_loss<T: Scalar>(
    g: &mut Graph<T>,
    vars: &tensorgrad::Vars,
    model: &UnfoldModel,
    sample: &Sample,
    loss: &TrajectoryLossConfig,
) -> Result<(Var, Var)> {
    let sys = &sample.system;
    let inputs = StageInputs::new(g, sys, &sample.y)?;
    let x0 = init_estimate(sys, &sample.y)?;
    let x0v = g.input(x0.to_hwc::<T>());
    let run = unfold_graph(g, vars, &model.config, &inputs, x0v)?;
    let mut aligned = Vec::with_capacity(model.config.stages);
    for &s in &run.states[1..] {
        aligned.push(unshift_graph(g, s, sys.scene_width(), sys.spec.step)?);
    }
    let gt = g.input(cube_to_hwc::<T>(&sample.gt));
    let targets = trajectory_targets(&sample.gt, &unshift_cube(&x0), model.config.stages)?;
    let tvars: Vec<Var> = targets
        .iter()
        .map(|t| g.input(cube_to_hwc::<T>(t)))
        .collect();
    total_loss_graph(g, &aligned, gt, &tvars, loss)
}

/// Mean gradients over a batch, reduced in batch order.
pub fn batch_gradients<T: Scalar>(
    model: &UnfoldModel,
    params: &ParamStore<T>,
    batch: &[Sample],
    loss: &TrajectoryLossConfig,
    mode: ExecMode,
) -> Result<SampleGrad<T>> {
    let results = ordered_map(mode, batch, |_, s| sample_gradients(model, params, s, loss));
    let n = batch.len() as f64;
    let mut acc: IndexMap<String, Vec<f64>> = IndexMap::new();
    let (mut l, mut t) = (0.0, 0.0);
    for r in results {
        let r = r?;
        l += r.loss;
        t += r.traj_loss;
        for (name, gt) in r.grads {
            let slot = acc.entry(name).or_insert_with(|| vec![0.0; gt.numel()]);
            for (a, v) in slot.iter_mut().zip(gt.data()) {
                *a += v.as_f64();
            }
        }
    }
    let mut grads = IndexMap::new();
    for (name, v) in acc {
        let shape = params
            .get(&name)
            .expect("gradient of a known param")
            .shape()
            .to_vec();
        grads.insert(
            name,
            Tensor::new(shape, v.into_iter().map(|x| T::lit(x / n)).collect())?,
        );
    }
    Ok(SampleGrad {
        loss: l / n,
        traj_loss: t / n,
        grads,
    })
}

fn global_norm<T: Scalar>(grads: &IndexMap<String, Tensor<T>>) -> f64 {
    grads
        .values()
        .flat_map(|t| t.data().iter())
        .map(|v| v.as_f64() * v.as_f64())
        .sum::<f64>()
        .sqrt()
}

/// Validation metrics of one scene.
#[derive(Clone, Debug)]
pub struct SceneEval {
    pub psnr: f64,
    pub ssim: f64,
    /// PSNR of `x_0 ... x_K`.
    pub stage_psnr: Vec<f64>,
}

pub fn evaluate_scene<T: Scalar>(
    model: &UnfoldModel,
    params: &ParamStore<T>,
    sample: &Sample,
) -> Result<SceneEval> {
    let (out, traj) = model.reconstruct(params, &sample.system, &sample.y)?;
    let stage_psnr = traj
        .aligned()
        .iter()
        .map(|s| psnr(s, &sample.gt, 1.0))
        .collect::<Result<Vec<_>>>()?;
    Ok(SceneEval {
        psnr: psnr(&out, &sample.gt, 1.0)?,
        ssim: ssim(&out, &sample.gt, 1.0)?,
        stage_psnr,
    })
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

#[derive(Clone, Debug)]
pub struct ValSummary {
    pub psnr: f64,
    pub ssim: f64,
    pub stage_psnr_mean: Vec<f64>,
    pub stage_psnr_median: Vec<f64>,
    pub scenes: Vec<SceneEval>,
}

pub fn validate<T: Scalar>(
    model: &UnfoldModel,
    params: &ParamStore<T>,
    samples: &[Sample],
    mode: ExecMode,
) -> Result<ValSummary> {
    let scenes = ordered_map(mode, samples, |_, s| evaluate_scene(model, params, s))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let n = scenes.len() as f64;
    let stages = scenes.first().map(|s| s.stage_psnr.len()).unwrap_or(0);
    let col = |k: usize| scenes.iter().map(|s| s.stage_psnr[k]).collect::<Vec<_>>();
    Ok(ValSummary {
        psnr: scenes.iter().map(|s| s.psnr).sum::<f64>() / n,
        ssim: scenes.iter().map(|s| s.ssim).sum::<f64>() / n,
        stage_psnr_mean: (0..stages)
            .map(|k| col(k).iter().sum::<f64>() / n)
            .collect(),
        stage_psnr_median: (0..stages).map(|k| median(&col(k))).collect(),
        scenes,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub traj_loss: f64,
    pub val_psnr: f64,
    pub val_ssim: f64,
    pub val_stage_psnr: Vec<f64>,
}

/// Shared data of a training run: the mask and validation samples.
pub struct Dataset {
    pub mask: CodedMask,
    pub train: Vec<HsiCube>,
    pub val: Vec<Sample>,
}

impl Dataset {
    pub fn build(config: &TrainConfig) -> Result<Self> {
        let spec = &config.dataset;
        let mask = generate_mask(
            spec.height,
            spec.width,
            config.mask_density,
            config.mask_seed,
        )?;
        let train = (0..config.train_scenes)
            .map(|i| make_scene(spec, i))
            .collect::<Result<Vec<_>>>()?;
        let val = (0..config.val_scenes)
            .map(|i| {
                let gt = make_scene(spec, config.train_scenes + i)?;
                Sample::new(gt, mask.clone(), config, config.noise(i as u64 + 1_000_000))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { mask, train, val })
    }

    /// Random crop (and flips when enabled) of training scene `index`.
    pub fn train_sample(
        &self,
        config: &TrainConfig,
        index: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Sample> {
        let scene = &self.train[index];
        let p = config.patch_size;
        if p > scene.height || p > scene.width {
            return Err(Error::InvalidParameter(format!(
                "patch {p} larger than scene {}x{}",
                scene.height, scene.width
            )));
        }
        let top = rng.random_range(0..=scene.height - p);
        let left = rng.random_range(0..=scene.width - p);
        let mut gt = scene.crop(top, left, p, p)?;
        if config.augment {
            let (h, v) = (rng.random_bool(0.5), rng.random_bool(0.5));
            gt = gt.flipped(h, v);
        }
        let mask = crop_mask(&self.mask, top, left, p, p)?;
        Sample::new(gt, mask, config, config.noise(rng.random()))
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    pub init_val: ValSummary,
    pub final_val: ValSummary,
    pub params: ParamStore<f32>,
    pub checkpoint: Option<PathBuf>,
}

fn metrics_header(stages: usize) -> Vec<String> {
    let mut h: Vec<String> = [
        "epoch",
        "lr",
        "train_loss",
        "traj_loss",
        "val_psnr",
        "val_ssim",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    h.extend((0..=stages).map(|k| format!("val_psnr_{k}")));
    h
}

pub fn metrics_table(stages: usize, logs: &[EpochLog]) -> Result<CsvTable> {
    let header = metrics_header(stages);
    let mut t = CsvTable {
        header,
        rows: Vec::new(),
    };
    for e in logs {
        let mut row = vec![
            e.epoch.to_string(),
            fmt_f64(e.lr),
            fmt_f64(e.train_loss),
            fmt_f64(e.traj_loss),
            fmt_f64(e.val_psnr),
            fmt_f64(e.val_ssim),
        ];
        row.extend(e.val_stage_psnr.iter().map(|&v| fmt_f64(v)));
        t.push(row)?;
    }
    Ok(t)
}

/// Writes a checkpoint (`model.ckpt` + `model.bin`) into `dir`.
pub fn save_checkpoint(
    dir: &Path,
    params: &ParamStore<f32>,
    config: &TrainConfig,
    bands: usize,
) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let manifest = dir.join("model.ckpt");
    let meta = vec![
        ("bands".to_string(), bands.to_string()),
        ("config".to_string(), escape_meta(&config.to_toml()?)),
    ];
    checkpoint::save(params, &manifest, "model.bin", &meta)?;
    Ok(manifest)
}

/// Runs the full training loop. When `out_dir` is given, the metrics log,
/// config snapshot and checkpoint are written there.
pub fn train(config: &TrainConfig, out_dir: Option<&Path>) -> Result<TrainReport> {
    config.validate()?;
    let mode = config.exec_mode();
    let data = Dataset::build(config)?;
    let bands = config.dataset.bands;
    let model = UnfoldModel::new(config.model.clone(), bands, config.seed)?;
    let mut params: ParamStore<f32> = model.params.cast();
    let mut adam = Adam::new(config.beta1, config.beta2, config.adam_eps)?;
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.toml"), config.to_toml()?)?;
    }
    let init_val = validate(&model, &params, &data.val, mode)?;
    log::info!(
        "init: val psnr {:.3} dB, stage psnr {:?}",
        init_val.psnr,
        init_val.stage_psnr_mean
    );
    let mut logs = Vec::with_capacity(config.epochs);
    let mut last_val = init_val.clone();
    let steps_per_epoch = data.train.len().div_ceil(config.batch_size);
    for epoch in 1..=config.epochs {
        let lr = cosine_lr(epoch - 1, config.epochs, config.lr, config.lr_min);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(epoch as u64);
        let mut order: Vec<usize> = (0..data.train.len()).collect();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut traj_sum) = (0.0, 0.0);
        for (step, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch = chunk
                .iter()
                .map(|&i| data.train_sample(config, i, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let mut bg = batch_gradients(&model, &params, &batch, &config.loss, mode)?;
            if !bg.loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            if config.grad_clip > 0.0 {
                let norm = global_norm(&bg.grads);
                if norm > config.grad_clip {
                    let s = config.grad_clip / norm;
                    for t in bg.grads.values_mut() {
                        t.data_mut().iter_mut().for_each(|v| *v = *v * f32::lit(s));
                    }
                }
            }
            adam.step(&mut params, &bg.grads, lr)?;
            loss_sum += bg.loss;
            traj_sum += bg.traj_loss;
        }
        let is_last = epoch == config.epochs;
        if is_last || config.val_every > 0 && epoch % config.val_every == 0 {
            last_val = validate(&model, &params, &data.val, mode)?;
        }
        let e = EpochLog {
            epoch,
            lr,
            train_loss: loss_sum / steps_per_epoch as f64,
            traj_loss: traj_sum / steps_per_epoch as f64,
            val_psnr: last_val.psnr,
            val_ssim: last_val.ssim,
            val_stage_psnr: last_val.stage_psnr_mean.clone(),
        };
        log::info!(
            "epoch {epoch}: lr {lr:.2e} loss {:.5} traj {:.5} val psnr {:.3} ssim {:.4}",
            e.train_loss,
            e.traj_loss,
            e.val_psnr,
            e.val_ssim
        );
        logs.push(e);
        if let Some(dir) = out_dir {
            metrics_table(config.model.stages, &logs)?.save(&dir.join("metrics.csv"))?;
        }
    }
    let checkpoint = match out_dir {
        Some(dir) => Some(save_checkpoint(dir, &params, config, bands)?),
        None => None,
    };
    Ok(TrainReport {
        epochs: logs,
        init_val,
        final_val: last_val,
        params,
        checkpoint,
    })
}

/// Mean PSNR of the classical baseline over the validation samples, for
/// each candidate configuration; returns the best `(config, psnr)`.
pub fn tune_gap_tv(
    samples: &[Sample],
    candidates: &[GapTvConfig],
    mode: ExecMode,
) -> Result<(GapTvConfig, f64)> {
    let mut best: Option<(GapTvConfig, f64)> = None;
    for c in candidates {
        let scores = ordered_map(mode, samples, |_, s| {
            gap_tv_baseline(&s.system, &s.y, c, ExecMode::Sequential)
                .and_then(|x| psnr(&x, &s.gt, 1.0))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let mean = scores.iter().sum::<f64>() / scores.len() as f64;
        log::info!("gap-tv {c:?}: {mean:.3} dB");
        if best.as_ref().is_none_or(|(_, b)| mean > *b) {
            best = Some((*c, mean));
        }
    }
    best.ok_or_else(|| Error::InvalidParameter("no baseline candidates".into()))
}

/// Candidate baseline settings searched on the validation scenes.
pub fn gap_tv_grid() -> Vec<GapTvConfig> {
    let mut v = Vec::new();
    for &accelerate in &[false, true] {
        for &iterations in &[30, 100] {
            for &tv_weight in &[0.01, 0.02, 0.05, 0.1] {
                v.push(GapTvConfig {
                    iterations,
                    tv_weight,
                    accelerate,
                    ..GapTvConfig::default()
                });
            }
        }
    }
    v
}

/// One row of the ablation table.
#[derive(Clone, Debug)]
pub struct AblationVariant {
    pub name: String,
    pub config: TrainConfig,
}

/// Variants mirroring the component ablation: a plain baseline without
/// attention, then adding the hybrid transformer, the fusion module and
/// the trajectory loss, plus the full model without the outer skip and
/// without weight sharing.
pub fn ablation_variants(base: &TrainConfig) -> Vec<AblationVariant> {
    let mut v = Vec::new();
    let mut push = |name: &str, f: &dyn Fn(&mut TrainConfig)| {
        let mut c = base.clone();
        f(&mut c);
        v.push(AblationVariant {
            name: name.to_string(),
            config: c,
        });
    };
    push("baseline", &|c| {
        c.model.prox.use_attention = false;
        c.model.prox.use_freq_fusion = false;
        c.loss.weight = 0.0;
    });
    push("+attention", &|c| {
        c.model.prox.use_freq_fusion = false;
        c.loss.weight = 0.0;
    });
    push("+freq-fusion", &|c| c.loss.weight = 0.0);
    push("+trajectory", &|_| {});
    push("full-no-skip", &|c| c.model.prox.use_outer_skip = false);
    push("full-no-sharing", &|c| c.model.weight_sharing = false);
    v
}

/// Trains every variant and returns the ablation table.
pub fn run_ablation(variants: &[AblationVariant], out_dir: Option<&Path>) -> Result<CsvTable> {
    let mut t = CsvTable::new(&[
        "variant",
        "attention",
        "freq_fusion",
        "trajectory_loss",
        "outer_skip",
        "weight_sharing",
        "params",
        "val_psnr",
        "val_ssim",
    ]);
    for v in variants {
        let dir = out_dir.map(|d| d.join(&v.name));
        let report = train(&v.config, dir.as_deref())?;
        let m = &v.config.model;
        t.push(vec![
            v.name.clone(),
            m.prox.use_attention.to_string(),
            m.prox.use_freq_fusion.to_string(),
            (v.config.loss.weight > 0.0).to_string(),
            m.prox.use_outer_skip.to_string(),
            m.weight_sharing.to_string(),
            report.params.num_scalars().to_string(),
            fmt_f64(report.final_val.psnr),
            fmt_f64(report.final_val.ssim),
        ])?;
        if let Some(d) = out_dir {
            t.save(&d.join("ablation.csv"))?;
        }
    }
    Ok(t)
}
