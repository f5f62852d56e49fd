//! K-stage unfolding: back-projection, learned proximal denoising and a
//! learnable convex interpolation between the two per stage.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tensorgrad::{Graph, ParamStore, Scalar, Tensor, Var, Vars};

use crate::bp::{CassiSystem, DEFAULT_ETA};
use crate::cassi::unshift_cube;
use crate::cube::{HsiCube, Measurement, ShiftedCube};
use crate::error::{Error, Result};
use crate::layout::unshift_index;
use crate::nn::Scope;
use crate::prox::{prox_forward, register_prox, ProxConfig, ProxProbes};

pub const LAMBDA_RAW: &str = "unfold.lambda_raw";
pub const ETA_RAW: &str = "unfold.eta_raw";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UnfoldConfig {
    pub stages: usize,
    pub weight_sharing: bool,
    /// Initial interpolation coefficients; empty means the default
    /// decreasing schedule.
    pub lambda_init: Vec<f64>,
    pub eta_init: f64,
    pub learn_eta: bool,
    pub prox: ProxConfig,
    pub capture_intermediates: bool,
}

impl Default for UnfoldConfig {
    fn default() -> Self {
        UnfoldConfig {
            stages: 3,
            weight_sharing: true,
            lambda_init: Vec::new(),
            eta_init: DEFAULT_ETA,
            learn_eta: true,
            prox: ProxConfig::default(),
            capture_intermediates: true,
        }
    }
}

impl UnfoldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stages == 0 {
            return Err(Error::InvalidParameter(
                "at least one stage required".into(),
            ));
        }
        if !self.lambda_init.is_empty() {
            if self.lambda_init.len() != self.stages {
                return Err(Error::InvalidParameter(
                    "lambda_init needs one value per stage".into(),
                ));
            }
            if self.lambda_init.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
                return Err(Error::InvalidParameter(
                    "lambda_init values must lie in (0, 1)".into(),
                ));
            }
        }
        if !(self.eta_init >= 0.0) || (self.learn_eta && self.eta_init == 0.0) {
            return Err(Error::InvalidParameter(
                "eta must be >= 0, and > 0 when learned (softplus parameterization)".into(),
            ));
        }
        self.prox.validate()
    }

    pub fn prox_prefix(&self, stage: usize) -> String {
        if self.weight_sharing {
            "prox.".to_string()
        } else {
            format!("prox{stage}.")
        }
    }

    fn conditioned(&self) -> ProxConfig {
        let mut p = self.prox.clone();
        p.stage_conditioning &= self.weight_sharing;
        p
    }
}

/// Default `lambda_k = clamp(1 - (k + 1) / K, 0.05, 0.95)`.
pub fn default_lambda(k: usize, stages: usize) -> f64 {
    (1.0 - (k + 1) as f64 / stages as f64).clamp(0.05, 0.95)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn softplus_inv(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

/// `lambda_k = sigmoid(raw[k])`.
pub fn interpolation_coefficient(k: usize, stages: usize, raw: &[f64]) -> Result<f64> {
    if k >= stages || raw.len() != stages {
        return Err(Error::InvalidParameter(format!(
            "stage {k} of {stages} with {} raw coefficients",
            raw.len()
        )));
    }
    Ok(sigmoid(raw[k]))
}

/// `x0 = Mshift_b * (y / diag)` per band, zero where the diagonal is zero.
pub fn init_estimate(sys: &CassiSystem, y: &Measurement) -> Result<ShiftedCube> {
    let mut q = y.plane.clone();
    if q.height != sys.height() || q.width != sys.frame_width() {
        return Err(Error::Dimension(
            "measurement does not match the system".into(),
        ));
    }
    for (v, &d) in q.data.iter_mut().zip(&sys.diag.values.data) {
        *v = if d > 0.0 { *v / d } else { 0.0 };
    }
    sys.adjoint(&q)
}

/// Parameters and configuration of a full unfolding network.
#[derive(Clone, Debug)]
pub struct UnfoldModel {
    pub config: UnfoldConfig,
    pub bands: usize,
    pub params: ParamStore<f64>,
}

impl UnfoldModel {
    pub fn new(config: UnfoldConfig, bands: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = config.stages;
        let lambdas: Vec<f64> = (0..k)
            .map(|i| {
                config
                    .lambda_init
                    .get(i)
                    .copied()
                    .unwrap_or_else(|| default_lambda(i, k))
            })
            .collect();
        params.insert(
            LAMBDA_RAW,
            Tensor::new(vec![k], lambdas.iter().map(|&l| logit(l)).collect())?,
        )?;
        if config.learn_eta {
            params.insert(
                ETA_RAW,
                Tensor::full(vec![k], softplus_inv(config.eta_init)),
            )?;
        }
        let prox = config.conditioned();
        let nets = if config.weight_sharing { 1 } else { k };
        for s in 0..nets {
            register_prox(
                &mut params,
                &mut rng,
                &config.prox_prefix(s),
                &prox,
                bands,
                k,
            )?;
        }
        Ok(UnfoldModel {
            config,
            bands,
            params,
        })
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.params
            .get(LAMBDA_RAW)
            .map(|t| t.data().iter().map(|&r| sigmoid(r)).collect())
            .unwrap_or_default()
    }

    pub fn etas(&self) -> Vec<f64> {
        match self.params.get(ETA_RAW) {
            Some(t) => t.data().iter().map(|&r| softplus(r)).collect(),
            None => vec![self.config.eta_init; self.config.stages],
        }
    }

    /// Number of scalars in the proximal network registry.
    pub fn prox_param_count(&self) -> usize {
        self.params
            .iter()
            .filter(|(n, _)| n.starts_with("prox"))
            .map(|(_, t)| t.numel())
            .sum()
    }

    /// Reconstructs in precision `T`; returns the aligned output and the
    /// trajectory of all stages.
    pub fn reconstruct<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        sys: &CassiSystem,
        y: &Measurement,
    ) -> Result<(HsiCube, Trajectory)> {
        let mut g = Graph::<T>::new();
        let vars = params.bind(&mut g)?;
        let inputs = StageInputs::new(&mut g, sys, y)?;
        let x0 = init_estimate(sys, y)?;
        let x0v = g.input(x0.to_hwc::<T>());
        let run = unfold_graph(&mut g, &vars, &self.config, &inputs, x0v)?;
        let mut states = Vec::with_capacity(run.states.len());
        let mut residuals = Vec::with_capacity(run.states.len());
        for &v in &run.states {
            let s = ShiftedCube::from_hwc(g.value(v), sys.scene_width(), sys.spec)?;
            residuals.push(sys.residual_norm(&s, y)?);
            states.push(s);
        }
        let lambdas = run
            .lambdas
            .iter()
            .map(|&v| g.value(v).data()[0].as_f64())
            .collect();
        let out = unshift_cube(states.last().expect("at least x0"));
        let frac = out.out_of_range_fraction();
        if frac > 0.0 {
            log::info!(
                "{:.4}% of output values outside [0, 1] (not clipped)",
                100.0 * frac
            );
        }
        if !self.config.capture_intermediates {
            let last = states.pop().expect("at least x0");
            states = vec![last];
        }
        Ok((
            out,
            Trajectory {
                states,
                residuals,
                lambdas,
            },
        ))
    }
}

/// States `x_0 ... x_K` of one reconstruction in shifted coordinates.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub states: Vec<ShiftedCube>,
    /// `|A x_k - y| / |y|` for `k = 0..=K`.
    pub residuals: Vec<f64>,
    pub lambdas: Vec<f64>,
}

impl Trajectory {
    pub fn aligned(&self) -> Vec<HsiCube> {
        self.states.iter().map(unshift_cube).collect()
    }
}

/// Constant graph inputs describing one measurement.
#[derive(Clone, Copy, Debug)]
pub struct StageInputs {
    pub masks: Var,
    pub diag: Var,
    pub y: Var,
    pub bands: usize,
}

impl StageInputs {
    pub fn new<T: Scalar>(g: &mut Graph<T>, sys: &CassiSystem, y: &Measurement) -> Result<Self> {
        if y.height() != sys.height() || y.width() != sys.frame_width() || y.bands != sys.bands {
            return Err(Error::Dimension(
                "measurement does not match the system".into(),
            ));
        }
        let (h, fw) = (sys.height(), sys.frame_width());
        let masks = g.input(sys.masks.to_hwc::<T>());
        let diag = g.input(Tensor::from_fn(vec![h, fw, 1], |i| {
            T::lit(sys.diag.values.data[i])
        }));
        let yv = g.input(Tensor::from_fn(vec![h, fw, 1], |i| T::lit(y.plane.data[i])));
        Ok(StageInputs {
            masks,
            diag,
            y: yv,
            bands: sys.bands,
        })
    }
}

/// `x - A^T ((A x - y) / (diag + eta))` on `[H, W+, L]` tensors; `eta` is a
/// `[1]` tensor. Entries with `diag + eta == 0` contribute nothing.
pub fn bp_graph<T: Scalar>(
    g: &mut Graph<T>,
    inputs: &StageInputs,
    x: Var,
    eta: Var,
) -> Result<Var> {
    let mx = g.mul(inputs.masks, x)?;
    let ax = g.sum_last(mx)?;
    let r = g.sub(ax, inputs.y)?;
    let denom = g.shift_by(inputs.diag, eta)?;
    let inv = g.recip_safe(denom)?;
    let q = g.mul(r, inv)?;
    let qe = g.expand_last(q, inputs.bands)?;
    let corr = g.mul(inputs.masks, qe)?;
    Ok(g.sub(x, corr)?)
}

/// `(1 - lambda) d + lambda z` written as `z + (1 - lambda)(d - z)`.
pub fn interpolate<T: Scalar>(g: &mut Graph<T>, z: Var, d: Var, lambda: Var) -> Result<Var> {
    let diff = g.sub(d, z)?;
    let neg = g.scale(lambda, -1.0)?;
    let w = g.add_const(neg, 1.0)?;
    let step = g.scale_by(diff, w)?;
    Ok(g.add(z, step)?)
}

/// Graph handles of one unfolding run.
#[derive(Clone, Debug)]
pub struct GraphRun {
    /// `x_0 ... x_K`, shifted `[H, W+, L]`.
    pub states: Vec<Var>,
    /// Back-projected `z_k` and denoised `D(z_k)` per stage.
    pub projected: Vec<Var>,
    pub denoised: Vec<Var>,
    pub lambdas: Vec<Var>,
    pub probes: Vec<ProxProbes>,
}

fn stage_eta<T: Scalar>(
    g: &mut Graph<T>,
    vars: &Vars,
    cfg: &UnfoldConfig,
    k: usize,
) -> Result<Var> {
    if cfg.learn_eta {
        let raw = vars.get(ETA_RAW)?;
        let r = g.slice(raw, 0, k, k + 1)?;
        Ok(g.softplus(r)?)
    } else {
        Ok(g.input(Tensor::scalar(T::lit(cfg.eta_init)).reshaped(vec![1])?))
    }
}

/// One stage: `z = BP(x_k)`, `x_{k+1} = (1 - lambda_k) D(z) + lambda_k z`.
pub fn run_stage<T: Scalar>(
    g: &mut Graph<T>,
    vars: &Vars,
    cfg: &UnfoldConfig,
    inputs: &StageInputs,
    x: Var,
    k: usize,
) -> Result<(Var, Var, Var, Var, ProxProbes)> {
    if k >= cfg.stages {
        return Err(Error::InvalidParameter(format!(
            "stage {k} of {}",
            cfg.stages
        )));
    }
    let eta = stage_eta(g, vars, cfg, k)?;
    let z = bp_graph(g, inputs, x, eta)?;
    let prefix = cfg.prox_prefix(k);
    let prox = cfg.conditioned();
    let d = prox_forward(g, Scope::new(vars, &prefix), &prox, z, k)?;
    let raw = vars.get(LAMBDA_RAW)?;
    let r = g.slice(raw, 0, k, k + 1)?;
    let lambda = g.sigmoid(r)?;
    let next = interpolate(g, z, d.out, lambda)?;
    Ok((next, z, d.out, lambda, d.probes))
}

/// All `K` stages starting from `x0`.
pub fn unfold_graph<T: Scalar>(
    g: &mut Graph<T>,
    vars: &Vars,
    cfg: &UnfoldConfig,
    inputs: &StageInputs,
    x0: Var,
) -> Result<GraphRun> {
    let mut run = GraphRun {
        states: vec![x0],
        projected: Vec::new(),
        denoised: Vec::new(),
        lambdas: Vec::new(),
        probes: Vec::new(),
    };
    let mut x = x0;
    for k in 0..cfg.stages {
        let (next, z, d, lambda, probes) = run_stage(g, vars, cfg, inputs, x, k)?;
        run.states.push(next);
        run.projected.push(z);
        run.denoised.push(d);
        run.lambdas.push(lambda);
        run.probes.push(probes);
        x = next;
    }
    Ok(run)
}

/// Shifted `[H, W+, L]` state to aligned `[H, W, L]` inside the graph.
pub fn unshift_graph<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    scene_width: usize,
    step: usize,
) -> Result<Var> {
    let &[h, _, l] = g.shape(x) else {
        return Err(Error::Dimension(format!(
            "expected [H, W+, L], got {:?}",
            g.shape(x)
        )));
    };
    Ok(g.gather(
        x,
        unshift_index(h, scene_width, l, step),
        &[h, scene_width, l],
    )?)
}

/// Aligned band-major cube to a channel-last tensor.
pub fn cube_to_hwc<T: Scalar>(cube: &HsiCube) -> Tensor<T> {
    let (n, l) = (cube.plane_len(), cube.bands);
    Tensor::from_fn(vec![cube.height, cube.width, l], |i| {
        T::lit(cube.data[(i % l) * n + i / l])
    })
}

pub fn hwc_to_cube<T: Scalar>(t: &Tensor<T>) -> Result<HsiCube> {
    let &[h, w, l] = t.shape() else {
        return Err(Error::Dimension(format!(
            "expected [H, W, L], got {:?}",
            t.shape()
        )));
    };
    let n = h * w;
    let mut data = vec![0.0; n * l];
    for (i, v) in t.data().iter().enumerate() {
        data[(i % l) * n + i / l] = v.as_f64();
    }
    HsiCube::new(h, w, l, data)
}
