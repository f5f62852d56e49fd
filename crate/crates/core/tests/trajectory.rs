use cassi_unfold::cassi::{forward_measure, generate_mask, shift_cube, unshift_cube};
use cassi_unfold::prox::prox_forward;
use cassi_unfold::synth::{make_scene, max_second_difference, SyntheticSceneSpec};
use cassi_unfold::train::{
    cosine_lr, stage_weight, total_loss, total_loss_graph, trajectory_loss, trajectory_targets,
    Adam, FinalLoss, TrajectoryLossConfig,
};
use cassi_unfold::unfold::{
    cube_to_hwc, default_lambda, init_estimate, interpolate, run_stage, StageInputs, UnfoldConfig,
    UnfoldModel, LAMBDA_RAW,
};
use cassi_unfold::{CassiSystem, DispersionSpec, HsiCube, NoiseSpec, Scope, ShiftedCube};
use indexmap::IndexMap;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensorgrad::{Graph, ParamStore, Tensor};

fn random_cube(seed: u64, h: usize, w: usize, l: usize) -> HsiCube {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    HsiCube::new(
        h,
        w,
        l,
        (0..h * w * l).map(|_| rng.random::<f64>()).collect(),
    )
    .unwrap()
}

struct Setup {
    model: UnfoldModel,
    sys: CassiSystem,
    y: cassi_unfold::Measurement,
    x: ShiftedCube,
}

/// Small model with a perturbed (non-identity) proximal network.
fn setup(lambda_raw: f64) -> Setup {
    let cfg = UnfoldConfig {
        stages: 2,
        learn_eta: false,
        prox: cassi_unfold::prox::ProxConfig {
            levels: 2,
            base_channels: 8,
            window: 2,
            ..Default::default()
        },
        ..UnfoldConfig::default()
    };
    let mut model = UnfoldModel::new(cfg, 3, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (name, t) in model.params.iter_mut() {
        if name == LAMBDA_RAW {
            t.data_mut().fill(lambda_raw);
        } else {
            t.data_mut()
                .iter_mut()
                .for_each(|v| *v += rng.random_range(-0.2..0.2));
        }
    }
    let gt = random_cube(3, 8, 8, 3);
    let mask = generate_mask(8, 8, 0.5, 4).unwrap();
    let spec = DispersionSpec::default();
    let y = forward_measure(&gt, &mask, spec, NoiseSpec::None).unwrap();
    let sys = CassiSystem::new(mask, 3, spec);
    let x = shift_cube(&random_cube(5, 8, 8, 3), spec);
    Setup { model, sys, y, x }
}

/// `(x_{k+1}, z, D(z))` of stage 0 from the graph.
fn stage0(s: &Setup) -> (Tensor<f64>, Tensor<f64>, Tensor<f64>) {
    let mut g = Graph::<f64>::new();
    let vars = s.model.params.bind(&mut g).unwrap();
    let inputs = StageInputs::new(&mut g, &s.sys, &s.y).unwrap();
    let xv = g.input(s.x.to_hwc::<f64>());
    let (next, z, d, _, _) = run_stage(&mut g, &vars, &s.model.config, &inputs, xv, 0).unwrap();
    (
        g.value(next).clone(),
        g.value(z).clone(),
        g.value(d).clone(),
    )
}

#[test]
fn lambda_one_bypasses_the_denoiser() {
    let s = setup(60.0);
    let (next, z, d) = stage0(&s);
    let bp = s
        .sys
        .bp_update(&s.x, &s.y, s.model.config.eta_init)
        .unwrap()
        .x;
    assert!(next.max_abs_diff(&bp.to_hwc::<f64>()) <= 1e-12);
    assert!(next.max_abs_diff(&z) <= 1e-12);
    assert!(d.max_abs_diff(&z) > 1e-3);
}

#[test]
fn lambda_zero_returns_denoised_projection() {
    let s = setup(-60.0);
    let (next, _, _) = stage0(&s);
    // independent composition: structured projection, then the network alone
    let bp = s
        .sys
        .bp_update(&s.x, &s.y, s.model.config.eta_init)
        .unwrap()
        .x;
    let mut g = Graph::<f64>::new();
    let vars = s.model.params.bind(&mut g).unwrap();
    let zv = g.input(bp.to_hwc::<f64>());
    let d = prox_forward(
        &mut g,
        Scope::new(&vars, "prox."),
        &s.model.config.prox,
        zv,
        0,
    )
    .unwrap();
    assert!(next.max_abs_diff(g.value(d.out)) <= 1e-12);
}

#[test]
fn stage_output_lies_between_projection_and_denoised() {
    let s = setup(0.3);
    let (next, z, d) = stage0(&s);
    for ((n, a), b) in next.data().iter().zip(z.data()).zip(d.data()) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        assert!(*n >= lo - 1e-12 && *n <= hi + 1e-12);
    }
}

#[test]
fn interpolation_endpoints_in_graph() {
    let mut g = Graph::<f64>::new();
    let z = g.input(Tensor::from_f64([3], &[1.0, -2.0, 0.5]).unwrap());
    let d = g.input(Tensor::from_f64([3], &[0.0, 4.0, 0.5]).unwrap());
    for (l, expect) in [
        (1.0, [1.0, -2.0, 0.5]),
        (0.0, [0.0, 4.0, 0.5]),
        (0.25, [0.25, 2.5, 0.5]),
    ] {
        let lv = g.input(Tensor::from_f64([1], &[l]).unwrap());
        let x = interpolate(&mut g, z, d, lv).unwrap();
        assert_eq!(g.value(x).data(), &expect);
    }
}

#[test]
fn default_schedule_decreases() {
    let l: Vec<f64> = (0..5).map(|k| default_lambda(k, 5)).collect();
    assert!(l.windows(2).all(|w| w[1] < w[0]));
    assert!(l.iter().all(|v| (0.05..=0.95).contains(v)));
}

#[test]
fn init_estimate_is_consistent_on_covered_pixels() {
    let s = setup(0.0);
    let x0 = init_estimate(&s.sys, &s.y).unwrap();
    let ax = s.sys.forward(&x0).unwrap();
    for ((a, b), d) in ax
        .data
        .iter()
        .zip(&s.y.plane.data)
        .zip(&s.sys.diag.values.data)
    {
        if *d > 0.0 {
            assert!((a - b).abs() <= 1e-12);
        } else {
            assert_eq!(*a, 0.0);
        }
    }
}

#[test]
fn targets_end_at_ground_truth_and_are_affine() {
    let gt = random_cube(10, 4, 5, 3);
    let x0 = random_cube(11, 4, 5, 3);
    let k = 4;
    let t = trajectory_targets(&gt, &x0, k).unwrap();
    assert_eq!(t.len(), k);
    assert_eq!(t[k - 1], gt);
    // consecutive differences equal (gt - x0) / K, including from x0 to T_1
    let mut prev = x0.clone();
    for tk in &t {
        for i in 0..gt.data.len() {
            let step = tk.data[i] - prev.data[i];
            assert!((step - (gt.data[i] - x0.data[i]) / k as f64).abs() <= 1e-12);
        }
        prev = tk.clone();
    }
}

#[test]
fn stage_weights_strictly_increase() {
    for &(k, c) in &[(3, 3.0), (9, 1.0), (5, 0.5)] {
        let w: Vec<f64> = (1..=k).map(|i| stage_weight(i, k, c)).collect();
        assert!(w.windows(2).all(|p| p[1] > p[0]));
        assert!(w.iter().all(|&v| v > 0.0 && v < 1.0));
    }
}

#[test]
fn trajectory_loss_vanishes_only_on_targets() {
    let gt = random_cube(12, 4, 4, 2);
    let x0 = random_cube(13, 4, 4, 2);
    let cfg = TrajectoryLossConfig::default();
    let t = trajectory_targets(&gt, &x0, 3).unwrap();
    assert_eq!(trajectory_loss(&t, &t, &cfg).unwrap(), 0.0);
    for k in 0..3 {
        let mut states = t.clone();
        states[k].data[5] += 1e-3;
        assert!(trajectory_loss(&states, &t, &cfg).unwrap() > 0.0);
    }
}

#[test]
fn graph_loss_matches_scalar_loss() {
    let gt = random_cube(14, 5, 4, 3);
    let x0 = random_cube(15, 5, 4, 3);
    let states: Vec<HsiCube> = (0..3).map(|i| random_cube(16 + i, 5, 4, 3)).collect();
    for final_loss in [FinalLoss::Mse, FinalLoss::Charbonnier] {
        for weight in [0.0, 0.5] {
            let cfg = TrajectoryLossConfig {
                weight,
                final_loss,
                ..TrajectoryLossConfig::default()
            };
            let scalar = total_loss(&states, &gt, &x0, &cfg).unwrap();
            let mut g = Graph::<f64>::new();
            let sv: Vec<_> = states
                .iter()
                .map(|s| g.input(cube_to_hwc::<f64>(s)))
                .collect();
            let gv = g.input(cube_to_hwc::<f64>(&gt));
            let tv: Vec<_> = trajectory_targets(&gt, &x0, 3)
                .unwrap()
                .iter()
                .map(|t| g.input(cube_to_hwc::<f64>(t)))
                .collect();
            let (total, _) = total_loss_graph(&mut g, &sv, gv, &tv, &cfg).unwrap();
            assert!((g.value(total).data()[0] - scalar).abs() <= 1e-12 * scalar.max(1.0));
        }
    }
}

#[test]
fn adam_matches_hand_computed_steps() {
    let mut params = ParamStore::<f64>::new();
    params
        .insert("w", Tensor::from_f64([2], &[1.0, -1.0]).unwrap())
        .unwrap();
    let mut adam = Adam::new(0.9, 0.999, 1e-8).unwrap();
    let grads_seq = [[0.5, -2.0], [1.0, 0.0]];
    let (mut m, mut v, mut w) = ([0.0f64; 2], [0.0f64; 2], [1.0f64, -1.0]);
    for (t, gs) in grads_seq.iter().enumerate() {
        let mut grads = IndexMap::new();
        grads.insert("w".to_string(), Tensor::from_f64([2], gs).unwrap());
        adam.step(&mut params, &grads, 0.1).unwrap();
        let t = (t + 1) as i32;
        for i in 0..2 {
            m[i] = 0.9 * m[i] + 0.1 * gs[i];
            v[i] = 0.999 * v[i] + 0.001 * gs[i] * gs[i];
            let mh = m[i] / (1.0 - 0.9f64.powi(t));
            let vh = v[i] / (1.0 - 0.999f64.powi(t));
            w[i] -= 0.1 * mh / (vh.sqrt() + 1e-8);
        }
        for i in 0..2 {
            assert!((params.get("w").unwrap().data()[i] - w[i]).abs() <= 1e-15);
        }
    }
    // the first step moves each coordinate by lr against the gradient sign
    assert!(Adam::new(1.0, 0.5, 1e-8).is_err());
}

#[test]
fn cosine_schedule_endpoints() {
    assert_eq!(cosine_lr(0, 10, 1e-3, 1e-5), 1e-3);
    assert!((cosine_lr(10, 10, 1e-3, 1e-5) - 1e-5).abs() <= 1e-18);
    assert!((cosine_lr(5, 10, 1e-3, 1e-5) - 0.5 * (1e-3 + 1e-5)).abs() <= 1e-15);
    let s: Vec<f64> = (0..=10).map(|e| cosine_lr(e, 10, 1e-3, 1e-5)).collect();
    assert!(s.windows(2).all(|p| p[1] <= p[0]));
}

#[test]
fn synthetic_scenes_are_seeded_bounded_and_smooth() {
    let spec = SyntheticSceneSpec {
        height: 24,
        width: 20,
        ..SyntheticSceneSpec::default()
    };
    let a = make_scene(&spec, 3).unwrap();
    assert_eq!(a, make_scene(&spec, 3).unwrap());
    assert_ne!(a, make_scene(&spec, 4).unwrap());
    assert!(a.data.iter().all(|v| (0.0..=1.0).contains(v)));
    for r in 0..a.height {
        for c in 0..a.width {
            let px: Vec<f64> = (0..a.bands).map(|b| a.at(r, c, b)).collect();
            // convex mixtures keep the endmembers' curvature bound
            assert!(max_second_difference(&px) <= spec.max_second_diff + 1e-12);
        }
    }
}

#[test]
fn unshift_of_init_is_zero_off_the_mask() {
    let s = setup(0.0);
    let x0 = unshift_cube(&init_estimate(&s.sys, &s.y).unwrap());
    for b in 0..x0.bands {
        for (v, m) in x0.band(b).iter().zip(&s.sys.mask.pattern) {
            if *m == 0.0 {
                assert_eq!(*v, 0.0);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn targets_are_convex_combinations(seed in 0u64..10_000, k in 1usize..8) {
        let gt = random_cube(seed, 3, 3, 2);
        let x0 = random_cube(seed + 1, 3, 3, 2);
        let t = trajectory_targets(&gt, &x0, k).unwrap();
        for (i, tk) in t.iter().enumerate() {
            let a = (i + 1) as f64 / k as f64;
            for j in 0..gt.data.len() {
                prop_assert!((tk.data[j] - (a * gt.data[j] + (1.0 - a) * x0.data[j])).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn weights_increase_for_any_rate(k in 2usize..12, c in 0.01f64..10.0) {
        for i in 1..k {
            prop_assert!(stage_weight(i + 1, k, c) > stage_weight(i, k, c));
        }
    }
}

#[test]
fn parallel_and_sequential_batches_reduce_identically() {
    use cassi_unfold::config::TrainConfig;
    use cassi_unfold::exec::ExecMode;
    use cassi_unfold::train::{batch_gradients, Dataset};
    let mut cfg = TrainConfig::default();
    cfg.model.prox.levels = 2;
    cfg.train_scenes = 3;
    cfg.val_scenes = 1;
    cfg.patch_size = 16;
    let data = Dataset::build(&cfg).unwrap();
    let model = UnfoldModel::new(cfg.model.clone(), cfg.dataset.bands, 1).unwrap();
    let params: ParamStore<f32> = model.params.cast();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let batch: Vec<_> = (0..3)
        .map(|i| data.train_sample(&cfg, i, &mut rng).unwrap())
        .collect();
    let a = batch_gradients(&model, &params, &batch, &cfg.loss, ExecMode::Auto).unwrap();
    let b = batch_gradients(&model, &params, &batch, &cfg.loss, ExecMode::Sequential).unwrap();
    assert_eq!(a.loss.to_bits(), b.loss.to_bits());
    assert_eq!(a.grads, b.grads);
}
