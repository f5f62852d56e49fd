use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensorgrad::gradcheck::{check_op, grad_check, op_suite, GradCheckConfig};
use tensorgrad::{Graph, ParamStore, Result, Tensor, Var, Vars};

fn random(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

fn check(
    inputs: &[(&str, &[usize])],
    seed: u64,
    build: impl Fn(&mut Graph<f64>, &Vars) -> Result<Var>,
) -> f64 {
    check_op(inputs, seed, build).unwrap()
}

const OP_TOL: f64 = 1e-5;

#[test]
fn add_forward() {
    let mut g = Graph::<f64>::new();
    let a = g.input(Tensor::from_f64([2], &[1.0, 2.0]).unwrap());
    let b = g.input(Tensor::from_f64([2], &[3.0, 4.0]).unwrap());
    let c = g.add(a, b).unwrap();
    assert_eq!(g.value(c).data(), &[4.0, 6.0]);
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let mut g = Graph::<f64>::new();
    let a = g.input(Tensor::zeros([3]));
    let s = g.softmax(a).unwrap();
    for &v in g.value(s).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn layernorm_normalizes_without_epsilon() {
    let mut g = Graph::<f64>::new();
    let a = g.input(Tensor::from_f64([3], &[2.0, 4.0, 6.0]).unwrap());
    let y = g.layernorm(a, None, None, 0.0).unwrap();
    let d = g.value(y).data();
    let mean = d.iter().sum::<f64>() / 3.0;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 3.0;
    assert!(mean.abs() < 1e-12);
    assert!((var - 1.0).abs() < 1e-12);
}

#[test]
fn layernorm_epsilon_shrinks_variance_exactly() {
    let mut g = Graph::<f64>::new();
    let a = g.input(Tensor::from_f64([3], &[2.0, 4.0, 6.0]).unwrap());
    let y = g.layernorm(a, None, None, 1e-6).unwrap();
    let d = g.value(y).data();
    let var = d.iter().map(|v| v * v).sum::<f64>() / 3.0;
    let raw_var = 8.0 / 3.0;
    assert!((var - raw_var / (raw_var + 1e-6)).abs() < 1e-12);
}

#[test]
fn square_sum_gradient() {
    let mut store = ParamStore::<f64>::new();
    store
        .insert("a", Tensor::from_f64([3], &[1.0, 2.0, 3.0]).unwrap())
        .unwrap();
    let mut g = Graph::new();
    let v = store.bind(&mut g).unwrap();
    let a = v.get("a").unwrap();
    let sq = g.mul(a, a).unwrap();
    let loss = g.sum(sq).unwrap();
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.param("a").unwrap().data(), &[2.0, 4.0, 6.0]);
}

#[test]
fn matmul_sum_matches_finite_differences() {
    let err = check(&[("a", &[3, 3]), ("b", &[3, 3])], 1, |g, v| {
        let m = g.matmul(v.get("a")?, v.get("b")?)?;
        g.sum(m)
    });
    assert!(err <= 1e-6, "{err}");
}

#[test]
fn unused_parameter_gets_zero_gradient() {
    let mut store = ParamStore::new();
    store.insert("used", Tensor::<f64>::full([2], 1.5)).unwrap();
    store
        .insert("unused", Tensor::<f64>::full([4], 2.0))
        .unwrap();
    let mut g = Graph::new();
    let v = store.bind(&mut g).unwrap();
    let loss = g.sum(v.get("used").unwrap()).unwrap();
    let grads = g.backward(loss).unwrap();
    assert_eq!(grads.param("unused").unwrap().data(), &[0.0; 4]);
    assert_eq!(grads.param("used").unwrap().data(), &[1.0; 2]);
}

#[test]
fn identity_graph_has_exact_gradient() {
    let mut store = ParamStore::new();
    store
        .insert("x", Tensor::from_f64([4], &[0.5, 1.0, -2.0, 0.25]).unwrap())
        .unwrap();
    let config = GradCheckConfig {
        step: 2f64.powi(-16),
        ..GradCheckConfig::default()
    };
    let report = grad_check(&store, config, |g, v| g.sum(v.get("x")?)).unwrap();
    assert_eq!(report.max_rel_err(), 0.0);
}

#[test]
fn conv1x1_gradcheck() {
    let err = check(
        &[("x", &[2, 2, 3]), ("w", &[3, 3]), ("b", &[3])],
        2,
        |g, v| g.conv1x1(v.get("x")?, v.get("w")?, Some(v.get("b")?)),
    );
    assert!(err <= 1e-6, "{err}");
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut g = Graph::<f64>::new();
    let a = g.input(Tensor::zeros([2]));
    assert!(g.backward(a).is_err());
}

#[test]
fn non_finite_output_is_reported_with_node() {
    let mut g = Graph::<f64>::new();
    let a = g.input(Tensor::from_f64([1], &[1e308]).unwrap());
    let err = g.scale(a, 10.0).unwrap_err();
    assert!(err.to_string().contains("node 1"), "{err}");
}

#[test]
fn shape_mismatch_is_an_error() {
    let mut g = Graph::<f64>::new();
    let a = g.input(Tensor::zeros([2]));
    let b = g.input(Tensor::zeros([3]));
    assert!(g.add(a, b).is_err());
}

#[test]
fn forward_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut g = Graph::<f64>::new();
        let x = g.input(random(&[4, 4, 6], &mut rng, -1.0, 1.0));
        let w = g.input(random(&[6, 6], &mut rng, -1.0, 1.0));
        let y = g.conv1x1(x, w, None).unwrap();
        let y = g.layernorm(y, None, None, 1e-6).unwrap();
        let y = g.softmax(y).unwrap();
        g.value(y).clone()
    };
    assert_eq!(run(), run());
}

#[test]
fn every_op_matches_central_differences() {
    let suite = op_suite().unwrap();
    assert!(suite.len() >= 36);
    for c in suite {
        assert!(c.max_rel_err <= OP_TOL, "{}: {}", c.op, c.max_rel_err);
    }
}

#[test]
fn bilinear_upsample_preserves_constants() {
    let mut g = Graph::<f64>::new();
    let x = g.input(Tensor::full([3, 5, 2], 0.37));
    let y = g.bilinear_upsample2d(x, 2).unwrap();
    for &v in g.value(y).data() {
        assert!((v - 0.37).abs() < 1e-15);
    }
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn softmax_rows_are_positive_and_sum_to_one(
            rows in 1usize..6, cols in 1usize..9, seed in any::<u64>()
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut g = Graph::<f64>::new();
            let x = g.input(random(&[rows, cols], &mut rng, -30.0, 30.0));
            let y = g.softmax(x).unwrap();
            for row in g.value(y).data().chunks(cols) {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                prop_assert!(row.iter().all(|&v| v > 0.0));
            }
        }

        #[test]
        fn layernorm_rows_are_standardized(
            rows in 1usize..5, cols in 2usize..12, seed in any::<u64>()
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut g = Graph::<f64>::new();
            let x = g.input(random(&[rows, cols], &mut rng, -5.0, 5.0));
            let y = g.layernorm(x, None, None, 0.0).unwrap();
            for row in g.value(y).data().chunks(cols) {
                let m = row.iter().sum::<f64>() / cols as f64;
                let var = row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / cols as f64;
                prop_assert!(m.abs() <= 1e-10);
                prop_assert!((var - 1.0).abs() <= 1e-8);
            }
        }
    }
}
