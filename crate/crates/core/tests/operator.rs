use cassi_unfold::cassi::{
    adjoint, apply_adjoint, apply_forward, forward_measure, generate_mask, shift_cube,
    shifted_masks,
};
use cassi_unfold::dense::{
    build_dense_operator, build_physical_operator, verify_perm_identity, DenseMatrix,
};
use cassi_unfold::{
    compute_aat_diag, CassiSystem, DispersionSpec, FidelityParams, HsiCube, NoiseSpec, Plane,
    ShiftedCube,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_cube(rng: &mut ChaCha8Rng, h: usize, w: usize, l: usize) -> HsiCube {
    HsiCube::new(
        h,
        w,
        l,
        (0..h * w * l).map(|_| rng.random::<f64>()).collect(),
    )
    .unwrap()
}

fn random_instance(seed: u64) -> (HsiCube, cassi_unfold::CodedMask, DispersionSpec) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = rng.random_range(1..=8);
    let w = rng.random_range(1..=8);
    let l = rng.random_range(1..=4);
    let step = rng.random_range(1..=2);
    let cube = random_cube(&mut rng, h, w, l);
    let mask = generate_mask(h, w, 0.5, seed ^ 0x55).unwrap();
    (cube, mask, DispersionSpec::new(step).unwrap())
}

/// Band-major aligned cube flattened as in the physical operator.
fn flat_aligned(cube: &HsiCube) -> Vec<f64> {
    cube.data.clone()
}

fn max_abs(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn permutation_identity_over_random_instances() {
    let start = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for i in 0..200 {
        let n = rng.random_range(1..=64);
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        worst = worst.max(verify_perm_identity(&v, &perm, 4, i).unwrap());
    }
    assert!(worst <= 1e-12, "{worst}");
    assert!(start.elapsed().as_secs_f64() < 1.0);
}

#[test]
fn structured_forward_matches_dense_operators() {
    for seed in 0..60 {
        let (cube, mask, spec) = random_instance(seed);
        let y = forward_measure(&cube, &mask, spec, NoiseSpec::None).unwrap();
        let a = build_dense_operator(cube.height, cube.width, cube.bands, &mask, spec).unwrap();
        let dense = a.matvec(&shift_cube(&cube, spec).data);
        assert!(max_abs(&y.plane.data, &dense) <= 1e-12);

        let phys =
            build_physical_operator(cube.height, cube.width, cube.bands, &mask, spec).unwrap();
        let dense = phys.matvec(&flat_aligned(&cube));
        assert!(max_abs(&y.plane.data, &dense) <= 1e-12);
    }
}

#[test]
fn structured_adjoint_matches_dense_transpose() {
    for seed in 100..160 {
        let (cube, mask, spec) = random_instance(seed);
        let y = forward_measure(&cube, &mask, spec, NoiseSpec::None).unwrap();
        let phys =
            build_physical_operator(cube.height, cube.width, cube.bands, &mask, spec).unwrap();
        let dense = phys.transpose().matvec(&y.plane.data);
        let structured = adjoint(&y, &mask).unwrap();
        assert!(max_abs(&structured.data, &dense) <= 1e-12);

        let a = build_dense_operator(cube.height, cube.width, cube.bands, &mask, spec).unwrap();
        let masks = shifted_masks(&mask, cube.bands, spec);
        let shifted = apply_adjoint(&y.plane, &masks).unwrap();
        assert!(max_abs(&shifted.data, &a.transpose().matvec(&y.plane.data)) <= 1e-12);
    }
}

#[test]
fn adjoint_dot_test() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for seed in 0..100 {
        let (cube, mask, spec) = random_instance(1000 + seed);
        let masks = shifted_masks(&mask, cube.bands, spec);
        let mut x = ShiftedCube::zeros(cube.height, cube.width, cube.bands, spec);
        x.data
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-1.0..1.0));
        let fw = spec.frame_width(cube.width, cube.bands);
        let r = Plane::new(
            cube.height,
            fw,
            (0..cube.height * fw)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
        .unwrap();
        let ax = apply_forward(&x, &masks).unwrap();
        let atr = apply_adjoint(&r, &masks).unwrap();
        let lhs: f64 = ax.data.iter().zip(&r.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&atr.data).map(|(a, b)| a * b).sum();
        let scale = lhs.abs().max(rhs.abs()).max(1e-300);
        assert!((lhs - rhs).abs() / scale <= 1e-10, "{lhs} vs {rhs}");
    }
}

#[test]
fn aat_is_diagonal_and_matches() {
    for seed in 0..40 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w, l) = (
            rng.random_range(1..=6),
            rng.random_range(1..=6),
            rng.random_range(1..=4),
        );
        let mask = generate_mask(h, w, 0.5, seed).unwrap();
        let spec = DispersionSpec::default();
        let a = build_dense_operator(h, w, l, &mask, spec).unwrap();
        let aat: DenseMatrix = a.matmul(&a.transpose());
        let diag = compute_aat_diag(&mask, l, spec);
        for r in 0..aat.rows {
            for c in 0..aat.cols {
                if r == c {
                    assert_eq!(aat.at(r, c), diag.values.data[r]);
                } else {
                    assert_eq!(aat.at(r, c), 0.0);
                }
            }
        }
    }
}

fn system_instance(
    seed: u64,
    h: usize,
    w: usize,
    l: usize,
) -> (CassiSystem, HsiCube, cassi_unfold::Measurement) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cube = random_cube(&mut rng, h, w, l);
    let mask = generate_mask(h, w, 0.5, seed + 7).unwrap();
    let spec = DispersionSpec::default();
    let y = forward_measure(&cube, &mask, spec, NoiseSpec::None).unwrap();
    (CassiSystem::new(mask, l, spec), cube, y)
}

#[test]
fn exact_back_projection_lands_on_measurement_set() {
    for seed in 0..20 {
        let (sys, _, y) = system_instance(seed, 12, 10, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 500);
        let mut x = ShiftedCube::zeros(12, 10, 4, sys.spec);
        x.data.iter_mut().for_each(|v| *v = rng.random::<f64>());
        let p = sys.bp_update(&x, &y, 0.0).unwrap();
        assert!(sys.residual_norm(&p.x, &y).unwrap() <= 1e-10);
        let twice = sys.bp_update(&p.x, &y, 0.0).unwrap();
        assert!(max_abs(&twice.x.data, &p.x.data) <= 1e-10);
    }
}

#[test]
fn regularized_projection_decreases_residual() {
    let (sys, _, y) = system_instance(3, 16, 16, 6);
    let mut x = ShiftedCube::zeros(16, 16, 6, sys.spec);
    let mut prev = sys.residual_norm(&x, &y).unwrap();
    for eta in [1.0, 0.1, 0.01] {
        x = sys.bp_update(&x, &y, eta).unwrap().x;
        let r = sys.residual_norm(&x, &y).unwrap();
        assert!(r <= prev + 1e-12, "{r} > {prev}");
        prev = r;
    }
}

#[test]
fn gradient_step_at_inverse_max_diag_does_not_overshoot() {
    let (sys, _, y) = system_instance(5, 16, 12, 5);
    let dmax = sys.diag.values.data.iter().cloned().fold(0.0, f64::max);
    // the residual map is I - 2 gamma A A^T with eigenvalues in [-1, 1]
    let params = FidelityParams {
        gamma: 1.0 / dmax,
        ..FidelityParams::default()
    };
    let mut x = ShiftedCube::zeros(16, 12, 5, sys.spec);
    let mut prev = sys.residual_norm(&x, &y).unwrap();
    for _ in 0..20 {
        x = sys.gradient_step(&x, &y, &params).unwrap();
        let r = sys.residual_norm(&x, &y).unwrap();
        assert!(r <= prev + 1e-14);
        prev = r;
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn forward_is_linear(seed in 0u64..10_000, a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let (c1, mask, spec) = random_instance(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let c2 = random_cube(&mut rng, c1.height, c1.width, c1.bands);
        let mix = HsiCube::new(c1.height, c1.width, c1.bands,
            c1.data.iter().zip(&c2.data).map(|(x, y)| a * x + b * y).collect()).unwrap();
        let y1 = forward_measure(&c1, &mask, spec, NoiseSpec::None).unwrap();
        let y2 = forward_measure(&c2, &mask, spec, NoiseSpec::None).unwrap();
        let ym = forward_measure(&mix, &mask, spec, NoiseSpec::None).unwrap();
        for i in 0..ym.plane.data.len() {
            let expect = a * y1.plane.data[i] + b * y2.plane.data[i];
            prop_assert!((ym.plane.data[i] - expect).abs() <= 1e-12);
        }
    }

    #[test]
    fn diag_counts_open_bands(seed in 0u64..10_000, l in 1usize..6) {
        let mask = generate_mask(5, 7, 0.5, seed).unwrap();
        let spec = DispersionSpec::default();
        let d = compute_aat_diag(&mask, l, spec);
        let masks = shifted_masks(&mask, l, spec);
        for (p, &v) in d.values.data.iter().enumerate() {
            let count = (0..l).filter(|&b| masks.band(b)[p] == 1.0).count();
            prop_assert_eq!(v, count as f64);
            prop_assert!(v >= 0.0);
        }
    }
}
