//! Parallel (rayon) versus sequential execution of the data-parallel paths.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use cassi_unfold::config::TrainConfig;
use cassi_unfold::exec::ExecMode;
use cassi_unfold::synth::make_scene;
use cassi_unfold::train::{batch_gradients, validate, Dataset};
use cassi_unfold::tv::{gap_tv_baseline, tv_denoise_cube, GapTvConfig};
use cassi_unfold::unfold::UnfoldModel;
use tensorgrad::ParamStore;

const MODES: [(&str, ExecMode); 2] = [
    ("parallel", ExecMode::Auto),
    ("sequential", ExecMode::Sequential),
];

fn bench_config() -> TrainConfig {
    let mut cfg = TrainConfig::default();
    cfg.model.prox.levels = 2;
    cfg.train_scenes = 8;
    cfg.val_scenes = 4;
    cfg.batch_size = 4;
    cfg.patch_size = 32;
    cfg
}

fn training_step(c: &mut Criterion) {
    let cfg = bench_config();
    let data = Dataset::build(&cfg).unwrap();
    let model = UnfoldModel::new(cfg.model.clone(), cfg.dataset.bands, cfg.seed).unwrap();
    let params: ParamStore<f32> = model.params.cast();
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let batch: Vec<_> = (0..cfg.batch_size)
        .map(|i| data.train_sample(&cfg, i, &mut rng).unwrap())
        .collect();
    let mut g = c.benchmark_group("batch_gradients");
    g.sample_size(10);
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| batch_gradients(&model, &params, &batch, &cfg.loss, mode).unwrap())
        });
    }
    g.finish();

    let mut g = c.benchmark_group("validate");
    g.sample_size(10);
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| validate(&model, &params, &data.val, mode).unwrap())
        });
    }
    g.finish();
}

fn classical(c: &mut Criterion) {
    let cfg = bench_config();
    let cube = make_scene(&cfg.dataset, 0).unwrap();
    let mut g = c.benchmark_group("tv_denoise_cube");
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| tv_denoise_cube(&cube, 0.05, 20, mode))
        });
    }
    g.finish();

    let data = Dataset::build(&cfg).unwrap();
    let s = &data.val[0];
    let gap = GapTvConfig::default();
    let mut g = c.benchmark_group("gap_tv");
    g.sample_size(10);
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| gap_tv_baseline(&s.system, &s.y, &gap, mode).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, training_step, classical);
criterion_main!(benches);
