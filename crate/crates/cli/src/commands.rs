use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use cassi_unfold::cassi::{forward_measure, generate_mask};
use cassi_unfold::check::full_suite;
use cassi_unfold::config::{env_seed, load_checkpoint, TrainConfig};
use cassi_unfold::exec::{ordered_map, ExecMode};
use cassi_unfold::io::{fmt_f64, write_pgm, Container, CsvTable};
use cassi_unfold::metrics::{psnr, ssim};
use cassi_unfold::summary::model_summary;
use cassi_unfold::synth::make_scene;
use cassi_unfold::train::{
    ablation_variants, gap_tv_grid, run_ablation, train, tune_gap_tv, Dataset, TrainReport,
};
use cassi_unfold::unfold::{sigmoid, UnfoldModel, LAMBDA_RAW};
use cassi_unfold::{CassiSystem, DispersionSpec, HsiCube, NoiseSpec};

use crate::exit::CheckFailed;

/// Simulation, training and reconstruction for coded-aperture snapshot
/// spectral imaging.
#[derive(Parser, Debug)]
#[command(name = "cassi", version, about)]
pub struct Cli {
    /// More log output (-v info, -vv debug)
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Only log errors
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

impl Cli {
    pub fn log_level(&self) -> log::LevelFilter {
        if self.quiet {
            return log::LevelFilter::Error;
        }
        match self.verbose {
            0 => log::LevelFilter::Warn,
            1 => log::LevelFilter::Info,
            _ => log::LevelFilter::Debug,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic scene cube
    Scene(SceneArgs),
    /// Generate a random binary coded aperture
    Mask(MaskArgs),
    /// Cube + mask -> snapshot measurement
    Simulate(SimulateArgs),
    /// Train an unfolding model from a TOML config
    Train(TrainArgs),
    /// Measurement + mask + checkpoint -> cube and trajectory report
    Reconstruct(ReconstructArgs),
    /// Per-scene PSNR/SSIM of estimates against references
    Eval(EvalArgs),
    /// Finite-difference gradient suite
    Gradcheck(GradcheckArgs),
    /// Parameter counts and FLOP estimate
    Summary(SummaryArgs),
    /// Component ablation table
    Ablation(AblationArgs),
    /// Tune the GAP-TV baseline on the validation scenes
    Baseline(BaselineArgs),
}

#[derive(Args, Debug, Serialize)]
struct SceneArgs {
    /// Training config whose dataset section defines the scene family
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    index: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct MaskArgs {
    #[arg(long)]
    height: usize,
    #[arg(long)]
    width: usize,
    #[arg(long, default_value_t = 0.5)]
    density: f64,
    /// Defaults to $CASSI_SEED, then 1
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct SimulateArgs {
    #[arg(long)]
    cube: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Dispersion shift in pixels per band
    #[arg(long, default_value_t = 1)]
    step: usize,
    /// Gaussian read noise standard deviation
    #[arg(long, default_value_t = 0.0)]
    noise_sigma: f64,
    /// Noise seed; defaults to $CASSI_SEED, then 0
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug, Serialize)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (checkpoint, logs, reports)
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    /// Overrides the config seed and $CASSI_SEED
    #[arg(long)]
    seed: Option<u64>,
    /// Single-threaded execution
    #[arg(long)]
    sequential: bool,
}

#[derive(Args, Debug, Serialize)]
struct ReconstructArgs {
    #[arg(long)]
    measurement: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    /// Checkpoint manifest (`model.ckpt`)
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Directory for the trajectory CSV and band slices
    #[arg(long)]
    report: Option<PathBuf>,
    /// Ground truth, adds per-stage PSNR to the report
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Write every output band as a PGM image into the report directory
    #[arg(long)]
    slices: bool,
}

#[derive(Args, Debug, Serialize)]
struct EvalArgs {
    /// Reference cubes, paired in order with --estimate
    #[arg(long = "reference", required = true)]
    references: Vec<PathBuf>,
    #[arg(long = "estimate", required = true)]
    estimates: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    sequential: bool,
}

#[derive(Args, Debug, Serialize)]
struct GradcheckArgs {
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct SummaryArgs {
    #[arg(long, conflicts_with = "checkpoint")]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct AblationArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    train_scenes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    sequential: bool,
}

#[derive(Args, Debug, Serialize)]
struct BaselineArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    sequential: bool,
}

#[derive(Serialize)]
struct Snapshot<'a, A: Serialize> {
    command: &'a str,
    version: &'a str,
    args: &'a A,
}

fn snapshot<A: Serialize>(command: &str, args: &A) -> Result<String> {
    toml::to_string(&Snapshot {
        command,
        version: env!("CARGO_PKG_VERSION"),
        args,
    })
    .context("serializing the run snapshot")
}

/// Writes the snapshot next to a file output (`<out>.run.toml`).
fn write_snapshot_beside(out: &Path, text: &str) -> Result<()> {
    let mut p = out.as_os_str().to_owned();
    p.push(".run.toml");
    fs::write(&p, text).with_context(|| format!("writing {}", PathBuf::from(p).display()))
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => {
            TrainConfig::load(p).with_context(|| format!("loading config {}", p.display()))?
        }
        None => TrainConfig::default(),
    };
    cfg.apply_env()?;
    Ok(cfg)
}

fn seed_or(flag: Option<u64>, default: u64) -> Result<u64> {
    Ok(match flag {
        Some(s) => s,
        None => env_seed()?.unwrap_or(default),
    })
}

fn load(path: &Path) -> Result<Container> {
    Container::load(path).with_context(|| format!("loading {}", path.display()))
}

fn save(c: &Container, path: &Path) -> Result<()> {
    c.save(path)
        .with_context(|| format!("writing {}", path.display()))
}

fn mode(sequential: bool) -> ExecMode {
    if sequential {
        ExecMode::Sequential
    } else {
        ExecMode::Auto
    }
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Scene(a) => scene(&a),
        Command::Mask(a) => mask(&a),
        Command::Simulate(a) => simulate(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Reconstruct(a) => reconstruct(&a),
        Command::Eval(a) => eval(&a),
        Command::Gradcheck(a) => gradcheck(&a),
        Command::Summary(a) => summary(&a),
        Command::Ablation(a) => ablation(&a),
        Command::Baseline(a) => baseline(&a),
    }?;
    Ok(ExitCode::SUCCESS)
}

fn scene(a: &SceneArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    let cube = make_scene(&cfg.dataset, a.index)?;
    let snap = snapshot("scene", a)?;
    save(
        &Container::from_cube(&cube).with_config(Some(snap.clone())),
        &a.out,
    )?;
    write_snapshot_beside(&a.out, &snap)
}

fn mask(a: &MaskArgs) -> Result<()> {
    let seed = seed_or(a.seed, 1)?;
    let m = generate_mask(a.height, a.width, a.density, seed)?;
    let snap = snapshot("mask", a)?;
    save(
        &Container::from_mask(&m)
            .with_meta("seed", seed)
            .with_config(Some(snap.clone())),
        &a.out,
    )?;
    write_snapshot_beside(&a.out, &snap)
}

fn simulate(a: &SimulateArgs) -> Result<()> {
    let cube = load(&a.cube)?.into_cube()?;
    let m = load(&a.mask)?.into_mask()?;
    let noise = if a.noise_sigma > 0.0 {
        NoiseSpec::Gaussian {
            sigma: a.noise_sigma,
            seed: seed_or(a.seed, 0)?,
        }
    } else {
        NoiseSpec::None
    };
    let y = forward_measure(&cube, &m, DispersionSpec::new(a.step)?, noise)?;
    let snap = snapshot("simulate", a)?;
    save(
        &Container::from_measurement(&y).with_config(Some(snap.clone())),
        &a.out,
    )?;
    write_snapshot_beside(&a.out, &snap)
}

fn stage_header(stages: usize) -> Vec<String> {
    (0..=stages).map(|k| format!("psnr_stage_{k}")).collect()
}

/// Per-scene validation metrics, per-stage trajectory summary and a
/// plain-text log of the run.
fn write_train_reports(dir: &Path, cfg: &TrainConfig, report: &TrainReport) -> Result<()> {
    let k = cfg.model.stages;
    let mut header = vec!["scene".to_string(), "psnr".into(), "ssim".into()];
    header.extend(stage_header(k));
    let mut scenes = CsvTable {
        header,
        rows: Vec::new(),
    };
    for (i, s) in report.final_val.scenes.iter().enumerate() {
        let mut row = vec![i.to_string(), fmt_f64(s.psnr), fmt_f64(s.ssim)];
        row.extend(s.stage_psnr.iter().map(|&v| fmt_f64(v)));
        scenes.push(row)?;
    }
    scenes.save(&dir.join("val_scenes.csv"))?;

    let lambdas: Vec<f64> = report
        .params
        .get(LAMBDA_RAW)
        .map(|t| t.data().iter().map(|&r| sigmoid(r as f64)).collect())
        .unwrap_or_default();
    let mut traj = CsvTable::new(&[
        "stage",
        "lambda",
        "init_psnr_mean",
        "psnr_mean",
        "psnr_median",
    ]);
    for s in 0..=k {
        let lambda = if s == 0 {
            String::new()
        } else {
            lambdas
                .get(s - 1)
                .or(lambdas.first())
                .map(|&v| fmt_f64(v))
                .unwrap_or_default()
        };
        traj.push(vec![
            s.to_string(),
            lambda,
            fmt_f64(report.init_val.stage_psnr_mean[s]),
            fmt_f64(report.final_val.stage_psnr_mean[s]),
            fmt_f64(report.final_val.stage_psnr_median[s]),
        ])?;
    }
    traj.save(&dir.join("trajectory.csv"))?;

    let mut log = format!(
        "init val_psnr {} val_ssim {}\n",
        fmt_f64(report.init_val.psnr),
        fmt_f64(report.init_val.ssim)
    );
    for e in &report.epochs {
        log.push_str(&format!(
            "epoch {} lr {} loss {} traj {} val_psnr {} val_ssim {}\n",
            e.epoch,
            fmt_f64(e.lr),
            fmt_f64(e.train_loss),
            fmt_f64(e.traj_loss),
            fmt_f64(e.val_psnr),
            fmt_f64(e.val_ssim)
        ));
    }
    log.push_str(&format!(
        "final val_psnr {} val_ssim {}\n",
        fmt_f64(report.final_val.psnr),
        fmt_f64(report.final_val.ssim)
    ));
    fs::write(dir.join("train.log"), log)?;
    Ok(())
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.sequential |= a.sequential;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    fs::write(a.out.join("run.toml"), snapshot("train", a)?)?;
    let report = train(&cfg, Some(&a.out))?;
    write_train_reports(&a.out, &cfg, &report)?;
    println!(
        "init_psnr {} final_psnr {} final_ssim {}",
        fmt_f64(report.init_val.psnr),
        fmt_f64(report.final_val.psnr),
        fmt_f64(report.final_val.ssim)
    );
    Ok(())
}

fn reconstruct(a: &ReconstructArgs) -> Result<()> {
    let y = load(&a.measurement)?.into_measurement()?;
    let m = load(&a.mask)?.into_mask()?;
    let loaded = load_checkpoint(&a.checkpoint)
        .with_context(|| format!("loading {}", a.checkpoint.display()))?;
    if y.bands != loaded.model.bands {
        bail!(cassi_unfold::Error::Dimension(format!(
            "measurement has {} bands, model expects {}",
            y.bands, loaded.model.bands
        )));
    }
    let sys = CassiSystem::new(m, y.bands, y.spec);
    let (out, traj) = loaded.model.reconstruct(&loaded.params, &sys, &y)?;
    let snap = snapshot("reconstruct", a)?;
    save(
        &Container::from_cube(&out).with_config(Some(snap.clone())),
        &a.out,
    )?;
    write_snapshot_beside(&a.out, &snap)?;

    let reference = match &a.reference {
        Some(p) => Some(load(p)?.into_cube()?),
        None => None,
    };
    if let Some(dir) = &a.report {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let states = traj.aligned();
        let first = traj.residuals.len() - states.len();
        let mut t = CsvTable::new(&["stage", "lambda", "residual", "psnr"]);
        for (s, r) in traj.residuals.iter().enumerate() {
            let lambda = if s == 0 {
                String::new()
            } else {
                fmt_f64(traj.lambdas[s - 1])
            };
            let p = match (&reference, s.checked_sub(first)) {
                (Some(gt), Some(i)) => fmt_f64(psnr(&states[i], gt, 1.0)?),
                _ => String::new(),
            };
            t.push(vec![s.to_string(), lambda, fmt_f64(*r), p])?;
        }
        t.save(&dir.join("trajectory.csv"))?;
        fs::write(dir.join("run.toml"), &snap)?;
        if a.slices {
            write_slices(dir, "band", &out)?;
            if let Some(gt) = &reference {
                write_slices(dir, "reference", gt)?;
            }
        }
    }
    if let Some(gt) = &reference {
        println!(
            "psnr {} ssim {}",
            fmt_f64(psnr(&out, gt, 1.0)?),
            fmt_f64(ssim(&out, gt, 1.0)?)
        );
    }
    Ok(())
}

fn write_slices(dir: &Path, prefix: &str, cube: &HsiCube) -> Result<()> {
    for b in 0..cube.bands {
        write_pgm(
            &dir.join(format!("{prefix}_{b:02}.pgm")),
            &cube.band_plane(b),
            0.0,
            1.0,
        )?;
    }
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    if a.references.len() != a.estimates.len() {
        bail!(cassi_unfold::Error::InvalidParameter(format!(
            "{} references but {} estimates",
            a.references.len(),
            a.estimates.len()
        )));
    }
    let pairs: Vec<(&PathBuf, &PathBuf)> = a.references.iter().zip(&a.estimates).collect();
    let scores = ordered_map(
        mode(a.sequential),
        &pairs,
        |_, (r, e)| -> Result<(f64, f64)> {
            let r = load(r)?.into_cube()?;
            let e = load(e)?.into_cube()?;
            Ok((psnr(&e, &r, 1.0)?, ssim(&e, &r, 1.0)?))
        },
    )
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let mut t = CsvTable::new(&["scene", "reference", "estimate", "psnr", "ssim"]);
    for (i, ((r, e), (p, s))) in pairs.iter().zip(&scores).enumerate() {
        t.push(vec![
            i.to_string(),
            r.display().to_string(),
            e.display().to_string(),
            fmt_f64(*p),
            fmt_f64(*s),
        ])?;
    }
    let n = scores.len() as f64;
    let mean_p = scores.iter().map(|s| s.0).sum::<f64>() / n;
    let mean_s = scores.iter().map(|s| s.1).sum::<f64>() / n;
    t.save(&a.out)
        .with_context(|| format!("writing {}", a.out.display()))?;
    write_snapshot_beside(&a.out, &snapshot("eval", a)?)?;
    println!("psnr {} ssim {}", fmt_f64(mean_p), fmt_f64(mean_s));
    Ok(())
}

fn gradcheck(a: &GradcheckArgs) -> Result<()> {
    let results = full_suite()?;
    let mut t = CsvTable::new(&["check", "max_rel_err", "tolerance", "passed"]);
    let mut worst = 0.0f64;
    let mut failed = Vec::new();
    for r in &results {
        println!(
            "{:<28} {:.3e}  (tol {:.0e})  {}",
            r.name,
            r.max_rel_err,
            r.tolerance,
            if r.passed() { "ok" } else { "FAIL" }
        );
        t.push(vec![
            r.name.clone(),
            fmt_f64(r.max_rel_err),
            fmt_f64(r.tolerance),
            r.passed().to_string(),
        ])?;
        worst = worst.max(r.max_rel_err);
        if !r.passed() {
            failed.push(r.name.clone());
        }
    }
    println!("max rel err {worst:.3e} over {} checks", results.len());
    if let Some(out) = &a.out {
        t.save(out)
            .with_context(|| format!("writing {}", out.display()))?;
        write_snapshot_beside(out, &snapshot("gradcheck", a)?)?;
    }
    if !failed.is_empty() {
        return Err(CheckFailed(format!("gradient check failed: {}", failed.join(", "))).into());
    }
    Ok(())
}

fn summary(a: &SummaryArgs) -> Result<()> {
    let (cfg, model) = match &a.checkpoint {
        Some(p) => {
            let l = load_checkpoint(p).with_context(|| format!("loading {}", p.display()))?;
            (l.config, l.model)
        }
        None => {
            let cfg = load_config(a.config.as_deref())?;
            cfg.validate()?;
            let model = UnfoldModel::new(cfg.model.clone(), cfg.dataset.bands, cfg.seed)?;
            (cfg, model)
        }
    };
    let h = a.height.unwrap_or(cfg.dataset.height);
    let w = a.width.unwrap_or(cfg.dataset.width);
    let s = model_summary(&model, h, w, cfg.dispersion()?)?;
    let table = s.to_table()?;
    print!("{}", String::from_utf8(table.to_bytes()?)?);
    if let Some(out) = &a.out {
        table
            .save(out)
            .with_context(|| format!("writing {}", out.display()))?;
        write_snapshot_beside(out, &snapshot("summary", a)?)?;
    }
    Ok(())
}

fn ablation(a: &AblationArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(n) = a.train_scenes {
        cfg.train_scenes = n;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    cfg.sequential |= a.sequential;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    fs::write(a.out.join("run.toml"), snapshot("ablation", a)?)?;
    let table = run_ablation(&ablation_variants(&cfg), Some(&a.out))?;
    print!("{}", String::from_utf8(table.to_bytes()?)?);
    Ok(())
}

fn baseline(a: &BaselineArgs) -> Result<()> {
    let cfg = load_config(a.config.as_deref())?;
    cfg.validate()?;
    let data = Dataset::build(&cfg)?;
    let mut t = CsvTable::new(&[
        "iterations",
        "inner_iterations",
        "tv_weight",
        "accelerate",
        "val_psnr",
    ]);
    let mut best = f64::NEG_INFINITY;
    for c in gap_tv_grid() {
        let (_, p) = tune_gap_tv(&data.val, &[c], mode(a.sequential || cfg.sequential))?;
        best = best.max(p);
        t.push(vec![
            c.iterations.to_string(),
            c.inner_iterations.to_string(),
            fmt_f64(c.tv_weight),
            c.accelerate.to_string(),
            fmt_f64(p),
        ])?;
    }
    t.save(&a.out)
        .with_context(|| format!("writing {}", a.out.display()))?;
    write_snapshot_beside(&a.out, &snapshot("baseline", a)?)?;
    println!("best_psnr {}", fmt_f64(best));
    Ok(())
}
