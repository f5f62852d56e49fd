use std::path::Path;
use std::process::{Command, Output};

use cassi_unfold::config::TrainConfig;
use cassi_unfold::io::{Container, CsvTable};

const TOY: &str = include_str!("../../../configs/toy.toml");

fn cassi(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cassi"))
        .args(args)
        .current_dir(dir)
        .env_remove("CASSI_SEED")
        .output()
        .unwrap()
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = cassi(args, dir);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn error_line(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr)
        .lines()
        .find(|l| l.starts_with("error code="))
        .expect("machine-readable error line")
        .to_string()
}

fn tiny_config() -> TrainConfig {
    let mut cfg = TrainConfig::from_toml(TOY).unwrap();
    cfg.epochs = 2;
    cfg.train_scenes = 6;
    cfg.val_scenes = 3;
    cfg.batch_size = 3;
    cfg.patch_size = 24;
    cfg
}

fn scene_mask_measurement(dir: &Path) {
    ok(&["scene", "--index", "5", "--out", "s.hsic"], dir);
    ok(
        &[
            "mask", "--height", "48", "--width", "48", "--seed", "3", "--out", "m.hsic",
        ],
        dir,
    );
}

#[test]
fn simulate_twice_gives_identical_files() {
    let d = tempfile::tempdir().unwrap();
    scene_mask_measurement(d.path());
    for out in ["y1.hsic", "y2.hsic"] {
        ok(
            &[
                "simulate",
                "--cube",
                "s.hsic",
                "--mask",
                "m.hsic",
                "--out",
                out,
                "--seed",
                "7",
                "--noise-sigma",
                "0.01",
            ],
            d.path(),
        );
    }
    let a = Container::load(&d.path().join("y1.hsic")).unwrap();
    let b = Container::load(&d.path().join("y2.hsic")).unwrap();
    assert_eq!(a.data, b.data);
    assert_eq!(a.kind(), Some("measurement"));
    // every artifact carries the command that produced it
    assert!(a
        .config
        .as_deref()
        .unwrap()
        .contains("command = \"simulate\""));
    assert!(d.path().join("y1.hsic.run.toml").exists());
}

#[test]
fn seed_env_var_sets_the_default_seed() {
    let d = tempfile::tempdir().unwrap();
    let run = |seed: &str, out: &str| {
        let o = Command::new(env!("CARGO_BIN_EXE_cassi"))
            .args(["mask", "--height", "16", "--width", "16", "--out", out])
            .current_dir(d.path())
            .env("CASSI_SEED", seed)
            .output()
            .unwrap();
        assert!(o.status.success());
        Container::load(&d.path().join(out)).unwrap()
    };
    let a = run("11", "a.hsic");
    let b = run("11", "b.hsic");
    let c = run("12", "c.hsic");
    assert_eq!(a.data, b.data);
    assert_ne!(a.data, c.data);
    assert_eq!(a.meta("seed"), Some("11"));
    let bad = Command::new(env!("CARGO_BIN_EXE_cassi"))
        .args(["mask", "--height", "4", "--width", "4", "--out", "x.hsic"])
        .current_dir(d.path())
        .env("CASSI_SEED", "not-a-number")
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(5));
}

#[test]
fn failures_have_distinct_exit_codes_and_error_lines() {
    let d = tempfile::tempdir().unwrap();
    scene_mask_measurement(d.path());

    let unknown = cassi(&["simulate", "--bogus"], d.path());
    assert_eq!(unknown.status.code(), Some(2));
    assert!(error_line(&unknown).contains("kind=usage"));

    let missing = cassi(
        &[
            "simulate",
            "--cube",
            "nope.hsic",
            "--mask",
            "m.hsic",
            "--out",
            "y.hsic",
        ],
        d.path(),
    );
    assert_eq!(missing.status.code(), Some(3));
    assert!(error_line(&missing).contains("kind=missing_file"));

    let bytes = std::fs::read(d.path().join("s.hsic")).unwrap();
    std::fs::write(d.path().join("t.hsic"), &bytes[..bytes.len() - 5]).unwrap();
    let truncated = cassi(
        &[
            "simulate", "--cube", "t.hsic", "--mask", "m.hsic", "--out", "y.hsic",
        ],
        d.path(),
    );
    assert_eq!(truncated.status.code(), Some(4));
    assert!(error_line(&truncated).contains("truncated payload"));

    // a mask where a cube is expected is a format violation too
    let wrong_kind = cassi(
        &[
            "simulate", "--cube", "m.hsic", "--mask", "m.hsic", "--out", "y.hsic",
        ],
        d.path(),
    );
    assert_eq!(wrong_kind.status.code(), Some(4));

    let bad_value = cassi(
        &[
            "mask",
            "--height",
            "4",
            "--width",
            "4",
            "--density",
            "2",
            "--out",
            "q.hsic",
        ],
        d.path(),
    );
    assert_eq!(bad_value.status.code(), Some(5));

    std::fs::write(d.path().join("bad.toml"), "epochs = \"many\"\n").unwrap();
    let bad_cfg = cassi(&["summary", "--config", "bad.toml"], d.path());
    assert_eq!(bad_cfg.status.code(), Some(5));

    let help = cassi(&["--help"], d.path());
    assert!(help.status.success());
}

#[test]
fn summary_counts_match_the_checkpointed_model() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("toy.toml"), TOY).unwrap();
    let text = ok(
        &["summary", "--config", "toy.toml", "--out", "summary.csv"],
        d.path(),
    );
    assert!(text.starts_with("item,value"));
    let t = CsvTable::load(&d.path().join("summary.csv")).unwrap();
    let get = |k: &str| {
        t.rows
            .iter()
            .find(|r| r[0] == k)
            .map(|r| r[1].clone())
            .unwrap()
    };
    let params: usize = get("params").parse().unwrap();
    let groups: usize = t
        .rows
        .iter()
        .filter(|r| r[0].starts_with("params."))
        .map(|r| r[1].parse::<usize>().unwrap())
        .sum();
    assert_eq!(params, groups);
    assert!(get("flops").parse::<u64>().unwrap() > 0);
}

#[test]
fn gradcheck_passes_and_prints_worst_error() {
    let d = tempfile::tempdir().unwrap();
    let text = ok(&["gradcheck", "--out", "grad.csv"], d.path());
    let last = text.lines().last().unwrap();
    let worst: f64 = last.split_whitespace().nth(3).unwrap().parse().unwrap();
    assert!(worst <= 1e-4, "{last}");
    let t = CsvTable::load(&d.path().join("grad.csv")).unwrap();
    assert!(t.rows.iter().all(|r| r[3] == "true"));
}

#[test]
fn reconstruct_then_eval_reproduces_training_validation() {
    let d = tempfile::tempdir().unwrap();
    let dir = d.path();
    let cfg = tiny_config();
    std::fs::write(dir.join("tiny.toml"), cfg.to_toml().unwrap()).unwrap();
    ok(&["train", "--config", "tiny.toml", "--out", "run"], dir);
    for f in [
        "model.ckpt",
        "model.bin",
        "metrics.csv",
        "train.log",
        "val_scenes.csv",
        "trajectory.csv",
        "config.toml",
        "run.toml",
    ] {
        assert!(dir.join("run").join(f).exists(), "{f}");
    }
    // the config snapshot reproduces the run's configuration
    let snap = TrainConfig::load(&dir.join("run/config.toml")).unwrap();
    assert_eq!(snap, cfg);

    let spec = &cfg.dataset;
    let (h, w) = (spec.height.to_string(), spec.width.to_string());
    ok(
        &[
            "mask",
            "--height",
            &h,
            "--width",
            &w,
            "--density",
            &cfg.mask_density.to_string(),
            "--seed",
            &cfg.mask_seed.to_string(),
            "--out",
            "m.hsic",
        ],
        dir,
    );
    let mut eval_args: Vec<String> = vec!["eval".into(), "--out".into(), "eval.csv".into()];
    for i in 0..cfg.val_scenes {
        let idx = (cfg.train_scenes + i).to_string();
        let (s, y, x) = (
            format!("s{i}.hsic"),
            format!("y{i}.hsic"),
            format!("x{i}.hsic"),
        );
        ok(
            &[
                "scene",
                "--config",
                "tiny.toml",
                "--index",
                &idx,
                "--out",
                &s,
            ],
            dir,
        );
        ok(
            &[
                "simulate",
                "--cube",
                &s,
                "--mask",
                "m.hsic",
                "--out",
                &y,
                "--step",
                &cfg.dispersion_step.to_string(),
            ],
            dir,
        );
        let rep = format!("rep{i}");
        ok(
            &[
                "reconstruct",
                "--measurement",
                &y,
                "--mask",
                "m.hsic",
                "--checkpoint",
                "run/model.ckpt",
                "--out",
                &x,
                "--report",
                &rep,
                "--reference",
                &s,
                "--slices",
            ],
            dir,
        );
        eval_args.extend(["--reference".into(), s, "--estimate".into(), x]);
    }
    let args: Vec<&str> = eval_args.iter().map(String::as_str).collect();
    let printed = ok(&args, dir);
    let mean: f64 = printed.split_whitespace().nth(1).unwrap().parse().unwrap();

    let log = CsvTable::load(&dir.join("run/metrics.csv")).unwrap();
    let final_val = *log.f64_column("val_psnr").unwrap().last().unwrap();
    assert!((mean - final_val).abs() <= 0.01, "{mean} vs {final_val}");

    let per_scene = CsvTable::load(&dir.join("eval.csv")).unwrap();
    assert_eq!(per_scene.rows.len(), cfg.val_scenes);
    let traj = CsvTable::load(&dir.join("rep0/trajectory.csv")).unwrap();
    assert_eq!(traj.rows.len(), cfg.model.stages + 1);
    assert_eq!(
        traj.f64_column("psnr").unwrap().last().copied().unwrap(),
        per_scene.f64_column("psnr").unwrap()[0]
    );
    for b in 0..spec.bands {
        assert!(dir.join(format!("rep0/band_{b:02}.pgm")).exists());
    }
}

#[test]
fn shipped_configs_parse_and_validate() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(root).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "toml") {
            TrainConfig::load(&p).unwrap().validate().unwrap();
            n += 1;
        }
    }
    assert!(n >= 4);
}
