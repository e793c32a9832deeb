use std::fs;
use std::path::Path;
use std::process::Command;

use ctrl_mv::experiments::{self, content_hash, Command as Cmd, ExperimentConfig, Manifest, SensitivityParam};
use ctrl_mv::oracles;
use ctrl_mv::train::{self, Schedule};

const BIN: &str = env!("CARGO_BIN_EXE_ctrl-mv");

fn run(args: &[&str], out_env: Option<&Path>) -> std::process::Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).env("RUST_LOG", "warn").env_remove("CTRL_MV_OUT");
    if let Some(p) = out_env {
        cmd.env("CTRL_MV_OUT", p);
    }
    cmd.output().unwrap()
}

fn read_manifest(dir: &Path) -> Manifest {
    serde_json::from_slice(&fs::read(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn convergence_writes_hashed_outputs_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        let out = run(&["convergence", "--episodes", "300", "--replications", "3", "--seed", "7", "--out", dir.to_str().unwrap()], None);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let m = read_manifest(&a);
    assert_eq!(m.command, "convergence");
    assert_eq!((m.config.seed, m.config.episodes, m.config.replications), (7, Some(300), Some(3)));
    assert!(m.summary["slope_phi1"].is_number());
    for f in &m.outputs {
        let bytes = fs::read(a.join(&f.path)).unwrap();
        assert_eq!(content_hash(&bytes), f.sha256);
        assert_eq!(bytes, fs::read(b.join(&f.path)).unwrap(), "{} differs between runs", f.path);
    }
    let csv = fs::read_to_string(a.join("convergence.csv")).unwrap();
    assert_eq!(csv.lines().count(), 301);
    assert!(csv.starts_with("n,mse_phi1_mean,mse_phi1_p025,mse_phi1_p975,"));
}

#[test]
fn env_var_overrides_out_and_config_file_is_hashed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"seed": 3, "tradeoff_points": 5, "episodes": 200}"#).unwrap();
    let env_out = tmp.path().join("env");
    let flag_out = tmp.path().join("flag");
    let out = run(&["tradeoff", "--config", cfg.to_str().unwrap(), "--out", flag_out.to_str().unwrap()], Some(&env_out));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!flag_out.exists());
    let m = read_manifest(&env_out);
    assert_eq!(m.inputs.len(), 1);
    assert_eq!(m.inputs[0].sha256, content_hash(&fs::read(&cfg).unwrap()));
    assert_eq!(m.config.tradeoff_points, 5);
    assert_eq!(fs::read_to_string(env_out.join("tradeoff.csv")).unwrap().lines().count(), 6);
}

#[test]
fn invalid_config_fails_without_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.json");
    let out_dir = tmp.path().join("out");
    for body in [r#"{"gamma_scale": 0}"#, r#"{"unknown_key": 1}"#, r#"{"phi3": 0.1}"#] {
        fs::write(&cfg, body).unwrap();
        let out = run(&["regret", "--config", cfg.to_str().unwrap(), "--episodes", "300", "--out", out_dir.to_str().unwrap()], None);
        assert!(!out.status.success(), "{body} accepted");
        assert!(!out_dir.exists());
    }
}

#[test]
fn failed_write_removes_partial_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    fs::write(&cfg, r#"{"synthetic": {"assets": 4, "days": 1260, "start": "1996-01-01", "seed": 1, "r": 0.0, "shift": null}, "backtest": {"test_start": "2000-01-01", "window_months": 24}}"#).unwrap();
    let out_dir = tmp.path().join("out");
    fs::create_dir(&out_dir).unwrap();
    fs::write(out_dir.join("keep.txt"), "mine").unwrap();
    // a directory where the second artifact goes makes the write fail midway
    fs::create_dir(out_dir.join("pretrain_history.csv")).unwrap();
    let out = run(&["pretrain", "--config", cfg.to_str().unwrap(), "--episodes", "20", "--out", out_dir.to_str().unwrap()], None);
    assert!(!out.status.success());
    assert!(!out_dir.join("pretrained.json").exists());
    assert!(!out_dir.join("manifest.json").exists());
    assert_eq!(fs::read_to_string(out_dir.join("keep.txt")).unwrap(), "mine");

    fs::remove_dir(out_dir.join("pretrain_history.csv")).unwrap();
    let out = run(&["pretrain", "--config", cfg.to_str().unwrap(), "--episodes", "20", "--out", out_dir.to_str().unwrap()], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let names: Vec<String> = read_manifest(&out_dir).outputs.into_iter().map(|f| f.path).collect();
    assert_eq!(names, ["pretrained.json", "pretrain_history.csv", "panel.csv"]);
}

#[test]
fn tradeoff_error_bars_shrink_like_root_n() {
    let base = ExperimentConfig { tradeoff_points: 5, tradeoff_min_scale: 0.1, tradeoff_max_scale: 10.0, ..ExperimentConfig::default() };
    let small = experiments::tradeoff(&ExperimentConfig { episodes: Some(4000), ..base.clone() }).unwrap();
    let large = experiments::tradeoff(&ExperimentConfig { episodes: Some(8000), ..base }).unwrap();
    let mut ratios: Vec<f64> = small.points.iter().zip(&large.points).map(|(a, b)| a.se / b.se).collect();
    ratios.sort_by(f64::total_cmp);
    let median = ratios[ratios.len() / 2];
    assert!((1.15..1.7).contains(&median), "{ratios:?}");
    assert!(small.points.iter().chain(&large.points).all(|p| p.var_z1 > 0.0));
}

#[test]
fn sensitivity_unit_factor_matches_baseline() {
    let cfg: ExperimentConfig = serde_json::from_str(
        r#"{"synthetic": {"assets": 4, "days": 1764, "start": "1996-01-01", "seed": 2, "r": 0.0, "shift": null},
            "backtest": {"test_start": "2000-01-01", "window_months": 24, "replications": 2, "subset_size": 3},
            "episodes": 30, "sensitivity_factors": [1.0, 5.0]}"#,
    )
    .unwrap();
    let cfg = ExperimentConfig { sensitivity_params: vec![SensitivityParam::Rate, SensitivityParam::Phi3], ..cfg };
    let out = experiments::run_command(Cmd::Sensitivity, &cfg).unwrap();
    let text = String::from_utf8(out.artifacts[0].bytes.clone()).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 1 + 1 + 4);
    assert!(rows.iter().all(|r| r.len() == rows[0].len()));
    let baseline = &rows[1][2..];
    for r in rows.iter().filter(|r| r[1] == "1") {
        assert_eq!(&r[2..], baseline, "{} x1 differs from baseline", r[0]);
    }
    assert!(rows.iter().any(|r| r[1] == "5" && &r[2..] != baseline));
}

#[test]
fn frozen_learner_has_flat_errors_and_oracle_start_has_no_regret() {
    let cfg = ExperimentConfig::default();
    let model = cfg.model().unwrap();
    let oracle = cfg.oracle(&model).unwrap();
    let tcfg = cfg.train_config(300, 5);
    let frozen = Schedule::constant(0.0, 0.0);

    let mut errors = Vec::new();
    train::train_baseline_observed(&model, &tcfg, &frozen, train::default_init(2, 1.0, 0.1), &mut |_, _, p| {
        errors.push(((&p.phi1 - &oracle.phi1_star).norm(), (&p.phi2 - &oracle.phi2_star).norm(), p.w));
    })
    .unwrap();
    assert!(errors.iter().all(|e| *e == errors[0]));

    let (value, mut policy) = train::default_init(2, 1.0, 0.1);
    policy.phi1 = oracle.phi1_star.clone();
    policy.phi2 = oracle.phi2_star.clone();
    policy.w = oracle.w().unwrap();
    let mut regret = 0.0;
    train::train_baseline_observed(&model, &tcfg, &frozen, (value, policy), &mut |_, _, p| {
        regret += oracle.sr_star - oracles::sharpe_closed_form(&p.phi1, &model, 1.0);
    })
    .unwrap();
    assert!(regret.abs() < 1e-12, "{regret}");
}

#[test]
fn mini_batches_divide_update_variance() {
    // one update of w from a fixed start: Var(Δw) = a_w² Var(gap) / batch
    let cfg = ExperimentConfig::default();
    let model = cfg.model().unwrap();
    let sched = Schedule::constant(0.1, 0.1);
    let spread = |batch: usize| {
        let ws: Vec<f64> = (0..400)
            .map(|s| {
                let tcfg = train::TrainConfig { batch, ..cfg.train_config(1, 100 + s) };
                train::train_baseline(&model, &tcfg, &sched, train::default_init(2, 1.0, 0.1)).unwrap().policy.w
            })
            .collect();
        let m = ws.iter().sum::<f64>() / ws.len() as f64;
        ws.iter().map(|w| (w - m).powi(2)).sum::<f64>() / (ws.len() - 1) as f64
    };
    let ratio = spread(1) / spread(16);
    assert!((11.0..23.0).contains(&ratio), "variance ratio {ratio}");
}
