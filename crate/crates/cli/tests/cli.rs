use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ingarch::estimation::ModelKind;
use ingarch::panel::read_csv;
use ingarch_cli::{cmd_moments, cmd_simulate, RunConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ingarch"))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn simulate(dir: &Path, extra: &[&str]) {
    let mut args = vec!["simulate", "--seed", "5", "--out", path(dir)];
    args.extend_from_slice(extra);
    let out = run(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn simulate_is_byte_identical_for_a_seed() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let cfg = configs().join("simulate_nb.toml");
    for dir in [&a, &b] {
        let out = run(&["simulate", "--config", path(&cfg), "--out", path(dir.path())]);
        assert_eq!(out.status.code(), Some(0));
    }
    for file in ["panel.csv", "latent.csv"] {
        let x = fs::read(a.path().join(file)).unwrap();
        assert_eq!(x, fs::read(b.path().join(file)).unwrap());
        assert!(!x.contains(&b'\r'));
    }
    let header = fs::read_to_string(a.path().join("panel.csv")).unwrap();
    assert!(header.starts_with("entity_id,period,claims,exposure,g1,g2\n"));
}

#[test]
fn minimal_panel_passes_fit_validation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig {
        seed: Some(1),
        out: Some(dir.path().to_path_buf()),
        n_entities: 1,
        periods: 1,
        ..RunConfig::default()
    };
    let sim = cmd_simulate(&cfg).unwrap();
    let panel = read_csv(fs::File::open(&sim.panel).unwrap()).unwrap();
    assert_eq!(panel.entities.len(), 1);
    let out = run(&["fit", "--panel", path(&sim.panel)]);
    assert_ne!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn pooled_simulated_means_match_closed_form() {
    for model in [ModelKind::Nb, ModelKind::Poisson] {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            model,
            seed: Some(11),
            out: Some(dir.path().to_path_buf()),
            n_entities: 4000,
            periods: 4,
            coefficients: vec![0.2],
            ..RunConfig::default()
        };
        let sim = cmd_simulate(&cfg).unwrap();
        let panel = read_csv(fs::File::open(&sim.panel).unwrap()).unwrap();

        let rate = if model.is_poisson() { 1.0 / (1.0 + (-0.2f64).exp()) } else { 0.2f64.exp() };
        let theory_cfg = RunConfig { rate: vec![rate], lags: vec![], ..cfg.clone() };
        let table = cmd_moments(&theory_cfg).unwrap();
        let first = usize::from(model.is_poisson());
        for (t, line) in table.lines().skip(1 + first).enumerate() {
            let cols: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
            let (mean_z, var_z) = (cols[3], cols[4]);
            let z: Vec<f64> =
                panel.observations().filter(|o| o.period as usize == t + 1).map(|o| o.count.unwrap() as f64).collect();
            let m = z.iter().sum::<f64>() / z.len() as f64;
            let se = (var_z / z.len() as f64).sqrt();
            assert!((m - mean_z).abs() <= 4.0 * se, "{model:?} period {}: {m} vs {mean_z} (se {se})", t + 1);
        }
    }
}

#[test]
fn malformed_row_exits_with_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("bad.csv");
    fs::write(&csv, "entity_id,period,claims,exposure,x\nA,1,0,1,0.5\nA,2,oops,1,0.5\n").unwrap();
    let out = run(&["fit", "--panel", path(&csv)]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("row 3"), "{err}");
}

#[test]
fn panel_without_usable_counts_is_an_optimization_failure() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("absent.csv");
    fs::write(&csv, "entity_id,period,claims,exposure,x\nA,1,,1,1\nA,2,0,0,1\n").unwrap();
    let out = run(&["fit", "--panel", path(&csv)]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(run(&["fit", "--model", "gamma"]).status.code(), Some(1));
    assert_eq!(run(&["simulate"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn keys(v: &serde_json::Value) -> Vec<String> {
    let mut k: Vec<String> = v.as_object().unwrap().keys().cloned().collect();
    k.sort();
    k
}

#[test]
fn fit_recovers_parameters_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), &["--config", path(&configs().join("simulate_nb.toml"))]);
    let panel = dir.path().join("panel.csv");
    let mut reports = Vec::new();
    for (name, model) in [("a", "nb"), ("b", "nb"), ("re", "random_effects")] {
        let out_dir = dir.path().join(name);
        let out = run(&["fit", "--panel", path(&panel), "--model", model, "--seed", "3", "--out", path(&out_dir)]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        reports.push(json(&out_dir.join("fit.json")));
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(reports[0]["schema_version"], 1);
    assert_eq!(keys(&reports[0]), keys(&reports[2]));
    assert_eq!(keys(&reports[0]["fitted"]["estimates"]), keys(&reports[2]["fitted"]["estimates"]));
    assert_eq!(reports[2]["fitted"]["estimates"]["delta"], 1.0);

    let est = &reports[0]["fitted"]["estimates"];
    let got = [
        est["coefficients"][0].as_f64().unwrap(),
        est["coefficients"][1].as_f64().unwrap(),
        est["delta"].as_f64().unwrap(),
        est["a_anchor"].as_f64().unwrap(),
    ];
    for (g, t) in got.iter().zip([-1.0, 0.5, 0.8, 1.5]) {
        assert!(((g - t) / t).abs() < 0.1, "{got:?}");
    }
}

#[test]
fn predict_writes_predictions_and_scores() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), &["--model", "nb", "--delta-policy", "free_scalar"]);
    let mut text = fs::read_to_string(dir.path().join("panel.csv")).unwrap();
    // Zero out the exposure of entity E00001 in the predicted period.
    let line = text.lines().find(|l| l.starts_with("E00001,6,")).unwrap().to_owned();
    let mut cells: Vec<&str> = line.split(',').collect();
    cells[2] = "0";
    cells[3] = "0";
    text = text.replace(&line, &cells.join(","));
    let panel = dir.path().join("edited.csv");
    fs::write(&panel, text).unwrap();

    let fit_dir = dir.path().join("fit");
    let out = run(&["fit", "--panel", path(&panel), "--horizon", "6", "--out", path(&fit_dir)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(&fit_dir.join("fit.json"));
    assert!(report["holdout"]["loglik"].as_f64().unwrap() < 0.0);

    let pred_dir = dir.path().join("pred");
    let out = run(&[
        "predict",
        "--panel",
        path(&panel),
        "--fit",
        path(&fit_dir.join("fit.json")),
        "--horizon",
        "6",
        "--out",
        path(&pred_dir),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let scores = json(&pred_dir.join("scores.json"));
    assert_eq!(scores["schema_version"], 1);
    assert_eq!(scores["n"], 2000);
    assert_eq!(scores["loglik"], report["holdout"]["loglik"]);

    let preds = fs::read_to_string(pred_dir.join("predictions.csv")).unwrap();
    assert!(preds.starts_with("entity_id,period,mean,latent_mean,claims,logpmf\n"));
    let first = preds.lines().find(|l| l.starts_with("E00001,")).unwrap();
    assert_eq!(first, format!("E00001,6,0,{},0,0", first.split(',').nth(3).unwrap()));

    let out =
        run(&["predict", "--panel", path(&panel), "--fit", path(&fit_dir.join("fit.json")), "--out", path(&pred_dir)]);
    assert_eq!(out.status.code(), Some(1));
}

fn moments_table(args: &[&str]) -> Vec<Vec<String>> {
    let out = run(&[&["moments"], args].concat());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap().lines().map(|l| l.split(',').map(String::from).collect()).collect()
}

#[test]
fn moments_tables() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, body: &str| {
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        p
    };

    let nb = write("nb.toml", "model = \"nb\"\na_anchor = 2.5\nrate = [0.5, 1.0, 2.0, 0.7]\nperiods = 4\n");
    let table = moments_table(&["--config", path(&nb)]);
    assert_eq!(table[0], ["t", "mean_theta", "var_theta", "mean_z", "var_z", "cov_z_lag1", "cov_z_lag2"]);
    assert_eq!(table.len(), 5);
    for row in &table[1..] {
        assert!((row[2].parse::<f64>().unwrap() - 0.4).abs() < 1e-12);
    }
    assert_eq!(table[4][5], "");

    let po = write(
        "po.toml",
        "model = \"poisson\"\ndelta = 0.6\nrate = [0.3, 0.5, 0.2, 0.6]\nexposure = [1, 1, 0, 1]\nperiods = 3\n",
    );
    let table = moments_table(&["--config", path(&po)]);
    let v1: f64 = table[2][2].parse().unwrap();
    for row in &table[2..] {
        assert!((row[2].parse::<f64>().unwrap() - v1).abs() < 1e-12 * v1);
    }

    let zero = write("zero.toml", "model = \"nb\"\ndelta = 0.0\ndelta_policy = \"free_scalar\"\nperiods = 4\n");
    let table = moments_table(&["--config", path(&zero), "--lags", "1,2,3"]);
    for row in &table[1..] {
        for cell in &row[5..] {
            assert!(cell.is_empty() || cell.parse::<f64>().unwrap() == 0.0);
        }
    }
}

#[test]
fn verify_shipped_configs_pass() {
    for name in ["verify_nb.toml", "verify_poisson.toml"] {
        let dir = tempfile::tempdir().unwrap();
        let out = run(&["verify", "--config", path(&configs().join(name)), "--out", path(dir.path())]);
        let report = json(&dir.path().join("verify.json"));
        assert_eq!(out.status.code(), Some(0), "{name}: {report}");
        assert_eq!(report["pass"], true);
        assert!(!report["cov_reports"].as_array().unwrap().is_empty());
        assert!(report["cov_reports"].as_array().unwrap().iter().all(|c| c["pass"] == true));

        let again = tempfile::tempdir().unwrap();
        run(&["verify", "--config", path(&configs().join(name)), "--out", path(again.path())]);
        assert_eq!(
            fs::read(dir.path().join("verify.json")).unwrap(),
            fs::read(again.path().join("verify.json")).unwrap()
        );
    }
}

#[test]
fn verify_reports_a_witness_for_an_expanding_poisson_step() {
    let out = run(&["verify", "--config", path(&configs().join("verify_poisson_expanding.toml"))]);
    assert_eq!(out.status.code(), Some(3));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["pass"], false);
    assert!(report["lift_refused"].is_string());
    let scans = report["gap_scans"].as_array().unwrap();
    assert!(!scans.is_empty());
    for scan in scans {
        assert_eq!(scan["pass"], false);
        let witness = scan["witness"].as_array().unwrap();
        assert!(witness[0].as_f64().unwrap() > 0.0 && witness[1].as_f64().unwrap() < -1e-6);
    }
}

#[test]
fn verify_with_no_lags_is_empty_but_valid() {
    let out = run(&[
        "verify",
        "--seed",
        "2",
        "--lags",
        "",
        "--verify-n",
        "1000",
        "--model",
        "poisson",
        "--delta-policy",
        "free_scalar",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["cov_reports"].as_array().unwrap().len(), 0);
    assert_eq!(report["lags"].as_array().unwrap().len(), 0);
    assert_eq!(report["pass"], true);
}

#[test]
fn fixed_one_policy_matches_random_effects() {
    let dir = tempfile::tempdir().unwrap();
    simulate(dir.path(), &["--model", "nb"]);
    let panel = dir.path().join("panel.csv");
    let a = run(&["fit", "--panel", path(&panel), "--model", "nb", "--delta-policy", "fixed_one"]);
    let b = run(&["fit", "--panel", path(&panel), "--model", "random_effects"]);
    let (mut a, mut b): (serde_json::Value, serde_json::Value) =
        (serde_json::from_slice(&a.stdout).unwrap(), serde_json::from_slice(&b.stdout).unwrap());
    for v in [&mut a, &mut b] {
        v["fitted"]["model"] = serde_json::Value::Null;
        v["fitted"]["delta_policy"] = serde_json::Value::Null;
    }
    assert_eq!(a, b);
}
