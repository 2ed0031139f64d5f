use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BASE: &str = "[function]\nname = \"sum\"\n[channel]\nK = 10\nM = 200\n[run]\neps = 0.5\ntrials = 500\n";

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn airfunc(args: &[&str], config: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_airfunc")).args(args).arg("--config").arg(config).output().unwrap()
}

fn data_lines(out: &Output) -> Vec<String> {
    String::from_utf8_lossy(&out.stdout).lines().filter(|l| !l.starts_with('#')).map(String::from).collect()
}

#[test]
fn bound_csv_schema() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), BASE);
    let out = airfunc(&["bound"], &cfg);
    assert_eq!(out.status.code(), Some(0));
    let lines = data_lines(&out);
    assert_eq!(lines[0], "K,M,P,sigma_F,sigma_N,eps,delta,eta,L,gamma1,gamma2,total_raw,total_clamped,M_required");
    let cells: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(cells[0], "10");
    assert_eq!(cells[12], "1.0");
    assert_eq!(cells[13], "560654");
    let gamma2: f64 = cells[10].parse().unwrap();
    assert!((gamma2 - 1.9968760732670654).abs() < 1e-12);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.starts_with("# airfunc bound\n# master_seed = 0\n"));
    assert!(text.contains("# trials = 500"));
}

#[test]
fn json_output_parses() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), BASE);
    let out = airfunc(&["simulate", "--format", "json"], &cfg);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["command"], "simulate");
    assert_eq!(v["rows"][0]["trials"], 500);
    assert_eq!(v["config"]["channel"]["K"], 10);
}

#[test]
fn repeated_runs_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), BASE);
    let a = airfunc(&["simulate", "--set", "run.master_seed=5"], &cfg);
    let b = airfunc(&["simulate", "--set", "run.master_seed=5"], &cfg);
    assert_eq!(a.stdout, b.stdout);
    let c = airfunc(&["simulate", "--set", "run.master_seed=6"], &cfg);
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn sweep_row_count() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{BASE}[sweep]\nM = [20, 40, 80]\ns_strategy = [\"all-min\", \"all-max\"]\n");
    let cfg = write_config(dir.path(), &text);
    let out = airfunc(&["sweep"], &cfg);
    assert_eq!(out.status.code(), Some(0));
    let lines = data_lines(&out);
    assert_eq!(lines.len(), 1 + 6);
    assert!(lines[1].ends_with(",all-min") && lines[2].ends_with(",all-max"));
}

#[test]
fn missing_k_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[function]\nname = \"sum\"\n[channel]\nM = 200\n[run]\neps = 0.5\n");
    let out = airfunc(&["bound"], &cfg);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("channel.K"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), BASE);
    assert_eq!(airfunc(&["bound", "--set", "channel.fading=\"cauchy\""], &cfg).status.code(), Some(1));
    assert_eq!(airfunc(&["maxcon-report", "--set", "function.name=\"average\""], &cfg).status.code(), Some(1));
    assert_eq!(airfunc(&["ml-cost"], &cfg).status.code(), Some(1));
    assert_eq!(airfunc(&["bound", "--out"], &cfg).status.code(), Some(1));
    let out = airfunc(&["bound", "--out", cfg.to_str().unwrap()], &cfg);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(std::fs::read_to_string(&cfg).unwrap(), BASE);
    let help = Command::new(env!("CARGO_BIN_EXE_airfunc")).arg("--help").output().unwrap();
    assert_eq!(help.status.code(), Some(0));
}

#[test]
fn out_file_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), BASE);
    let target = dir.path().join("result.csv");
    let out = airfunc(
        &["simulate", "--set", "channel.M=4", "--set", "run.trials=10", "--dump-trace", "--out", target.to_str().unwrap()],
        &cfg,
    );
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty());
    assert!(std::fs::read_to_string(&target).unwrap().contains("exceed_count"));
    let trace: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(trace["dither"]["m"], 4);
}

#[test]
fn ml_cost_with_model() {
    let dir = tempfile::tempdir().unwrap();
    let model = r#"{"kernels": ["gaussian:0.5", "linear"], "supports": [[0.1, 0.4], [0.7, 0.9]],
        "coefficients": [0.5, -0.25], "domains": [[0, 1], [0, 1]]}"#;
    std::fs::write(dir.path().join("model.json"), model).unwrap();
    let text = "[function]\nname = \"model\"\nmodel = \"model.json\"\n[channel]\nK = 2\nM = 100\n[run]\neps = 0.5\n\
                [loss]\nname = \"absolute:2\"\ntrials = 50\n";
    let cfg = write_config(dir.path(), text);
    let out = airfunc(&["ml-cost"], &cfg);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let lines = data_lines(&out);
    assert!(lines[0].starts_with("K,eps,delta,loss,lipschitz_B,loss_threshold"));
    assert!(lines[1].starts_with("2,0.5,0.05,absolute,2.0,1.0,"));
    assert_eq!(airfunc(&["bound"], &cfg).status.code(), Some(0));
}

#[test]
fn check_concentration_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{BASE}[concentration]\nsamples = 20000\n"));
    let out = airfunc(&["check-concentration"], &cfg);
    assert_eq!(out.status.code(), Some(0));
    let lines = data_lines(&out);
    assert!(lines.iter().skip(1).all(|l| l.ends_with(",true")));
    assert_eq!(lines.iter().filter(|l| l.starts_with("bernstein,")).count(), 4);
}
