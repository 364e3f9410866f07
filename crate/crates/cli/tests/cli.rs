use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use klsim_cli::output::read_csv;
use serde_json::Value;

fn klsim(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_klsim"))
        .args(args)
        .current_dir(cwd)
        .env_remove("KLSIM_THREADS")
        .env("RUST_LOG", "off")
        .output()
        .expect("binary runs")
}

fn error_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).unwrap_or_else(|e| {
        panic!("stderr is not JSON ({e}): {}", String::from_utf8_lossy(&out.stderr))
    })
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    fs::write(dir.join(name), text).unwrap();
    name.to_string()
}

#[test]
fn single_run_at_strong_repulsion_stays_below_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = klsim(&["run", "--preset", "single-run", "--ntot", "2", "--u", "100", "--out", "o"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = read_csv(&tmp.path().join("o/u100_n2.csv")).unwrap();
    assert_eq!(table.samples.len(), 200);
    let max = table.samples.iter().map(|o| o.n_sf).fold(f64::MIN, f64::max);
    assert!(max > 0.5 && max < 2.0, "n_SF max {max}");
    let summary: Value = serde_json::from_slice(&fs::read(tmp.path().join("o/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["schema"], "klsim-summary/1");
    assert!(summary["runs"][0]["n_sf_max"].as_f64().unwrap() >= max);
}

#[test]
fn minimal_config_uses_effective_hopping_rates() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", "preset = \"single-run\"\nn_tot = 2\nu = 100\n");
    let out = klsim(&["run", "--config", &cfg, "--out", "o"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table = read_csv(&tmp.path().join("o/u100_n2.csv")).unwrap();
    let c_eff = table.params.c_eff();
    assert_eq!(c_eff, 0.01);
    assert_eq!(table.params.gamma_s, c_eff);
    assert_eq!(table.params.gamma_d, c_eff);
}

#[test]
fn empty_sweep_axis_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", "preset = \"rescaling-collapse\"\n[sweep]\nu = []\n");
    let out = klsim(&["sweep", "--config", &cfg, "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let err = error_json(&out);
    assert_eq!(err["schema"], "klsim-error/1");
    assert_eq!(err["field"], "u");
    assert!(!tmp.path().join("o/u10_n2.csv").exists());

    let out = klsim(&["sweep", "--ntot", "", "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["field"], "n_tot");
}

#[test]
fn negative_repulsion_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", "u = -5\n");
    let out = klsim(&["run", "--config", &cfg, "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let err = error_json(&out);
    assert_eq!(err["kind"], "usage");
    assert_eq!(err["field"], "u");

    let out = klsim(&["run", "--u", "-5", "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["field"], "u");
}

#[test]
fn unknown_key_lists_valid_keys() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", "u = 10\ntemperature_f = 300\n");
    let out = klsim(&["run", "--config", &cfg], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let err = error_json(&out);
    let msg = err["message"].as_str().unwrap();
    assert!(msg.contains("temperature_f"), "{msg}");
    for key in ["preset", "n_tot", "u", "backend", "tau_max", "sweep"] {
        assert!(msg.contains(&format!("`{key}`")), "{key} missing from {msg}");
    }
    assert_eq!(err["line"], 2);
}

#[test]
fn syntax_errors_carry_line_and_column() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", "u = 10\nn_tot = = 3\n");
    let out = klsim(&["run", "--config", &cfg], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let err = error_json(&out);
    assert_eq!(err["kind"], "parse");
    assert_eq!(err["line"], 2);
    assert!(err["column"].as_u64().unwrap() > 1);
}

#[test]
fn bad_flags_and_thread_caps_are_usage_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = klsim(&["run", "--no-such-flag"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["kind"], "usage");

    let out = klsim(&["run", "--preset", "nope"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["field"], "preset");

    let out = klsim(&["run", "--backend", "euler"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["field"], "backend");

    let out = Command::new(env!("CARGO_BIN_EXE_klsim"))
        .args(["run", "--out", "o"])
        .current_dir(tmp.path())
        .env("KLSIM_THREADS", "zero")
        .env("RUST_LOG", "off")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["field"], "KLSIM_THREADS");

    let out = klsim(&["run", "--u", "10,100", "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["field"], "u");
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    for dir in ["a", "b"] {
        let out = klsim(&["run", "--u", "10", "--ntot", "2", "--out", dir], tmp.path());
        assert!(out.status.success());
    }
    for file in ["u10_n2.csv", "summary.json", "config.toml", "plot.gp"] {
        let a = fs::read(tmp.path().join("a").join(file)).unwrap();
        let b = fs::read(tmp.path().join("b").join(file)).unwrap();
        assert!(a == b, "{file} differs");
    }
}

#[test]
fn analyze_reproduces_the_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "c.toml",
        "preset = \"occupancy-saturation\"\ntau_max = 50\ngrid_points = 60\n[sweep]\nu = [10, 100]\nn_tot = [1, 2]\n",
    );
    let out = klsim(&["sweep", "--config", &cfg, "--out", "o"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = tmp.path().join("o");
    let before = fs::read(dir.join("summary.json")).unwrap();
    let saturation = fs::read(dir.join("saturation.csv")).unwrap();
    fs::remove_file(dir.join("summary.json")).unwrap();
    fs::remove_file(dir.join("saturation.csv")).unwrap();
    let out = klsim(&["analyze", "--out", "o"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(fs::read(dir.join("summary.json")).unwrap(), before);
    assert_eq!(fs::read(dir.join("saturation.csv")).unwrap(), saturation);
    let summary: Value = serde_json::from_slice(&before).unwrap();
    assert_eq!(summary["runs"].as_array().unwrap().len(), 4);
}

#[test]
fn interrupted_sweeps_resume_by_skipping_cells() {
    let tmp = tempfile::tempdir().unwrap();
    let args = ["sweep", "--u", "10,100", "--ntot", "2", "--out", "o"];
    assert!(klsim(&args, tmp.path()).status.success());
    let dir = tmp.path().join("o");
    let kept = dir.join("u10_n2.csv");
    let redo = dir.join("u100_n2.csv");
    let original = fs::read_to_string(&redo).unwrap();

    // a reused cell is not rewritten: respell the first time stamp in plain
    // decimal notation (same value, different bytes) and keep the marker
    let clean = fs::read_to_string(&kept).unwrap();
    let mut lines: Vec<String> = clean.lines().map(String::from).collect();
    let (t, rest) = lines[4].split_once(',').unwrap();
    let marker = format!("{},", t.parse::<f64>().unwrap());
    lines[4] = format!("{marker}{rest}");
    let marked = lines.join("\n") + "\n";
    assert_ne!(marked, clean);
    fs::write(&kept, &marked).unwrap();
    fs::remove_file(&redo).unwrap();
    assert!(klsim(&args, tmp.path()).status.success());
    assert_eq!(fs::read_to_string(&kept).unwrap(), marked);
    assert_eq!(fs::read_to_string(&redo).unwrap(), original);

    // changed settings invalidate the cell
    assert!(klsim(&["sweep", "--u", "10,100", "--ntot", "2", "--tol", "1e-9", "--out", "o"], tmp.path())
        .status
        .success());
    let redone = fs::read_to_string(&kept).unwrap();
    assert!(!redone.contains(&format!("\n{marker}")));
    assert!(redone.lines().nth(1).unwrap().contains(" rel_tol=1e-9 "));
    let leftovers: Vec<_> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.contains(".tmp"))
        .collect();
    assert!(leftovers.is_empty(), "{leftovers:?}");
}

#[test]
fn integration_failure_keeps_partial_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", "u = 10\nbackend = \"adaptive-explicit\"\nmax_steps = 40\n");
    let out = klsim(&["run", "--config", &cfg, "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(3));
    let err = error_json(&out);
    assert_eq!(err["kind"], "integration");
    let partial = err["partial_outputs"][0].as_str().unwrap();
    assert!(partial.ends_with("u10_n2.partial.csv"));
    let dir = tmp.path().join("o");
    assert!(!dir.join("u10_n2.csv").exists());
    let table = read_csv(&dir.join("u10_n2.partial.csv")).unwrap();
    assert!(matches!(table.status, klsim_cli::output::RunStatus::Failed(_)));
    assert!(table.samples.len() < 200);
    let summary: Value = serde_json::from_slice(&fs::read(dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["status"], "partial");
    let on_disk: Value = serde_json::from_slice(&fs::read(dir.join("error.json")).unwrap()).unwrap();
    assert_eq!(on_disk, err);
}

#[test]
fn checkpoint_restart_continues_the_trajectory() {
    let tmp = tempfile::tempdir().unwrap();
    let short = write(tmp.path(), "short.toml", "u = 10\ntau_max = 5\ngrid_points = 40\ngrid_decades = 3\n");
    let long = write(tmp.path(), "long.toml", "u = 10\ntau_max = 50\ngrid_points = 40\ngrid_decades = 3\n");
    assert!(klsim(&["run", "--config", &short, "--out", "a", "--checkpoint"], tmp.path()).status.success());
    let ck = fs::read(tmp.path().join("a/u10_n2.klsim")).unwrap();
    assert!(ck.starts_with(b"KLSIM1"));
    assert!(klsim(&["run", "--config", &long, "--out", "b", "--from", "a/u10_n2.klsim"], tmp.path())
        .status
        .success());
    assert!(klsim(&["run", "--config", &long, "--out", "c"], tmp.path()).status.success());
    let resumed = read_csv(&tmp.path().join("b/u10_n2.csv")).unwrap();
    let direct = read_csv(&tmp.path().join("c/u10_n2.csv")).unwrap();
    assert!(resumed.samples[0].tau > 5.0 - 1e-9);
    for r in &resumed.samples {
        let d = direct.samples.iter().find(|d| (d.tau - r.tau).abs() < 1e-9 * r.tau).expect("grid point");
        assert!((d.n_sf - r.n_sf).abs() < 1e-7, "tau {}: {} vs {}", r.tau, d.n_sf, r.n_sf);
    }

    let other = write(tmp.path(), "other.toml", "u = 10\nn_tot = 3\n");
    let out = klsim(&["run", "--config", &other, "--out", "d", "--from", "a/u10_n2.klsim"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["field"], "from");
}

#[test]
fn lag_fixture_recovers_the_asymptote() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "c.toml",
        "preset = \"lag-analysis\"\n[fixture]\nn_tot = [9, 10, 11, 12, 13, 14]\na = 195.57\nb = -74.23\nc_sat = 8.5\n",
    );
    let out = klsim(&["sweep", "--config", &cfg, "--out", "o"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: Value = serde_json::from_slice(&fs::read(tmp.path().join("o/summary.json")).unwrap()).unwrap();
    let fit = &summary["lags"][0]["fit"];
    assert_eq!(fit["converged"], true);
    assert!((fit["asymptote"].as_f64().unwrap() - 121.34).abs() < 1e-4);
    assert!((fit["a"].as_f64().unwrap() - 195.57).abs() < 1e-4);
    assert!((fit["b"].as_f64().unwrap() + 74.23).abs() < 1e-4);
    assert!((fit["c_sat"].as_f64().unwrap() - 8.5).abs() < 1e-4);
    assert_eq!(summary["lags"][0]["increasing_and_concave"], true);
    let seconds = summary["physical"]["conversions"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["label"].as_str().unwrap().starts_with("asymptote"))
        .unwrap()["seconds"]
        .as_f64()
        .unwrap();
    assert!((seconds - 1.2134e-8).abs() < 1e-14);
}

#[test]
fn seeded_fixture_noise_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let body = "preset = \"lag-analysis\"\n[fixture]\nn_tot = [9, 10, 11, 12, 13, 14]\na = 195.57\nb = -74.23\nc_sat = 8.5\nnoise = 0.01\n";
    let a = write(tmp.path(), "a.toml", &format!("seed = 3\n{body}"));
    let b = write(tmp.path(), "b.toml", &format!("seed = 4\n{body}"));
    assert!(klsim(&["sweep", "--config", &a, "--out", "a1"], tmp.path()).status.success());
    assert!(klsim(&["sweep", "--config", &a, "--out", "a2"], tmp.path()).status.success());
    assert!(klsim(&["sweep", "--config", &b, "--out", "b"], tmp.path()).status.success());
    let read = |d: &str, f: &str| fs::read(tmp.path().join(d).join(f)).unwrap();
    assert_eq!(read("a1", "fixture.csv"), read("a2", "fixture.csv"));
    assert_eq!(read("a1", "summary.json"), read("a2", "summary.json"));
    assert_ne!(read("a1", "fixture.csv"), read("b", "fixture.csv"));
}

#[test]
fn estimate_rates_prints_conversions() {
    let tmp = tempfile::tempdir().unwrap();
    let out = klsim(&["estimate-rates", "--tau", "121"], tmp.path());
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["conversions"][0][1].as_f64().unwrap(), 1.21e-8);
    let rate = v["rate"].as_f64().unwrap();
    assert!((rate - 1.1e13).abs() < 0.01 * 1.1e13);

    let out = klsim(&["estimate-rates", "--temperature", "0"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["field"], "temperature");
}

#[test]
fn plot_script_uses_log_time_axis() {
    let tmp = tempfile::tempdir().unwrap();
    assert!(klsim(&["run", "--out", "o"], tmp.path()).status.success());
    let gp = fs::read_to_string(tmp.path().join("o/plot.gp")).unwrap();
    assert!(gp.contains("set logscale x"));
    assert!(gp.contains("\"u10_n2.csv\" using \"tau\":\"n_SF\""));
}
