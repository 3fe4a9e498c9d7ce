use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(format!("{name}.toml"))
}

fn qsens(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qsens")).args(args).arg("--out-dir").arg(out).output().expect("binary runs")
}

fn run_ok(args: &[&str], out: &Path) -> String {
    let o = qsens(args, out);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(format!("{name}.toml"));
    fs::write(&p, text).unwrap();
    p
}

/// Bundled config with a few keys replaced, written into `dir`.
fn variant(dir: &Path, base: &str, edit: impl FnOnce(&mut toml::Table)) -> PathBuf {
    let mut table: toml::Table = fs::read_to_string(bundled(base)).unwrap().parse().unwrap();
    edit(&mut table);
    write_config(dir, &format!("{base}_variant"), &toml::to_string(&table).unwrap())
}

fn section<'a>(t: &'a mut toml::Table, key: &str) -> &'a mut toml::Table {
    t.get_mut(key).and_then(|v| v.as_table_mut()).unwrap()
}

fn report(summary: &Value) -> &Value {
    assert_eq!(summary["status"], "ok", "{summary}");
    &summary["report"]
}

#[test]
fn free_resonant_run_is_bounded() {
    let dir = TempDir::new().unwrap();
    let p = bundled("free_resonant");
    let stdout = run_ok(&["run", p.to_str().unwrap()], dir.path());
    assert!(stdout.contains("verdict bounded"), "{stdout}");
    let s = json(&dir.path().join("free_resonant.json"));
    assert_eq!(s["schema_version"], 1);
    assert_eq!(s["kind"], "run");
    assert_eq!(report(&s)["verdict"], "bounded");
    assert!(dir.path().join("free_resonant.csv").exists());
    assert!(dir.path().join("free_resonant.svg").exists());
}

#[test]
fn cos_kick_run_grows_linearly() {
    let dir = TempDir::new().unwrap();
    let p = bundled("cos_kick");
    run_ok(&["run", p.to_str().unwrap(), "--no-plot"], dir.path());
    let s = json(&dir.path().join("cos_kick.json"));
    let r = report(&s);
    assert_eq!(r["verdict"], "polynomial");
    let degree = r["degree_hat"].as_f64().unwrap();
    assert!((degree - 1.0).abs() < 0.15, "degree {degree}");
    assert!(!dir.path().join("cos_kick.svg").exists());
}

#[test]
fn cat_kick_run_recovers_the_stretching_rate() {
    let dir = TempDir::new().unwrap();
    let p = bundled("cat_kick");
    run_ok(&["run", p.to_str().unwrap()], dir.path());
    let s = json(&dir.path().join("cat_kick.json"));
    let r = report(&s);
    assert_eq!(r["verdict"], "exponential");
    let rate = ((3.0 + 5f64.sqrt()) / 2.0).ln();
    let lambda = r["lambda_hat"].as_f64().unwrap();
    assert!((lambda - rate).abs() / rate < 0.02, "lambda {lambda}");
    let svg = fs::read_to_string(dir.path().join("cat_kick.svg")).unwrap();
    assert!(svg.contains("exp fit"));
}

#[test]
fn csv_has_the_documented_columns() {
    let dir = TempDir::new().unwrap();
    let p = bundled("cat_kick");
    run_ok(&["run", p.to_str().unwrap()], dir.path());
    let mut rdr = csv::Reader::from_path(dir.path().join("cat_kick.csv")).unwrap();
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(
        header,
        ["n", "x1_re", "x1_im", "x2_re", "x2_im", "p1_re", "p1_im", "p2_re", "p2_im", "delta", "leakage"]
    );
    assert_eq!(rdr.records().count(), 7);
}

#[test]
fn outputs_are_byte_identical_across_runs_and_worker_counts() {
    let p = bundled("cat_kick");
    let p = p.to_str().unwrap();
    let dirs: Vec<TempDir> = (0..3).map(|_| TempDir::new().unwrap()).collect();
    run_ok(&["run", p], dirs[0].path());
    run_ok(&["run", p, "--workers", "1"], dirs[1].path());
    run_ok(&["run", p, "--workers", "3"], dirs[2].path());
    for f in ["cat_kick.csv", "cat_kick.json", "cat_kick.svg"] {
        let a = fs::read(dirs[0].path().join(f)).unwrap();
        for d in &dirs[1..] {
            assert_eq!(a, fs::read(d.path().join(f)).unwrap(), "{f} differs");
        }
    }
}

#[test]
fn sweep_outputs_are_byte_identical_across_worker_counts() {
    let p = bundled("cat_kick");
    let p = p.to_str().unwrap();
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    run_ok(&["sweep", p, "--workers", "1"], a.path());
    run_ok(&["sweep", p, "--workers", "4"], b.path());
    let mut names: Vec<_> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 11);
    for n in names {
        assert_eq!(fs::read(a.path().join(&n)).unwrap(), fs::read(b.path().join(&n)).unwrap(), "{n:?} differs");
    }
}

#[test]
fn timing_is_only_recorded_on_request() {
    let dir = TempDir::new().unwrap();
    let p = bundled("cat_kick");
    run_ok(&["run", p.to_str().unwrap()], dir.path());
    assert!(json(&dir.path().join("cat_kick.json")).get("wall_time_s").is_none());
    run_ok(&["run", p.to_str().unwrap(), "--timing"], dir.path());
    assert!(json(&dir.path().join("cat_kick.json"))["wall_time_s"].as_f64().unwrap() >= 0.0);
}

#[test]
fn config_echo_reproduces_the_run() {
    let dir = TempDir::new().unwrap();
    let p = bundled("cat_kick");
    run_ok(&["run", p.to_str().unwrap()], dir.path());
    let first = json(&dir.path().join("cat_kick.json"));
    let echo: toml::Table = serde_json::from_value(first["config"].clone()).unwrap();
    let again = TempDir::new().unwrap();
    let q = write_config(again.path(), "echo", &toml::to_string(&echo).unwrap());
    run_ok(&["run", q.to_str().unwrap()], again.path());
    let second = json(&again.path().join("cat_kick.json"));
    assert_eq!(first["config"], second["config"]);
    assert_eq!(first["config_sha256"], second["config_sha256"]);
    assert_eq!(first["report"], second["report"]);
    assert_eq!(
        fs::read(dir.path().join("cat_kick.csv")).unwrap(),
        fs::read(again.path().join("cat_kick.csv")).unwrap()
    );
}

#[test]
fn invalid_config_names_the_offending_key() {
    let dir = TempDir::new().unwrap();
    type Edit = Box<dyn FnOnce(&mut toml::Table)>;
    let cases: [(&str, Edit, &str); 4] = [
        (
            "unknown key",
            Box::new(|t| {
                section(t, "run").insert("bogus".into(), 1.into());
            }),
            "run.bogus",
        ),
        (
            "bad type",
            Box::new(|t| {
                section(t, "lattice").insert("cutoff".into(), "big".into());
            }),
            "lattice.cutoff",
        ),
        (
            "zero steps",
            Box::new(|t| {
                section(t, "run").insert("steps".into(), 0.into());
            }),
            "run.steps",
        ),
        (
            "non-unimodular matrix",
            Box::new(|t| {
                let m = toml::Value::try_from([[2, 0], [0, 1]]).unwrap();
                section(t, "model").insert("matrix".into(), m);
            }),
            "model.matrix",
        ),
    ];
    for (what, edit, path) in cases {
        let cfg = variant(dir.path(), "cat_kick", edit);
        let o = qsens(&["run", cfg.to_str().unwrap()], dir.path());
        assert_eq!(o.status.code(), Some(2), "{what}");
        let err: Value = serde_json::from_slice(&o.stderr).unwrap_or_else(|_| panic!("{what}: stderr is JSON"));
        assert_eq!(err["error"]["kind"], "invalid_config", "{what}");
        assert_eq!(err["error"]["path"], path, "{what}: {err}");
    }
}

#[test]
fn missing_config_file_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let o = qsens(&["run", "/nonexistent/config.toml"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "io");
}

#[test]
fn leaking_run_reports_insufficient_data() {
    let dir = TempDir::new().unwrap();
    let cfg = variant(dir.path(), "cat_kick", |t| {
        section(t, "lattice").insert("cutoff".into(), 2.into());
    });
    let o = qsens(&["run", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(3));
    let err: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "insufficient_data");
    assert!(err["error"]["leakage"].is_array());
    let s = json(&dir.path().join("cat_kick.json"));
    assert_eq!(s["status"], "failed");
    assert_eq!(s["error"]["kind"], "insufficient_data");
    assert!(dir.path().join("cat_kick.csv").exists());
}

#[test]
fn cutoff_sweep_keeps_the_rate() {
    let dir = TempDir::new().unwrap();
    let p = bundled("cat_kick");
    run_ok(&["sweep", p.to_str().unwrap()], dir.path());
    let s = json(&dir.path().join("cat_kick_cutoff_sweep.json"));
    assert_eq!(s["kind"], "sweep");
    assert_eq!(s["parameter"], "lattice.cutoff");
    let lambdas: Vec<f64> = s["points"].as_array().unwrap().iter().map(|p| p["lambda_hat"].as_f64().unwrap()).collect();
    assert_eq!(lambdas.len(), 3);
    for l in &lambdas[1..] {
        assert!((l - lambdas[0]).abs() / lambdas[0] < 1e-3, "{lambdas:?}");
    }
    let mut rdr = csv::Reader::from_path(dir.path().join("cat_kick_cutoff_sweep.csv")).unwrap();
    let header: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(header, ["value", "lambda_hat", "degree_hat", "verdict", "status"]);
    assert_eq!(rdr.records().count(), 3);
}

#[test]
fn every_sweep_file_is_referenced_exactly_once() {
    let dir = TempDir::new().unwrap();
    let p = bundled("cat_kick");
    run_ok(&["sweep", p.to_str().unwrap()], dir.path());
    let top = "cat_kick_cutoff_sweep.json";
    let mut refs: BTreeMap<String, usize> = BTreeMap::new();
    let mut add = |v: &Value| {
        if let Some(s) = v.as_str() {
            *refs.entry(s.to_string()).or_default() += 1;
        }
    };
    let sweep = json(&dir.path().join(top));
    add(&sweep["aggregate"]);
    for point in sweep["points"].as_array().unwrap() {
        add(&point["summary"]);
        let s = json(&dir.path().join(point["summary"].as_str().unwrap()));
        add(&s["files"]["table"]);
        add(&s["files"]["plot"]);
    }
    let files: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != top)
        .collect();
    assert_eq!(files.len(), refs.len());
    for f in files {
        assert_eq!(refs.get(&f), Some(&1), "{f}");
    }
}

/// Small copy of the cos-kick design so the sweeps stay fast.
fn small_cos(dir: &Path) -> PathBuf {
    variant(dir, "cos_kick", |t| {
        section(t, "lattice").insert("cutoff".into(), 16.into());
        section(t, "run").insert("steps".into(), 12.into());
        section(t, "perturbation").insert("k_window".into(), 2.into());
    })
}

#[test]
fn fd_step_sweep_shows_second_order() {
    let dir = TempDir::new().unwrap();
    let cfg = small_cos(dir.path());
    run_ok(&["sweep", cfg.to_str().unwrap(), "--no-plot"], dir.path());
    let s = json(&dir.path().join("cos_kick_fd_step_sweep.json"));
    let order = &s["fd_order"][0];
    let ratio = order["ratio"].as_f64().unwrap();
    assert_eq!(order["expected"].as_f64().unwrap(), 4.0);
    assert!((ratio - 4.0).abs() < 0.4, "ratio {ratio}");
    for p in s["points"].as_array().unwrap() {
        assert!(p["fd_error"].as_f64().unwrap() > 0.0);
    }
}

#[test]
fn alpha_sweep_leaves_the_traces_unchanged() {
    let dir = TempDir::new().unwrap();
    let cfg = small_cos(dir.path());
    run_ok(&["sweep", cfg.to_str().unwrap(), "--no-plot"], dir.path());
    let s = json(&dir.path().join("cos_kick_alpha_sweep.json"));
    let points = s["points"].as_array().unwrap();
    assert_eq!(points.len(), 3);
    let delta = |i: usize| -> Vec<f64> {
        let mut rdr = csv::Reader::from_path(dir.path().join(format!("cos_kick_alpha_{i}.csv"))).unwrap();
        rdr.records().map(|r| r.unwrap()[9].parse().unwrap()).collect()
    };
    let base = delta(0);
    for i in 1..3 {
        for (a, b) in delta(i).iter().zip(&base) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1e-300), "alpha point {i}");
        }
        assert_eq!(points[i]["verdict"], points[0]["verdict"]);
    }
}

#[test]
fn sweep_without_blocks_is_rejected() {
    let dir = TempDir::new().unwrap();
    let p = bundled("free_resonant");
    let o = qsens(&["sweep", p.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn spectrum_reconstructs_the_cos_kick_traces() {
    let dir = TempDir::new().unwrap();
    let p = bundled("cos_kick");
    let stdout = run_ok(&["spectrum", p.to_str().unwrap()], dir.path());
    assert!(stdout.contains("reconstruction"), "{stdout}");
    let s = json(&dir.path().join("cos_kick_spectrum.json"));
    assert_eq!(s["kind"], "spectrum");
    assert_eq!(s["status"], "ok");
    assert!(s["reconstruction"]["max_rel_error"].as_f64().unwrap() < 1e-8);
    assert!(s["parseval"]["rel_diff"].as_f64().unwrap() < 1e-10);
    let fraction: Vec<f64> = s["profile"]["fraction"].as_array().unwrap().iter().map(|f| f.as_f64().unwrap()).collect();
    assert_eq!(fraction.len(), 8);
    assert!(fraction[0] > 0.9, "{fraction:?}");
    assert!(dir.path().join("cos_kick_spectrum_eigenphases.csv").exists());
    assert!(dir.path().join("cos_kick_spectrum.svg").exists());
}

#[test]
fn spectrum_of_the_cat_map_is_broad() {
    let dir = TempDir::new().unwrap();
    let p = bundled("cat_kick");
    run_ok(&["spectrum", p.to_str().unwrap()], dir.path());
    let s = json(&dir.path().join("cat_kick_spectrum.json"));
    assert!(s["reconstruction"]["max_rel_error"].as_f64().unwrap() < 1e-8);
    let fraction: Vec<f64> = s["profile"]["fraction"].as_array().unwrap().iter().map(|f| f.as_f64().unwrap()).collect();
    assert!(fraction[0] < 0.5, "{fraction:?}");
}

#[test]
fn spectrum_refuses_large_bases() {
    let dir = TempDir::new().unwrap();
    let cfg = variant(dir.path(), "cos_kick", |t| {
        t.remove("spectrum");
    });
    let o = qsens(&["spectrum", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(3));
    let err: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "too_large");
}

#[test]
fn spectrum_refuses_an_absorbing_cat_map() {
    let dir = TempDir::new().unwrap();
    let cfg = variant(dir.path(), "cat_kick", |t| {
        t.remove("spectrum");
    });
    let o = qsens(&["spectrum", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(3));
    let err: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert!(err["error"]["message"].as_str().unwrap().contains("sector"), "{err}");
}

#[test]
fn check_suite_passes() {
    let dir = TempDir::new().unwrap();
    let stdout = run_ok(&["check", "--seed", "11"], dir.path());
    assert!(!stdout.contains("FAIL"), "{stdout}");
}

#[test]
fn check_suite_catches_a_wrong_cat_orientation() {
    let dir = TempDir::new().unwrap();
    let o = qsens(&["check", "--corrupt-cat-orientation"], dir.path());
    assert_ne!(o.status.code(), Some(0));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.lines().any(|l| l.contains("FAIL") && l.contains("cat")), "{stdout}");
}
