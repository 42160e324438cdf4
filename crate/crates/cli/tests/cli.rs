use std::f64::consts::{PI, TAU};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use tempfile::TempDir;

fn lipro(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lipro"))
        .current_dir(dir)
        .env_remove("LIPRO_SEED")
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "{e}: stdout {:?}, stderr {:?}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn write(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, serde_json::to_string(v).unwrap()).unwrap();
    p
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// `C_n` with circumference `len` as a space document.
fn cycle(n: usize, len: f64) -> Value {
    let h = len / n as f64;
    let dist: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let k = (i as i64 - j as i64).unsigned_abs() as usize;
                    k.min(n - k) as f64 * h
                })
                .collect()
        })
        .collect();
    json!({"schema": 1, "points": (0..n).collect::<Vec<_>>(), "dist": dist})
}

fn dirac(space: &Value, node: usize, m: usize) -> Value {
    json!({"schema": 1, "space": space, "grid": {"T": 1.0, "m": m}, "atoms": [{"path": vec![node; m + 1], "w": "1"}]})
}

/// Diracs at constant paths three edges apart on `C_12` of circumference 2.
fn rotation_pair(dir: &Path) -> (PathBuf, PathBuf) {
    let c12 = cycle(12, 2.0);
    (write(dir, "a.json", &dirac(&c12, 0, 2)), write(dir, "b.json", &dirac(&c12, 3, 2)))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn dl_of_a_space_with_itself_is_zero() {
    let dir = TempDir::new().unwrap();
    let x = write(dir.path(), "x.json", &cycle(6, 6.0));
    let out = lipro(dir.path(), &["dl", s(&x), s(&x)]);
    assert_eq!(code(&out), 0);
    let v = stdout_json(&out);
    assert_eq!(v["value"], 0.0);
    assert_eq!(v["method"], "exhaustive");
    assert_eq!(v["witness"].as_array().unwrap().len(), 6);
}

#[test]
fn dl_reports_scaling_and_cardinality() {
    let dir = TempDir::new().unwrap();
    let x = write(dir.path(), "x.json", &cycle(5, 5.0));
    let y = write(dir.path(), "y.json", &cycle(5, 10.0));
    let z = write(dir.path(), "z.json", &cycle(4, 4.0));
    let v = stdout_json(&lipro(dir.path(), &["dl", s(&x), s(&y), "--exhaustive-limit", "3", "--jobs", "2"]));
    assert!((v["value"].as_f64().unwrap() - 2.0 * 2f64.ln()).abs() < 1e-12);
    assert_eq!(v["method"], "branch-and-bound");
    let v = stdout_json(&lipro(dir.path(), &["dl", s(&x), s(&z)]));
    assert_eq!(v["value"], Value::Null);
    assert_eq!(v["method"], "cardinality");
}

#[test]
fn rotation_certificate_is_accepted() {
    let dir = TempDir::new().unwrap();
    let (a, b) = rotation_pair(dir.path());
    let map: Vec<usize> = (0..12).map(|k| (k + 3) % 12).collect();
    let cert = write(dir.path(), "cert.json", &json!({"schema": 1, "map": map, "eps": 0.0, "delta": 0.0}));
    let out = lipro(dir.path(), &["verify", s(&cert), s(&a), s(&b)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    assert_eq!(v["accepted"], true);
    assert_eq!(v["defect"], 0.0);

    // the Prokhorov distance itself is the three-edge distance
    let v = stdout_json(&lipro(dir.path(), &["dp", s(&a), s(&b)]));
    assert!((v["value"].as_f64().unwrap() - 0.5).abs() < 1e-12);
}

#[test]
fn rejected_certificate_exits_3_and_still_writes() {
    let dir = TempDir::new().unwrap();
    let (a, b) = rotation_pair(dir.path());
    let identity: Vec<usize> = (0..12).collect();
    let cert = write(dir.path(), "id.json", &json!({"map": identity, "eps": 0.0, "delta": 0.1}));
    let report = dir.path().join("report.json");
    let out = lipro(dir.path(), &["verify", s(&cert), s(&a), s(&b), "--out", s(&report)]);
    assert_eq!(code(&out), 3);
    assert_eq!(read_json(&report)["accepted"], false);
    let manifest = read_json(&dir.path().join("report.json.manifest.json"));
    assert_eq!(manifest["command"], "verify");
    assert!(manifest["check_failure"].as_str().unwrap().contains("rejected"));
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 3);
}

#[test]
fn dp_oracle_agrees_on_five_atoms() {
    let dir = TempDir::new().unwrap();
    let space = json!({"points": ["a", "b", "c", "d"], "dist": [[0, 0.3, 0.7, 1.2], [0.3, 0, 0.5, 0.9], [0.7, 0.5, 0, 0.6], [1.2, 0.9, 0.6, 0]]});
    let grid = json!({"T": 1.0, "m": 1});
    let p = json!({"space": space, "grid": grid, "atoms": [
        {"path": [0, 1], "w": "1/5"}, {"path": [1, 2], "w": "1/10"}, {"path": [2, 2], "w": "3/10"},
        {"path": [3, 0], "w": "1/4"}, {"path": [0, 3], "w": "3/20"}
    ]});
    let q = json!({"space": space, "grid": grid, "atoms": [
        {"path": [1, 1], "w": "1/3"}, {"path": [2, 3], "w": "1/6"}, {"path": [3, 3], "w": "1/12"},
        {"path": [0, 0], "w": "1/4"}, {"path": [2, 0], "w": "1/6"}
    ]});
    let (p, q) = (write(dir.path(), "p.json", &p), write(dir.path(), "q.json", &q));
    let out = lipro(dir.path(), &["dp", s(&p), s(&q), "--oracle"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    let (flow, oracle) = (v["value"].as_f64().unwrap(), v["oracle"].as_f64().unwrap());
    assert!((flow - oracle).abs() < 1e-9, "{flow} vs {oracle}");
    assert!(flow > 0.0 && flow <= 1.0);
    assert!(v["coupling"]["entries"].is_array());
    assert!(v["exact_transported"].is_string());
}

#[test]
fn dlp_modes_and_composition() {
    let dir = TempDir::new().unwrap();
    let (a, b) = rotation_pair(dir.path());

    // twelve points exceed the exact search limit
    let out = lipro(dir.path(), &["dlp", s(&a), s(&b)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("limit"));

    let identity: Vec<usize> = (0..12).collect();
    let maps = write(dir.path(), "maps.json", &json!({"schema": 1, "maps": [identity]}));
    let cert = dir.path().join("ab.cert.json");
    let out = lipro(dir.path(), &["dlp", s(&a), s(&b), "--maps", s(&maps), "--certificate", s(&cert)]);
    assert_eq!(code(&out), 0);
    let v = stdout_json(&out);
    assert_eq!(v["mode"], "upper-bound");
    assert_eq!(v["value"], 0.0);

    let c12 = cycle(12, 2.0);
    let c = write(dir.path(), "c.json", &dirac(&c12, 5, 2));
    let bc = dir.path().join("bc.cert.json");
    assert_eq!(
        code(&lipro(dir.path(), &["dlp", s(&b), s(&c), "--maps", s(&maps), "--certificate", s(&bc)])),
        0
    );
    let composed = dir.path().join("ac.cert.json");
    let out = lipro(dir.path(), &["compose", s(&cert), s(&bc), "--out", s(&composed)]);
    assert_eq!(code(&out), 0);
    assert_eq!(read_json(&composed)["schema"], 1);
    let out = lipro(dir.path(), &["verify", s(&composed), s(&a), s(&c)]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout_json(&out)["accepted"], true);
}

#[test]
fn dlp_exact_on_small_instances() {
    let dir = TempDir::new().unwrap();
    let c4 = cycle(4, 4.0);
    let a = write(dir.path(), "a.json", &dirac(&c4, 0, 1));
    let b = write(dir.path(), "b.json", &dirac(&c4, 2, 1));
    let out = lipro(dir.path(), &["dlp", s(&a), s(&b), "--exact", "--jobs", "1"]);
    assert_eq!(code(&out), 0);
    let v = stdout_json(&out);
    assert_eq!(v["mode"], "exact");
    assert_eq!(v["value"], 0.0);
    assert_eq!(v["certificate"]["schema"], 1);
}

#[test]
fn usage_errors_exit_64() {
    let dir = TempDir::new().unwrap();
    assert_eq!(code(&lipro(dir.path(), &["frobnicate"])), 64);
    assert_eq!(code(&lipro(dir.path(), &["dl", "only-one.json"])), 64);
    assert_eq!(code(&lipro(dir.path(), &["mosco", "--alpha", "fast"])), 64);
    assert_eq!(code(&lipro(dir.path(), &[])), 64);
    assert_eq!(code(&lipro(dir.path(), &["--help"])), 0);
    assert_eq!(code(&lipro(dir.path(), &["--version"])), 0);
}

#[test]
fn invalid_inputs_exit_2() {
    let dir = TempDir::new().unwrap();
    let bad = write(dir.path(), "bad.json", &json!({"points": [0, 1], "dist": [[0, 1], [2, 0]]}));
    let out = lipro(dir.path(), &["dl", s(&bad), s(&bad)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.json"));
    assert_eq!(code(&lipro(dir.path(), &["dl", "missing.json", "missing.json"])), 2);
    let future = write(dir.path(), "future.json", &json!({"schema": 2, "points": [0], "dist": [[0]]}));
    assert_eq!(code(&lipro(dir.path(), &["dl", s(&future), s(&future)])), 2);
    let out = lipro(dir.path(), &["mosco", "--resolutions", "10", "--limit", "64"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn simulate_is_reproducible_and_seed_can_be_overridden() {
    let dir = TempDir::new().unwrap();
    let args = ["simulate", "--nodes", "32", "--T", "1", "--m", "10", "--count", "500", "--seed", "7"];
    let run = |out: &str, jobs: &str, env_seed: Option<&str>| {
        let mut cmd = Command::new(env!("CARGO_BIN_EXE_lipro"));
        cmd.current_dir(dir.path()).env_remove("LIPRO_SEED");
        if let Some(seed) = env_seed {
            cmd.env("LIPRO_SEED", seed);
        }
        let status = cmd.args(args).args(["--jobs", jobs, "--out", out]).status().unwrap();
        assert!(status.success());
        std::fs::read(dir.path().join(out)).unwrap()
    };
    let one = run("one.json", "1", None);
    let four = run("four.json", "4", None);
    assert_eq!(one, four);
    let over = run("over.json", "2", Some("8"));
    assert_ne!(one, over);
    assert_eq!(read_json(&dir.path().join("over.json.manifest.json"))["seed"], 8);

    let m = read_json(&dir.path().join("one.json.manifest.json"));
    assert_eq!(m["seed"], 7);
    assert_eq!(m["params"]["count"], 500);
    assert_eq!(m["version"], env!("CARGO_PKG_VERSION"));
    let digest = format!("{:x}", Sha256::digest(&one));
    assert_eq!(m["outputs"][0]["sha256"], digest.as_str());

    let sample = read_json(&dir.path().join("one.json"));
    assert_eq!(sample["paths"].as_array().unwrap().len(), 500);
    assert_eq!(sample["paths"][0].as_array().unwrap().len(), 11);

    // a sample is accepted wherever a measure is
    let p = dir.path().join("one.json");
    let v = stdout_json(&lipro(dir.path(), &["dp", s(&p), s(&p), "--no-coupling"]));
    assert_eq!(v["value"], 0.0);
    assert!(v.get("coupling").is_none());
}

#[test]
fn manifest_records_input_digests() {
    let dir = TempDir::new().unwrap();
    let x = write(dir.path(), "x.json", &cycle(5, 5.0));
    let out_path = dir.path().join("dl.json");
    let manifest = dir.path().join("custom.json");
    let out = lipro(dir.path(), &["dl", s(&x), s(&x), "--out", s(&out_path), "--manifest", s(&manifest)]);
    assert_eq!(code(&out), 0);
    assert!(out.stdout.is_empty());
    let m = read_json(&manifest);
    let digest = format!("{:x}", Sha256::digest(std::fs::read(&x).unwrap()));
    for input in m["inputs"].as_array().unwrap() {
        assert_eq!(input["sha256"], digest.as_str());
    }
    assert_eq!(m["command"], "dl");
    assert_eq!(m["params"]["exhaustive_limit"], 8);
    assert_eq!(m["check_failure"], Value::Null);
    assert!(!dir.path().join("dl.json.manifest.json").exists());
}

#[test]
fn mosco_and_fdd_tables() {
    let dir = TempDir::new().unwrap();
    let out = lipro(
        dir.path(),
        &["mosco", "--resolutions", "8,16,32", "--limit", "64", "--modes", "1,2", "--stretch", "--out", "m.csv", "--svg", "m.svg"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("m.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "n,mode,error");
    assert_eq!(lines.len(), 7);
    let svg = std::fs::read_to_string(dir.path().join("m.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("mode 2"));
    let m = read_json(&dir.path().join("m.csv.manifest.json"));
    assert_eq!(m["outputs"].as_array().unwrap().len(), 2);

    let elliptic = lipro(dir.path(), &["mosco", "--family", "elliptic", "--band", "1.5", "--resolutions", "8,16,32", "--limit", "64"]);
    assert_eq!(code(&elliptic), 0, "{}", String::from_utf8_lossy(&elliptic.stderr));

    let obs = write(
        dir.path(),
        "obs.json",
        &json!({"schema": 1, "observables": [{"constant": 1, "cos": [[1, 0.5]]}, {"constant": 1, "cos": [[2, 0.5]]}]}),
    );
    let out = lipro(dir.path(), &["fdd", "--resolutions", "8,16,32", "--limit", "64", "--times", "0.2,0.5", "--obs", s(&obs)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("n,value,limit_value,error,density_norm"));
    assert_eq!(text.lines().count(), 4);

    let short = write(dir.path(), "short.json", &json!({"observables": [[1.0, 2.0]]}));
    assert_eq!(code(&lipro(dir.path(), &["fdd", "--times", "0.2", "--obs", s(&short)])), 2);
}

#[test]
fn tightness_and_converge() {
    let dir = TempDir::new().unwrap();
    let bound = write(
        dir.path(),
        "bound.json",
        &json!({"schema": 1, "Cprime": 0.4, "nu": 3.0, "tau": 1.0,
                "family": {"n": 1, "K": 0.0, "V": TAU, "D": PI, "Vprime": TAU, "Lambda": 1.0}}),
    );
    let out = lipro(dir.path(), &["tightness", "--bound", s(&bound), "--lambda-grid", "0.1,0.001"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().next().unwrap(), "lambda,bound");

    assert_eq!(
        code(&lipro(dir.path(), &["simulate", "--nodes", "64", "--m", "100", "--count", "400", "--seed", "3", "--out", "p.json"])),
        0
    );
    let out = lipro(
        dir.path(),
        &["tightness", "--bound", "bound.json", "--lambda-grid", "0.1,0.05", "--paths", "p.json", "--out", "t.csv", "--svg", "t.svg"],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    assert!(csv.starts_with("lambda,bound,empirical,ci_low,ci_high,within"));
    assert!(csv.lines().skip(1).all(|l| l.ends_with("true")));

    // λ beyond τ is rejected
    assert_eq!(code(&lipro(dir.path(), &["tightness", "--bound", "bound.json", "--lambda-grid", "2"])), 2);

    let out = lipro(dir.path(), &["converge", "--resolutions", "8,16", "--count", "2000", "--m", "10"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let values: Vec<f64> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(4).unwrap().parse().unwrap())
        .collect();
    assert!(values[1] < values[0]);
    assert_eq!(code(&lipro(dir.path(), &["converge", "--family", "elliptic", "--count", "10"])), 2);

    let (a, b) = rotation_pair(dir.path());
    let out = lipro(dir.path(), &["converge", "--target", s(&b), "--sequence", &format!("{},{}", s(&a), s(&b))]);
    assert_eq!(code(&out), 0);
    let rows: Vec<String> = String::from_utf8(out.stdout).unwrap().lines().map(String::from).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[2].starts_with("1,0.0,0.0,0.0,0.0"));
}

#[test]
fn cauchy_limit_of_scaled_spaces() {
    let dir = TempDir::new().unwrap();
    let base = cycle(4, 4.0);
    let scaled = |k: f64| {
        let d: Vec<Vec<f64>> = base["dist"]
            .as_array()
            .unwrap()
            .iter()
            .map(|r| r.as_array().unwrap().iter().map(|x| x.as_f64().unwrap() * k).collect())
            .collect();
        json!({"points": [0, 1, 2, 3], "dist": d})
    };
    let step = 0.05f64;
    let input = json!({
        "schema": 1,
        "spaces": [base, scaled(step.exp()), scaled((2.0 * step).exp())],
        "links": [[0, 1, 2, 3], [0, 1, 2, 3]],
        "defects": [2.0 * step + 1e-12, 2.0 * step + 1e-12],
        "tail": 0.0
    });
    let path = write(dir.path(), "cauchy.json", &input);
    let out = lipro(dir.path(), &["cauchy-limit", s(&path)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v = stdout_json(&out);
    let d01 = v["limit"]["dist"][0][1].as_f64().unwrap();
    assert!((d01 - (2.0 * step).exp()).abs() < 1e-12);
    assert_eq!(v["eps"].as_array().unwrap().len(), 3);
}
