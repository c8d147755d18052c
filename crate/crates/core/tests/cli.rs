use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use proxytest::dataset::{Dataset, VarKind};
use proxytest::harness::Scenario;
use proxytest::scenarios::Hypothesis;
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_proxytest"));
    c.env_remove("PROXYTEST_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn cell(col: &proxytest::dataset::Column, i: usize) -> String {
    match col.kind {
        VarKind::Continuous => col.values[i].to_string(),
        _ => col.levels[col.values[i] as usize].clone(),
    }
}

fn write_csv(dir: &Path, name: &str, d: &Dataset) -> PathBuf {
    let path = dir.join(name);
    let mut w = csv::Writer::from_path(&path).unwrap();
    let with_z = d.z.is_some();
    let mut header = vec!["X", "Y", "W"];
    if with_z {
        header.push("Z");
    }
    w.write_record(&header).unwrap();
    for i in 0..d.n() {
        let mut row = vec![cell(&d.x, i), cell(&d.y, i), cell(&d.w, i)];
        if let Some(z) = &d.z {
            row.push(cell(z, i));
        }
        w.write_record(&row).unwrap();
    }
    w.flush().unwrap();
    path
}

fn schema(name: &str) -> jsonschema::Validator {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../schema").join(name);
    let s: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    jsonschema::validator_for(&s).unwrap()
}

fn assert_valid(v: &jsonschema::Validator, doc: &Value) {
    let errors: Vec<String> = v.iter_errors(doc).map(|e| format!("{} at {}", e, e.instance_path)).collect();
    assert!(errors.is_empty(), "schema violations: {errors:?}");
}

fn strip_runtime(v: &mut Value) {
    if let Some(o) = v.as_object_mut() {
        o.remove("runtime_ms");
    }
}

#[test]
fn strong_effect_rejects_with_exit_two() {
    let dir = TempDir::new().unwrap();
    let d = Scenario::LinearMoment { gamma_x: 1.0 }.generate(400, 3).unwrap();
    let path = write_csv(dir.path(), "h1.csv", &d);
    let out = run(&["test", "--input", path.to_str().unwrap(), "--x", "X", "--y", "Y", "--w", "W", "--b", "199", "--seed", "7"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_valid(&schema("test-report.schema.json"), &v);
    assert!(v["p_value"].as_f64().unwrap() < 0.05);
    assert_eq!(v["reject"], Value::Bool(true));
    assert_eq!(v["K"], 100);
    assert_eq!(v["B"], 199);
}

#[test]
fn repeated_runs_match_except_runtime() {
    let dir = TempDir::new().unwrap();
    let d = Scenario::LinearMoment { gamma_x: 0.0 }.generate(150, 5).unwrap();
    let path = write_csv(dir.path(), "d.csv", &d);
    let args = ["test", "--input", path.to_str().unwrap(), "--x", "X", "--y", "Y", "--w", "W", "--b", "99", "--seed", "7"];
    let a = bin().args(args).args(["--threads", "1"]).output().unwrap();
    let b = bin().args(args).args(["--threads", "4"]).output().unwrap();
    let code = a.status.code().unwrap();
    assert!(code == 0 || code == 2);
    assert_eq!(a.status.code(), b.status.code());
    let (mut va, mut vb): (Value, Value) = (serde_json::from_slice(&a.stdout).unwrap(), serde_json::from_slice(&b.stdout).unwrap());
    assert_eq!(va["reject"].as_bool().unwrap(), code == 2);
    strip_runtime(&mut va);
    strip_runtime(&mut vb);
    assert_eq!(serde_json::to_string(&va).unwrap(), serde_json::to_string(&vb).unwrap());
}

#[test]
fn discrete_and_two_proxy_reports_validate() {
    let dir = TempDir::new().unwrap();
    let v = schema("test-report.schema.json");

    let d = Scenario::DiscreteTables(Hypothesis::H0).generate(600, 2).unwrap();
    let path = write_csv(dir.path(), "disc.csv", &d);
    let out_path = dir.path().join("disc.json");
    let out = run(&[
        "test", "--input", path.to_str().unwrap(), "--x", "X", "--y", "Y", "--w", "W", "--categorical", "X,Y,W",
        "--mode", "discrete", "--b", "99", "--out", out_path.to_str().unwrap(),
    ]);
    assert!(matches!(out.status.code(), Some(0 | 2)), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(&out_path).unwrap()).unwrap();
    assert_valid(&v, &doc);
    assert_eq!(doc["mode"], "discrete");
    assert!(doc["lambda"].is_null());

    let d = Scenario::LinearTwoProxy { gamma_w: 1.0, hypothesis: Hypothesis::H1 }.generate(200, 4).unwrap();
    let path = write_csv(dir.path(), "two.csv", &d);
    let out = run(&[
        "test", "--input", path.to_str().unwrap(), "--x", "X", "--y", "Y", "--w", "W", "--z", "Z",
        "--mode", "continuous-two-proxy", "--b", "99",
    ]);
    assert!(matches!(out.status.code(), Some(0 | 2)), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_valid(&v, &doc);
    assert!(!doc["bandwidths"]["z"].is_null());
}

#[test]
fn input_errors_exit_one_with_useful_messages() {
    let dir = TempDir::new().unwrap();
    let d = Scenario::LinearMoment { gamma_x: 0.0 }.generate(30, 1).unwrap();
    let path = write_csv(dir.path(), "d.csv", &d);
    let p = path.to_str().unwrap();

    let out = run(&["test", "--input", p, "--x", "X", "--y", "Y", "--w", "Nope"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Nope"));

    let mut text = std::fs::read_to_string(&path).unwrap();
    text.push_str("1.0,abc,2.0\n");
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, text).unwrap();
    let out = run(&["test", "--input", bad.to_str().unwrap(), "--x", "X", "--y", "Y", "--w", "W"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("row 31"), "{}", String::from_utf8_lossy(&out.stderr));

    let small = dir.path().join("small.csv");
    std::fs::write(&small, "X,Y,W\n1,2,3\n2,3,4\n3,4,1\n").unwrap();
    let out = run(&["test", "--input", small.to_str().unwrap(), "--x", "X", "--y", "Y", "--w", "W"]);
    assert_eq!(out.status.code(), Some(1));

    let out = run(&["test", "--input", dir.path().join("missing.csv").to_str().unwrap(), "--x", "X", "--y", "Y", "--w", "W"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn simulate_writes_reports_and_validates() {
    let dir = TempDir::new().unwrap();
    let prefix = dir.path().join("run_0.5");
    let out = run(&[
        "simulate", "--scenario", "sec612-h0", "--n", "200,400", "--reps", "4", "--b", "49", "--seed", "1",
        "--out", prefix.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(table.contains("200") && table.contains("400"));

    let json: Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("run_0.5.json")).unwrap()).unwrap();
    assert_valid(&schema("simulation-report.schema.json"), &json);

    let mut rdr = csv::Reader::from_path(dir.path().join("run_0.5.csv")).unwrap();
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), ["scenario", "n", "rep", "p_value", "reject"]);
    assert_eq!(rdr.records().count(), 8);
}

#[test]
fn simulate_rejects_bad_config() {
    let out = run(&["simulate", "--scenario", "sec612-h0", "--n", "200", "--reps", "0"]);
    assert_eq!(out.status.code(), Some(1));
    let out = run(&["simulate", "--scenario", "nope", "--n", "200"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sec611-h0"));
}
