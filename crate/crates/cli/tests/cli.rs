use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn lrspatial(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lrspatial"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("LRSPATIAL_OUT")
        .env_remove("LRSPATIAL_THREADS")
        .output()
        .expect("binary runs")
}

fn ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn generate(dir: &Path, dgp: &str, n: usize, seed: u64) {
    let n = n.to_string();
    let seed = seed.to_string();
    ok(&lrspatial(dir, &["generate", "--dgp", dgp, "--n", &n, "--dependence", "0.6", "--tau2", "0.5", "--seed", &seed]));
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn coefficient(report: &Value, name: &str) -> (f64, f64) {
    let c = report["coefficients"]
        .as_array()
        .unwrap()
        .iter()
        .find(|c| c["name"] == name)
        .unwrap_or_else(|| panic!("no coefficient {name}"));
    (c["estimate"].as_f64().unwrap(), c["se"].as_f64().unwrap())
}

#[test]
fn generate_then_fit_recovers_slope() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path().join("data");
    generate(&d, "sem", 300, 3);
    let out = t.path().join("fit");
    let o = lrspatial(
        &out,
        &["fit", "--data", &p(&d, "data.csv"), "--weights", &p(&d, "weights.txt"), "--model", "LSEM", "--rank", "60", "--bootstrap", "30"],
    );
    ok(&o);
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("fit.json")).unwrap()).unwrap();
    let (b1, se1) = coefficient(&report, "x1");
    assert!((b1 - 2.0).abs() < 3.0 * se1, "beta1 {b1} se {se1}");
    assert!(report["theta"].is_object() || report["theta"].is_array());
    let eff = fs::read_to_string(out.join("effects.csv")).unwrap();
    assert!(eff.starts_with("covariate,de,ie,de_lower,de_upper,ie_lower,ie_upper"));
    assert!(out.join("bootstrap.csv").exists());

    // same fit from coordinates gives the same numbers
    let out2 = t.path().join("fit2");
    ok(&lrspatial(
        &out2,
        &["fit", "--data", &p(&d, "data.csv"), "--coords", &p(&d, "coords.csv"), "--model", "LSEM", "--rank", "60"],
    ));
    let r2: Value = serde_json::from_str(&fs::read_to_string(out2.join("fit.json")).unwrap()).unwrap();
    let (b1b, _) = coefficient(&r2, "x1");
    assert!((b1 - b1b).abs() < 1e-8, "{b1} vs {b1b}");
}

#[test]
fn lm_has_no_dependence_and_zero_ie() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path().join("data");
    generate(&d, "slm", 80, 5);
    let out = t.path().join("lm");
    ok(&lrspatial(&out, &["fit", "--data", &p(&d, "data.csv"), "--weights", &p(&d, "weights.txt"), "--model", "LM"]));
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("fit.json")).unwrap()).unwrap();
    assert!(report["theta"].is_null());
    let eff = fs::read_to_string(out.join("effects.csv")).unwrap();
    for line in eff.lines().skip(1) {
        let ie: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert_eq!(ie, 0.0, "{line}");
    }
}

#[test]
fn slm_oracle_fit_writes_report() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path().join("data");
    generate(&d, "slm", 120, 8);
    let out = t.path().join("slm");
    ok(&lrspatial(&out, &["fit", "--data", &p(&d, "data.csv"), "--coords", &p(&d, "coords.csv"), "--model", "SLM"]));
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("fit.json")).unwrap()).unwrap();
    let rho = report["dependence"].as_f64().unwrap();
    assert!(rho > 0.0 && rho < 1.0, "{rho}");
}

#[test]
fn missing_weights_file_is_named() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path().join("data");
    generate(&d, "sem", 40, 1);
    let missing = p(t.path(), "nowhere.txt");
    let o = lrspatial(&t.path().join("o"), &["fit", "--data", &p(&d, "data.csv"), "--weights", &missing]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("nowhere.txt"), "{}", stderr(&o));
}

#[test]
fn malformed_csv_reports_position() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path().join("data");
    generate(&d, "sem", 40, 1);
    let bad = t.path().join("bad.csv");
    let text = fs::read_to_string(d.join("data.csv")).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let mut fields: Vec<&str> = lines[4].split(',').collect();
    fields[2] = "oops";
    lines[4] = fields.join(",");
    fs::write(&bad, lines.join("\n")).unwrap();
    let o = lrspatial(&t.path().join("o"), &["fit", "--data", &bad.to_string_lossy(), "--weights", &p(&d, "weights.txt")]);
    assert_eq!(o.status.code(), Some(1));
    let e = stderr(&o);
    assert!(e.contains("line 5") && e.contains("column 3"), "{e}");
}

#[test]
fn one_based_edge_list() {
    let t = tempfile::tempdir().unwrap();
    let d = t.path().join("data");
    generate(&d, "sem", 60, 2);
    let shifted: String = fs::read_to_string(d.join("weights.txt"))
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| {
            let f: Vec<&str> = l.split_whitespace().collect();
            let i: usize = f[0].parse().unwrap();
            let j: usize = f[1].parse().unwrap();
            format!("{} {} {}\n", i + 1, j + 1, f[2])
        })
        .collect();
    let w1 = t.path().join("w1.txt");
    fs::write(&w1, shifted).unwrap();
    let a = t.path().join("a");
    let b = t.path().join("b");
    let data = p(&d, "data.csv");
    ok(&lrspatial(&a, &["fit", "--data", &data, "--weights", &p(&d, "weights.txt"), "--rank", "20"]));
    ok(&lrspatial(&b, &["fit", "--data", &data, "--weights", &w1.to_string_lossy(), "--one-based", "--rank", "20"]));
    assert_eq!(fs::read(a.join("fit.json")).unwrap(), fs::read(b.join("fit.json")).unwrap());
    // reading the shifted file as 0-based is out of range
    let o = lrspatial(&t.path().join("c"), &["fit", "--data", &data, "--weights", &w1.to_string_lossy(), "--rank", "20"]);
    assert_eq!(o.status.code(), Some(1));
}

fn smoke_config() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/scenarios/smoke.toml"))
}

#[test]
fn simulate_is_reproducible() {
    let t = tempfile::tempdir().unwrap();
    let a = t.path().join("a");
    let b = t.path().join("b");
    let cfg = smoke_config().to_string_lossy().into_owned();
    ok(&lrspatial(&a, &["simulate", "--config", &cfg]));
    ok(&lrspatial(&b, &["--threads", "1", "simulate", "--config", &cfg]));
    let sa = fs::read(a.join("simulation.csv")).unwrap();
    assert_eq!(sa, fs::read(b.join("simulation.csv")).unwrap());
    let text = String::from_utf8(sa).unwrap();
    assert!(text.starts_with("scenario,dgp,n,dependence,tau2,estimator,L,target,rmse,bias,mean,n_fail"));
    assert!(text.contains("LSLM_30") && text.contains("DE1_lower"));
    assert!(a.join("timings.csv").exists());
}

#[test]
fn simulate_rejects_zero_replications() {
    let t = tempfile::tempdir().unwrap();
    let cfg = t.path().join("s.toml");
    fs::write(
        &cfg,
        "[[scenario]]\nid = \"z\"\ndgp = \"sem\"\nn = 50\ndependence = 0.5\ntau2 = 0.0\nreplications = 0\nseed = 1\nestimators = [\"LM\"]\n",
    )
    .unwrap();
    let o = lrspatial(&t.path().join("o"), &["simulate", "--config", &cfg.to_string_lossy()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("replications"), "{}", stderr(&o));
}

#[test]
fn tiny_bench() {
    let t = tempfile::tempdir().unwrap();
    let out = t.path().join("b");
    ok(&lrspatial(
        &out,
        &["bench", "--sizes", "200", "--ranks", "20", "--model", "LSLM", "--bootstrap", "3", "--repeats", "1"],
    ));
    let csv = fs::read_to_string(out.join("bench.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2, "{csv}");
    assert!(csv.starts_with("n,L,model,eigen_s,precompute_s,estimation_s,bootstrap_s,error"));
}
