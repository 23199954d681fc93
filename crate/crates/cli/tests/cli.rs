use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn lsch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lsch")).args(args).output().expect("binary runs")
}

fn json_ok(args: &[&str]) -> Value {
    let out = lsch(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("JSON report")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn dispersion_report_thresholds() {
    let v = json_ok(&["dispersion", "--builtin", "lapl", "-d", "3", "--report"]);
    let thr: Vec<f64> = v["result"]["thresholds"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect();
    assert_eq!(thr.len(), 4);
    for (a, b) in thr.iter().zip([0.0, 4.0, 8.0, 12.0]) {
        assert!((a - b).abs() < 1e-9);
    }
    assert_eq!(v["config"]["command"]["dispersion"]["disp"]["dim"], 3);
    assert_eq!(v["config"]["tolerances"]["count"], 1e-10);
}

#[test]
fn trace_identity_end_to_end() {
    let v = json_ok(&["trace-identity", "--builtin", "lapl", "-d", "3", "-L", "7", "--sites", "3", "--seed", "1"]);
    assert_eq!(v["result"]["count"], 3);
    assert_eq!(v["result"]["support"], 3);
    assert_eq!(v["result"]["match"], true);
    assert_eq!(v["config"]["seed"], 1);
}

#[test]
fn bound_matches_library_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "f.json", r#"{"kind":"finite","dim":2,"values":[[0,0,-1.0],[1,0,0.5],[3,-2,0.05],[-2,2,-0.2]]}"#);
    let out_a = dir.path().join("a.json");
    let out_b = dir.path().join("b.json");
    for out in [&out_a, &out_b] {
        let o = lsch(&["bound", "--potential", &f, "-c", "0.25", "--z-window", "4", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = fs::read(&out_a).unwrap();
    assert_eq!(a, fs::read(&out_b).unwrap());
    let v: Value = serde_json::from_slice(&a).unwrap();
    let lib = {
        use lattice_schrodinger::functionals::{brute_force_min_support, min_support_bound};
        use lattice_schrodinger::lattice::Potential;
        let p = Potential::from_json(&fs::read_to_string(&f).unwrap()).unwrap();
        let cert = min_support_bound(&p, 0.25, 4).unwrap();
        assert_eq!(cert.bound, brute_force_min_support(&p, 0.25, &cert.best_z).unwrap());
        cert
    };
    assert_eq!(v["result"]["bound"], lib.bound);
    assert_eq!(v["result"]["search_window"], 4);
    // no temp files left behind
    let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names.len(), 3, "{names:?}");
}

#[test]
fn csv_output_embeds_config() {
    let out = lsch(&["example", "--family", "embedded", "-d", "1", "-L", "10,20", "--format", "csv"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# config: {"));
    assert_eq!(lines.next().unwrap(), "l,interior_residual,full_residual,boundary_mass,nearest_eig_dist");
    assert_eq!(lines.count(), 2);
}

#[test]
fn exit_codes() {
    // missing dimension for a builtin dispersion: precondition
    let o = lsch(&["spectrum", "--builtin", "lapl", "-L", "2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("-d"));
    // threshold example below d = 5
    assert_eq!(lsch(&["example", "--family", "threshold", "-d", "4", "-L", "3"]).status.code(), Some(2));
    // Mourre window over a threshold
    let o = lsch(&["mourre", "--builtin", "lapl", "-d", "1", "-L", "5", "--window", "3,5"]);
    assert_eq!(o.status.code(), Some(2));
    // unknown flag and missing c are usage errors
    assert_eq!(lsch(&["phi", "--bogus"]).status.code(), Some(2));
    assert_eq!(lsch(&["bound", "--potential", "x.json"]).status.code(), Some(2));
    // unknown tolerance key
    let o = lsch(&["--tol", r#"{"nope": 1}"#, "dispersion", "--builtin", "lapl", "-d", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_one() {
    // an eigen residual bound of zero cannot be met by any dense solve
    let o = lsch(&["--tol", r#"{"eig_residual": 0.0}"#, "mourre", "--builtin", "lapl", "-d", "1", "-L", "6", "--window", "1,3"]);
    assert_eq!(o.status.code(), Some(1), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn remaining_subcommands_run() {
    let dir = tempfile::tempdir().unwrap();
    let v2 = write(dir.path(), "v.json", r#"{"kind":"finite","dim":1,"values":[[0,-3.0]]}"#);
    let v = json_ok(&["operators", "--builtin", "emb", "-d", "1", "-L", "3", "--which", "commutator-ha"]);
    assert_eq!(v["result"]["size"], 7);
    let v = json_ok(&["spectrum", "--builtin", "lapl", "-d", "1", "-L", "6", "--potential", &v2]);
    assert_eq!(v["result"]["discrete"], 1);
    let v = json_ok(&["virial", "--builtin", "lapl", "-d", "1", "-L", "10,20", "--potential", &v2]);
    assert_eq!(v["result"].as_array().unwrap().len(), 2);
    let v = json_ok(&["phi", "--potential", &v2, "-m", "2", "-n", "3"]);
    assert!((v["result"]["value"].as_f64().unwrap() - 3.0).abs() < 1e-12);
    let v = json_ok(&["integrals", "--kind", "l2", "-d", "3", "--a", "0.1", "--b", "0.1,0.01"]);
    assert_eq!(v["result"]["rows"].as_array().unwrap().len(), 2);
    let v = json_ok(&["integrals", "--kind", "torus", "--builtin", "lapl", "-d", "1", "--a", "1", "--b", "0.1"]);
    assert!(v["result"]["sup_ratio"].as_f64().unwrap() > 0.0);
    let v = json_ok(&["estimate-c", "--builtin", "lapl", "-d", "1", "-L", "20", "--potential", &v2, "--z", "1:0.5", "--override-guard"]);
    assert!(v["result"]["c_default"].as_f64().unwrap() > 0.0);
    let v = json_ok(&["resolvent-scan", "--builtin", "lapl", "-d", "1", "-L", "10,20", "--re", "1"]);
    assert_eq!(v["result"].as_array().unwrap().len(), 2);
    let v = json_ok(&["dispersion", "--builtin", "emb", "-d", "1", "--pair", "0.5"]);
    assert!(v["result"]["dispersion"].is_object());
    let v = json_ok(&["dispersion", "--builtin", "emb", "-d", "2", "--morse"]);
    assert_eq!(v["result"]["certified"], true);
}

#[test]
fn help_documents_every_subcommand() {
    for sub in [
        "dispersion", "operators", "spectrum", "virial", "trace-identity", "mourre", "phi", "bound", "example", "integrals",
        "estimate-c", "resolvent-scan",
    ] {
        let o = lsch(&[sub, "--help"]);
        assert!(o.status.success());
        let text = String::from_utf8(o.stdout).unwrap();
        assert!(text.lines().next().unwrap().len() > 20, "{sub}: {text}");
    }
}
