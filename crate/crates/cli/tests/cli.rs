use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(config: &str, dir: &Path, extra: &[&str]) -> Output {
    let path = dir.join("run.toml");
    fs::write(&path, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_confcurv"))
        .arg("run")
        .arg(&path)
        .arg("--out")
        .arg(dir.join("out"))
        .args(extra)
        .output()
        .unwrap()
}

fn record(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("out/record.json")).unwrap()).unwrap()
}

const HYPERBALL: &str = r#"
experiment = "verify-profiles"
[domain]
kind = "axi-ball3"
resolution = [16, 16]
[profile]
name = "hyperball"
rho = 2.0
"#;

#[test]
fn empty_config_is_rejected_with_exit_2() {
    let dir = scratch("empty");
    let out = run("", &dir, &[]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("experiment"), "{err}");
    assert!(!dir.join("out").exists());
}

#[test]
fn bad_values_are_rejected_with_exit_2() {
    let dir = scratch("bad");
    for text in [
        HYPERBALL.replace("rho = 2.0", "rho = 0.5"),
        HYPERBALL.replace("[16, 16]", "[16]"),
        format!("{HYPERBALL}\n[solver]\nshrink = 2.0\n"),
        HYPERBALL.replace("verify-profiles", "minimize"),
    ] {
        assert_eq!(run(&text, &dir, &[]).status.code(), Some(2), "{text}");
    }
}

#[test]
fn missing_config_file_is_an_io_error() {
    let out = Command::new(env!("CARGO_BIN_EXE_confcurv")).args(["run", "/nonexistent/run.toml"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn verify_profiles_reports_second_order() {
    let dir = scratch("verify");
    let out = run(HYPERBALL, &dir, &["--refine", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = record(&dir);
    assert_eq!(r["schema"], 1);
    assert_eq!(r["status"], "ok");
    assert_eq!(r["config"]["refine"], 1);
    assert_eq!(r["result"]["meshes"][0]["node_count"], 32 * 32);
    for o in r["result"]["orders"].as_array().unwrap() {
        assert!((o.as_f64().unwrap() - 2.0).abs() < 0.3, "{o}");
    }
    let csv = fs::read_to_string(dir.join("out/residuals.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(fs::read_to_string(dir.join("out/residuals.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let config = r#"
experiment = "trace-ineq"
seed = 3
[domain]
kind = "axi-ball3"
resolution = [16, 16]
[curvature]
k = "const:-6"
h = "polar:0.4+0.3*cos"
hg = "const:1"
[trace]
samples = 20
"#;
    let a = scratch("det_a");
    let b = scratch("det_b");
    assert!(run(config, &a, &[]).status.success());
    assert!(run(config, &b, &[]).status.success());
    for f in ["record.json", "trace.csv", "needed_c.svg"] {
        assert_eq!(fs::read(a.join("out").join(f)).unwrap(), fs::read(b.join("out").join(f)).unwrap(), "{f}");
    }
    let c = scratch("det_c");
    assert!(run(config, &c, &["--seed", "4"]).status.success());
    let (ra, rc) = (record(&a), record(&c));
    assert_ne!(ra["config_hash"], rc["config_hash"]);
    assert_eq!(rc["config"]["run"]["seed"], 4);
}

#[test]
fn missing_endpoint_is_a_solver_failure() {
    let dir = scratch("no_endpoint");
    let config = r#"
experiment = "mountain-pass"
[domain]
kind = "axi-ball3"
resolution = [24, 24]
[curvature]
k = "const:-6"
h = "const:0"
hg = "const:1"
[mountain_pass]
p = 4.5
"#;
    let out = run(config, &dir, &[]);
    assert_eq!(out.status.code(), Some(3));
    let r = record(&dir);
    assert_eq!(r["status"], "solver-failure");
    assert!(r["failure"].as_str().unwrap().contains("endpoint"));
}

#[test]
fn non_coercive_minimisation_is_reported_not_failed() {
    let dir = scratch("noncoercive");
    let config = r#"
experiment = "minimize"
[domain]
kind = "axi-ball3"
resolution = [64, 64]
[curvature]
k = "const:-6"
h = "const:1.3"
hg = "const:1"
[initial]
beta = 0.1
d = 0.5
"#;
    let out = run(config, &dir, &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(record(&dir)["result"]["solve"]["status"], "non-coercive");
}

#[test]
fn blowup_scan_on_the_hyperball_family() {
    let dir = scratch("blowup");
    let config = r#"
experiment = "blowup-scan"
[domain]
kind = "radial-ball"
dim = 3
resolution = [512]
[blowup]
family = "hyperball"
parameters = [1.2, 1.1, 1.05]
"#;
    assert!(run(config, &dir, &[]).status.success());
    let r = record(&dir);
    let reports = r["result"]["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 3);
    let grads: Vec<f64> = reports.iter().map(|x| x["ratios"]["ratio_grad"].as_f64().unwrap()).collect();
    assert!(grads.windows(2).all(|w| w[1] > w[0]));
    assert!(r["result"]["max_u_exponent"].as_f64().unwrap() < 0.0);
}

#[test]
fn unwritable_output_directory_is_an_io_error() {
    let dir = scratch("unwritable");
    fs::write(dir.join("out"), "not a directory").unwrap();
    let out = run(HYPERBALL, &dir, &[]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn every_table_is_embedded_in_the_record() {
    let dir = scratch("embedded");
    let config = r#"
experiment = "check-identities"
[domain]
kind = "axi-half-ball"
resolution = [16, 16]
radius = 1.0
[profile]
name = "horo"
"#;
    assert!(run(config, &dir, &[]).status.success());
    let r = record(&dir);
    let table = &r["tables"][0];
    assert_eq!(table["name"], "identity");
    let csv = fs::read_to_string(dir.join("out/identity.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "identity,profile,resolution,nodes,spacing,lhs,rhs,residual,order");
    for (line, row) in lines.zip(table["rows"].as_array().unwrap()) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields[0], "pohozaev");
        assert_eq!(fields[7].parse::<f64>().unwrap(), row[7].as_f64().unwrap());
    }
}
