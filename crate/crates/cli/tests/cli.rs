use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_levy-hjm"))
}

fn default_scenario() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/default.toml")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

const BROWNIAN: &str = r#"
n_paths = 200
master_seed = 3
[grid]
horizon = 1.0
steps = 32
[levy]
a = 0.0
q = 1.0
[levy.measure]
kind = "atomic"
atoms = []
[market]
maturities = [1.0]
curve = { kind = "flat", rate = 0.01 }
vol = { kind = "constant", sigma = 0.05 }
"#;

fn run(args: &[&str], scenario: &Path, out: &Path, threads: Option<&str>) -> Output {
    let mut cmd = bin();
    cmd.args(args).arg("--scenario").arg(scenario).arg("--out").arg(out);
    if let Some(t) = threads {
        cmd.env("LEVY_HJM_THREADS", t);
    }
    cmd.output().unwrap()
}

#[test]
fn simulate_brownian_only() {
    let dir = tempfile::tempdir().unwrap();
    let s = write(dir.path(), "s.toml", BROWNIAN);
    let out = run(&["simulate"], &s, &dir.path().join("out"), None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("out/simulate_paths.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("path,t,w,z"));
    for line in lines {
        let cols: Vec<f64> = line.split(',').skip(2).map(|v| v.parse().unwrap()).collect();
        // no jumps and no drift: Z is W
        assert_eq!(cols[0], cols[1]);
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/simulate.json")).unwrap()).unwrap();
    assert_eq!(summary["jump_count"]["mean"], 0.0);
}

#[test]
fn negative_q_exits_2_and_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let s = write(dir.path(), "s.toml", &BROWNIAN.replace("q = 1.0", "q = -1.0"));
    let out = run(&["simulate"], &s, &dir.path().join("out"), None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("levy.q"));
}

#[test]
fn type_error_exits_2_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let s = write(dir.path(), "s.toml", &BROWNIAN.replace("steps = 32", "steps = -4"));
    let out = run(&["simulate"], &s, &dir.path().join("out"), None);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("grid.steps"));
}

#[test]
fn missing_exponential_moment_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let text = BROWNIAN
        .replace("kind = \"atomic\"\natoms = []", "kind = \"double_exponential\"\nrate = 1.0\np = 0.5\neta_plus = 3.0\neta_minus = 0.5")
        .replace("sigma = 0.05", "sigma = 0.9");
    let s = write(dir.path(), "s.toml", &text);
    let out = run(&["drift"], &s, &dir.path().join("out"), None);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn bad_thread_count_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let s = write(dir.path(), "s.toml", BROWNIAN);
    let out = run(&["simulate"], &s, &dir.path().join("out"), Some("zero"));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("LEVY_HJM_THREADS"));
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let out = bin().args(["price", "--scenario", "x.toml"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

fn outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    manifest["outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|o| {
            let name = o["file"].as_str().unwrap().to_string();
            let bytes = std::fs::read(dir.join(&name)).unwrap();
            (name, bytes)
        })
        .collect()
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let args = ["all", "--paths", "600", "--seed", "11"];
    assert_eq!(run(&args, &default_scenario(), &a, Some("1")).status.code(), Some(0));
    assert_eq!(run(&args, &default_scenario(), &b, Some("3")).status.code(), Some(0));
    let (oa, ob) = (outputs(&a), outputs(&b));
    assert_eq!(oa.len(), 12);
    assert_eq!(oa, ob);
}

#[test]
fn incompleteness_default_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["incompleteness", "--paths", "1000"], &default_scenario(), dir.path(), None);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("incompleteness.json")).unwrap()).unwrap();
    let ratio: Vec<f64> = report["ratio"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!(ratio.windows(2).all(|w| w[1] > w[0]), "{ratio:?}");
}
