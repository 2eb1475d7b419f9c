use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qtrack::experiment::{system1, system2, ExperimentConfig};
use serde_json::{json, Value};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn qtrack(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qtrack"))
        .args(&args[..1])
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(&args[1..])
        .output()
        .unwrap()
}

fn write_config(dir: &Path, cfg: &Value) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_vec_pretty(cfg).unwrap()).unwrap();
    path
}

fn scalar_config(a: f64) -> Value {
    json!({
        "name": "scalar",
        "plant": { "a": [[a]], "b": [[1.0]] },
        "cost": { "q": [[1.0]], "r": [[1.0]], "gamma": 0.9 },
        "learner": { "horizon": 2 },
        "baseline": false
    })
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn bundled_configs_match_builtin_systems() {
    for (file, expected) in [("system1.json", system1()), ("system2.json", system2())] {
        let cfg: ExperimentConfig = serde_json::from_slice(&read(&configs().join(file))).unwrap();
        assert_eq!(cfg, expected, "{file}");
    }
}

#[test]
fn zero_excitation_exits_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = scalar_config(0.5);
    cfg["learner"]["exploration_var"] = json!(0.0);
    cfg["learner"]["ref_noise_var"] = json!(0.0);
    cfg["training_reference"] = json!({ "kind": "step", "at": 0, "before": 0.0, "after": 0.0 });
    let path = write_config(dir.path(), &cfg);
    let out = qtrack(&["learn"], &path, &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn divergence_exits_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = scalar_config(3.0);
    cfg["learner"]["m_factor"] = json!(5.0);
    let path = write_config(dir.path(), &cfg);
    let out = qtrack(&["learn"], &path, &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn same_seed_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let config = configs().join("system1.json");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let res = qtrack(&["compare", "--seed", "3"], &config, out);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    }
    let mut names: Vec<_> = std::fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.iter().any(|n| n == "metrics.csv"));
    for name in names {
        assert_eq!(read(&a.join(&name)), read(&b.join(&name)), "{name:?}");
    }
}

#[test]
fn seed_override_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let res = qtrack(&["learn", "--seed", "11"], &configs().join("system1.json"), &out);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let manifest: Value = serde_json::from_slice(&read(&out.join("learn.manifest.json"))).unwrap();
    assert_eq!(manifest["seed"], 11);
    assert_eq!(manifest["config"]["learner"]["seed"], 11);
    assert_eq!(manifest["command"], "learn");
    assert!(String::from_utf8(read(&out.join("steps.csv"))).unwrap().starts_with("# seed=11\n"));
}

#[test]
fn empty_suite_writes_header_only_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = scalar_config(0.5);
    cfg["suite"] = json!([]);
    let path = write_config(dir.path(), &cfg);
    let out = dir.path().join("out");
    let res = qtrack(&["compare"], &path, &out);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let metrics = String::from_utf8(read(&out.join("metrics.csv"))).unwrap();
    assert_eq!(metrics.lines().count(), 1, "{metrics}");
}

#[test]
fn eval_reads_learned_weights() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let config = configs().join("system1.json");
    assert!(qtrack(&["learn"], &config, &out).status.success());
    let res = qtrack(&["eval"], &config, &out);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let metrics = String::from_utf8(read(&out.join("eval_metrics.csv"))).unwrap();
    assert_eq!(metrics.lines().count(), 1 + system1().suite.len(), "{metrics}");
    assert!(out.join("learn.manifest.json").exists() && out.join("eval.manifest.json").exists());
}
