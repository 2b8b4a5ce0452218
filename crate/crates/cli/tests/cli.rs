use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tbs_core::eval::{run_ablation, AblationAxis, EvalReport, Method};
use tbs_core::pipeline::{PoolConfig, PoolSource, RunConfig};

fn planted(seed: u64) -> RunConfig {
    let mut cfg = RunConfig {
        pool: PoolConfig {
            source: PoolSource::Planted { families: 2 },
            train_size: 4,
            heldout_size: 4,
        },
        seed,
        ..RunConfig::default()
    };
    cfg.eval.episodes = 5;
    cfg.eval.methods = vec![Method::Tbs, Method::SingleBr, Method::Oracle];
    cfg
}

fn write_config(dir: &Path, cfg: &RunConfig) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string(cfg).unwrap()).unwrap();
    path
}

fn tbs(config: &Path, out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tbs"))
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(o: Output) -> String {
    assert!(
        o.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn stderr_of_failure(o: Output) -> String {
    assert!(!o.status.success());
    String::from_utf8(o.stderr).unwrap()
}

/// Every file under `root`, with its bytes, in path order.
fn snapshot(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let bytes = fs::read(&path).unwrap();
                files.push((path.strip_prefix(root).unwrap().to_path_buf(), bytes));
            }
        }
    }
    files.sort();
    files
}

fn find(root: &Path, name: &str) -> Vec<PathBuf> {
    snapshot(root)
        .into_iter()
        .map(|(p, _)| p)
        .filter(|p| p.file_name().unwrap() == name)
        .map(|p| root.join(p))
        .collect()
}

#[test]
fn stages_run_in_order_and_reproduce() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &planted(7));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        for cmd in [
            "build-pool",
            "crossplay",
            "cluster",
            "train-br",
            "train-tom",
        ] {
            ok(tbs(&cfg, out, &[cmd]));
        }
        let csv = ok(tbs(&cfg, out, &["--trace", "evaluate"]));
        assert!(csv.starts_with("method,layout,axis,value,mean"));
        assert_eq!(csv.lines().count(), 4);
    }
    let (sa, sb) = (snapshot(&a), snapshot(&b));
    assert!(sa.len() >= 12);
    assert_eq!(sa, sb);
    assert_eq!(find(&a, "partner0_seat2.csv").len(), 1);

    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(&find(&a, "report.json")[0]).unwrap()).unwrap();
    assert_eq!(report["stage"], "evaluate");
    let rows = report["data"]["summaries"].as_array().unwrap();
    let oracle = rows.iter().find(|r| r["method"] == "oracle").unwrap();
    assert_eq!(oracle["mean"], 16.0);
}

#[test]
fn run_all_reuses_current_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &planted(7));
    let out = tmp.path().join("out");
    let first = ok(tbs(&cfg, &out, &["run-all"]));
    let before = snapshot(&out);
    let second = ok(tbs(&cfg, &out, &["run-all"]));
    assert_eq!(first, second);
    assert_eq!(before, snapshot(&out));
}

#[test]
fn seed_changes_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), &planted(1));
    ok(tbs(&cfg, &out, &["build-pool", "--seed", "1"]));
    ok(tbs(&cfg, &out, &["build-pool", "--seed", "2"]));
    let manifests = find(&out, "manifest.json");
    assert_eq!(manifests.len(), 2);
    let m: Vec<serde_json::Value> = manifests
        .iter()
        .map(|p| {
            serde_json::from_slice::<serde_json::Value>(&fs::read(p).unwrap()).unwrap()["data"]
                .clone()
        })
        .collect();
    assert_ne!(m[0], m[1]);
}

#[test]
fn missing_upstream_names_the_command() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &planted(7));
    let out = tmp.path().join("out");
    let err = stderr_of_failure(tbs(&cfg, &out, &["crossplay"]));
    assert!(err.contains("tbs build-pool"), "{err}");
    ok(tbs(&cfg, &out, &["build-pool"]));
    ok(tbs(&cfg, &out, &["crossplay"]));
    let err = stderr_of_failure(tbs(&cfg, &out, &["train-br"]));
    assert!(err.contains("tbs cluster"), "{err}");
    let err = stderr_of_failure(tbs(&cfg, &out, &["evaluate"]));
    assert!(err.contains("tbs "), "{err}");
}

#[test]
fn stale_artifact_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &planted(7));
    let out = tmp.path().join("out");
    ok(tbs(&cfg, &out, &["build-pool"]));
    let pools = find(&out, "pools.json").pop().unwrap();
    let text = fs::read_to_string(&pools).unwrap();
    let mut env: serde_json::Value = serde_json::from_str(&text).unwrap();
    env["config_hash"] = "0000000000000000".into();
    fs::write(&pools, serde_json::to_string(&env).unwrap()).unwrap();
    let err = stderr_of_failure(tbs(&cfg, &out, &["crossplay"]));
    assert!(
        err.contains("stale") && err.contains("tbs build-pool"),
        "{err}"
    );
    ok(tbs(&cfg, &out, &["run-all"]));
}

#[test]
fn bad_input_fails_cleanly() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &planted(7));
    let out = tmp.path().join("out");
    let err = stderr_of_failure(tbs(
        &cfg,
        &out,
        &["ablate", "--axis", "nonsense", "--grid", "1"],
    ));
    assert!(err.contains("nonsense"), "{err}");
    let err = stderr_of_failure(tbs(&cfg, &out, &["evaluate", "--methods", "psychic"]));
    assert!(err.contains("psychic"), "{err}");
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "{\"seed\": \"x\"}").unwrap();
    stderr_of_failure(tbs(&bad, &out, &["build-pool"]));
}

#[test]
fn ablate_matches_library_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    let base = planted(11);
    let cfg = write_config(tmp.path(), &base);
    let out = tmp.path().join("out");
    ok(tbs(
        &cfg,
        &out,
        &["ablate", "--axis", "steps_per_selection", "--grid", "1,48"],
    ));
    let path = find(&out.join("ablate"), "report.json").pop().unwrap();
    let cli: EvalReport = serde_json::from_slice(&fs::read(path).unwrap()).unwrap();
    let grid = ["1", "48"].map(String::from);
    let lib = run_ablation(
        AblationAxis::parse("steps_per_selection").unwrap(),
        &grid,
        &base,
    )
    .unwrap();
    assert_eq!(cli, lib);
}
