use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn run(cmd: &str, config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_byzrl"))
        .args([cmd, "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, name: &str, value: Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(&value).unwrap()).unwrap();
    path
}

fn read_json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn missing_sigma_is_a_config_error_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        serde_json::json!({"mode": "estimate", "seeds": [1],
            "estimator": {"alpha": 0.1, "delta": 0.1, "num_batches": 4, "max_size": 5, "trials": 3}}),
    );
    let out = run("estimate", &cfg, &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("estimator.sigma"));
}

#[test]
fn missing_referenced_file_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        serde_json::json!({"mode": "online", "seeds": [1], "mdp": {"kind": "file", "path": "nope.json"},
            "online": {"num_agents": 2, "alpha_param": 0.0, "episodes": 4, "delta": 0.1}}),
    );
    let out = run("online", &cfg, &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("mdp.path"));
}

#[test]
fn single_constant_trial_is_exact_and_covered() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        serde_json::json!({"mode": "estimate", "seeds": [1],
            "estimator": {"sigma": 1.0, "alpha": 0.0, "delta": 0.1, "num_batches": 5,
                          "max_size": 10, "true_mean": 0.75, "sample_sigma": 0.0, "trials": 1}}),
    );
    let out_dir = dir.path().join("out");
    assert!(run("estimate", &cfg, &out_dir).status.success());
    let mut rows = csv::Reader::from_path(out_dir.join("estimate_seed1.csv")).unwrap();
    let records: Vec<csv::StringRecord> = rows.records().map(Result::unwrap).collect();
    assert_eq!(records.len(), 2);
    assert_eq!(records[0][2].parse::<f64>().unwrap(), 0.75);
    assert_eq!(&records[0][4], "true");
    assert_eq!(&records[1][0], "coverage");
    assert_eq!(records[1][4].parse::<f64>().unwrap(), 1.0);
}

fn online_config(dir: &Path) -> PathBuf {
    write_config(
        dir,
        "online.json",
        serde_json::json!({"mode": "online", "seeds": [3],
            "mdp": {"kind": "random", "num_states": 3, "num_actions": 2, "horizon": 3, "gapped": true},
            "online": {"num_agents": 4, "true_bad": 1, "alpha_param": 0.25, "episodes": 150, "delta": 0.1,
                       "attack": {"kind": "fixed_value", "value": 100.0, "count": 50}}}),
    )
}

#[test]
fn online_reruns_are_byte_identical_and_report_the_switch_bound() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = online_config(dir.path());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run("online", &cfg, &a).status.success());
    assert!(run("online", &cfg, &b).status.success());
    for file in ["online_seed3.csv", "online_seed3_summary.json"] {
        assert_eq!(
            std::fs::read(a.join(file)).unwrap(),
            std::fs::read(b.join(file)).unwrap()
        );
    }
    let summary = read_json(a.join("online_seed3_summary.json"));
    assert!(summary["switches"].as_u64().unwrap() <= summary["switch_bound"].as_u64().unwrap());
    assert_eq!(summary["bound_holds"], Value::Bool(true));
}

#[test]
fn mode_must_match_the_command() {
    let dir = tempfile::tempdir().unwrap();
    let out = run("offline", &online_config(dir.path()), &dir.path().join("o"));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn alpha_sweep_emits_one_row_per_grid_value() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "sweep.json",
        serde_json::json!({"mode": "sweep", "seeds": [1],
            "mdp": {"kind": "chain", "len": 3, "horizon": 3, "slip": 0.1},
            "online": {"num_agents": 4, "true_bad": 1, "alpha_param": 0.0, "episodes": 60, "delta": 0.1},
            "sweep": {"mode": "online", "axis": "alpha", "grid": [0.0, 0.125, 0.25]}}),
    );
    let out_dir = dir.path().join("out");
    assert!(run("sweep", &cfg, &out_dir).status.success());
    let mut rows = csv::Reader::from_path(out_dir.join("sweep.csv")).unwrap();
    let values: Vec<String> = rows.records().map(|r| r.unwrap()[2].to_string()).collect();
    assert_eq!(values, ["0.0", "0.125", "0.25"]);
}

fn offline_config(dir: &Path, offline: Value) -> PathBuf {
    write_config(
        dir,
        "offline.json",
        serde_json::json!({"mode": "offline", "seeds": [2],
            "mdp": {"kind": "random", "num_states": 3, "num_actions": 2, "horizon": 3, "gapped": true},
            "offline": offline}),
    )
}

#[test]
fn clean_full_coverage_has_no_insufficient_mass() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = offline_config(
        dir.path(),
        serde_json::json!({"num_agents": 6, "alpha": 0.0, "delta": 0.1, "size": 200}),
    );
    let out_dir = dir.path().join("out");
    assert!(run("offline", &cfg, &out_dir).status.success());
    let summary = read_json(out_dir.join("offline_seed2_summary.json"));
    assert_eq!(summary["p_g0"].as_f64(), Some(0.0));
    assert!(out_dir.join("offline_seed2_dataset.ndjson").exists());
}

#[test]
fn learned_comparator_has_zero_suboptimality() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = offline_config(
        dir.path(),
        serde_json::json!({"num_agents": 6, "num_bad": 1, "alpha": 0.17, "delta": 0.1, "size": 50,
                           "comparator": "learned", "attack": {"kind": "amplify", "factor": 4.0}}),
    );
    let out_dir = dir.path().join("out");
    assert!(run("offline", &cfg, &out_dir).status.success());
    let summary = read_json(out_dir.join("offline_seed2_summary.json"));
    assert_eq!(summary["suboptimality"].as_f64(), Some(0.0));
}

#[test]
fn equal_count_dataset_reports_unit_evenness() {
    let dir = tempfile::tempdir().unwrap();
    // with H = 2 the optimal play is the lure: action 0 at the left end;
    // every batch logs that path twice per step
    let mdp = byzrl::mdp::envs::chain(3, 2, 2, 0.0).unwrap();
    mdp.save(dir.path().join("mdp.json")).unwrap();
    let mut lines = vec![serde_json::json!({"num_states": 3, "num_actions": 2, "horizon": 2,
        "num_agents": 4, "good_mask": [true, true, true, false]})
    .to_string()];
    for agent in 0..4 {
        for h in 0..2 {
            for _ in 0..2 {
                lines.push(
                    serde_json::json!({"agent": agent, "h": h, "state": 0, "action": 0,
                        "reward": 0.0, "next_state": 0})
                    .to_string(),
                );
            }
        }
    }
    std::fs::write(dir.path().join("data.ndjson"), lines.join("\n") + "\n").unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        serde_json::json!({"mode": "offline", "seeds": [1], "mdp": {"kind": "file", "path": "mdp.json"},
            "offline": {"num_agents": 4, "alpha": 0.25, "delta": 0.1, "dataset": "data.ndjson"}}),
    );
    let out_dir = dir.path().join("out");
    let out = run("offline", &cfg, &out_dir);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = read_json(out_dir.join("offline_seed1_summary.json"));
    assert_eq!(summary["kappa_even"].as_f64(), Some(1.0));
    assert_eq!(summary["p_g0"].as_f64(), Some(0.0));
}

#[test]
fn committed_sample_configs_load() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut loaded = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.file_name().unwrap().to_string_lossy().ends_with(".schema.json") {
            continue;
        }
        byzrl::harness::ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        loaded += 1;
    }
    assert!(loaded >= 5);
}
