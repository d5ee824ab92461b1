use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use copa_core::aggregation::Protocol;
use copa_core::env::chain;
use copa_core::oracle::enumerate_reward_bound;
use copa_core::protocol::strategy;
use copa_core::Ensemble;

const BIN: &str = env!("CARGO_BIN_EXE_copa-cert");

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures/v1")
        .join(name)
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn copa-cert")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// CSV rows below the version header and column names.
fn rows(text: &str) -> Vec<Vec<String>> {
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("# copa-cert v1"));
    lines.next().expect("column header");
    lines.map(|l| l.split(',').map(str::to_string).collect()).collect()
}

fn assert_same(a: &Path, b: &Path) {
    let (x, y) = (fs::read(a).unwrap(), fs::read(b).unwrap());
    assert!(x == y, "{} differs from {}", a.display(), b.display());
}

#[test]
fn gen_data_writes_one_line_per_episode() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &[
            "gen-data",
            "--env",
            "chain",
            "--n",
            "5",
            "--episodes",
            "10",
            "--epsilon",
            "0.2",
            "--seed",
            "7",
            "--out",
            "d.jsonl",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("d.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 10);
    assert!(String::from_utf8_lossy(&o.stdout).contains("episodes: 10"));
}

#[test]
fn zero_episodes_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &["gen-data", "--env", "chain", "--episodes", "0", "--out", "d.jsonl"],
    );
    assert_eq!(code(&o), 1);
    assert!(!dir.path().join("d.jsonl").exists());
}

#[test]
fn bad_config_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &["gen-data", "--env", "nowhere", "--episodes", "3", "--out", "d.jsonl"],
    );
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("nowhere"));
    assert!(!dir.path().join("d.jsonl").exists());

    let ens = golden("worked_example_ensemble.json");
    let o = run(
        dir.path(),
        &[
            "certify-actions",
            "--ensemble",
            ens.to_str().unwrap(),
            "--protocol",
            "qparl",
            "--states",
            "0,1",
            "--out-steps",
            "s.csv",
            "--out-hist",
            "h.csv",
        ],
    );
    assert_eq!(code(&o), 1);
    assert!(!dir.path().join("s.csv").exists() && !dir.path().join("h.csv").exists());

    let o = run(
        dir.path(),
        &[
            "certify-actions",
            "--ensemble",
            ens.to_str().unwrap(),
            "--protocol",
            "tparl",
            "--window",
            "0",
            "--states",
            "0,1",
            "--out-steps",
            "s.csv",
            "--out-hist",
            "h.csv",
        ],
    );
    assert_eq!(code(&o), 1);
    assert!(!dir.path().join("s.csv").exists());
}

#[test]
fn missing_inputs_are_io_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &["train", "--data", "absent.jsonl", "--u", "2", "--out", "e.json"],
    );
    assert_eq!(code(&o), 2);
    assert!(!dir.path().join("e.json").exists());
    let o = run(
        dir.path(),
        &[
            "gen-data",
            "--env",
            "chain",
            "--episodes",
            "2",
            "--out",
            "no/such/dir/d.jsonl",
        ],
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn malformed_dataset_line_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let good = fs::read_to_string(golden("gridlane.jsonl")).unwrap();
    let mut lines: Vec<&str> = good.lines().take(4).collect();
    lines.insert(2, "{\"transitions\": [{\"s\": 0, \"a\": 1}]}");
    fs::write(dir.path().join("bad.jsonl"), lines.join("\n") + "\n").unwrap();
    let o = run(
        dir.path(),
        &["train", "--data", "bad.jsonl", "--u", "2", "--out", "e.json"],
    );
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
    assert!(!dir.path().join("e.json").exists());
}

#[test]
fn single_partition_gives_ensemble_of_one() {
    let dir = tempfile::tempdir().unwrap();
    let data = golden("gridlane.jsonl");
    let o = run(
        dir.path(),
        &["train", "--data", data.to_str().unwrap(), "--u", "1", "--out", "e.json"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ens = Ensemble::from_json(&fs::read_to_string(dir.path().join("e.json")).unwrap()).unwrap();
    assert_eq!(ens.u(), 1);
}

fn worked_example_row_at_t7(protocol: &[&str]) -> Vec<String> {
    let dir = tempfile::tempdir().unwrap();
    let ens = golden("worked_example_ensemble.json");
    let mut args = vec![
        "certify-actions",
        "--ensemble",
        ens.to_str().unwrap(),
        "--states",
        "0,1,2,3,4,5,6,7",
    ];
    args.extend_from_slice(protocol);
    args.extend_from_slice(&["--out-steps", "s.csv", "--out-hist", "h.csv"]);
    let o = run(dir.path(), &args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let steps = rows(&fs::read_to_string(dir.path().join("s.csv")).unwrap());
    assert_eq!(steps.len(), 8);
    steps[7].clone()
}

#[test]
fn worked_example_through_scripted_states() {
    assert_eq!(
        worked_example_row_at_t7(&["--protocol", "tparl", "--window", "7"]),
        ["7", "tparl", "0", "7", "2"]
    );
    assert_eq!(
        worked_example_row_at_t7(&["--protocol", "parl"]),
        ["7", "parl", "0", "1", "0"]
    );
    assert_eq!(
        worked_example_row_at_t7(&["--protocol", "dparl", "--window", "8"])[4],
        "1"
    );
}

#[test]
fn golden_pipeline_reproduces() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let gen = [
        "gen-data",
        "--env",
        "gridlane",
        "--episodes",
        "40",
        "--epsilon",
        "0.3",
        "--seed",
        "7",
        "--out",
        "gridlane.jsonl",
    ];
    assert_eq!(code(&run(d, &gen)), 0);
    assert_same(&d.join("gridlane.jsonl"), &golden("gridlane.jsonl"));

    let o = run(
        d,
        &[
            "train",
            "--data",
            "gridlane.jsonl",
            "--u",
            "5",
            "--out",
            "ensemble_memorizer.json",
            "--manifest",
            "partitions.json",
        ],
    );
    assert_eq!(code(&o), 0);
    assert_same(&d.join("ensemble_memorizer.json"), &golden("ensemble_memorizer.json"));
    assert_same(&d.join("partitions.json"), &golden("partitions.json"));
    let o = run(
        d,
        &[
            "train",
            "--data",
            "gridlane.jsonl",
            "--u",
            "5",
            "--learner",
            "qtable",
            "--out",
            "ensemble_qtable.json",
        ],
    );
    assert_eq!(code(&o), 0);
    assert_same(&d.join("ensemble_qtable.json"), &golden("ensemble_qtable.json"));

    for (name, extra) in [("parl", None), ("tparl", Some("3")), ("dparl", Some("4"))] {
        let steps = format!("steps_{name}.csv");
        let hist = format!("hist_{name}.csv");
        let reward = format!("reward_{name}.csv");
        let mut args = vec![
            "certify-actions",
            "--ensemble",
            "ensemble_memorizer.json",
            "--env",
            "gridlane",
            "--protocol",
            name,
        ];
        if let Some(w) = extra {
            args.extend_from_slice(&["--window", w]);
        }
        args.extend_from_slice(&["--out-steps", &steps, "--out-hist", &hist]);
        assert_eq!(code(&run(d, &args)), 0);
        assert_same(&d.join(&steps), &golden(&steps));
        assert_same(&d.join(&hist), &golden(&hist));

        let mut args = vec![
            "certify-reward",
            "--ensemble",
            "ensemble_qtable.json",
            "--env",
            "gridlane",
            "--protocol",
            name,
        ];
        if let Some(w) = extra {
            args.extend_from_slice(&["--window", w]);
        }
        args.extend_from_slice(&["--k-max", "4", "--out", &reward]);
        assert_eq!(code(&run(d, &args)), 0);
        assert_same(&d.join(&reward), &golden(&reward));
    }
}

#[test]
fn golden_manifest_matches_sizes() {
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(golden("partitions.json")).unwrap()).unwrap();
    let sizes: Vec<u64> = m["sizes"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_u64().unwrap())
        .collect();
    assert_eq!(sizes.len(), 5);
    assert_eq!(sizes.iter().sum::<u64>(), 40);
    let assignment = m["assignment"].as_array().unwrap();
    for (i, &n) in sizes.iter().enumerate() {
        assert_eq!(
            assignment.iter().filter(|v| v.as_u64() == Some(i as u64)).count() as u64,
            n
        );
    }
}

#[test]
fn config_file_supplies_flags_and_command_line_wins() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("run.json"),
        r#"{"env": "gridlane", "episodes": 40, "epsilon": 0.3, "seed": 3, "out": "from_config.jsonl"}"#,
    )
    .unwrap();
    let o = run(d, &["gen-data", "--config", "run.json", "--seed", "7"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_same(&d.join("from_config.jsonl"), &golden("gridlane.jsonl"));

    fs::write(d.join("bad.json"), r#"{"episodes": 4, "colour": "blue"}"#).unwrap();
    let o = run(
        d,
        &["gen-data", "--config", "bad.json", "--env", "chain", "--out", "x.jsonl"],
    );
    assert_eq!(code(&o), 1);
    assert!(!d.join("x.jsonl").exists());

    let o = run(d, &["gen-data", "--config", "absent.json"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn reward_curve_with_zero_budget_is_clean_reward() {
    let dir = tempfile::tempdir().unwrap();
    let ens = golden("ensemble_qtable.json");
    let o = run(
        dir.path(),
        &[
            "certify-reward",
            "--ensemble",
            ens.to_str().unwrap(),
            "--env",
            "gridlane",
            "--protocol",
            "parl",
            "--k-max",
            "0",
            "--out",
            "r.csv",
            "--tree",
            "tree.json",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = rows(&fs::read_to_string(dir.path().join("r.csv")).unwrap());
    assert_eq!(r, [["0", "4.000000"]]);
    let tree: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("tree.json")).unwrap()).unwrap();
    assert!(tree["node_count"].as_u64().unwrap() >= 24);
}

#[test]
fn chain_reward_curve_matches_enumeration() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let gen = [
        "gen-data",
        "--env",
        "chain",
        "--n",
        "3",
        "--horizon",
        "4",
        "--episodes",
        "6",
        "--epsilon",
        "0.6",
        "--seed",
        "2",
        "--out",
        "c.jsonl",
    ];
    assert_eq!(code(&run(d, &gen)), 0);
    assert_eq!(
        code(&run(d, &["train", "--data", "c.jsonl", "--u", "3", "--out", "c.json"])),
        0
    );
    let ens = Ensemble::from_json(&fs::read_to_string(d.join("c.json")).unwrap()).unwrap();
    let env = chain(3, 4).unwrap();
    for (name, w) in [("parl", "1"), ("tparl", "2"), ("dparl", "3")] {
        let o = run(
            d,
            &[
                "certify-reward",
                "--ensemble",
                "c.json",
                "--env",
                "chain",
                "--n",
                "3",
                "--horizon",
                "4",
                "--protocol",
                name,
                "--window",
                w,
                "--k-max",
                "2",
                "--out",
                "r.csv",
            ],
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let strat = strategy(Protocol::from_name(name, w.parse().unwrap()).unwrap()).unwrap();
        for row in rows(&fs::read_to_string(d.join("r.csv")).unwrap()) {
            let k: usize = row[0].parse().unwrap();
            let expect = enumerate_reward_bound(&env, &ens, strat.as_ref(), 4, k).unwrap();
            assert_eq!(row[1], format!("{expect:.6}"), "{name} k={k}");
        }
    }
}

#[test]
fn oracle_check_passes_on_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &["oracle-check", "--trials", "50", "--seed", "1", "--report", "rep.json"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rep: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("rep.json")).unwrap()).unwrap();
    assert_eq!(rep["passed"], true);
    assert!(rep["counterexamples"].as_array().unwrap().is_empty());
}

#[test]
fn oracle_check_catches_injected_fault() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        &[
            "oracle-check",
            "--trials",
            "10",
            "--seed",
            "1",
            "--report",
            "rep.json",
            "--inject-fault",
        ],
    );
    assert_eq!(code(&o), 3);
    let rep: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("rep.json")).unwrap()).unwrap();
    assert_eq!(rep["passed"], false);
    let cx = rep["counterexamples"].as_array().unwrap();
    assert!(cx.iter().any(|c| c["check"] == "parl-threshold-exact"));
    assert!(cx[0]["instance"]["ensemble"].is_object());
}

#[test]
fn oracle_check_rejects_zero_trials() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(dir.path(), &["oracle-check", "--trials", "0"])), 1);
}
