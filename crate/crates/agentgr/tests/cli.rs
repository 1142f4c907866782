//! End-to-end tests of the `agentgr` binary: exit codes, idempotent
//! manifests, the side-by-side comparison table.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn write_fixture(dir: &Path, n_groups: usize, n_users: usize, n_items: usize) {
    let mut items = String::new();
    for i in 0..n_items {
        items.push_str(&format!("i{i:03}\tplace number {i}\n"));
    }
    let mut user_item = String::new();
    for u in 0..n_users {
        user_item.push_str(&format!("u{u:03}\ti{:03}\n", u % n_items));
        user_item.push_str(&format!("u{u:03}\ti{:03}\n", (u * 5 + 2) % n_items));
    }
    let mut group_item = String::new();
    let mut group_user = String::new();
    for g in 0..n_groups {
        for k in 0..3 {
            group_item.push_str(&format!("g{g:03}\ti{:03}\n", (g * 3 + k) % n_items));
        }
        for k in 0..2 {
            group_user.push_str(&format!("g{g:03}\tu{:03}\n", (g + k) % n_users));
        }
    }
    fs::write(dir.join("items.tsv"), items).unwrap();
    fs::write(dir.join("user_item.tsv"), user_item).unwrap();
    fs::write(dir.join("group_item.tsv"), group_item).unwrap();
    fs::write(dir.join("group_user.tsv"), group_user).unwrap();
}

fn write_config(dir: &Path) -> std::path::PathBuf {
    let body = format!(
        r#"
seed = 11
cache_dir = "{0}/cache"
output_dir = "{0}/out"

[data]
user_item = "{0}/user_item.tsv"
group_item = "{0}/group_item.tsv"
group_user = "{0}/group_user.tsv"
items = "{0}/items.tsv"

[eval]
k_values = [5, 10]
n_negatives = 10
"#,
        dir.display()
    );
    let path = dir.join("agentgr.toml");
    fs::write(&path, body).unwrap();
    path
}

fn agentgr(config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_agentgr"))
        .arg("--config")
        .arg(config)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn assert_code(output: &Output, expected: i32) {
    let stderr = String::from_utf8_lossy(&output.stderr);
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert_eq!(
        output.status.code(),
        Some(expected),
        "stdout:\n{stdout}\nstderr:\n{stderr}"
    );
}

#[test]
fn missing_data_file_exits_2_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), 3, 5, 12);
    let config = write_config(dir.path());
    fs::remove_file(dir.path().join("items.tsv")).unwrap();
    let out = agentgr(&config, &["ingest"]);
    assert_code(&out, 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("items.tsv"));
}

#[test]
fn unknown_strategy_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), 3, 5, 12);
    let config = write_config(dir.path());
    let out = agentgr(&config, &["recommend", "--strategy", "banana"]);
    assert_code(&out, 1);
}

#[test]
fn stage_out_of_order_fails_naming_the_missing_stage() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), 3, 5, 12);
    let config = write_config(dir.path());
    assert_code(&agentgr(&config, &["ingest"]), 0);
    let out = agentgr(&config, &["pipeline", "profile"]);
    assert_code(&out, 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("metapath artifacts missing"));
}

#[test]
fn unreachable_http_backend_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), 3, 5, 12);
    let body = format!(
        r#"
seed = 11
cache_dir = "{0}/cache"
output_dir = "{0}/out"

[data]
user_item = "{0}/user_item.tsv"
group_item = "{0}/group_item.tsv"
group_user = "{0}/group_user.tsv"
items = "{0}/items.tsv"

[llm]
backend = "http"
endpoint = "http://127.0.0.1:1/never"
max_retries = 0
retry_backoff_ms = 1
"#,
        dir.path().display()
    );
    let config = dir.path().join("agentgr.toml");
    fs::write(&config, body).unwrap();
    assert_code(&agentgr(&config, &["ingest"]), 0);
    let out = agentgr(&config, &["pipeline", "metapath"]);
    assert_code(&out, 3);
}

#[test]
fn ingest_is_idempotent_under_a_fixed_seed() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), 4, 6, 15);
    let config = write_config(dir.path());
    assert_code(&agentgr(&config, &["ingest"]), 0);
    let first = fs::read(dir.path().join("out/split.json")).unwrap();
    assert_code(&agentgr(&config, &["ingest"]), 0);
    let second = fs::read(dir.path().join("out/split.json")).unwrap();
    assert_eq!(first, second);
}

#[test]
fn full_cli_run_with_comparison_table() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), 20, 25, 40);
    let config = write_config(dir.path());

    assert_code(&agentgr(&config, &["ingest"]), 0);
    assert_code(
        &agentgr(&config, &["pipeline", "metapath", "--backend", "mock"]),
        0,
    );
    assert_code(&agentgr(&config, &["pipeline", "profile"]), 0);
    assert_code(&agentgr(&config, &["pipeline", "topics"]), 0);
    assert_code(&agentgr(&config, &["pipeline", "leaders"]), 0);

    // one context document per group
    let contexts = fs::read_dir(dir.path().join("out/contexts"))
        .unwrap()
        .count();
    assert_eq!(contexts, 20);

    assert_code(&agentgr(&config, &["recommend", "--strategy", "static"]), 0);
    assert_code(
        &agentgr(&config, &["recommend", "--strategy", "dynamic"]),
        0,
    );
    assert!(
        dir.path()
            .join("out/transcripts")
            .read_dir()
            .unwrap()
            .count()
            == 20
    );

    let static_results = dir.path().join("out/results_static.jsonl");
    let dynamic_results = dir.path().join("out/results_dynamic.jsonl");
    let out = agentgr(
        &config,
        &[
            "evaluate",
            "--results",
            static_results.to_str().unwrap(),
            dynamic_results.to_str().unwrap(),
        ],
    );
    assert_code(&out, 0);
    let table = String::from_utf8_lossy(&out.stdout);
    // header + one row per strategy, all four metric columns present
    assert!(table.contains("HR@5") && table.contains("NDCG@5"));
    assert!(table.contains("HR@10") && table.contains("NDCG@10"));
    assert!(table.contains("static") && table.contains("dynamic"));

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/report.json")).unwrap())
            .unwrap();
    assert_eq!(report.as_array().unwrap().len(), 2);
    // 20-group fixture: every strategy report carries 4 metric cells
    for entry in report.as_array().unwrap() {
        assert_eq!(entry["n_groups"].as_u64(), Some(20));
        assert_eq!(entry["per_k"].as_object().unwrap().len(), 2);
    }
}

#[test]
fn two_process_level_runs_are_byte_identical() {
    // every command is its own process here, so this checks determinism
    // across processes, not just within one
    let data_dir = tempfile::tempdir().unwrap();
    write_fixture(data_dir.path(), 6, 9, 18);

    let mut outputs: Vec<std::collections::BTreeMap<String, Vec<u8>>> = Vec::new();
    for _ in 0..2 {
        let work = tempfile::tempdir().unwrap();
        let body = format!(
            r#"
seed = 11
cache_dir = "{1}/cache"
output_dir = "{1}/out"

[data]
user_item = "{0}/user_item.tsv"
group_item = "{0}/group_item.tsv"
group_user = "{0}/group_user.tsv"
items = "{0}/items.tsv"

[eval]
n_negatives = 8
"#,
            data_dir.path().display(),
            work.path().display()
        );
        let config = work.path().join("agentgr.toml");
        fs::write(&config, body).unwrap();
        for args in [
            vec!["ingest"],
            vec!["pipeline", "metapath"],
            vec!["pipeline", "profile"],
            vec!["pipeline", "topics"],
            vec!["pipeline", "leaders"],
            vec!["recommend", "--strategy", "static"],
        ] {
            assert_code(&agentgr(&config, &args), 0);
        }
        let mut snapshot = std::collections::BTreeMap::new();
        fn walk(dir: &Path, base: &Path, into: &mut std::collections::BTreeMap<String, Vec<u8>>) {
            for entry in fs::read_dir(dir).unwrap() {
                let path = entry.unwrap().path();
                if path.is_dir() {
                    walk(&path, base, into);
                } else {
                    let rel = path
                        .strip_prefix(base)
                        .unwrap()
                        .to_string_lossy()
                        .to_string();
                    if rel.starts_with("telemetry_") {
                        continue;
                    }
                    into.insert(rel, fs::read(&path).unwrap());
                }
            }
        }
        let out_dir = work.path().join("out");
        walk(&out_dir, &out_dir, &mut snapshot);
        outputs.push(snapshot);
    }
    assert_eq!(
        outputs[0].keys().collect::<Vec<_>>(),
        outputs[1].keys().collect::<Vec<_>>()
    );
    for (path, bytes) in &outputs[0] {
        assert_eq!(bytes, &outputs[1][path], "{path} differs across processes");
    }
}

#[test]
fn evaluate_empty_results_reports_no_evaluable_groups() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), 3, 5, 12);
    let config = write_config(dir.path());
    assert_code(&agentgr(&config, &["ingest"]), 0);
    let empty = dir.path().join("out/results_static.jsonl");
    fs::write(&empty, "").unwrap();
    let out = agentgr(&config, &["evaluate", "--results", empty.to_str().unwrap()]);
    assert_code(&out, 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("no evaluable groups"));
}

#[test]
fn evaluate_rejects_malformed_result_lines_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), 3, 5, 12);
    let config = write_config(dir.path());
    assert_code(&agentgr(&config, &["ingest"]), 0);
    let path = dir.path().join("out/results_static.jsonl");
    fs::write(&path, "{not json}\n").unwrap();
    let out = agentgr(&config, &["evaluate", "--results", path.to_str().unwrap()]);
    assert_code(&out, 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains(":1:"),
        "error should carry the line number: {stderr}"
    );
}

#[test]
fn leadership_disabled_omits_leader_everywhere() {
    let dir = tempfile::tempdir().unwrap();
    write_fixture(dir.path(), 3, 5, 12);
    let config_path = dir.path().join("agentgr.toml");
    let body = format!(
        r#"
seed = 11
cache_dir = "{0}/cache"
output_dir = "{0}/out"

[data]
user_item = "{0}/user_item.tsv"
group_item = "{0}/group_item.tsv"
group_user = "{0}/group_user.tsv"
items = "{0}/items.tsv"

[eval]
n_negatives = 5

[leadership]
enabled = false
"#,
        dir.path().display()
    );
    fs::write(&config_path, body).unwrap();
    for args in [
        vec!["ingest"],
        vec!["pipeline", "metapath"],
        vec!["pipeline", "profile"],
        vec!["pipeline", "topics"],
        vec!["pipeline", "leaders"],
        vec!["recommend", "--strategy", "static"],
    ] {
        assert_code(&agentgr(&config_path, &args), 0);
    }
    for entry in fs::read_dir(dir.path().join("out/contexts")).unwrap() {
        let raw = fs::read_to_string(entry.unwrap().path()).unwrap();
        assert!(!raw.contains("\"leader\""), "leader must be omitted: {raw}");
    }
}
