use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn ice(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ice"))
        .current_dir(dir)
        .args(args)
        .env_remove("ICE_BUDGET")
        .env_remove("ICE_SEED")
        .output()
        .expect("binary runs")
}

fn ok_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn err_json(out: &Output) -> Value {
    assert!(!out.status.success());
    serde_json::from_slice(&out.stderr).expect("stderr is JSON")
}

fn synth_table(dir: &Path) {
    ok_json(&ice(dir, &["synth", "--kind", "clustered", "--rows", "5000", "--domain", "256", "--out", "t.json"]));
}

#[test]
fn end_to_end_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_table(d);
    let w = ok_json(&ice(
        d,
        &["gen-workload", "--table", "t.json", "--kind", "update-heavy", "--queries", "50", "--out", "w.jsonl"],
    ));
    assert_eq!((w["inserts"].as_u64(), w["deletes"].as_u64(), w["modifies"].as_u64()), (Some(250), Some(250), Some(500)));

    let b = ok_json(&ice(d, &["build", "--table", "t.json", "--out", "idx.bin"]));
    assert_eq!(b["rows"], 5000);
    assert_eq!(std::fs::metadata(d.join("idx.bin")).unwrap().len(), b["model_bytes"].as_u64().unwrap());

    let reports = ok_json(&ice(d, &["bench", "--table", "t.json", "--workload", "w.jsonl", "--methods", "ice,oracle"]));
    let reports = reports.as_array().unwrap();
    assert_eq!(reports.len(), 2);
    assert_eq!(reports[1]["qerror"]["max"], 1.0);
    assert!(reports[0]["qerror"]["max"].as_f64().unwrap() <= 20.0);
    assert_eq!(reports[0]["update_tuples"], 1500);

    let frozen = ok_json(&ice(d, &["bench", "--table", "t.json", "--workload", "w.jsonl", "--methods", "oracle", "--freeze"]));
    assert_eq!(frozen[0]["update_tuples"], 0);
}

#[test]
fn estimate_and_oracle_agree_on_exact_boxes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_table(d);
    ok_json(&ice(d, &["build", "--table", "t.json", "--out", "idx.bin"]));
    let full_high = {
        let t: Value = serde_json::from_slice(&std::fs::read(d.join("t.json")).unwrap()).unwrap();
        let betas: Vec<u64> = t["schema"]["betas"].as_array().unwrap().iter().map(|b| b.as_u64().unwrap()).collect();
        betas.iter().map(|b| ((1u64 << b) - 1).to_string()).collect::<Vec<_>>().join(",")
    };
    let est = ok_json(&ice(d, &["estimate", "--index", "idx.bin", "--low", "0,0,0", "--high", &full_high]));
    assert_eq!(est["est"], 5000.0);
    let oracle = ok_json(&ice(d, &["oracle", "--table", "t.json", "--low", "0,0,0", "--high", &full_high]));
    assert_eq!(oracle["cardinality"], 5000);
    // qbound 2 with hybrid on must land within a factor of two of the truth
    let mid = ["0,0,0", "40,40,40"];
    let truth = ok_json(&ice(d, &["oracle", "--table", "t.json", "--low", mid[0], "--high", mid[1]]))["cardinality"].as_f64().unwrap();
    let e = ok_json(&ice(d, &["estimate", "--table", "t.json", "--qbound", "2", "--low", mid[0], "--high", mid[1]]))["est"]
        .as_f64()
        .unwrap();
    if truth > 0.0 {
        assert!(e / truth <= 2.0 && truth / e <= 2.0, "est {e} truth {truth}");
    }
}

#[test]
fn csv_output_and_env_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_table(d);
    ok_json(&ice(d, &["gen-workload", "--table", "t.json", "--queries", "20", "--out", "w.jsonl"]));
    let out = Command::new(env!("CARGO_BIN_EXE_ice"))
        .current_dir(d)
        .args(["sweep", "--table", "t.json", "--workload", "w.jsonl", "--param", "budget", "--values", "500,1000", "--format", "csv"])
        .env("ICE_DMAX", "3")
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut rows = csv::Reader::from_reader(text.as_bytes());
    let header = rows.headers().unwrap().clone();
    let dmax = header.iter().position(|h| h == "dmax").unwrap();
    let budget = header.iter().position(|h| h == "budget").unwrap();
    let recs: Vec<csv::StringRecord> = rows.records().map(Result::unwrap).collect();
    assert_eq!(recs.len(), 2);
    assert_eq!((&recs[0][budget], &recs[0][dmax]), ("500", "3"));
    assert_eq!(&recs[1][budget], "1000");
}

#[test]
fn failures_are_json_with_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    synth_table(d);
    std::fs::write(d.join("bad.csv"), "a,b\n1,2\n3\n").unwrap();
    let e = err_json(&ice(d, &["ingest", "bad.csv", "--out", "x.json"]));
    assert_eq!(e["error"]["kind"], "parse");
    assert!(e["error"]["message"].as_str().unwrap().contains("line 3"));

    let e = err_json(&ice(d, &["sweep", "--table", "t.json", "--workload", "missing.jsonl", "--param", "bogus", "--values", "1"]));
    assert_eq!(e["error"]["kind"], "argument");

    let e = err_json(&ice(d, &["nonsense"]));
    assert_eq!(e["error"]["kind"], "usage");

    ok_json(&ice(d, &["synth", "--kind", "uniform", "--rows", "100", "--attrs", "2", "--out", "other.json"]));
    ok_json(&ice(d, &["gen-workload", "--table", "other.json", "--queries", "5", "--out", "w.jsonl"]));
    let e = err_json(&ice(d, &["bench", "--table", "t.json", "--workload", "w.jsonl"]));
    assert_eq!(e["error"]["kind"], "schema_mismatch");

    let e = err_json(&ice(d, &["estimate", "--table", "t.json", "--budget", "0", "--low", "0,0,0", "--high", "1,1,1"]));
    assert_eq!(e["error"]["kind"], "argument");
}

#[test]
fn raw_bounds_round_inward() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("t.csv"), "city,temp\nOslo,3.5\nLima,18\nOslo,-2\nRiga,3.5\n").unwrap();
    ok_json(&ice(d, &["ingest", "t.csv", "--categorical", "city", "--out", "t.json"]));
    let card = |lo: &str, hi: &str| {
        ok_json(&ice(d, &["oracle", "--table", "t.json", "--raw", "--low", lo, "--high", hi]))["cardinality"].as_u64().unwrap()
    };
    assert_eq!(card("Oslo,0", "Riga,10"), 2);
    assert_eq!(card("Oslo,4", "Riga,10"), 0);
    let est = ok_json(&ice(d, &["estimate", "--table", "t.json", "--raw", "--low", "Oslo,4", "--high", "Riga,10"]));
    assert_eq!(est["est"], 0.0);
    let est = ok_json(&ice(d, &["estimate", "--table", "t.json", "--raw", "--low", "Oslo,-5", "--high", "Lima,20"]));
    let e = est["est"].as_f64().unwrap();
    assert!(e > 0.0 && e <= 4.0, "{e}");
}
