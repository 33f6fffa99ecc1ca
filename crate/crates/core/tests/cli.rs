use std::path::Path;
use std::process::{Command, Output};

fn cli(home: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_delta-embed"))
        .args(args)
        .current_dir(home)
        .env("DELTA_EMBED_HOME", home.join("reg"))
        .output()
        .expect("binary runs")
}

fn ok(home: &Path, args: &[&str]) -> String {
    let o = cli(home, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

#[test]
fn probe_show_lists_prompts_and_hash() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(dir.path(), &["probe", "show"]);
    assert_eq!(text.lines().count(), 6);
    let hash = ok(dir.path(), &["probe", "hash"]);
    assert!(text.ends_with(&format!("hash\t{hash}")));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(cli(dir.path(), &["--frobnicate"]).status.code(), Some(1));
    assert_eq!(cli(dir.path(), &["select", "nearest", "--k", "1"]).status.code(), Some(1));
    assert_eq!(cli(dir.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(cli(dir.path(), &["registry", "remove", "nobody"]).status.code(), Some(2));
    let o = cli(dir.path(), &["probe", "show", "--file", "missing.txt"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(o.stdout.is_empty());
    assert!(!o.stderr.is_empty());
}

#[test]
fn json_output_is_one_document() {
    let dir = tempfile::tempdir().unwrap();
    let v: serde_json::Value = serde_json::from_str(&ok(dir.path(), &["--json", "probe", "show", "--set", "one-word"])).unwrap();
    assert_eq!(v["prompts"].as_array().unwrap().len(), 5);
    assert_eq!(v["hash"].as_str().unwrap().len(), 64);
}

#[test]
fn corpus_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let a = ok(dir.path(), &["--seed", "3", "toylm", "corpus", "--domain", "brackets", "--size", "5"]);
    let b = ok(dir.path(), &["--seed", "3", "toylm", "corpus", "--domain", "brackets", "--size", "5"]);
    assert_eq!(a, b);
    assert_eq!(a.lines().count(), 5);
}

#[test]
fn train_dump_embed_register_analyze() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["toylm", "init", "--out", "base", "--d-model", "8", "--layers", "1", "--heads", "2", "--context", "128"]);
    let domains = ["arith", "upper"];
    for domain in domains {
        for split in ["1", "2"] {
            let id = format!("{domain}{split}");
            ok(d, &["--seed", split, "toylm", "train", "--ckpt", "base", "--out", &id, "--domain", domain, "--split", split, "--size", "20", "--steps", "20", "--lr", "3e-3"]);
            ok(d, &["toylm", "dump", "--ckpt", &id, "--base", "base", "--out-ft", &format!("{id}.ft"), "--out-base", "b.actv", "--logits"]);
            ok(d, &["embed", "--dump-ft", &format!("{id}.ft"), "--dump-base", "b.actv", "--out", &format!("{id}.json")]);
            ok(d, &["registry", "add", "--embedding", &format!("{id}.json"), "--label", domain]);
        }
    }
    let list = ok(d, &["registry", "list"]);
    assert_eq!(list.lines().count(), 4);

    let v: serde_json::Value = serde_json::from_str(&ok(d, &["--json", "analyze", "silhouette"])).unwrap();
    let mean = v["mean"].as_f64().unwrap();
    assert!((-1.0..=1.0).contains(&mean));
    assert_eq!(v["per_point"].as_object().unwrap().len(), 4);

    let csv = ok(d, &["analyze", "project", "--k", "2"]);
    assert_eq!(csv.lines().next().unwrap(), "model_id,label,c1,c2");
    assert_eq!(csv.lines().count(), 5);

    let nearest = ok(d, &["select", "nearest", "--query-id", "arith1", "--k", "3"]);
    assert_eq!(nearest.lines().count(), 3);
    assert!(!nearest.contains("arith1\t"));

    let r: serde_json::Value =
        serde_json::from_str(&ok(d, &["--json", "analyze", "retrieval", "--task", "arith=arith2.json"])).unwrap();
    assert_eq!(r["tasks"][0]["retrieved"], "arith2");

    // Adding the same id again is a data error and leaves the registry intact.
    assert_eq!(cli(d, &["registry", "add", "--embedding", "arith1.json"]).status.code(), Some(2));
    ok(d, &["registry", "remove", "arith1"]);
    assert_eq!(ok(d, &["registry", "list"]).lines().count(), 3);
}
