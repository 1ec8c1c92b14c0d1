//! Acceptance gate for the binary: running every command twice with the
//! same inputs and seed must produce byte-identical stdout and files.
//! Prints a single `criterion 8: PASS|FAIL` line.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_boinf"))
}

fn data(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

/// All regular files under `dir`, keyed by relative path.
fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// Runs the command once and returns (stdout, files written under out_dir).
fn run_once(args: &[String], out_dir: &Path) -> (Vec<u8>, BTreeMap<String, Vec<u8>>) {
    let output = bin().args(args).output().expect("binary runs");
    assert!(
        output.status.success(),
        "command {args:?} failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    (output.stdout, snapshot(out_dir))
}

#[test]
fn criterion_8_every_command_is_byte_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    std::fs::create_dir(&out).unwrap();
    let out_s = out.to_string_lossy().into_owned();

    // Small three-model log so the transfer command has triples to sweep.
    let tri = tmp.path().join("tri.jsonl");
    let mut lines = String::new();
    let answers: &[(&str, &str, &[&str])] = &[
        ("x", "t1", &["g", "g", "b"]),
        ("x", "t2", &["g", "b", "b"]),
        ("x", "t3", &["g", "g", "g"]),
        ("x", "t4", &["c", "c", "g"]),
        ("y", "t1", &["g", "b", "b"]),
        ("y", "t2", &["g", "g", "b"]),
        ("y", "t3", &["g", "g", "g"]),
        ("y", "t4", &["c", "g", "g"]),
        ("z", "t1", &["b", "b", "g"]),
        ("z", "t2", &["b", "g", "g"]),
        ("z", "t3", &["g", "g", "g"]),
        ("z", "t4", &["g", "g", "c"]),
    ];
    for (model, problem, ans) in answers {
        for (i, a) in ans.iter().enumerate() {
            lines.push_str(&format!(
                "{{\"model\":\"{model}\",\"problem\":\"{problem}\",\"answer\":\"{a}\",\"tokens\":{},\"gold\":\"g\"}}\n",
                10 + i
            ));
        }
    }
    std::fs::write(&tri, lines).unwrap();
    let tri_s = tri.to_string_lossy().into_owned();

    let commands: Vec<Vec<String>> = vec![
        vec![
            "ingest-check".into(),
            "--data".into(),
            data("demo.jsonl"),
            "--problems".into(),
            data("demo-problems.jsonl"),
        ],
        vec![
            "simulate".into(),
            "--data".into(),
            data("demo.jsonl"),
            "--b".into(),
            "30".into(),
            "--seed".into(),
            "9".into(),
        ],
        vec![
            "simulate".into(),
            "--data".into(),
            data("demo.jsonl"),
            "--b".into(),
            "inf".into(),
            "--n-max".into(),
            "5".into(),
            "--json".into(),
        ],
        vec![
            "optimize".into(),
            "--data".into(),
            data("aime2025.jsonl"),
            "--out".into(),
            format!("{out_s}/weights.json"),
            "--emit-lp".into(),
            format!("{out_s}/program.lp"),
        ],
        vec![
            "curve".into(),
            "--data".into(),
            data("demo.jsonl"),
            "--kind".into(),
            "both".into(),
            "--trials".into(),
            "10".into(),
            "--mc-samples".into(),
            "200".into(),
            "--n-grid".into(),
            "1,2".into(),
            "--b-grid".into(),
            "3,30".into(),
            "--seed".into(),
            "5".into(),
            "--out-dir".into(),
            out_s.clone(),
        ],
        vec![
            "learn-curve".into(),
            "--data".into(),
            data("aime2025.jsonl"),
            "--sizes".into(),
            "0,3".into(),
            "--reps".into(),
            "2".into(),
            "--seed".into(),
            "3".into(),
            "--out-dir".into(),
            out_s.clone(),
        ],
        vec![
            "transfer".into(),
            "--data".into(),
            tri_s.clone(),
            "--out-dir".into(),
            out_s.clone(),
        ],
        vec![
            "bound".into(),
            "--delta".into(),
            "0.05".into(),
            "--gap".into(),
            "0.2".into(),
            "--s".into(),
            "3".into(),
        ],
    ];

    let mut unstable = Vec::new();
    for args in &commands {
        let (stdout1, files1) = run_once(args, &out);
        let (stdout2, files2) = run_once(args, &out);
        if stdout1 != stdout2 || files1 != files2 {
            unstable.push(args.join(" "));
        }
    }
    let ok = unstable.is_empty();
    println!(
        "criterion 8: {} ({}/{} commands byte-identical across repeated runs, stdout and written files)",
        if ok { "PASS" } else { "FAIL" },
        commands.len() - unstable.len(),
        commands.len()
    );
    assert!(ok, "unstable commands: {unstable:?}");
}
