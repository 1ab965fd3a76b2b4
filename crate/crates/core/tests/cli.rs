mod common;

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use common::{gaussian, write_temp_embedding};
use embcomp::io::read_text_embedding;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_embcomp")).args(args).current_dir(dir).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = run(dir, args);
    assert_eq!(o.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    stdout(&o)
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    write_temp_embedding(dir.path(), "base.txt", &gaussian(300, 12, 5));
    dir
}

#[test]
fn help_lists_every_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cases: [(&str, &[&str]); 6] = [
        ("compress", &["--method", "--bits", "--dim", "--rounding", "--clip-search", "--keep-v"]),
        ("measure", &["--lambda", "--measures", "--out"]),
        ("select", &["--criterion", "--out"]),
        ("evaluate", &["--perf", "--reports", "--out", "--csv", "--tasks", "--measures"]),
        ("simulate", &["--config", "--out", "--csv"]),
        ("reconstruct", &[]),
    ];
    for (cmd, flags) in cases {
        let text = ok(dir.path(), &[cmd, "--help"]);
        for f in flags.iter().chain(&["--seed", "--threads", "--format"]) {
            assert!(text.contains(f), "{cmd} --help lacks {f}");
        }
    }
    assert!(ok(dir.path(), &["--version"]).contains(embcomp::VERSION));
}

#[test]
fn exit_codes_follow_error_kind() {
    let dir = setup();
    let p = dir.path();
    assert_eq!(run(p, &["compress", "--bogus"]).status.code(), Some(1));
    assert_eq!(run(p, &[]).status.code(), Some(1));
    // pca takes --dim, not --bits
    assert_eq!(run(p, &["compress", "--method", "pca", "--bits", "2", "base.txt", "o.eqc"]).status.code(), Some(1));
    assert_eq!(run(p, &["--threads", "0", "compress", "--method", "uniform", "--bits", "1", "base.txt", "o"]).status.code(), Some(1));
    assert_eq!(run(p, &["compress", "--method", "uniform", "--bits", "1", "missing.txt", "o"]).status.code(), Some(2));
    fs::write(p.join("bad.txt"), "a 1 2\nb 3\n").unwrap();
    let o = run(p, &["compress", "--method", "uniform", "--bits", "1", "bad.txt", "o"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"));
    fs::write(p.join("garbage.eqc"), b"EQC1 not really").unwrap();
    assert_eq!(run(p, &["reconstruct", "garbage.eqc", "out.txt"]).status.code(), Some(2));
    // rank-deficient embedding breaks the pca factorization rank
    fs::write(p.join("flat.txt"), "a 0 0\nb 0 0\nc 0 0\n").unwrap();
    let code = run(p, &["compress", "--method", "pca", "--dim", "1", "flat.txt", "o"]).status.code();
    assert!(matches!(code, Some(2) | Some(3)), "{code:?}");
}

#[test]
fn compress_output_is_seed_and_thread_deterministic() {
    let dir = setup();
    let p = dir.path();
    for (out, threads) in [("a.eqc", "1"), ("b.eqc", "4"), ("c.eqc", "2")] {
        ok(p, &["--seed", "3", "--threads", threads, "compress", "--method", "uniform", "--bits", "2", "--rounding", "stoch", "base.txt", out]);
    }
    ok(p, &["--seed", "4", "compress", "--method", "uniform", "--bits", "2", "--rounding", "stoch", "base.txt", "d.eqc"]);
    let read = |f: &str| fs::read(p.join(f)).unwrap();
    assert_eq!(read("a.eqc"), read("b.eqc"));
    assert_eq!(read("a.eqc"), read("c.eqc"));
    assert_ne!(read("a.eqc"), read("d.eqc"));

    ok(p, &["--threads", "1", "measure", "base.txt", "a.eqc", "d.eqc", "--out", "r1.json"]);
    ok(p, &["--threads", "4", "measure", "base.txt", "a.eqc", "d.eqc", "--out", "r4.json"]);
    assert_eq!(read("r1.json"), read("r4.json"));
}

#[test]
fn select_prefers_the_lossless_candidate() {
    let dir = setup();
    let p = dir.path();
    ok(p, &["compress", "--method", "uniform", "--bits", "1", "base.txt", "u1.eqc"]);
    ok(p, &["compress", "--method", "pca", "--dim", "3", "base.txt", "pca3.eqc"]);
    fs::copy(p.join("base.txt"), p.join("copy.txt")).unwrap();
    let text = ok(p, &["select", "--out", "sel.json", "base.txt", "u1.eqc", "copy.txt", "pca3.eqc"]);
    assert!(text.lines().any(|l| l == "winner: copy (copy.txt)"), "{text}");
    let sel: serde_json::Value = serde_json::from_slice(&fs::read(p.join("sel.json")).unwrap()).unwrap();
    assert_eq!(sel["kind"], "selection");
}

#[test]
fn measure_rejects_misaligned_vocabularies_and_duplicate_ids() {
    let dir = setup();
    let p = dir.path();
    write_temp_embedding(p, "short.txt", &gaussian(200, 12, 6));
    assert_eq!(run(p, &["measure", "base.txt", "short.txt", "--out", "r.json"]).status.code(), Some(2));
    fs::create_dir(p.join("sub")).unwrap();
    fs::copy(p.join("base.txt"), p.join("sub/base.txt")).unwrap();
    assert_eq!(run(p, &["measure", "base.txt", "base.txt", "sub/base.txt", "--out", "r.json"]).status.code(), Some(1));
}

#[test]
fn reconstruct_round_trips_pca_with_basis() {
    let dir = setup();
    let p = dir.path();
    ok(p, &["compress", "--method", "pca", "--dim", "12", "--keep-v", "base.txt", "full.eqc"]);
    let text = ok(p, &["reconstruct", "full.eqc", "back.txt"]);
    assert!(text.contains("300 x 12"), "{text}");
    let (a, va) = read_text_embedding(&p.join("base.txt"), Default::default()).unwrap().into_parts();
    let (b, vb) = read_text_embedding(&p.join("back.txt"), Default::default()).unwrap().into_parts();
    assert_eq!(va, vb);
    let worst = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-6, "{worst}");
}

#[test]
fn evaluate_reads_measure_reports() {
    let dir = setup();
    let p = dir.path();
    fs::create_dir(p.join("reports")).unwrap();
    ok(p, &["compress", "--method", "uniform", "--bits", "1", "base.txt", "u1.eqc"]);
    ok(p, &["compress", "--method", "uniform", "--bits", "4", "base.txt", "u4.eqc"]);
    ok(p, &["compress", "--method", "pca", "--dim", "2", "base.txt", "p2.eqc"]);
    ok(p, &["measure", "base.txt", "u1.eqc", "u4.eqc", "p2.eqc", "--out", "reports/all.json"]);
    fs::write(
        p.join("perf.csv"),
        "candidate_id,task,performance,seed\nu4,sst,0.9,0\nu1,sst,0.7,0\np2,sst,0.5,0\nu4,sst,0.88,1\n",
    )
    .unwrap();
    let text = ok(p, &["evaluate", "--perf", "perf.csv", "--reports", "reports", "--out", "reports/eval.json", "--csv", "eval.csv"]);
    let line = text.lines().find(|l| l.starts_with("sst\teigenspace_overlap\t")).expect(&text);
    let cols: Vec<&str> = line.split('\t').collect();
    assert_eq!(cols[2], "3");
    assert_eq!(cols[4].parse::<f64>().unwrap(), 0.0, "{line}");
    // a second run sees its own output in the report directory and skips it
    let again = ok(p, &["evaluate", "--perf", "perf.csv", "--reports", "reports", "--out", "reports/eval.json"]);
    assert!(again.contains(&line.to_string()));
    assert!(fs::read_to_string(p.join("eval.csv")).unwrap().lines().count() > 1);
}

#[test]
fn simulate_reports_the_overlap_bound() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(p.join("t3.json"), r#"{"bits": 4, "a": 1.0}"#).unwrap();
    let text = ok(p, &["simulate", "theorem3", "--config", "t3.json", "--out", "t3.out.json"]);
    assert!(text.contains("0.08889"), "{text}");
    let v: serde_json::Value = serde_json::from_slice(&fs::read(p.join("t3.out.json")).unwrap()).unwrap();
    let bound = v["body"]["bound"]["value"].as_f64().unwrap();
    assert!((bound - 20.0 / 225.0).abs() < 1e-12);
    fs::write(p.join("bad.json"), r#"{"bits": 4, "bogus": 1}"#).unwrap();
    assert_eq!(run(p, &["simulate", "theorem3", "--config", "bad.json", "--out", "x.json"]).status.code(), Some(2));
    assert_eq!(
        run(p, &["simulate", "theorem3", "--config", "t3.json", "--out", "x.json", "--csv", "x.csv"]).status.code(),
        Some(1)
    );
}
