//! Runs the `vhred` binary end to end.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn toy_corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/toy.txt")
}

fn vhred(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vhred"))
        .args(args)
        .env_remove("VHRED_RUN_ROOT")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = vhred(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn train_short(out: &Path, extra: &[&str]) {
    let corpus = toy_corpus();
    let mut args = vec![
        "train",
        "--preset",
        "toy",
        "--corpus",
        corpus.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--max-batches",
        "40",
        "--validate-every",
        "20",
    ];
    args.extend_from_slice(extra);
    ok(&args);
}

fn read(p: impl AsRef<Path>) -> Vec<u8> {
    fs::read(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

#[test]
fn train_twice_gives_identical_files() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    train_short(&a, &["--seed", "3"]);
    train_short(&b, &["--seed", "3"]);
    for f in ["train.log", "valid.log", "best.ckpt", "last.ckpt", "config.txt"] {
        assert_eq!(read(a.join(f)), read(b.join(f)), "{f} differs");
    }
    let log = String::from_utf8(read(a.join("train.log"))).unwrap();
    assert_eq!(log.lines().count(), 41);

    let c = dir.path().join("c");
    train_short(&c, &["--seed", "4"]);
    assert_ne!(read(a.join("train.log")), read(c.join("train.log")));
}

#[test]
fn config_snapshot_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    train_short(&a, &["--set", "learning_rate=0.02"]);
    let snap = a.join("config.txt");
    let b = dir.path().join("b");
    ok(&["train", "--config", snap.to_str().unwrap(), "--out", b.to_str().unwrap()]);
    assert_eq!(read(a.join("train.log")), read(b.join("train.log")));
    assert_eq!(read(a.join("config.txt")), read(b.join("config.txt")));
    let text = String::from_utf8(read(&snap)).unwrap();
    assert!(text.contains("learning_rate=0.02\n"));
    assert!(text.contains("max_batches=40\n"));
}

#[test]
fn relative_run_directories_go_under_the_run_root() {
    let root = tempfile::tempdir().unwrap();
    let corpus = toy_corpus();
    let out = Command::new(env!("CARGO_BIN_EXE_vhred"))
        .args(["train", "--corpus", corpus.to_str().unwrap(), "--out", "runs/x"])
        .args(["--max-batches", "2", "--validate-every", "1"])
        .env("VHRED_RUN_ROOT", root.path())
        .current_dir(root.path().parent().unwrap())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(root.path().join("runs/x/last.ckpt").is_file());
    let banner = String::from_utf8_lossy(&out.stderr);
    assert!(banner.contains("preset toy version"), "{banner}");
}

#[test]
fn generate_is_deterministic_and_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    train_short(&run, &[]);
    let ckpt = run.join("best.ckpt");
    let ctx = dir.path().join("ctx.txt");
    fs::write(&ctx, "hello there </u> hi how are you\nwhat is your name\n").unwrap();
    let gen = |seed: &str, name: &str| {
        let out = dir.path().join(name);
        ok(&[
            "generate",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--context-file",
            ctx.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--n-turns",
            "2",
            "--seed",
            seed,
        ]);
        read(out)
    };
    let a = gen("1", "a.txt");
    assert_eq!(a, gen("1", "b.txt"));
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.lines().all(|l| l.matches("</u>").count() == 1), "{text}");

    let sampled = |name: &str| {
        let out = dir.path().join(name);
        ok(&[
            "generate",
            "--checkpoint",
            ckpt.to_str().unwrap(),
            "--context-file",
            ctx.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--temperature",
            "1.0",
        ]);
        read(out)
    };
    assert_eq!(sampled("s1.txt"), sampled("s2.txt"));
}

#[test]
fn retrieval_baseline_answers_from_the_pool() {
    let dir = tempfile::tempdir().unwrap();
    let ctx = dir.path().join("ctx.txt");
    fs::write(&ctx, "where do you live\n").unwrap();
    let out = ok(&[
        "generate",
        "--retrieval-pool",
        toy_corpus().to_str().unwrap(),
        "--context-file",
        ctx.to_str().unwrap(),
    ]);
    let pool = fs::read_to_string(toy_corpus()).unwrap();
    let answer = String::from_utf8(out.stdout).unwrap();
    let answer = answer.trim();
    assert!(!answer.is_empty());
    assert!(pool.lines().any(|l| l.ends_with(answer)), "{answer}");
}

#[test]
fn evaluate_identical_responses_score_one() {
    let dir = tempfile::tempdir().unwrap();
    let emb = dir.path().join("emb.txt");
    fs::write(&emb, "3 2\nhello 1 0\nthere 0 1\nfriend 0.6 0.8\n").unwrap();
    let resp = dir.path().join("r.txt");
    fs::write(&resp, "hello there\nfriend\n").unwrap();
    let out = ok(&[
        "evaluate",
        "--responses",
        resp.to_str().unwrap(),
        "--references",
        resp.to_str().unwrap(),
        "--embeddings",
        emb.to_str().unwrap(),
        "--metrics",
        "avg,greedy,extrema,ci",
        "--preferences",
        "50,50,0",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    let all = text.lines().find(|l| l.starts_with("all\t")).expect(&text);
    let cols: Vec<&str> = all.split('\t').collect();
    for c in &cols[1..6] {
        let v: f64 = c.parse().unwrap();
        assert!((v - 1.0).abs() < 1e-9, "{all}");
    }
    assert!(text.contains("wins\t50.0000\t8.22"), "{text}");
}

#[test]
fn gradcheck_passes() {
    let out = ok(&["gradcheck", "--preset", "toy", "--set", "embedding_dim=4", "--set", "encoder_hidden=4",
        "--set", "context_hidden=4", "--set", "decoder_hidden=4", "--set", "gate_dim=4", "--set", "latent_dim=2"]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("max relative discrepancy"));
}

#[test]
fn synthesize_writes_corpus_and_labels() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("syn.txt");
    ok(&["synthesize", "--dialogues", "12", "--seed", "2", "--out", out.to_str().unwrap()]);
    let corpus = fs::read_to_string(&out).unwrap();
    let labels = fs::read_to_string(dir.path().join("syn.txt.labels")).unwrap();
    assert_eq!(corpus.lines().count(), 12);
    assert_eq!(labels.lines().count(), 12);
}

#[test]
fn exit_codes() {
    assert_eq!(vhred(&["train", "--bogus"]).status.code(), Some(2));
    assert_eq!(vhred(&[]).status.code(), Some(2));
    assert_eq!(vhred(&["--help"]).status.code(), Some(0));
    let dir = tempfile::tempdir().unwrap();
    let missing = vhred(&["train", "--corpus", "/nonexistent/c.txt", "--out", dir.path().to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).lines().any(|l| l.starts_with("error:")));
    let unknown = vhred(&["gradcheck", "--preset", "nope"]);
    assert_eq!(unknown.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&unknown.stderr).contains("ubuntu-hred"));
}

#[test]
fn help_documents_configuration() {
    let out = ok(&["--help"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("VHRED_RUN_ROOT"));
    assert!(text.contains("config.txt"));
}
