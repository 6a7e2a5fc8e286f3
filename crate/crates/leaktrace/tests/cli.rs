use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use leaktrace::cli::{FileReport, EXIT_ERROR, EXIT_INCONCLUSIVE, EXIT_OK, EXIT_VIOLATION};
use leaktrace::oracle::{Verdict, Witness};

fn corpus_file(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus").join(name)
}

fn leaktrace(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_leaktrace")).args(args).env_remove("LEAKTRACE_SEED").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn gather_table() {
    let f = corpus_file("gather_aligned.ir");
    let o = leaktrace(&["analyze", f.to_str().unwrap(), "-o", "d/block:6", "-o", "d/addr"]);
    assert_eq!(code(&o), EXIT_OK);
    let out = stdout(&o);
    let row = |obs: &str| out.lines().find(|l| l.starts_with(obs)).unwrap().split_whitespace().collect::<Vec<_>>();
    assert_eq!(row("d/block:6")[1..], ["1", "0.000", "ok"]);
    assert_eq!(row("d/addr")[1..], ["4096", "12.000", "ok"]);
}

#[test]
fn validate_appends_a_verdict() {
    let f = corpus_file("sqm.ir");
    let o = leaktrace(&["analyze", f.to_str().unwrap(), "-o", "i/addr", "-o", "i/block:6~", "--validate"]);
    assert_eq!(code(&o), EXIT_OK);
    assert!(stdout(&o).contains("0 violation(s)"));
}

#[test]
fn usage_and_parse_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.ir", ".bitwidth 12\nFROB r1\nHALT\n");
    let ok = corpus_file("align.ir");
    assert_eq!(code(&leaktrace(&["analyze", &bad])), EXIT_ERROR);
    assert_eq!(code(&leaktrace(&["analyze", ok.to_str().unwrap(), "-o", "d/line:6"])), EXIT_ERROR);
    assert_eq!(code(&leaktrace(&["analyze"])), EXIT_ERROR);
    assert_eq!(code(&leaktrace(&["frobnicate"])), EXIT_ERROR);
    assert_eq!(code(&leaktrace(&["analyze", "/nonexistent.ir"])), EXIT_ERROR);
    assert_eq!(code(&leaktrace(&["--help"])), EXIT_OK);
}

#[test]
fn inconclusive_results_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let looped = write(
        dir.path(),
        "loop.ir",
        ".bitwidth 12\nMALLOC r2, 64\nMOV r1, 10\nloop: LOAD r3, [r2+0]\nSUB r1, 1\nJNZ loop\nHALT\n",
    );
    assert_eq!(code(&leaktrace(&["analyze", &looped])), EXIT_OK);
    let o = leaktrace(&["analyze", &looped, "--unroll", "3", "--json"]);
    assert_eq!(code(&o), EXIT_INCONCLUSIVE);
    let reports: Vec<FileReport> = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(reports[0].report.as_ref().unwrap().status().to_string(), "unroll-limit");

    let store = write(
        dir.path(),
        "store.ir",
        ".bitwidth 12\n.high r1 {0, 1, 2}\nMOV r2, r1\nSHL r2, 4\nSTORE [r2+0], r1\nHALT\n",
    );
    assert_eq!(code(&leaktrace(&["analyze", &store])), EXIT_OK);
    let o = leaktrace(&["analyze", &store, "--cap", "2"]);
    assert_eq!(code(&o), EXIT_INCONCLUSIVE);
    assert!(stdout(&o).contains("unbounded address"));
}

#[test]
fn violations_exit_3() {
    let fr = FileReport {
        file: "x.ir".into(),
        report: None,
        error: None,
        verdict: Some(Verdict {
            valuations: 1,
            assignments: 2,
            observers: vec![],
            violations: vec![Witness {
                observer: "d/addr".into(),
                bound: "1".into(),
                exact: 2,
                lambda: vec![0x100],
                highs: vec![vec![0], vec![1]],
                views: vec![vec![4], vec![5]],
            }],
        }),
        mismatches: vec![],
    };
    assert_eq!(fr.exit_code(), EXIT_VIOLATION);
}

#[test]
fn replaying_a_witness_against_a_too_small_bound_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let w = Witness {
        observer: "d/addr".into(),
        bound: "1".into(),
        exact: 2,
        lambda: vec![0x400],
        highs: vec![vec![0], vec![1]],
        views: vec![],
    };
    let wf = write(dir.path(), "w.json", &serde_json::to_string(&w).unwrap());
    let f = corpus_file("branch_offset.ir");
    let o = leaktrace(&["replay", f.to_str().unwrap(), &wf]);
    assert_eq!(code(&o), EXIT_VIOLATION);
    assert!(stdout(&o).contains("2 distinct views"));

    let w = Witness { bound: "2".into(), ..w };
    let wf = write(dir.path(), "w2.json", &serde_json::to_string(&w).unwrap());
    assert_eq!(code(&leaktrace(&["replay", f.to_str().unwrap(), &wf])), EXIT_OK);
}

#[test]
fn json_round_trips() {
    let a = corpus_file("branch_offset.ir");
    let b = corpus_file("sqm.ir");
    let o = leaktrace(&["analyze", b.to_str().unwrap(), a.to_str().unwrap(), "--json", "--validate", "--samples", "5"]);
    assert_eq!(code(&o), EXIT_OK);
    let text = stdout(&o);
    let reports: Vec<FileReport> = serde_json::from_str(&text).unwrap();
    assert_eq!(reports.len(), 2);
    assert!(reports[0].file.ends_with("branch_offset.ir"), "files are sorted");
    assert_eq!(serde_json::to_string_pretty(&reports).unwrap(), text.trim_end());
    let r = reports[1].report.as_ref().unwrap();
    assert_eq!(r.get("i/addr").unwrap().bits, 1.0);
}

#[test]
fn seed_flag_and_environment_agree() {
    let f = corpus_file("gather_aligned.ir");
    let f = f.to_str().unwrap();
    let args = ["analyze", f, "--json", "--validate", "--samples", "4"];
    let flag = leaktrace(&[&args[..], &["--seed", "9"]].concat());
    let env = Command::new(env!("CARGO_BIN_EXE_leaktrace")).args(args).env("LEAKTRACE_SEED", "9").output().unwrap();
    let other = leaktrace(&[&args[..], &["--seed", "10"]].concat());
    assert_eq!(flag.stdout, env.stdout);
    assert_eq!(code(&flag), EXIT_OK);
    assert_eq!(code(&other), EXIT_OK);
}

#[test]
fn dot_files_per_observer() {
    let dir = tempfile::tempdir().unwrap();
    let f = corpus_file("branch_offset.ir");
    let o = leaktrace(&[
        "analyze",
        f.to_str().unwrap(),
        "-o",
        "d/addr",
        "-o",
        "i/block:6~",
        "--dot",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), EXIT_OK);
    let dot = std::fs::read_to_string(dir.path().join("branch_offset.d_addr.dot")).unwrap();
    assert!(dot.starts_with("digraph"));
    assert!(dir.path().join("branch_offset.i_block_6_.dot").exists());
}

#[test]
fn corpus_subcommand_matches_goldens() {
    let o = leaktrace(&["corpus"]);
    assert_eq!(code(&o), EXIT_OK, "{}", stdout(&o));
    assert!(!stdout(&o).contains("golden mismatch"));
}

#[test]
fn in_process_entry_point() {
    let f = corpus_file("align.ir");
    let args = ["leaktrace", "analyze", f.to_str().unwrap(), "-o", "d/addr"].map(Into::into);
    assert_eq!(leaktrace::cli::main(args), EXIT_OK);
}
