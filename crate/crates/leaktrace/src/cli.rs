//! The `leaktrace` command-line driver.
//!
//! Exit codes: `0` success, `1` usage, parse or program errors, `2` an
//! inconclusive result (unroll limit, Top-widened label, unbounded store),
//! `3` a bound violated during `--validate` or a corpus golden mismatch.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::analyzer::{analyze, AnalysisConfig, AnalysisError, LeakReport, Status, DEFAULT_UNROLL};
use crate::corpus;
use crate::ir::{parse, parse_with_bitwidth, Program};
use crate::msym::DEFAULT_CAP;
use crate::observers::Observer;
use crate::oracle::{self, Verdict, Witness, DEFAULT_SAMPLES};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_INCONCLUSIVE: i32 = 2;
pub const EXIT_VIOLATION: i32 = 3;

/// Observers used when none are given.
pub const DEFAULT_OBSERVERS: &[&str] = &["i/addr", "i/block:6", "i/block:6~", "d/addr", "d/block:6", "d/block:6~"];

#[derive(Parser, Debug)]
#[command(name = "leaktrace", version, about = "Bound cache side-channel leakage of IR programs")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Analyze IR files and print a bound per observer.
    Analyze {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Analyze the bundled corpus and compare against its goldens.
    Corpus {
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Re-run a witness produced by `--validate --json`.
    Replay { file: PathBuf, witness: PathBuf },
}

#[derive(Args, Debug, Clone)]
struct RunOpts {
    /// Observer spec such as `d/block:6` or `i/addr`; repeatable.
    #[arg(short = 'o', long = "observer", value_name = "SPEC")]
    observers: Vec<String>,
    /// Override the program's bit width.
    #[arg(long)]
    bitwidth: Option<u32>,
    #[arg(long, default_value_t = DEFAULT_UNROLL)]
    unroll: u32,
    /// Largest set of masked symbols kept before widening to Top.
    #[arg(long, default_value_t = DEFAULT_CAP)]
    cap: usize,
    #[arg(long)]
    json: bool,
    /// Write one DOT file per observer into this directory.
    #[arg(long, value_name = "DIR")]
    dot: Option<PathBuf>,
    /// Check every bound against exact counts from concrete runs.
    #[arg(long)]
    validate: bool,
    /// Sampled heap layouts per file when the layout space is too large to enumerate.
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    samples: usize,
    #[arg(long, env = "LEAKTRACE_SEED", default_value_t = 0)]
    seed: u64,
}

/// Result for one input file, as emitted by `--json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileReport {
    pub file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<LeakReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<Verdict>,
    /// Corpus goldens that did not match, as `observer: expected bits`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mismatches: Vec<String>,
}

impl FileReport {
    pub fn exit_code(&self) -> i32 {
        if self.verdict.as_ref().is_some_and(|v| !v.ok()) || !self.mismatches.is_empty() {
            EXIT_VIOLATION
        } else if self.error.is_some() || self.report.as_ref().is_some_and(|r| r.status() != Status::Ok) {
            EXIT_INCONCLUSIVE
        } else {
            EXIT_OK
        }
    }
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn main(args: impl IntoIterator<Item = OsString>) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    match cli.cmd {
        Command::Analyze { mut files, opts } => {
            files.sort();
            let mut inputs = Vec::new();
            for f in &files {
                let text = match fs::read_to_string(f) {
                    Ok(t) => t,
                    Err(e) => return fail(format!("{}: {e}", f.display())),
                };
                match parse_with_bitwidth(&text, opts.bitwidth) {
                    Ok(p) => inputs.push((f.display().to_string(), p, &[][..])),
                    Err(e) => return fail(format!("{}: {e}", f.display())),
                }
            }
            run_all(inputs, &opts)
        }
        Command::Corpus { opts } => {
            let mut inputs = Vec::new();
            for k in corpus::manifest() {
                match parse_with_bitwidth(k.source, opts.bitwidth) {
                    Ok(p) => inputs.push((k.file_name(), p, k.expected)),
                    Err(e) => return fail(format!("{}: {e}", k.file_name())),
                }
            }
            run_all(inputs, &opts)
        }
        Command::Replay { file, witness } => replay(&file, &witness),
    }
}

fn fail(msg: String) -> i32 {
    eprintln!("error: {msg}");
    EXIT_ERROR
}

/// File name, program, and corpus goldens (empty for user files).
type Input = (String, Program, &'static [(&'static str, f64)]);

fn run_all(inputs: Vec<Input>, opts: &RunOpts) -> i32 {
    let mut out = Vec::new();
    for (name, p, expected) in inputs {
        match run_file(&name, &p, expected, opts) {
            Ok(r) => out.push(r),
            Err(msg) => return fail(msg),
        }
    }
    if opts.json {
        match serde_json::to_string_pretty(&out) {
            Ok(s) => println!("{s}"),
            Err(e) => return fail(e.to_string()),
        }
    } else {
        for r in &out {
            print_text(r);
        }
    }
    out.iter().map(FileReport::exit_code).max().unwrap_or(EXIT_OK)
}

/// `Err` only for conditions that make the whole invocation a usage error.
fn run_file(name: &str, p: &Program, expected: &[(&str, f64)], opts: &RunOpts) -> Result<FileReport, String> {
    let mut specs: Vec<String> = opts.observers.clone();
    if specs.is_empty() {
        specs = DEFAULT_OBSERVERS.iter().map(|s| s.to_string()).collect();
        for (o, _) in expected {
            if !specs.iter().any(|s| s == o) {
                specs.push(o.to_string());
            }
        }
    }
    let observers: Vec<Observer> = specs
        .iter()
        .map(|s| Observer::parse(s, p.bitwidth))
        .collect::<Result<_, _>>()
        .map_err(|e| format!("{name}: {e}"))?;
    let mut cfg = AnalysisConfig::new(p.bitwidth, observers);
    cfg.unroll = opts.unroll;
    cfg.cap = opts.cap;
    let mut fr = FileReport { file: name.to_string(), report: None, error: None, verdict: None, mismatches: vec![] };
    let analysis = match analyze(p, &cfg) {
        Ok(a) => a,
        Err(e @ AnalysisError::UnboundedStore { .. }) => {
            fr.error = Some(e.to_string());
            return Ok(fr);
        }
        Err(e) => return Err(format!("{name}: {e}")),
    };
    if let Some(dir) = &opts.dot {
        write_dots(dir, name, &cfg.observers, |i| analysis.dot(i)).map_err(|e| format!("{}: {e}", dir.display()))?;
    }
    for (o, bits) in expected {
        match analysis.report.get(o) {
            Some(r) if r.bits == *bits => {}
            Some(r) => fr.mismatches.push(format!("{o}: expected {bits} bits, got {}", r.bits)),
            None => {}
        }
    }
    if opts.validate {
        let v = validate(p, &cfg.observers, &analysis.report, opts).map_err(|e| format!("{name}: {e}"))?;
        fr.verdict = Some(v);
    }
    fr.report = Some(analysis.report);
    Ok(fr)
}

fn validate(
    p: &Program,
    observers: &[Observer],
    report: &LeakReport,
    opts: &RunOpts,
) -> Result<Verdict, oracle::OracleError> {
    let sizes = oracle::region_sizes(p)?;
    let lambdas = oracle::valuations(p.bitwidth, &sizes, opts.samples, opts.seed)?;
    oracle::check_bound(p, observers, report, &lambdas)
}

fn write_dots(dir: &Path, name: &str, observers: &[Observer], dot: impl Fn(usize) -> String) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    let stem = Path::new(name).file_stem().map_or_else(|| name.to_string(), |s| s.to_string_lossy().into_owned());
    for (i, o) in observers.iter().enumerate() {
        let obs: String = o.name.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect();
        fs::write(dir.join(format!("{stem}.{obs}.dot")), dot(i))?;
    }
    Ok(())
}

fn print_text(r: &FileReport) {
    println!("== {}", r.file);
    if let Some(e) = &r.error {
        println!("inconclusive: {e}");
    }
    if let Some(rep) = &r.report {
        print!("{rep}");
    }
    for m in &r.mismatches {
        println!("golden mismatch: {m}");
    }
    if let Some(v) = &r.verdict {
        println!(
            "validation: {} layouts x {} secret assignments, {} violation(s)",
            v.valuations,
            v.assignments,
            v.violations.len()
        );
        for c in &v.observers {
            println!("  {:<12} bound {:>8}  max exact {}", c.observer, c.bound, c.max_exact);
        }
        for w in &v.violations {
            if let Ok(s) = serde_json::to_string(w) {
                println!("witness: {s}");
            }
        }
    }
}

fn replay(file: &Path, witness: &Path) -> i32 {
    let read = |p: &Path| fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()));
    let (text, wtext) = match (read(file), read(witness)) {
        (Ok(t), Ok(w)) => (t, w),
        (Err(e), _) | (_, Err(e)) => return fail(e),
    };
    let p = match parse(&text) {
        Ok(p) => p,
        Err(e) => return fail(format!("{}: {e}", file.display())),
    };
    let w: Witness = match serde_json::from_str(&wtext) {
        Ok(w) => w,
        Err(e) => return fail(format!("{}: {e}", witness.display())),
    };
    let obs = match Observer::parse(&w.observer, p.bitwidth) {
        Ok(o) => o,
        Err(e) => return fail(e.to_string()),
    };
    let views = match oracle::replay(&p, &obs, &w) {
        Ok(v) => v,
        Err(e) => return fail(e.to_string()),
    };
    for (h, v) in w.highs.iter().zip(&views) {
        println!("high {h:?} -> view {v:x?}");
    }
    let distinct: std::collections::BTreeSet<_> = views.iter().collect();
    let bound: usize = w.bound.parse().unwrap_or(usize::MAX);
    println!("{} distinct views, bound {}", distinct.len(), w.bound);
    if distinct.len() > bound {
        EXIT_VIOLATION
    } else {
        EXIT_OK
    }
}
