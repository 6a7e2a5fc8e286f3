use std::collections::BTreeSet;
use std::path::Path;

use leaktrace::analyzer::{run, AnalysisConfig, Status};
use leaktrace::corpus;

#[test]
fn manifest_matches_files_on_disk() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus");
    let on_disk: BTreeSet<String> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.ends_with(".ir"))
        .collect();
    let listed: BTreeSet<String> = corpus::manifest().iter().map(|k| k.file_name()).collect();
    assert_eq!(on_disk, listed);
    for k in corpus::manifest() {
        assert_eq!(std::fs::read_to_string(dir.join(k.file_name())).unwrap(), k.source);
    }
}

#[test]
fn every_kernel_meets_its_goldens() {
    for k in corpus::manifest() {
        let p = k.program();
        assert_eq!(p.bitwidth, 12, "{}", k.name);
        assert!(!k.expected.is_empty(), "{} has no goldens", k.name);
        let specs: Vec<&str> = k.expected.iter().map(|e| e.0).collect();
        let cfg = AnalysisConfig::with_observers(p.bitwidth, &specs).unwrap();
        let r = run(&p, &cfg).unwrap();
        assert_eq!(r.status(), Status::Ok, "{}", k.name);
        for (o, bits) in k.expected {
            assert_eq!(r.get(o).unwrap().bits, *bits, "{} {o}", k.name);
        }
    }
}

#[test]
fn names_are_unique_and_sorted() {
    let names: Vec<&str> = corpus::manifest().iter().map(|k| k.name).collect();
    let mut sorted = names.clone();
    sorted.sort();
    sorted.dedup();
    assert_eq!(names, sorted);
    assert!(corpus::get("sqm").is_some());
    assert!(corpus::get("nope").is_none());
}
