//! A deliberately weakened addition must be caught by the oracle.

use leaktrace::analyzer::{run, AnalysisConfig};
use leaktrace::corpus;
use leaktrace::msym::mutation::with_broken_add;
use leaktrace::oracle::{self, check_bound, region_sizes, valuations};

#[test]
fn dropped_carry_propagation_is_witnessed() {
    let p = corpus::get("branch_offset").unwrap().program();
    let cfg = AnalysisConfig::with_observers(p.bitwidth, &["d/addr"]).unwrap();
    let lams = valuations(p.bitwidth, &region_sizes(&p).unwrap(), 50, 1).unwrap();

    let sound = run(&p, &cfg).unwrap();
    assert!(check_bound(&p, &cfg.observers, &sound, &lams).unwrap().ok());

    let broken = with_broken_add(|| run(&p, &cfg).unwrap());
    assert_eq!(broken.observers[0].count, 1u32.into());
    let v = check_bound(&p, &cfg.observers, &broken, &lams).unwrap();
    assert!(!v.ok());
    let w = &v.violations[0];
    assert_eq!((w.exact, w.bound.as_str()), (2, "1"));

    let views = oracle::replay(&p, &cfg.observers[0], w).unwrap();
    assert_eq!(views, w.views);
    assert_ne!(views[0], views[1]);
}

#[test]
fn the_mutation_is_scoped() {
    let p = corpus::get("branch_offset").unwrap().program();
    let cfg = AnalysisConfig::with_observers(p.bitwidth, &["d/addr"]).unwrap();
    let _ = with_broken_add(|| run(&p, &cfg).unwrap());
    assert_eq!(run(&p, &cfg).unwrap().observers[0].count, 2u32.into());
}
