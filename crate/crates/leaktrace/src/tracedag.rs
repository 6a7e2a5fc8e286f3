//! Sets of observation sequences as a rooted DAG.
//!
//! Each vertex carries a label (a projected access set, or ε for joins) and a
//! set `R` of repetition counts. A root-to-`v` path denotes the sequences
//! `a_1^{r_1} … a_k^{r_k}` with `a_i` drawn from the label and `r_i` from `R`.
//! Vertices are immutable and hash-consed: updating a frontier never alters
//! a vertex that another frontier still points to.
//!
//! ```
//! use leaktrace::msym::{ProjSet, Projection};
//! use leaktrace::tracedag::TraceDag;
//!
//! let p = Projection::new(12, 6);
//! let mut dag = TraceDag::new();
//! let root = dag.root_frontier();
//! let a = dag.update(&root, ProjSet::unit(p, 1));
//! let b = dag.update(&root, ProjSet::unit(p, 2));
//! let j = dag.join(&a, &b);
//! assert_eq!(dag.count_frontier(&j, false), 2u32.into());
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::{self, Write as _};

use num_bigint::BigUint;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::msym::{ProjSet, Valuation};

/// Distinct repetition counts kept before `R` widens to an interval.
pub const REPS_CAP: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VertexId(pub u32);

impl fmt::Display for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    Eps,
    Obs(ProjSet),
}

impl Label {
    /// `|L(v)|` with ε counting as one.
    pub fn card(&self) -> BigUint {
        match self {
            Label::Eps => BigUint::one(),
            Label::Obs(ProjSet::Top { width }) => BigUint::one() << *width,
            Label::Obs(ProjSet::Elems(s)) => BigUint::from(s.len()),
        }
    }

    fn is_singleton(&self) -> bool {
        self.card().is_one()
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Eps => write!(f, "ε"),
            Label::Obs(s) => write!(f, "{s}"),
        }
    }
}

impl fmt::Debug for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

/// Repetition counts: an explicit set, or `min..=max` once it grows past
/// [`REPS_CAP`] elements.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Reps {
    Set(BTreeSet<u32>),
    Range(u32, u32),
}

impl Reps {
    pub fn one() -> Reps {
        Reps::Set(BTreeSet::from([1]))
    }

    /// # Panics
    /// On an empty set or a zero count.
    pub fn from_set(s: BTreeSet<u32>) -> Reps {
        assert!(!s.is_empty() && !s.contains(&0), "repetition counts are nonempty and positive");
        Reps::Set(s).normalized()
    }

    fn normalized(self) -> Reps {
        match self {
            Reps::Set(s) if s.len() > REPS_CAP => Reps::Range(*s.first().unwrap(), *s.last().unwrap()),
            r => r,
        }
    }

    fn bounds(&self) -> (u32, u32) {
        match self {
            Reps::Set(s) => (*s.first().unwrap(), *s.last().unwrap()),
            Reps::Range(a, b) => (*a, *b),
        }
    }

    pub fn card(&self) -> u64 {
        match self {
            Reps::Set(s) => s.len() as u64,
            Reps::Range(a, b) => u64::from(b - a) + 1,
        }
    }

    pub fn contains(&self, r: u32) -> bool {
        match self {
            Reps::Set(s) => s.contains(&r),
            Reps::Range(a, b) => (*a..=*b).contains(&r),
        }
    }

    pub fn values(&self) -> Vec<u32> {
        match self {
            Reps::Set(s) => s.iter().copied().collect(),
            Reps::Range(a, b) => (*a..=*b).collect(),
        }
    }

    /// `{r + 1 : r ∈ R}`.
    pub fn incremented(&self) -> Reps {
        match self {
            Reps::Set(s) => Reps::Set(s.iter().map(|r| r.saturating_add(1)).collect()),
            Reps::Range(a, b) => Reps::Range(a.saturating_add(1), b.saturating_add(1)),
        }
    }

    pub fn union(&self, other: &Reps) -> Reps {
        match (self, other) {
            (Reps::Set(a), Reps::Set(b)) => Reps::Set(a | b).normalized(),
            _ => {
                let (a0, a1) = self.bounds();
                let (b0, b1) = other.bounds();
                Reps::Range(a0.min(b0), a1.max(b1))
            }
        }
    }
}

impl fmt::Display for Reps {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Reps::Set(s) => {
                let parts: Vec<String> = s.iter().map(u32::to_string).collect();
                write!(f, "{{{}}}", parts.join(","))
            }
            Reps::Range(a, b) => write!(f, "[{a}..{b}]"),
        }
    }
}

impl fmt::Debug for Reps {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Vertex {
    pub parents: BTreeSet<VertexId>,
    pub label: Label,
    pub reps: Reps,
}

/// The analysis position in a DAG: one vertex, or two vertices whose join
/// waits for the next update.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Frontier {
    At(VertexId),
    Pending(VertexId, VertexId),
}

impl Frontier {
    pub fn vertices(&self) -> Vec<VertexId> {
        match *self {
            Frontier::At(v) => vec![v],
            Frontier::Pending(a, b) => vec![a, b],
        }
    }

    pub fn is_pending(&self) -> bool {
        matches!(self, Frontier::Pending(..))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceError {
    #[error("trace enumeration exceeds {0} sequences")]
    TooMany(usize),
    #[error("label element has no value under the valuation")]
    Unassigned,
}

/// Vertex and edge counts of the part of a DAG that a frontier depends on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DagSummary {
    pub vertices: usize,
    pub edges: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VertexDump {
    pub id: u32,
    pub parents: Vec<u32>,
    pub label: String,
    pub reps: String,
}

#[derive(Clone, Debug, Default)]
pub struct TraceDag {
    nodes: Vec<Vertex>,
    index: HashMap<Vertex, VertexId>,
}

impl TraceDag {
    /// A DAG holding only the root `r` with `L(r) = ε`, `R(r) = {1}`.
    pub fn new() -> TraceDag {
        let mut dag = TraceDag::default();
        dag.intern(Vertex { parents: BTreeSet::new(), label: Label::Eps, reps: Reps::one() });
        dag
    }

    pub fn root(&self) -> VertexId {
        VertexId(0)
    }

    pub fn root_frontier(&self) -> Frontier {
        Frontier::At(self.root())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn vertex(&self, v: VertexId) -> &Vertex {
        &self.nodes[v.0 as usize]
    }

    fn intern(&mut self, v: Vertex) -> VertexId {
        if let Some(&id) = self.index.get(&v) {
            return id;
        }
        let id = VertexId(u32::try_from(self.nodes.len()).expect("vertex id overflow"));
        self.nodes.push(v.clone());
        self.index.insert(v, id);
        id
    }

    /// Adds (or finds) a vertex. Parents must already exist, so ids are a
    /// topological order.
    ///
    /// # Panics
    /// On an empty or unknown parent set.
    pub fn add_vertex(&mut self, parents: BTreeSet<VertexId>, label: Label, reps: Reps) -> VertexId {
        assert!(!parents.is_empty(), "only the root has no parents");
        assert!(parents.iter().all(|p| (p.0 as usize) < self.nodes.len()), "unknown parent");
        self.intern(Vertex { parents, label, reps })
    }

    fn update_vertex(&mut self, v: VertexId, label: &Label) -> VertexId {
        let cur = self.vertex(v).clone();
        if v != self.root() && cur.label == *label && label.is_singleton() {
            let reps = cur.reps.incremented();
            return self.intern(Vertex { reps, ..cur });
        }
        self.intern(Vertex { parents: BTreeSet::from([v]), label: label.clone(), reps: Reps::one() })
    }

    /// Materializes an ε vertex under a pending frontier.
    pub fn resolve(&mut self, f: &Frontier) -> VertexId {
        match *f {
            Frontier::At(v) => v,
            Frontier::Pending(a, b) => {
                self.intern(Vertex { parents: BTreeSet::from([a, b]), label: Label::Eps, reps: Reps::one() })
            }
        }
    }

    /// Appends one access. A repeated singleton label folds into the current
    /// vertex by incrementing its repetitions; any other label gets a new
    /// vertex. A pending join first tries to let both sides absorb the
    /// access into one merged vertex, and otherwise resolves to ε.
    pub fn update(&mut self, f: &Frontier, label: ProjSet) -> Frontier {
        let label = Label::Obs(label);
        if let Frontier::Pending(a, b) = *f {
            let ua = self.update_vertex(a, &label);
            let ub = self.update_vertex(b, &label);
            if let [m] = self.merge(&[ua, ub])[..] {
                return Frontier::At(m);
            }
        }
        let v = self.resolve(f);
        Frontier::At(self.update_vertex(v, &label))
    }

    /// Merges vertices with equal parent sets and labels by uniting their
    /// repetitions.
    fn merge(&mut self, vs: &[VertexId]) -> Vec<VertexId> {
        let mut groups: BTreeMap<(BTreeSet<VertexId>, Label), Reps> = BTreeMap::new();
        let mut roots = BTreeSet::new();
        for &v in vs {
            if v == self.root() {
                roots.insert(v);
                continue;
            }
            let x = self.vertex(v).clone();
            groups.entry((x.parents, x.label)).and_modify(|r| *r = r.union(&x.reps)).or_insert(x.reps);
        }
        let mut out: BTreeSet<VertexId> = roots;
        for ((parents, label), reps) in groups {
            out.insert(self.intern(Vertex { parents, label, reps }));
        }
        out.into_iter().collect()
    }

    /// Joins two frontiers. Equal vertices and same-parent same-label
    /// vertices merge at once; two distinct vertices stay pending; a third
    /// distinct vertex forces an ε vertex.
    pub fn join(&mut self, f1: &Frontier, f2: &Frontier) -> Frontier {
        let mut all = f1.vertices();
        all.extend(f2.vertices());
        let merged = self.merge(&all);
        match merged[..] {
            [v] => Frontier::At(v),
            [a, b] => Frontier::Pending(a, b),
            _ => {
                let v =
                    self.intern(Vertex { parents: merged.into_iter().collect(), label: Label::Eps, reps: Reps::one() });
                Frontier::At(v)
            }
        }
    }

    /// Ancestors of the given vertices, themselves included, ascending.
    pub fn ancestors(&self, vs: &[VertexId]) -> Vec<VertexId> {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<VertexId> = vs.to_vec();
        while let Some(v) = stack.pop() {
            if seen.insert(v) {
                stack.extend(self.vertex(v).parents.iter().copied());
            }
        }
        seen.into_iter().collect()
    }

    /// `cnt(v) = |R(v)| · |L(v)| · Σ_{u ∈ parents(v)} cnt(u)` with `cnt(r) = 1`.
    /// Stuttering replaces `|R(v)|` by one.
    pub fn count(&self, v: VertexId, stuttering: bool) -> BigUint {
        self.count_all(&[v], stuttering).remove(&v).unwrap()
    }

    /// Sum of the counts of the frontier's vertices.
    pub fn count_frontier(&self, f: &Frontier, stuttering: bool) -> BigUint {
        let vs = f.vertices();
        let memo = self.count_all(&vs, stuttering);
        vs.iter().map(|v| &memo[v]).sum()
    }

    fn count_all(&self, vs: &[VertexId], stuttering: bool) -> HashMap<VertexId, BigUint> {
        let mut memo: HashMap<VertexId, BigUint> = HashMap::new();
        for v in self.ancestors(vs) {
            let x = self.vertex(v);
            let c = if x.parents.is_empty() {
                BigUint::one()
            } else {
                let sum: BigUint = x.parents.iter().map(|p| &memo[p]).sum();
                let reps = if stuttering { BigUint::one() } else { BigUint::from(x.reps.card()) };
                reps * x.label.card() * sum
            };
            memo.insert(v, c);
        }
        memo
    }

    /// All observation sequences a root-to-`v` path denotes under `lambda`.
    /// ε vertices contribute nothing. Fails once more than `limit`
    /// sequences accumulate at some vertex.
    pub fn concretize_traces(
        &self,
        v: VertexId,
        lambda: &Valuation,
        limit: usize,
    ) -> Result<BTreeSet<Vec<u64>>, TraceError> {
        let mut memo: HashMap<VertexId, BTreeSet<Vec<u64>>> = HashMap::new();
        for u in self.ancestors(&[v]) {
            let x = self.vertex(u);
            let mut prefixes: BTreeSet<Vec<u64>> = if x.parents.is_empty() {
                BTreeSet::from([Vec::new()])
            } else {
                x.parents.iter().flat_map(|p| memo[p].iter().cloned()).collect()
            };
            if let Label::Obs(set) = &x.label {
                if set.card() as usize > limit {
                    return Err(TraceError::TooMany(limit));
                }
                let units = set.concretize(lambda).ok_or(TraceError::Unassigned)?;
                let mut next = BTreeSet::new();
                for pre in &prefixes {
                    for &a in &units {
                        for r in x.reps.values() {
                            let mut s = pre.clone();
                            s.extend(std::iter::repeat(a).take(r as usize));
                            next.insert(s);
                            if next.len() > limit {
                                return Err(TraceError::TooMany(limit));
                            }
                        }
                    }
                }
                prefixes = next;
            }
            if prefixes.len() > limit {
                return Err(TraceError::TooMany(limit));
            }
            memo.insert(u, prefixes);
        }
        Ok(memo.remove(&v).unwrap())
    }

    pub fn summary(&self, f: &Frontier) -> DagSummary {
        let anc = self.ancestors(&f.vertices());
        let edges = anc.iter().map(|&v| self.vertex(v).parents.len()).sum();
        DagSummary { vertices: anc.len(), edges }
    }

    /// The vertices a frontier depends on, ascending.
    pub fn dump(&self, f: &Frontier) -> Vec<VertexDump> {
        self.ancestors(&f.vertices())
            .into_iter()
            .map(|v| {
                let x = self.vertex(v);
                VertexDump {
                    id: v.0,
                    parents: x.parents.iter().map(|p| p.0).collect(),
                    label: x.label.to_string(),
                    reps: x.reps.to_string(),
                }
            })
            .collect()
    }

    /// DOT rendering of every vertex.
    pub fn to_dot(&self) -> String {
        let all: Vec<VertexId> = (0..self.nodes.len() as u32).map(VertexId).collect();
        self.render_dot(&all)
    }

    /// DOT rendering of the part of the DAG a frontier depends on.
    pub fn to_dot_at(&self, f: &Frontier) -> String {
        self.render_dot(&self.ancestors(&f.vertices()))
    }

    fn render_dot(&self, vs: &[VertexId]) -> String {
        let mut out = String::from("digraph trace {\n  node [shape=box, fontname=monospace];\n");
        for &v in vs {
            let x = self.vertex(v);
            let text = format!("{v}\\n{}\\nR={}", x.label, x.reps).replace('"', "\\\"");
            let _ = writeln!(out, "  {} [label=\"{}\"];", v.0, text);
        }
        for &v in vs {
            for p in &self.vertex(v).parents {
                let _ = writeln!(out, "  {} -> {};", p.0, v.0);
            }
        }
        out.push_str("}\n");
        out
    }
}

/// `log2` of a count, exact for powers of two.
pub fn bits(count: &BigUint) -> f64 {
    if count.is_zero() {
        return 0.0;
    }
    let len = count.bits();
    if len <= 52 {
        return (count.iter_u64_digits().next().unwrap_or(0) as f64).log2();
    }
    let shift = len - 52;
    let top = (count >> shift).iter_u64_digits().next().unwrap_or(0) as f64;
    top.log2() + shift as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::msym::{project, MSymSet, MaskedSymbol, Projection, SymbolAllocator};

    fn unit(u: u64) -> ProjSet {
        ProjSet::unit(Projection::new(12, 6), u)
    }

    #[test]
    fn repetition_folds() {
        let mut d = TraceDag::new();
        let f = d.update(&d.root_frontier(), unit(7));
        let g = d.update(&f, unit(7));
        let Frontier::At(v) = g else { panic!() };
        assert_eq!(d.vertex(v).reps, Reps::from_set([2].into()));
        let g3 = d.update(&g, unit(7));
        let f3 = d.update(&g3, unit(8));
        assert_eq!(d.summary(&f3), DagSummary { vertices: 3, edges: 2 });
    }

    #[test]
    fn folding_leaves_shared_vertices_alone() {
        let mut d = TraceDag::new();
        let f = d.update(&d.root_frontier(), unit(7));
        let _ = d.update(&f, unit(7));
        let Frontier::At(v) = f else { panic!() };
        assert_eq!(d.vertex(v).reps, Reps::one());
    }

    #[test]
    fn multi_element_labels_do_not_fold() {
        let p = Projection::new(12, 0);
        let l = project(&MSymSet::constants(12, [1, 2], 8), p);
        let mut d = TraceDag::new();
        let f = d.update(&d.root_frontier(), l.clone());
        let g = d.update(&f, l);
        assert_eq!(d.count_frontier(&g, false), 4u32.into());
    }

    #[test]
    fn distinct_labels_append() {
        let mut d = TraceDag::new();
        let f = d.update(&d.root_frontier(), unit(1));
        let g = d.update(&f, unit(2));
        assert_ne!(f, g);
        assert_eq!(d.summary(&g).edges, 2);
    }

    #[test]
    fn join_same_parent_same_label_merges_reps() {
        let mut d = TraceDag::new();
        let a = d.update(&d.root_frontier(), unit(5));
        let b = d.update(&a, unit(5));
        let j = d.join(&a, &b);
        let Frontier::At(v) = j else { panic!("expected merge, got {j:?}") };
        assert_eq!(d.vertex(v).reps, Reps::from_set([1, 2].into()));
        assert_eq!(d.join(&j, &j), j);
    }

    #[test]
    fn diamond_counts() {
        let mut d = TraceDag::new();
        let r = d.root_frontier();
        let a = d.update(&r, unit(1));
        let b = d.update(&r, unit(2));
        let j = d.join(&a, &b);
        assert!(j.is_pending());
        let k = d.update(&j, unit(3));
        assert_eq!(d.count_frontier(&k, false), 2u32.into());
        assert_eq!(d.summary(&k), DagSummary { vertices: 5, edges: 5 });
    }

    #[test]
    fn delayed_join_collapses_same_block_arms() {
        let mut d = TraceDag::new();
        let base = d.update(&d.root_frontier(), unit(1));
        let mid = d.update(&base, unit(2));
        let long = d.update(&mid, unit(3));
        let short = d.update(&base, unit(2));
        let j = d.join(&long, &short);
        let k = d.update(&j, unit(3));
        assert_eq!(d.count_frontier(&k, true), 1u32.into());
        assert_eq!(d.count_frontier(&k, false), 2u32.into());
    }

    #[test]
    fn third_vertex_materializes() {
        let mut d = TraceDag::new();
        let r = d.root_frontier();
        let a = d.update(&r, unit(1));
        let b = d.update(&r, unit(2));
        let c = d.update(&r, unit(3));
        let ab = d.join(&a, &b);
        let j = d.join(&ab, &c);
        let Frontier::At(v) = j else { panic!() };
        assert_eq!(d.vertex(v).label, Label::Eps);
        assert_eq!(d.count(v, false), 3u32.into());
    }

    #[test]
    fn traces_of_small_dags() {
        let mut d = TraceDag::new();
        let l = Valuation::new();
        let f = d.update(&d.root_frontier(), unit(0xb));
        let g = d.update(&f, unit(0xb));
        let Frontier::At(v) = g else { panic!() };
        assert_eq!(d.concretize_traces(v, &l, 100).unwrap(), BTreeSet::from([vec![0xb, 0xb]]));
        let w = d.add_vertex([d.root()].into(), Label::Obs(unit(0xa)), Reps::from_set([1, 2].into()));
        assert_eq!(d.concretize_traces(w, &l, 100).unwrap(), BTreeSet::from([vec![0xa], vec![0xa, 0xa]]));
    }

    #[test]
    fn symbolic_labels_concretize() {
        let mut alloc = SymbolAllocator::new();
        let s = alloc.fresh(true);
        let p = Projection::new(12, 6);
        let x = project(&MSymSet::singleton(MaskedSymbol::symbol(s, 12)), p);
        let mut d = TraceDag::new();
        let Frontier::At(v) = d.update(&d.root_frontier(), x) else { panic!() };
        let lambda = Valuation::from([(s, 0x9c0)]);
        assert_eq!(d.concretize_traces(v, &lambda, 10).unwrap(), BTreeSet::from([vec![0x27]]));
        assert_eq!(d.concretize_traces(v, &Valuation::new(), 10), Err(TraceError::Unassigned));
    }

    #[test]
    fn top_label_counts_all_units() {
        let mut d = TraceDag::new();
        let f = d.update(&d.root_frontier(), ProjSet::Top { width: 64 });
        assert_eq!(d.count_frontier(&f, false), BigUint::one() << 64u32);
        assert_eq!(bits(&d.count_frontier(&f, false)), 64.0);
    }

    #[test]
    fn reps_widen() {
        let big: BTreeSet<u32> = (1..=65).collect();
        let r = Reps::from_set(big);
        assert_eq!(r, Reps::Range(1, 65));
        assert_eq!(r.incremented().card(), 65);
        assert_eq!(Reps::one().union(&r), Reps::Range(1, 65));
    }

    #[test]
    fn dot_output() {
        let d = TraceDag::new();
        let dot = d.to_dot();
        assert_eq!(dot.matches("->").count(), 0);
        assert_eq!(dot.matches("[label=").count(), 1);
        let mut d = TraceDag::new();
        let r = d.root_frontier();
        let (a, b) = (d.update(&r, unit(1)), d.update(&r, unit(2)));
        let j = d.join(&a, &b);
        let v = d.resolve(&j);
        let dot = d.to_dot_at(&Frontier::At(v));
        assert_eq!(dot.matches("->").count(), 4);
        assert_eq!(dot.matches("[label=").count(), 4);
    }

    #[test]
    fn bits_of_counts() {
        assert_eq!(bits(&BigUint::one()), 0.0);
        assert_eq!(bits(&BigUint::from(2u32)), 1.0);
        assert!((bits(&BigUint::from(3u32)) - 3f64.log2()).abs() < 1e-12);
        assert_eq!(bits(&(BigUint::one() << 1000u32)), 1000.0);
    }
}
