//! Rule mining over a triple set.
//!
//! The pipeline is: extract rule samples (co-occurring triple patterns),
//! aggregate them into candidate relation tuples, orient inference candidates
//! using the relation-label hierarchy, score each candidate by the fraction of
//! the triples it generates that are already known, keep those at or above a
//! per-type threshold, and finally ground the kept rules over the triples.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rayon::prelude::*;
use rustc_hash::{FxHashMap, FxHashSet};

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, RelationId, Triple, Vocab};

pub type ConceptId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RuleType {
    Inference,
    Transitivity,
    Antisymmetry,
}

impl RuleType {
    pub const ALL: [RuleType; 3] = [RuleType::Inference, RuleType::Transitivity, RuleType::Antisymmetry];

    pub fn as_str(self) -> &'static str {
        match self {
            RuleType::Inference => "inference",
            RuleType::Transitivity => "transitivity",
            RuleType::Antisymmetry => "antisymmetry",
        }
    }

    /// Number of relations in a rule of this type.
    pub fn arity(self) -> usize {
        match self {
            RuleType::Transitivity => 3,
            _ => 2,
        }
    }
}

impl fmt::Display for RuleType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RuleType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inference" => Ok(RuleType::Inference),
            "transitivity" => Ok(RuleType::Transitivity),
            "antisymmetry" => Ok(RuleType::Antisymmetry),
            _ => Err(Error::Config(format!("unknown rule type {s:?}"))),
        }
    }
}

/// Per-type selection thresholds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub inference: f64,
    pub transitivity: f64,
    pub antisymmetry: f64,
}

impl Thresholds {
    pub fn uniform(tau: f64) -> Self {
        Thresholds { inference: tau, transitivity: tau, antisymmetry: tau }
    }

    pub fn get(&self, t: RuleType) -> f64 {
        match t {
            RuleType::Inference => self.inference,
            RuleType::Transitivity => self.transitivity,
            RuleType::Antisymmetry => self.antisymmetry,
        }
    }

    fn validate(&self) -> Result<()> {
        for t in RuleType::ALL {
            let v = self.get(t);
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("threshold for {t} must be in [0,1], got {v}")));
            }
        }
        Ok(())
    }
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { inference: 0.5, transitivity: 0.6, antisymmetry: 0.5 }
    }
}

/// A relation tuple that co-occurs in rule samples.
///
/// Antisymmetry candidates keep their pair sorted (`relations[0] <= relations[1]`).
#[derive(Debug, Clone, PartialEq)]
pub struct RuleCandidate {
    pub rule_type: RuleType,
    pub relations: Vec<RelationId>,
    pub support: usize,
    pub confidence: Option<f64>,
    pub concept: Option<ConceptId>,
}

impl RuleCandidate {
    pub fn new(rule_type: RuleType, relations: Vec<RelationId>) -> Self {
        RuleCandidate { rule_type, relations, support: 0, confidence: None, concept: None }
    }
}

/// A selected rule with its confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub rule_type: RuleType,
    pub relations: Vec<RelationId>,
    pub confidence: f64,
    pub support: usize,
    /// Head concept of the consequent relation (inference rules only).
    pub concept: Option<ConceptId>,
}

/// A rule instantiated over concrete entities; triples are in rule order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GroundRule {
    /// `(h, r1, t) => (h, r2, t)`
    Inference { body: Triple, head: Triple, concept: Option<ConceptId> },
    /// `(e1, r1, e2) + (e2, r2, e3) => (e1, r3, e3)`
    Transitivity { first: Triple, second: Triple, head: Triple },
    /// `(h, r1, t) <=> (t, r2, h)`
    Antisymmetry { forward: Triple, backward: Triple },
}

impl GroundRule {
    pub fn inference(body: Triple, head: Triple, concept: Option<ConceptId>) -> Result<Self> {
        if body.head != head.head || body.tail != head.tail || body.relation == head.relation {
            return Err(Error::Contract(format!("not an inference instance: {body:?} => {head:?}")));
        }
        Ok(GroundRule::Inference { body, head, concept })
    }

    pub fn transitivity(first: Triple, second: Triple, head: Triple) -> Result<Self> {
        if first.tail != second.head || first.head != head.head || second.tail != head.tail {
            return Err(Error::Contract(format!(
                "not a transitivity instance: {first:?} + {second:?} => {head:?}"
            )));
        }
        Ok(GroundRule::Transitivity { first, second, head })
    }

    pub fn antisymmetry(forward: Triple, backward: Triple) -> Result<Self> {
        if forward.head != backward.tail || forward.tail != backward.head {
            return Err(Error::Contract(format!("not an antisymmetry instance: {forward:?} <=> {backward:?}")));
        }
        Ok(GroundRule::Antisymmetry { forward, backward })
    }

    pub fn rule_type(&self) -> RuleType {
        match self {
            GroundRule::Inference { .. } => RuleType::Inference,
            GroundRule::Transitivity { .. } => RuleType::Transitivity,
            GroundRule::Antisymmetry { .. } => RuleType::Antisymmetry,
        }
    }

    pub fn triples(&self) -> Vec<Triple> {
        match *self {
            GroundRule::Inference { body, head, .. } => vec![body, head],
            GroundRule::Transitivity { first, second, head } => vec![first, second, head],
            GroundRule::Antisymmetry { forward, backward } => vec![forward, backward],
        }
    }

    pub fn concept(&self) -> Option<ConceptId> {
        match *self {
            GroundRule::Inference { concept, .. } => concept,
            _ => None,
        }
    }

    /// Relation tuple in candidate form (antisymmetry pairs sorted).
    pub fn relation_key(&self) -> Vec<RelationId> {
        match *self {
            GroundRule::Inference { body, head, .. } => vec![body.relation, head.relation],
            GroundRule::Transitivity { first, second, head } => vec![first.relation, second.relation, head.relation],
            GroundRule::Antisymmetry { forward, backward } => {
                let (a, b) = (forward.relation, backward.relation);
                vec![a.min(b), a.max(b)]
            }
        }
    }

    /// The same instance with antisymmetry sides put in a canonical order, so
    /// that `x <=> y` and `y <=> x` compare equal.
    pub fn canonical(&self) -> GroundRule {
        match *self {
            GroundRule::Antisymmetry { forward, backward } if backward < forward => {
                GroundRule::Antisymmetry { forward: backward, backward: forward }
            }
            other => other,
        }
    }
}

const UNKNOWN_CONCEPT: &str = "<unknown>";

/// Concepts derived from hierarchical relation labels such as
/// `/location/country/capital` or `location.country.capital`.
///
/// The head concept of a relation is its label path minus the final property
/// segment (at most two levels). Every label `/a/b/...` also contributes the
/// ordering edge `a -> b` between type names, which is what orients inference
/// rules.
#[derive(Debug, Clone)]
pub struct ConceptHierarchy {
    concepts: Vocab,
    relation_concept: Vec<ConceptId>,
    relation_path: Vec<Vec<String>>,
    children: FxHashMap<String, Vec<String>>,
}

fn label_segments(label: &str) -> Vec<&str> {
    let segs: Vec<&str> = label.split('/').filter(|s| !s.is_empty()).collect();
    if segs.len() == 1 && segs[0].contains('.') {
        return segs[0].split('.').filter(|s| !s.is_empty()).collect();
    }
    segs
}

impl ConceptHierarchy {
    pub fn from_relations(relations: &Vocab) -> Self {
        let mut concepts = Vocab::new();
        concepts.intern(UNKNOWN_CONCEPT);
        let mut relation_concept = Vec::with_capacity(relations.len());
        let mut relation_path = Vec::with_capacity(relations.len());
        let mut children: FxHashMap<String, Vec<String>> = FxHashMap::default();
        for label in relations.labels() {
            let segs = label_segments(label);
            let path: Vec<String> = match segs.len() {
                0 | 1 => Vec::new(),
                2 => vec![segs[0].to_owned()],
                _ => vec![segs[0].to_owned(), segs[1].to_owned()],
            };
            if segs.len() >= 2 && segs[0] != segs[1] {
                let kids = children.entry(segs[0].to_owned()).or_default();
                if !kids.iter().any(|k| k == segs[1]) {
                    kids.push(segs[1].to_owned());
                }
            }
            let id = if path.is_empty() { 0 } else { concepts.intern(&path.join("/")) };
            relation_concept.push(id);
            relation_path.push(path);
        }
        ConceptHierarchy { concepts, relation_concept, relation_path, children }
    }

    pub fn unknown() -> ConceptId {
        0
    }

    pub fn concepts(&self) -> &Vocab {
        &self.concepts
    }

    pub fn head_concept(&self, r: RelationId) -> ConceptId {
        self.relation_concept.get(r as usize).copied().unwrap_or(0)
    }

    pub fn is_ancestor_or_equal(&self, ancestor: &str, descendant: &str) -> bool {
        if ancestor == descendant {
            return true;
        }
        let mut stack = vec![ancestor];
        let mut seen: FxHashSet<&str> = FxHashSet::default();
        while let Some(node) = stack.pop() {
            if !seen.insert(node) {
                continue;
            }
            for kid in self.children.get(node).into_iter().flatten() {
                if kid == descendant {
                    return true;
                }
                stack.push(kid);
            }
        }
        false
    }
}

/// Calls `visit` once per rule sample of the given type, in a deterministic order.
fn for_each_sample(graph: &KnowledgeGraph, rule_type: RuleType, mut visit: impl FnMut(GroundRule)) {
    match rule_type {
        RuleType::Inference => {
            for t in graph.triples() {
                for &r2 in graph.relations_between(t.head, t.tail) {
                    if r2 != t.relation {
                        visit(GroundRule::Inference {
                            body: *t,
                            head: Triple::new(t.head, r2, t.tail),
                            concept: None,
                        });
                    }
                }
            }
        }
        RuleType::Transitivity => {
            for first in graph.triples() {
                let (e1, e2) = (first.head, first.tail);
                if e1 == e2 {
                    continue;
                }
                for &(r2, e3) in graph.out_edges(e2) {
                    if e3 == e2 {
                        continue;
                    }
                    for &r3 in graph.relations_between(e1, e3) {
                        visit(GroundRule::Transitivity {
                            first: *first,
                            second: Triple::new(e2, r2, e3),
                            head: Triple::new(e1, r3, e3),
                        });
                    }
                }
            }
        }
        RuleType::Antisymmetry => {
            for x in graph.triples() {
                if x.head == x.tail {
                    continue;
                }
                for &r2 in graph.relations_between(x.tail, x.head) {
                    let y = Triple::new(x.tail, r2, x.head);
                    if *x < y {
                        visit(GroundRule::Antisymmetry { forward: *x, backward: y });
                    }
                }
            }
        }
    }
}

/// All rule samples of one type.
///
/// Inference: ordered pairs of triples sharing head and tail with different
/// relations. Transitivity: chains `(e1,r1,e2),(e2,r2,e3)` closed by some
/// `(e1,r3,e3)`, with `e1 != e2` and `e2 != e3`. Antisymmetry: unordered pairs
/// `{(h,r1,t),(t,r2,h)}` with `h != t`, each emitted once.
pub fn extract_samples(graph: &KnowledgeGraph, rule_type: RuleType) -> Vec<GroundRule> {
    let mut out = Vec::new();
    for_each_sample(graph, rule_type, |s| out.push(s));
    out
}

fn sort_candidates(cands: &mut [RuleCandidate]) {
    cands.sort_by(|a, b| {
        b.support
            .cmp(&a.support)
            .then(a.rule_type.cmp(&b.rule_type))
            .then_with(|| a.relations.cmp(&b.relations))
    });
}

fn candidates_from_counts(counts: FxHashMap<(RuleType, Vec<RelationId>), usize>) -> Vec<RuleCandidate> {
    let mut out: Vec<RuleCandidate> = counts
        .into_iter()
        .map(|((rule_type, relations), support)| RuleCandidate { support, ..RuleCandidate::new(rule_type, relations) })
        .collect();
    sort_candidates(&mut out);
    out
}

/// Counts samples per relation tuple; sorted by support descending, ties by
/// relation ids.
pub fn aggregate_candidates(samples: &[GroundRule]) -> Vec<RuleCandidate> {
    let mut counts: FxHashMap<(RuleType, Vec<RelationId>), usize> = FxHashMap::default();
    for s in samples {
        *counts.entry((s.rule_type(), s.relation_key())).or_default() += 1;
    }
    candidates_from_counts(counts)
}

/// Same result as `aggregate_candidates(&extract_samples(..))` without
/// materializing the samples.
pub fn mine_candidates(graph: &KnowledgeGraph, rule_type: RuleType) -> Vec<RuleCandidate> {
    let mut counts: FxHashMap<(RuleType, Vec<RelationId>), usize> = FxHashMap::default();
    for_each_sample(graph, rule_type, |s| *counts.entry((rule_type, s.relation_key())).or_default() += 1);
    candidates_from_counts(counts)
}

/// Keeps an inference candidate `r1 => r2` only if the concept of `r2` is an
/// ancestor-or-equal of the concept of `r1`, comparing at the first label
/// level where the two differ. Candidates over flat labels are rejected;
/// candidates whose differing levels are unrelated in the hierarchy are kept
/// (both orientations then compete on confidence).
pub fn orient_inference(candidate: &RuleCandidate, hierarchy: &ConceptHierarchy) -> Option<RuleCandidate> {
    debug_assert_eq!(candidate.rule_type, RuleType::Inference);
    let (r1, r2) = (candidate.relations[0], candidate.relations[1]);
    let p1 = hierarchy.relation_path.get(r1 as usize)?;
    let p2 = hierarchy.relation_path.get(r2 as usize)?;
    if p1.is_empty() || p2.is_empty() {
        return None;
    }
    let keep = match p1.iter().zip(p2).find(|(a, b)| a != b) {
        None => true,
        Some((a, b)) => hierarchy.is_ancestor_or_equal(b, a) || !hierarchy.is_ancestor_or_equal(a, b),
    };
    keep.then(|| RuleCandidate { concept: Some(hierarchy.head_concept(r2)), ..candidate.clone() })
}

/// Triples a candidate rule generates from the graph.
pub fn get_new_triples(candidate: &RuleCandidate, graph: &KnowledgeGraph) -> FxHashSet<Triple> {
    let rs = &candidate.relations;
    let mut out = FxHashSet::default();
    match candidate.rule_type {
        RuleType::Inference => {
            for &(h, t) in graph.pairs(rs[0]) {
                out.insert(Triple::new(h, rs[1], t));
            }
        }
        RuleType::Transitivity => {
            for &(e1, e2) in graph.pairs(rs[0]) {
                for &e3 in graph.tails(e2, rs[1]) {
                    out.insert(Triple::new(e1, rs[2], e3));
                }
            }
        }
        RuleType::Antisymmetry => {
            for &(h, t) in graph.pairs(rs[0]) {
                out.insert(Triple::new(t, rs[1], h));
            }
            for &(h, t) in graph.pairs(rs[1]) {
                out.insert(Triple::new(t, rs[0], h));
            }
        }
    }
    out
}

/// `(|T ∩ K|, |T|)` for the generated set `T`, counted without building `T`
/// for inference and antisymmetry and with per-head deduplication for
/// transitivity.
fn confidence_counts(candidate: &RuleCandidate, graph: &KnowledgeGraph) -> (usize, usize) {
    let rs = &candidate.relations;
    match candidate.rule_type {
        RuleType::Inference => {
            let pairs = graph.pairs(rs[0]);
            let hits = pairs.iter().filter(|&&(h, t)| graph.contains(&Triple::new(h, rs[1], t))).count();
            (hits, pairs.len())
        }
        RuleType::Antisymmetry => {
            let count = |from: RelationId, to: RelationId| {
                let pairs = graph.pairs(from);
                let hits = pairs.iter().filter(|&&(h, t)| graph.contains(&Triple::new(t, to, h))).count();
                (hits, pairs.len())
            };
            let (h1, n1) = count(rs[0], rs[1]);
            if rs[0] == rs[1] {
                (h1, n1)
            } else {
                let (h2, n2) = count(rs[1], rs[0]);
                (h1 + h2, n1 + n2)
            }
        }
        RuleType::Transitivity => {
            let (mut hits, mut total) = (0, 0);
            let mut seen: FxHashSet<EntityId> = FxHashSet::default();
            let pairs = graph.pairs(rs[0]);
            let mut i = 0;
            while i < pairs.len() {
                let e1 = pairs[i].0;
                seen.clear();
                while i < pairs.len() && pairs[i].0 == e1 {
                    for &e3 in graph.tails(pairs[i].1, rs[1]) {
                        if seen.insert(e3) {
                            total += 1;
                            if graph.contains(&Triple::new(e1, rs[2], e3)) {
                                hits += 1;
                            }
                        }
                    }
                    i += 1;
                }
            }
            (hits, total)
        }
    }
}

/// Sets each candidate's confidence to `|T ∩ K| / |T|` (0 when `T` is empty).
pub fn score_candidates(candidates: &[RuleCandidate], graph: &KnowledgeGraph) -> Vec<RuleCandidate> {
    candidates
        .par_iter()
        .map(|c| {
            let (hits, total) = confidence_counts(c, graph);
            let alpha = if total == 0 { 0.0 } else { hits as f64 / total as f64 };
            RuleCandidate { confidence: Some(alpha), ..c.clone() }
        })
        .collect()
}

/// Keeps scored candidates with `confidence >= threshold` for their type.
pub fn select_rules(scored: &[RuleCandidate], thresholds: &Thresholds) -> Vec<Rule> {
    let mut out: Vec<Rule> = scored
        .iter()
        .filter_map(|c| {
            let alpha = c.confidence?;
            (alpha >= thresholds.get(c.rule_type)).then(|| Rule {
                rule_type: c.rule_type,
                relations: c.relations.clone(),
                confidence: alpha,
                support: c.support,
                concept: c.concept,
            })
        })
        .collect();
    out.sort_by(|a, b| {
        a.rule_type
            .cmp(&b.rule_type)
            .then(b.confidence.total_cmp(&a.confidence))
            .then_with(|| a.relations.cmp(&b.relations))
    });
    out
}

/// Which rule instances become ground rules.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GroundingMode {
    /// Only instances whose inferred triple is not already a known triple.
    #[default]
    Novel,
    /// Every instance whose premise is a known triple.
    Exhaustive,
}

impl FromStr for GroundingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "novel" => Ok(GroundingMode::Novel),
            "exhaustive" => Ok(GroundingMode::Exhaustive),
            _ => Err(Error::Config(format!("unknown grounding mode {s:?}"))),
        }
    }
}

/// Instantiates rules over the graph's triples.
///
/// Inference `r1 => r2`: one instance per `(h, r1, t)`. Transitivity
/// `(r1 + r2) => r3`: one per chain `(e1,r1,e2),(e2,r2,e3)` with `e1 != e2`,
/// `e2 != e3`. Antisymmetry `r1 <=> r2`: one per non-loop `(h,r1,t)` and one per
/// non-loop `(h,r2,t)`, deduplicated as unordered instances. In
/// [`GroundingMode::Novel`] instances whose conclusion is already known are
/// dropped (for antisymmetry: both sides known).
pub fn ground(rules: &[Rule], graph: &KnowledgeGraph, mode: GroundingMode) -> Vec<GroundRule> {
    let novel = mode == GroundingMode::Novel;
    let mut out = Vec::new();
    for rule in rules {
        let rs = &rule.relations;
        match rule.rule_type {
            RuleType::Inference => {
                for &(h, t) in graph.pairs(rs[0]) {
                    let head = Triple::new(h, rs[1], t);
                    if novel && graph.contains(&head) {
                        continue;
                    }
                    out.push(GroundRule::Inference { body: Triple::new(h, rs[0], t), head, concept: rule.concept });
                }
            }
            RuleType::Transitivity => {
                for &(e1, e2) in graph.pairs(rs[0]) {
                    if e1 == e2 {
                        continue;
                    }
                    for &e3 in graph.tails(e2, rs[1]) {
                        if e3 == e2 {
                            continue;
                        }
                        let head = Triple::new(e1, rs[2], e3);
                        if novel && graph.contains(&head) {
                            continue;
                        }
                        out.push(GroundRule::Transitivity {
                            first: Triple::new(e1, rs[0], e2),
                            second: Triple::new(e2, rs[1], e3),
                            head,
                        });
                    }
                }
            }
            RuleType::Antisymmetry => {
                let mut seen: FxHashSet<GroundRule> = FxHashSet::default();
                let (r1, r2) = (rs[0], rs[1]);
                let from_r1 = graph.pairs(r1).iter().map(|&(h, t)| (Triple::new(h, r1, t), Triple::new(t, r2, h)));
                let from_r2 = graph.pairs(r2).iter().map(|&(h, t)| (Triple::new(t, r1, h), Triple::new(h, r2, t)));
                for (forward, backward) in from_r1.chain(from_r2) {
                    if forward.head == forward.tail {
                        continue;
                    }
                    if novel && graph.contains(&forward) && graph.contains(&backward) {
                        continue;
                    }
                    // For symmetric rules keep the known triple on the left.
                    let (forward, backward) = if r1 == r2 && !graph.contains(&forward) {
                        (backward, forward)
                    } else {
                        (forward, backward)
                    };
                    let g = GroundRule::Antisymmetry { forward, backward };
                    if seen.insert(g.canonical()) {
                        out.push(g);
                    }
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct MinerConfig {
    pub thresholds: Thresholds,
    /// Candidates with fewer samples than this are discarded before scoring.
    pub min_support: [usize; 3],
}

impl Default for MinerConfig {
    fn default() -> Self {
        MinerConfig { thresholds: Thresholds::default(), min_support: [1, 2, 1] }
    }
}

impl MinerConfig {
    pub fn with_thresholds(thresholds: Thresholds) -> Self {
        MinerConfig { thresholds, ..Default::default() }
    }

    fn min_support_for(&self, t: RuleType) -> usize {
        self.min_support[t as usize]
    }
}

#[derive(Debug, Clone, Default)]
pub struct MiningReport {
    /// Scored candidates of all types (after orientation and support filtering).
    pub candidates: Vec<RuleCandidate>,
    pub rules: Vec<Rule>,
}

impl MiningReport {
    pub fn count(&self, t: RuleType) -> usize {
        self.rules.iter().filter(|r| r.rule_type == t).count()
    }
}

/// Full mining pass: candidates of all three types, oriented, scored, selected.
pub fn mine(graph: &KnowledgeGraph, config: &MinerConfig) -> Result<MiningReport> {
    config.thresholds.validate()?;
    let hierarchy = ConceptHierarchy::from_relations(graph.relations());
    let mut candidates = Vec::new();
    for t in RuleType::ALL {
        let min_support = config.min_support_for(t);
        let cands = mine_candidates(graph, t).into_iter().filter(|c| c.support >= min_support);
        if t == RuleType::Inference {
            candidates.extend(cands.filter_map(|c| orient_inference(&c, &hierarchy)));
        } else {
            candidates.extend(cands);
        }
    }
    let scored = score_candidates(&candidates, graph);
    let rules = select_rules(&scored, &config.thresholds);
    Ok(MiningReport { candidates: scored, rules })
}

/// Rule counts per type, in a fixed `type<TAB>count` layout.
pub fn stats_block(rules: &[Rule]) -> String {
    let mut counts = BTreeMap::new();
    for t in RuleType::ALL {
        counts.insert(t, 0usize);
    }
    for r in rules {
        *counts.get_mut(&r.rule_type).unwrap() += 1;
    }
    let mut s = String::new();
    for (t, n) in &counts {
        s.push_str(&format!("{t}\t{n}\n"));
    }
    s.push_str(&format!("total\t{}\n", rules.len()));
    s
}

/// Writes `type<TAB>confidence<TAB>r1<TAB>r2[<TAB>r3]`, one rule per line.
pub fn write_rules<W: Write>(mut w: W, rules: &[Rule], relations: &Vocab) -> Result<()> {
    for r in rules {
        write!(w, "{}\t{}", r.rule_type, r.confidence)?;
        for &rel in &r.relations {
            write!(w, "\t{}", relations.label(rel))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_rules<R: BufRead>(reader: R, relations: &Vocab, hierarchy: &ConceptHierarchy) -> Result<Vec<Rule>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let perr = |msg: String| Error::Parse { line: i + 1, msg };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 2 {
            return Err(perr("expected type and confidence".into()));
        }
        let rule_type: RuleType = cols[0].parse().map_err(|e: Error| perr(e.to_string()))?;
        let confidence: f64 = cols[1].parse().map_err(|_| perr(format!("bad confidence {:?}", cols[1])))?;
        if cols.len() != 2 + rule_type.arity() {
            return Err(perr(format!("{rule_type} rule needs {} relations", rule_type.arity())));
        }
        let relations = cols[2..]
            .iter()
            .map(|l| relations.get(l).ok_or_else(|| perr(format!("unknown relation {l:?}"))))
            .collect::<Result<Vec<_>>>()?;
        let concept = (rule_type == RuleType::Inference).then(|| hierarchy.head_concept(relations[1]));
        out.push(Rule { rule_type, relations, confidence, support: 0, concept });
    }
    Ok(out)
}

/// Writes `type<TAB>h r t<TAB>h r t[<TAB>h r t][<TAB>concept]`.
pub fn write_ground_rules<W: Write>(
    mut w: W,
    ground: &[GroundRule],
    entities: &Vocab,
    relations: &Vocab,
    concepts: &Vocab,
) -> Result<()> {
    for g in ground {
        write!(w, "{}", g.rule_type())?;
        for t in g.triples() {
            write!(w, "\t{} {} {}", entities.label(t.head), relations.label(t.relation), entities.label(t.tail))?;
        }
        if let Some(c) = g.concept() {
            write!(w, "\t{}", concepts.label(c))?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_ground_rules<R: BufRead>(
    reader: R,
    entities: &Vocab,
    relations: &Vocab,
    concepts: &Vocab,
) -> Result<Vec<GroundRule>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let perr = |msg: String| Error::Parse { line: i + 1, msg };
        let cols: Vec<&str> = line.split('\t').collect();
        let rule_type: RuleType = cols[0].parse().map_err(|e: Error| perr(e.to_string()))?;
        let n = rule_type.arity();
        let extra = usize::from(rule_type == RuleType::Inference);
        if cols.len() != 1 + n && cols.len() != 1 + n + extra {
            return Err(perr(format!("wrong field count for {rule_type} ground rule")));
        }
        let mut ts = Vec::with_capacity(n);
        for col in &cols[1..=n] {
            let parts: Vec<&str> = col.split(' ').collect();
            if parts.len() != 3 {
                return Err(perr(format!("bad triple field {col:?}")));
            }
            let ent = |l: &str| entities.get(l).ok_or_else(|| perr(format!("unknown entity {l:?}")));
            let rel = relations.get(parts[1]).ok_or_else(|| perr(format!("unknown relation {:?}", parts[1])))?;
            ts.push(Triple::new(ent(parts[0])?, rel, ent(parts[2])?));
        }
        let g = match rule_type {
            RuleType::Inference => {
                let concept = match cols.get(1 + n) {
                    Some(c) => Some(concepts.get(c).ok_or_else(|| perr(format!("unknown concept {c:?}")))?),
                    None => None,
                };
                GroundRule::inference(ts[0], ts[1], concept)
            }
            RuleType::Transitivity => GroundRule::transitivity(ts[0], ts[1], ts[2]),
            RuleType::Antisymmetry => GroundRule::antisymmetry(ts[0], ts[1]),
        }
        .map_err(|e| perr(e.to_string()))?;
        out.push(g);
    }
    Ok(out)
}
