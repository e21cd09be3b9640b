//! Link prediction ranking metrics and triple classification.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustc_hash::FxHashSet;

use crate::error::{Error, Result};
use crate::kg::{EntityId, RelationId, Triple};
use crate::models::{ModelParams, Norm};

pub const HITS_AT: [usize; 4] = [1, 3, 5, 10];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    Head,
    Tail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Setting {
    Raw,
    Filtered,
}

impl Setting {
    pub fn as_str(self) -> &'static str {
        match self {
            Setting::Raw => "raw",
            Setting::Filtered => "filtered",
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How corruptions scoring exactly like the true triple count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieRule {
    /// Ties rank behind the true entity.
    #[default]
    Optimistic,
    /// Ties rank ahead of the true entity.
    Pessimistic,
    /// Half of the ties rank ahead.
    Mean,
}

impl FromStr for TieRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "optimistic" => Ok(TieRule::Optimistic),
            "pessimistic" => Ok(TieRule::Pessimistic),
            "mean" => Ok(TieRule::Mean),
            _ => Err(Error::Config(format!("unknown tie rule {s:?}"))),
        }
    }
}

fn rank_from_counts(less: usize, equal: usize, tie: TieRule) -> f64 {
    1.0 + less as f64
        + match tie {
            TieRule::Optimistic => 0.0,
            TieRule::Pessimistic => equal as f64,
            TieRule::Mean => equal as f64 / 2.0,
        }
}

/// Entity projections under one relation, laid out row by row.
struct Projected {
    dim: usize,
    table: Vec<f64>,
}

impl Projected {
    fn new(params: &ModelParams, r: RelationId) -> Self {
        let d = params.dim();
        let n = params.num_entities();
        if params.normal(r).is_none() && params.matrix(r).is_none() {
            let mut table = Vec::with_capacity(n * d);
            for e in 0..n as EntityId {
                table.extend_from_slice(params.entity(e));
            }
            return Projected { dim: d, table };
        }
        let mut table = vec![0.0; n * d];
        table.par_chunks_mut(d).enumerate().for_each(|(e, row)| params.project_into(e as EntityId, r, row));
        Projected { dim: d, table }
    }

    fn row(&self, e: EntityId) -> &[f64] {
        &self.table[e as usize * self.dim..(e as usize + 1) * self.dim]
    }
}

/// Scores of every corruption of one side, computed with the same arithmetic
/// as `ModelParams::score_triple`.
fn corruption_scores(proj: &Projected, rel: &[f64], t: &Triple, side: Side, norm: Norm, out: &mut Vec<f64>) {
    let n = proj.table.len() / proj.dim;
    out.clear();
    out.reserve(n);
    let mut v = vec![0.0; proj.dim];
    match side {
        Side::Head => {
            let pt = proj.row(t.tail);
            let c: Vec<f64> = rel.iter().zip(pt).map(|(r, p)| r - p).collect();
            for e in 0..n as EntityId {
                for ((o, &p), &ci) in v.iter_mut().zip(proj.row(e)).zip(&c) {
                    *o = p + ci;
                }
                out.push(norm.value(&v));
            }
        }
        Side::Tail => {
            let ph = proj.row(t.head);
            for e in 0..n as EntityId {
                for (((o, &h), &r), &p) in v.iter_mut().zip(ph).zip(rel).zip(proj.row(e)) {
                    *o = h + (r - p);
                }
                out.push(norm.value(&v));
            }
        }
    }
}

fn corrupt(t: &Triple, side: Side, e: EntityId) -> Triple {
    match side {
        Side::Head => Triple { head: e, ..*t },
        Side::Tail => Triple { tail: e, ..*t },
    }
}

/// `(raw, filtered)` rank of the true entity given all corruption scores.
fn ranks_from_scores(scores: &[f64], t: &Triple, side: Side, known: &FxHashSet<Triple>, tie: TieRule) -> (f64, f64) {
    let truth = match side {
        Side::Head => t.head,
        Side::Tail => t.tail,
    } as usize;
    let s0 = scores[truth];
    let (mut less, mut equal, mut f_less, mut f_equal) = (0, 0, 0, 0);
    for (e, &s) in scores.iter().enumerate() {
        if e == truth || s > s0 {
            continue;
        }
        let filtered_out = known.contains(&corrupt(t, side, e as EntityId));
        if s < s0 {
            less += 1;
            f_less += usize::from(!filtered_out);
        } else if s == s0 {
            equal += 1;
            f_equal += usize::from(!filtered_out);
        }
    }
    (rank_from_counts(less, equal, tie), rank_from_counts(f_less, f_equal, tie))
}

/// Rank of the true entity among all replacements on one side. In the filtered
/// setting replacements forming a triple in `known` are skipped.
pub fn rank_entity(
    params: &ModelParams,
    t: &Triple,
    side: Side,
    known: &FxHashSet<Triple>,
    setting: Setting,
    norm: Norm,
    tie: TieRule,
) -> f64 {
    let proj = Projected::new(params, t.relation);
    let mut scores = Vec::new();
    corruption_scores(&proj, params.relation(t.relation), t, side, norm, &mut scores);
    let (raw, filtered) = ranks_from_scores(&scores, t, side, known, tie);
    match setting {
        Setting::Raw => raw,
        Setting::Filtered => filtered,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankResult {
    pub triple: Triple,
    pub raw_head: f64,
    pub raw_tail: f64,
    pub filtered_head: f64,
    pub filtered_tail: f64,
}

impl RankResult {
    pub fn ranks(&self, setting: Setting) -> (f64, f64) {
        match setting {
            Setting::Raw => (self.raw_head, self.raw_tail),
            Setting::Filtered => (self.filtered_head, self.filtered_tail),
        }
    }
}

/// Head and tail ranks of every test triple in both settings.
pub fn compute_ranks(
    params: &ModelParams,
    test: &[Triple],
    known: &FxHashSet<Triple>,
    norm: Norm,
    tie: TieRule,
) -> Vec<RankResult> {
    let mut by_rel: BTreeMap<RelationId, Vec<usize>> = BTreeMap::new();
    for (i, t) in test.iter().enumerate() {
        by_rel.entry(t.relation).or_default().push(i);
    }
    let mut out: Vec<Option<RankResult>> = vec![None; test.len()];
    for (r, idx) in by_rel {
        let proj = Projected::new(params, r);
        let rel = params.relation(r);
        let results: Vec<(usize, RankResult)> = idx
            .par_iter()
            .map_init(Vec::new, |scores, &i| {
                let t = &test[i];
                corruption_scores(&proj, rel, t, Side::Head, norm, scores);
                let (raw_head, filtered_head) = ranks_from_scores(scores, t, Side::Head, known, tie);
                corruption_scores(&proj, rel, t, Side::Tail, norm, scores);
                let (raw_tail, filtered_tail) = ranks_from_scores(scores, t, Side::Tail, known, tie);
                (i, RankResult { triple: *t, raw_head, raw_tail, filtered_head, filtered_tail })
            })
            .collect();
        for (i, r) in results {
            out[i] = Some(r);
        }
    }
    out.into_iter().map(|r| r.expect("every test triple ranked")).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpMetrics {
    pub setting: Setting,
    pub mr: f64,
    pub mrr: f64,
    /// `(n, Hits@n)` for each n in [`HITS_AT`].
    pub hits: Vec<(usize, f64)>,
}

impl LpMetrics {
    pub fn hits_at(&self, n: usize) -> Option<f64> {
        self.hits.iter().find(|h| h.0 == n).map(|h| h.1)
    }
}

/// MR, MRR and Hits@n over the `2·|test|` head and tail ranks.
pub fn metrics_from_ranks(ranks: &[(f64, f64)], setting: Setting) -> Result<LpMetrics> {
    if ranks.is_empty() {
        return Err(Error::Config("link prediction needs at least one test triple".into()));
    }
    let n = 2.0 * ranks.len() as f64;
    let all = || ranks.iter().flat_map(|&(h, t)| [h, t]);
    let mr = all().sum::<f64>() / n;
    let mrr = all().map(|r| 1.0 / r).sum::<f64>() / n;
    let hits = HITS_AT.iter().map(|&k| (k, all().filter(|&r| r <= k as f64).count() as f64 / n)).collect();
    Ok(LpMetrics { setting, mr, mrr, hits })
}

pub struct LinkPrediction {
    pub ranks: Vec<RankResult>,
    pub raw: LpMetrics,
    pub filtered: LpMetrics,
}

pub fn link_prediction(
    params: &ModelParams,
    test: &[Triple],
    known: &FxHashSet<Triple>,
    norm: Norm,
    tie: TieRule,
) -> Result<LinkPrediction> {
    if test.is_empty() {
        return Err(Error::Config("link prediction needs at least one test triple".into()));
    }
    let ranks = compute_ranks(params, test, known, norm, tie);
    let pick = |s| ranks.iter().map(|r| r.ranks(s)).collect::<Vec<_>>();
    let raw = metrics_from_ranks(&pick(Setting::Raw), Setting::Raw)?;
    let filtered = metrics_from_ranks(&pick(Setting::Filtered), Setting::Filtered)?;
    Ok(LinkPrediction { ranks, raw, filtered })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LabeledTriple {
    pub triple: Triple,
    pub positive: bool,
}

/// Entities seen as head and as tail of each relation, sorted.
pub struct PositionPools {
    heads: Vec<Vec<EntityId>>,
    tails: Vec<Vec<EntityId>>,
}

impl PositionPools {
    pub fn new<'a>(triples: impl IntoIterator<Item = &'a Triple>, num_relations: usize) -> Self {
        let mut heads = vec![FxHashSet::default(); num_relations];
        let mut tails = vec![FxHashSet::default(); num_relations];
        for t in triples {
            heads[t.relation as usize].insert(t.head);
            tails[t.relation as usize].insert(t.tail);
        }
        let sorted = |v: Vec<FxHashSet<EntityId>>| {
            v.into_iter()
                .map(|s| {
                    let mut s: Vec<_> = s.into_iter().collect();
                    s.sort_unstable();
                    s
                })
                .collect()
        };
        PositionPools { heads: sorted(heads), tails: sorted(tails) }
    }
}

/// Draws allowed from a position pool before falling back to any entity.
const POOL_DRAWS: usize = 100;

/// Each positive followed by `per_side` head-corrupted and `per_side`
/// tail-corrupted negatives. Replacements come from entities seen in that
/// position for the relation; when that pool yields nothing unknown the draw
/// falls back to all entities. Negatives never belong to `known`.
pub fn generate_tc_negatives(
    positives: &[Triple],
    pools: &PositionPools,
    known: &FxHashSet<Triple>,
    num_entities: usize,
    per_side: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<LabeledTriple>> {
    if num_entities < 2 {
        return Err(Error::Config("triple classification needs at least 2 entities".into()));
    }
    let mut out = Vec::with_capacity(positives.len() * (1 + 2 * per_side));
    let mut fallbacks = 0usize;
    for t in positives {
        out.push(LabeledTriple { triple: *t, positive: true });
        for side in [Side::Head, Side::Tail] {
            let pool = match side {
                Side::Head => &pools.heads[t.relation as usize],
                Side::Tail => &pools.tails[t.relation as usize],
            };
            for _ in 0..per_side {
                let mut neg = None;
                if !pool.is_empty() {
                    for _ in 0..POOL_DRAWS {
                        let c = corrupt(t, side, pool[rng.gen_range(0..pool.len())]);
                        if !known.contains(&c) {
                            neg = Some(c);
                            break;
                        }
                    }
                }
                let neg = match neg {
                    Some(n) => n,
                    None => {
                        fallbacks += 1;
                        let mut found = None;
                        for _ in 0..100 * num_entities.max(100) {
                            let c = corrupt(t, side, rng.gen_range(0..num_entities) as EntityId);
                            if !known.contains(&c) {
                                found = Some(c);
                                break;
                            }
                        }
                        found.ok_or_else(|| {
                            Error::Config(format!("no unknown corruption found for {t:?}; every replacement is a known triple"))
                        })?
                    }
                };
                out.push(LabeledTriple { triple: neg, positive: false });
            }
        }
    }
    if fallbacks > 0 {
        log::info!("{fallbacks} classification negatives fell back to unconstrained entities");
    }
    Ok(out)
}

/// Best threshold for scores labeled positive/negative, where `score < σ`
/// predicts positive. Candidates are `-inf`, midpoints between consecutive
/// distinct scores and `+inf`; the
/// smallest σ among equally accurate candidates wins. Returns `(σ, accuracy)`.
pub fn fit_threshold_scores(scored: &[(f64, bool)]) -> (f64, f64) {
    if scored.is_empty() {
        return (0.0, 0.0);
    }
    let mut v = scored.to_vec();
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = v.len() as f64;
    let neg_total = v.iter().filter(|x| !x.1).count();
    // σ below everything: all predicted negative.
    let mut best = (f64::NEG_INFINITY, neg_total as f64 / n);
    let (mut pos_below, mut neg_below) = (0usize, 0usize);
    let mut i = 0;
    while i < v.len() {
        let s = v[i].0;
        while i < v.len() && v[i].0 == s {
            if v[i].1 {
                pos_below += 1;
            } else {
                neg_below += 1;
            }
            i += 1;
        }
        let sigma = if i < v.len() { (s + v[i].0) / 2.0 } else { f64::INFINITY };
        let acc = (pos_below + neg_total - neg_below) as f64 / n;
        if acc > best.1 {
            best = (sigma, acc);
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdTable {
    pub per_relation: BTreeMap<RelationId, f64>,
    pub default: f64,
}

impl ThresholdTable {
    pub fn get(&self, r: RelationId) -> f64 {
        self.per_relation.get(&r).copied().unwrap_or(self.default)
    }
}

pub fn fit_thresholds(params: &ModelParams, labeled: &[LabeledTriple], norm: Norm) -> ThresholdTable {
    let scored: Vec<(RelationId, f64, bool)> = labeled
        .par_iter()
        .map(|l| (l.triple.relation, params.score_triple(&l.triple, norm), l.positive))
        .collect();
    fit_thresholds_from_scores(&scored)
}

/// Thresholds from precomputed `(relation, score, label)` rows.
pub fn fit_thresholds_from_scores(scored: &[(RelationId, f64, bool)]) -> ThresholdTable {
    let mut groups: BTreeMap<RelationId, Vec<(f64, bool)>> = BTreeMap::new();
    for &(r, s, l) in scored {
        groups.entry(r).or_default().push((s, l));
    }
    let all: Vec<(f64, bool)> = scored.iter().map(|&(_, s, l)| (s, l)).collect();
    ThresholdTable {
        per_relation: groups.into_iter().map(|(r, v)| (r, fit_threshold_scores(&v).0)).collect(),
        default: fit_threshold_scores(&all).0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TcMetrics {
    pub accuracy: f64,
    pub total: usize,
}

pub fn classify_scores(thresholds: &ThresholdTable, scored: &[(RelationId, f64, bool)]) -> TcMetrics {
    let correct = scored.iter().filter(|&&(r, s, l)| (s < thresholds.get(r)) == l).count();
    TcMetrics { accuracy: if scored.is_empty() { 0.0 } else { correct as f64 / scored.len() as f64 }, total: scored.len() }
}

pub fn triple_classification(
    params: &ModelParams,
    thresholds: &ThresholdTable,
    labeled: &[LabeledTriple],
    norm: Norm,
) -> TcMetrics {
    let scored: Vec<(RelationId, f64, bool)> = labeled
        .par_iter()
        .map(|l| (l.triple.relation, params.score_triple(&l.triple, norm), l.positive))
        .collect();
    classify_scores(thresholds, &scored)
}

/// Metric rows `metric,setting,value`.
pub fn write_metrics_csv<W: Write>(mut w: W, lp: &[&LpMetrics], tc: Option<&TcMetrics>) -> Result<()> {
    writeln!(w, "metric,setting,value")?;
    for m in lp {
        writeln!(w, "MR,{},{}", m.setting, m.mr)?;
        writeln!(w, "MRR,{},{}", m.setting, m.mrr)?;
        for (n, h) in &m.hits {
            writeln!(w, "Hits@{n},{},{}", m.setting, h)?;
        }
    }
    if let Some(tc) = tc {
        writeln!(w, "accuracy,classification,{}", tc.accuracy)?;
    }
    Ok(())
}

/// Human-readable table with one column per setting.
pub fn format_table(lp: &[&LpMetrics], tc: Option<&TcMetrics>) -> String {
    let mut s = String::new();
    if !lp.is_empty() {
        s.push_str(&format!("{:<10}", "metric"));
        for m in lp {
            s.push_str(&format!("{:>12}", m.setting.as_str()));
        }
        s.push('\n');
        s.push_str(&format!("{:<10}", "MR"));
        for m in lp {
            s.push_str(&format!("{:>12.2}", m.mr));
        }
        s.push('\n');
        s.push_str(&format!("{:<10}", "MRR"));
        for m in lp {
            s.push_str(&format!("{:>12.4}", m.mrr));
        }
        s.push('\n');
        for n in HITS_AT.iter().rev() {
            s.push_str(&format!("{:<10}", format!("Hits@{n}")));
            for m in lp {
                s.push_str(&format!("{:>12.4}", m.hits_at(*n).unwrap_or(f64::NAN)));
            }
            s.push('\n');
        }
    }
    if let Some(tc) = tc {
        s.push_str(&format!("classification accuracy {:.4} over {} triples\n", tc.accuracy, tc.total));
    }
    s
}

pub fn write_rank_dump<W: Write>(mut w: W, ranks: &[RankResult], labels: impl Fn(&Triple) -> String) -> Result<()> {
    writeln!(w, "triple,raw_head,raw_tail,filtered_head,filtered_tail")?;
    for r in ranks {
        writeln!(w, "{},{},{},{},{}", labels(&r.triple), r.raw_head, r.raw_tail, r.filtered_head, r.filtered_tail)?;
    }
    Ok(())
}

pub fn write_thresholds<W: Write>(mut w: W, table: &ThresholdTable, relation_label: impl Fn(RelationId) -> String) -> Result<()> {
    writeln!(w, "relation\tthreshold")?;
    for (&r, s) in &table.per_relation {
        writeln!(w, "{}\t{}", relation_label(r), s)?;
    }
    writeln!(w, "<default>\t{}", table.default)?;
    Ok(())
}
