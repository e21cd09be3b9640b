//! Joint SGD over triples and ground rules with a margin ranking loss.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustc_hash::FxHashSet;

use crate::error::{Error, Result};
use crate::kg::{EntityId, KnowledgeGraph, Triple};
use crate::models::{init_params, hinge_term, ModelKind, ModelParams, Norm, Sample, SampleKind, SparseGrad};
use crate::rules::GroundRule;
use crate::seed::stream_rng;

pub type TrainingSample = Sample;

/// Redraws allowed before a negative is accepted regardless of membership.
pub const MAX_REDRAWS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub kind: ModelKind,
    pub dim: usize,
    pub margin: f64,
    pub norm: Norm,
    /// Learning rate of the first phase.
    pub lr: f64,
    /// Learning rate of the second phase (adds antisymmetry ground rules).
    pub lr2: f64,
    pub epochs: usize,
    pub epochs2: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Worker count for gradient computation; 1 is the deterministic mode.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            kind: ModelKind::TransE,
            dim: 50,
            margin: 2.0,
            norm: Norm::L1,
            lr: 0.01,
            lr2: 0.01,
            epochs: 1000,
            epochs2: 100,
            batch_size: 1,
            seed: 1,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.dim == 0 {
            return bad("dim must be at least 1".into());
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return bad(format!("margin must be positive, got {}", self.margin));
        }
        for (name, lr) in [("lr", self.lr), ("lr2", self.lr2)] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return bad(format!("{name} must be a non-negative number, got {lr}"));
            }
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if self.threads == 0 {
            return bad("threads must be at least 1".into());
        }
        Ok(())
    }
}

/// What negatives are checked against.
pub struct NegativePool<'a> {
    graph: &'a KnowledgeGraph,
    ground: FxHashSet<GroundRule>,
    num_entities: usize,
}

impl<'a> NegativePool<'a> {
    /// `num_entities` is the size of the replacement range `0..num_entities`.
    pub fn new(graph: &'a KnowledgeGraph, ground_rules: &[GroundRule], num_entities: usize) -> Result<Self> {
        if num_entities < 2 {
            return Err(Error::Config(format!("negative sampling needs at least 2 entities, found {num_entities}")));
        }
        let ground = ground_rules.iter().map(GroundRule::canonical).collect();
        Ok(NegativePool { graph, ground, num_entities })
    }

    fn rejects(&self, neg: &Sample, changed: &[Triple]) -> bool {
        changed.iter().any(|t| self.graph.contains(t))
            || matches!(neg, Sample::Ground(g) if self.ground.contains(&g.canonical()))
    }

    /// Whether a corrupted sample violates the membership rules.
    pub fn is_valid_negative(&self, pos: &Sample, neg: &Sample) -> bool {
        let changed: Vec<Triple> = match (pos, neg) {
            (Sample::Triple(a), Sample::Triple(b)) => if a == b { Vec::new() } else { vec![*b] },
            (Sample::Ground(a), Sample::Ground(b)) => {
                let ta = a.triples();
                b.triples().into_iter().filter(|t| !ta.contains(t)).collect()
            }
            _ => return false,
        };
        if changed.is_empty() {
            return false;
        }
        !self.rejects(neg, &changed)
    }
}

fn with_head(t: Triple, e: EntityId) -> Triple {
    Triple { head: e, ..t }
}

fn with_tail(t: Triple, e: EntityId) -> Triple {
    Triple { tail: e, ..t }
}

/// Replaces the head-side (`head = true`) or tail-side entity of a sample with
/// `e`, at every position that entity role occupies. Returns the new sample and
/// the constituent triples that changed role.
fn corrupt(sample: &Sample, head: bool, e: EntityId) -> (Sample, Vec<Triple>) {
    match *sample {
        Sample::Triple(t) => {
            let n = if head { with_head(t, e) } else { with_tail(t, e) };
            (Sample::Triple(n), vec![n])
        }
        Sample::Ground(GroundRule::Inference { body, head: h, concept }) => {
            let (b, c) = if head { (with_head(body, e), with_head(h, e)) } else { (with_tail(body, e), with_tail(h, e)) };
            (Sample::Ground(GroundRule::Inference { body: b, head: c, concept }), vec![b, c])
        }
        Sample::Ground(GroundRule::Transitivity { first, second, head: h }) => {
            if head {
                let (f, c) = (with_head(first, e), with_head(h, e));
                (Sample::Ground(GroundRule::Transitivity { first: f, second, head: c }), vec![f, c])
            } else {
                let (s, c) = (with_tail(second, e), with_tail(h, e));
                (Sample::Ground(GroundRule::Transitivity { first, second: s, head: c }), vec![s, c])
            }
        }
        Sample::Ground(GroundRule::Antisymmetry { forward, backward }) => {
            let (f, b) = if head {
                (with_head(forward, e), with_tail(backward, e))
            } else {
                (with_tail(forward, e), with_head(backward, e))
            };
            (Sample::Ground(GroundRule::Antisymmetry { forward: f, backward: b }), vec![f, b])
        }
    }
}

/// Draws one corrupted sample: a fair coin picks the side, the replacement is
/// uniform over entities. Draws whose changed triples are known or whose rule
/// instance is an original ground rule are redrawn, up to [`MAX_REDRAWS`].
pub fn sample_negative(sample: &Sample, pool: &NegativePool<'_>, rng: &mut ChaCha8Rng) -> Sample {
    let mut last = *sample;
    for _ in 0..=MAX_REDRAWS {
        let head = rng.gen_bool(0.5);
        let e = rng.gen_range(0..pool.num_entities) as EntityId;
        let (neg, changed) = corrupt(sample, head, e);
        if !pool.rejects(&neg, &changed) {
            return neg;
        }
        last = neg;
    }
    last
}

/// Triples followed by ground rules, each tagged with its sample kind.
pub fn make_training_set(triples: &[Triple], ground_rules: &[GroundRule]) -> Vec<Sample> {
    triples
        .iter()
        .map(|&t| Sample::Triple(t))
        .chain(ground_rules.iter().map(|&g| Sample::Ground(g)))
        .collect()
}

pub fn project_norms(params: &mut ModelParams) {
    params.project_norms();
}

/// Per-epoch knobs shared by both phases.
#[derive(Debug, Clone, Copy)]
pub struct EpochSettings {
    pub lr: f64,
    pub margin: f64,
    pub norm: Norm,
    pub batch_size: usize,
    pub threads: usize,
}

/// One pass over `samples` in a seeded random order; norms are projected at
/// the end. Returns the mean hinge loss.
pub fn sgd_epoch(
    params: &mut ModelParams,
    samples: &[Sample],
    settings: &EpochSettings,
    pool: &NegativePool<'_>,
    rng: &mut ChaCha8Rng,
    epoch: usize,
) -> Result<f64> {
    let mut order: Vec<u32> = (0..samples.len() as u32).collect();
    order.shuffle(rng);
    let mut total = 0.0;
    let step = settings.batch_size.max(settings.threads);
    if step == 1 {
        let mut grad = SparseGrad::default();
        for &i in &order {
            let pos = &samples[i as usize];
            let neg = sample_negative(pos, pool, rng);
            let loss = params.hinge_grad_into(pos, &neg, settings.margin, settings.norm, &mut grad)?;
            total += loss;
            if loss > 0.0 {
                params.apply(&grad, settings.lr);
            }
        }
    } else {
        // Gradients of a block are computed against the same parameters and
        // applied one after another.
        let scale = settings.lr / settings.batch_size as f64;
        for block in order.chunks(step) {
            let pairs: Vec<(Sample, Sample)> = block
                .iter()
                .map(|&i| {
                    let pos = samples[i as usize];
                    (pos, sample_negative(&pos, pool, rng))
                })
                .collect();
            let snapshot: &ModelParams = params;
            let grads: Vec<(f64, SparseGrad)> = pairs
                .par_iter()
                .map(|(pos, neg)| {
                    let mut g = SparseGrad::default();
                    let loss = snapshot.hinge_grad_into(pos, neg, settings.margin, settings.norm, &mut g)?;
                    Ok((loss, g))
                })
                .collect::<Result<_>>()?;
            for (loss, g) in &grads {
                total += loss;
                if *loss > 0.0 {
                    params.apply(g, scale);
                }
            }
        }
    }
    if !total.is_finite() {
        return Err(Error::Diverged { epoch, loss: total });
    }
    params.project_norms();
    Ok(if samples.is_empty() { 0.0 } else { total / samples.len() as f64 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub phase: u8,
    pub mean_loss: f64,
    pub seconds: f64,
}

pub const LOG_HEADER: &str = "epoch,phase,mean_loss,seconds";

impl EpochLog {
    pub fn csv_line(&self) -> String {
        format!("{},{},{},{:.3}", self.epoch, self.phase, self.mean_loss, self.seconds)
    }
}

pub fn write_log<W: Write>(mut w: W, log: &[EpochLog]) -> Result<()> {
    writeln!(w, "{LOG_HEADER}")?;
    for l in log {
        writeln!(w, "{}", l.csv_line())?;
    }
    Ok(())
}

/// Splits ground rules into the first-phase set (inference and transitivity)
/// and the antisymmetry set added in the second phase.
fn split_phases(ground_rules: &[GroundRule]) -> (Vec<GroundRule>, Vec<GroundRule>) {
    ground_rules.iter().partition(|g| !matches!(g, GroundRule::Antisymmetry { .. }))
}

/// Continues training `params` through both phases. Phase 1 trains on the
/// triples plus inference and transitivity ground rules at `lr`; phase 2 adds
/// the antisymmetry ground rules and trains at `lr2`. Phase 2 is skipped when
/// there are no antisymmetry ground rules. `on_epoch` sees every epoch's log
/// entry and the parameters after it.
pub fn train_from(
    mut params: ModelParams,
    graph: &KnowledgeGraph,
    triples: &[Triple],
    ground_rules: &[GroundRule],
    config: &TrainConfig,
    skip_phase1: bool,
    on_epoch: &mut dyn FnMut(&EpochLog, &ModelParams) -> Result<()>,
) -> Result<ModelParams> {
    config.validate()?;
    if params.kind() != config.kind || params.dim() != config.dim {
        return Err(Error::Mismatch(format!(
            "parameters are {} d={} but the configuration asks for {} d={}",
            params.kind(),
            params.dim(),
            config.kind,
            config.dim
        )));
    }
    for g in ground_rules {
        if let Some(c) = g.concept() {
            params.ensure_concept(c);
        }
    }
    let pool = NegativePool::new(graph, ground_rules, params.num_entities())?;
    let (first, second) = split_phases(ground_rules);
    let mut f1 = make_training_set(triples, &first);
    let settings = |lr| EpochSettings {
        lr,
        margin: config.margin,
        norm: config.norm,
        batch_size: config.batch_size,
        threads: config.threads,
    };
    let pool_threads = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;

    let mut run_phase = |params: &mut ModelParams, samples: &[Sample], phase: u8, epochs: usize, lr: f64| -> Result<()> {
        let mut rng = stream_rng(config.seed, if phase == 1 { "train-phase1" } else { "train-phase2" });
        for epoch in 1..=epochs {
            let start = Instant::now();
            let mean_loss = pool_threads.install(|| sgd_epoch(params, samples, &settings(lr), &pool, &mut rng, epoch))?;
            let entry = EpochLog { epoch, phase, mean_loss, seconds: start.elapsed().as_secs_f64() };
            log::debug!("phase {phase} epoch {epoch}: mean loss {mean_loss:.6}");
            on_epoch(&entry, params)?;
        }
        Ok(())
    };
    if !skip_phase1 {
        run_phase(&mut params, &f1, 1, config.epochs, config.lr)?;
    }
    if !second.is_empty() && config.epochs2 > 0 {
        f1.extend(second.iter().map(|&g| Sample::Ground(g)));
        run_phase(&mut params, &f1, 2, config.epochs2, config.lr2)?;
    }
    Ok(params)
}

/// Fresh parameters for every entity and relation of `graph`'s vocabularies,
/// trained on the graph's triples and the given ground rules.
pub fn train(
    graph: &KnowledgeGraph,
    ground_rules: &[GroundRule],
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog, &ModelParams) -> Result<()>,
) -> Result<ModelParams> {
    config.validate()?;
    let params = init_params(graph.num_entities(), graph.num_relations(), config.dim, config.kind, config.seed)?;
    train_from(params, graph, graph.triples(), ground_rules, config, false, on_epoch)
}

/// Mean triple-only hinge against freshly drawn negatives.
pub fn mean_triple_hinge(
    params: &ModelParams,
    graph: &KnowledgeGraph,
    margin: f64,
    norm: Norm,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let pool = NegativePool::new(graph, &[], params.num_entities())?;
    let mut total = 0.0;
    for &t in graph.triples() {
        let pos = Sample::Triple(t);
        let neg = sample_negative(&pos, &pool, rng);
        total += hinge_term(params, &pos, &neg, margin, norm)?;
    }
    Ok(total / graph.len().max(1) as f64)
}

/// Number of samples of each kind, in `SampleKind` order.
pub fn kind_counts(samples: &[Sample]) -> [usize; 4] {
    let mut c = [0; 4];
    for s in samples {
        c[match s.kind() {
            SampleKind::Triple => 0,
            SampleKind::Rule1 => 1,
            SampleKind::Rule2 => 2,
            SampleKind::Rule3 => 3,
        }] += 1;
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::Vocab;
    use crate::models::ParamKey;
    use rand::SeedableRng;

    fn graph(n_ent: usize, n_rel: usize, ts: &[(u32, u32, u32)]) -> KnowledgeGraph {
        let e: Vocab = (0..n_ent).map(|i| format!("e{i}")).collect();
        let r: Vocab = (0..n_rel).map(|i| format!("r{i}")).collect();
        KnowledgeGraph::new(e, r, ts.iter().map(|&(h, r, t)| Triple::new(h, r, t)))
    }

    fn t(h: u32, r: u32, tl: u32) -> Triple {
        Triple::new(h, r, tl)
    }

    fn noop() -> impl FnMut(&EpochLog, &ModelParams) -> Result<()> {
        |_: &EpochLog, _: &ModelParams| Ok(())
    }

    #[test]
    fn training_set_composition() {
        let ts: Vec<Triple> = (0..10).map(|i| t(i, 0, i + 1)).collect();
        let f = make_training_set(&ts, &[]);
        assert_eq!(kind_counts(&f), [10, 0, 0, 0]);
        let g = [
            GroundRule::Antisymmetry { forward: t(0, 0, 1), backward: t(1, 1, 0) },
            GroundRule::Inference { body: t(0, 0, 1), head: t(0, 1, 1), concept: None },
        ];
        let f = make_training_set(&[], &g);
        assert_eq!(f.len(), 2);
        assert_eq!(kind_counts(&f), [0, 1, 0, 1]);
    }

    #[test]
    fn corruption_positions() {
        let (s, _) = corrupt(&Sample::Triple(t(0, 0, 1)), true, 7);
        assert_eq!(s, Sample::Triple(t(7, 0, 1)));
        let anti = Sample::Ground(GroundRule::Antisymmetry { forward: t(0, 0, 1), backward: t(1, 1, 0) });
        let (s, _) = corrupt(&anti, true, 7);
        assert_eq!(s, Sample::Ground(GroundRule::Antisymmetry { forward: t(7, 0, 1), backward: t(1, 1, 7) }));
        let chain = Sample::Ground(GroundRule::Transitivity { first: t(0, 0, 1), second: t(1, 1, 2), head: t(0, 2, 2) });
        let (s, changed) = corrupt(&chain, false, 9);
        assert_eq!(
            s,
            Sample::Ground(GroundRule::Transitivity { first: t(0, 0, 1), second: t(1, 1, 9), head: t(0, 2, 9) })
        );
        assert_eq!(changed, vec![t(1, 1, 9), t(0, 2, 9)]);
        let inf = Sample::Ground(GroundRule::Inference { body: t(0, 0, 1), head: t(0, 1, 1), concept: Some(3) });
        let (s, _) = corrupt(&inf, false, 4);
        assert_eq!(s, Sample::Ground(GroundRule::Inference { body: t(0, 0, 4), head: t(0, 1, 4), concept: Some(3) }));
    }

    #[test]
    fn negatives_avoid_known_triples() {
        let g = graph(6, 1, &[(0, 0, 1), (2, 0, 1), (0, 0, 3)]);
        let pool = NegativePool::new(&g, &[], 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let pos = Sample::Triple(t(0, 0, 1));
            let neg = sample_negative(&pos, &pool, &mut rng);
            assert!(pool.is_valid_negative(&pos, &neg), "{neg:?}");
        }
        assert!(NegativePool::new(&g, &[], 1).is_err());
    }

    #[test]
    fn negatives_avoid_original_ground_rules() {
        // Every corruption of the first rule either hits a known triple or the
        // other original rule, except replacements by entities 3..5.
        let g = graph(6, 2, &[(0, 0, 1), (1, 1, 0), (2, 0, 1), (1, 1, 2)]);
        let rules = [
            GroundRule::Antisymmetry { forward: t(0, 0, 1), backward: t(1, 1, 0) },
            GroundRule::Antisymmetry { forward: t(2, 0, 1), backward: t(1, 1, 2) },
        ];
        let pool = NegativePool::new(&g, &rules, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pos = Sample::Ground(rules[0]);
        for _ in 0..500 {
            let neg = sample_negative(&pos, &pool, &mut rng);
            assert!(pool.is_valid_negative(&pos, &neg));
        }
    }

    #[test]
    fn redraw_cap_returns_last_draw() {
        // Every possible corruption is a known triple.
        let all: Vec<(u32, u32, u32)> = (0..2).flat_map(|h| (0..2).map(move |t| (h, 0, t))).collect();
        let g = graph(2, 1, &all);
        let pool = NegativePool::new(&g, &[], 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let neg = sample_negative(&Sample::Triple(t(0, 0, 1)), &pool, &mut rng);
        assert!(matches!(neg, Sample::Triple(_)));
    }

    fn settings(lr: f64) -> EpochSettings {
        EpochSettings { lr, margin: 1.0, norm: Norm::L1, batch_size: 1, threads: 1 }
    }

    #[test]
    fn zero_learning_rate_leaves_params() {
        let g = graph(5, 2, &[(0, 0, 1), (1, 1, 2), (3, 0, 4)]);
        let mut p = init_params(5, 2, 4, ModelKind::TransH, 1).unwrap();
        let before = p.clone();
        let pool = NegativePool::new(&g, &[], 5).unwrap();
        let f = make_training_set(g.triples(), &[]);
        let loss = sgd_epoch(&mut p, &f, &settings(0.0), &pool, &mut ChaCha8Rng::seed_from_u64(1), 1).unwrap();
        assert!(loss > 0.0);
        assert_eq!(p, before);
    }

    #[test]
    fn satisfied_margins_change_nothing() {
        let g = graph(3, 1, &[(0, 0, 1)]);
        let mut p = init_params(3, 1, 1, ModelKind::TransE, 0).unwrap();
        p.param_mut(ParamKey::Entity(0)).copy_from_slice(&[0.0]);
        p.param_mut(ParamKey::Relation(0)).copy_from_slice(&[0.5]);
        p.param_mut(ParamKey::Entity(1)).copy_from_slice(&[0.5]);
        p.param_mut(ParamKey::Entity(2)).copy_from_slice(&[-1.0]);
        // negatives: (2,0,1) scores 1.0, (0,0,2) scores 1.5, (0,0,0) 0.5, (1,0,1) 0.5
        let s = EpochSettings { margin: 0.4, ..settings(0.1) };
        let pool = NegativePool::new(&g, &[], 3).unwrap();
        let before = p.clone();
        let loss = sgd_epoch(&mut p, &make_training_set(g.triples(), &[]), &s, &pool, &mut ChaCha8Rng::seed_from_u64(2), 1)
            .unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(p, before);
    }

    #[test]
    fn single_step_matches_hand_arithmetic() {
        let g = graph(2, 1, &[(0, 0, 1)]);
        let mut p = init_params(2, 1, 1, ModelKind::TransE, 0).unwrap();
        p.param_mut(ParamKey::Entity(0)).copy_from_slice(&[0.1]);
        p.param_mut(ParamKey::Relation(0)).copy_from_slice(&[0.2]);
        p.param_mut(ParamKey::Entity(1)).copy_from_slice(&[0.5]);
        let pool = NegativePool::new(&g, &[], 2).unwrap();
        let lr = 0.1;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut probe = rng.clone();
        let neg = sample_negative(&Sample::Triple(t(0, 0, 1)), &pool, &mut probe);
        let loss = sgd_epoch(&mut p, &make_training_set(g.triples(), &[]), &settings(lr), &pool, &mut rng, 1).unwrap();
        // positive residual 0.1 + 0.2 - 0.5 = -0.2, score 0.2
        match neg {
            Sample::Triple(n) if n == t(1, 0, 1) => {
                // negative residual 0.5 + 0.2 - 0.5 = 0.2, score 0.2; loss 1
                assert!((loss - 1.0).abs() < 1e-12);
                // e0: pos head sign -1 ; r: pos -1, neg -1 ; e1: pos tail +1, neg head and tail cancel
                assert!((p.entity(0)[0] - 0.2).abs() < 1e-12);
                assert!((p.relation(0)[0] - 0.4).abs() < 1e-12);
                assert!((p.entity(1)[0] - 0.4).abs() < 1e-12);
            }
            Sample::Triple(n) if n == t(0, 0, 0) => {
                // negative residual 0.2, score 0.2; loss 1
                assert!((loss - 1.0).abs() < 1e-12);
                // h: pos -1, neg -(+1 -1)=0 → +0.1 ; r: pos -1, neg -1 → +0.2 ; t: pos +1 → -0.1
                assert!((p.entity(0)[0] - 0.2).abs() < 1e-12);
                assert!((p.relation(0)[0] - 0.4).abs() < 1e-12);
                assert!((p.entity(1)[0] - 0.4).abs() < 1e-12);
            }
            other => panic!("unexpected negative {other:?}"),
        }
    }

    #[test]
    fn small_graph_converges() {
        let g = graph(6, 2, &[(0, 0, 1), (1, 0, 2), (3, 1, 4), (4, 1, 5), (2, 1, 0)]);
        let config = TrainConfig { dim: 4, margin: 1.0, lr: 0.05, epochs: 500, epochs2: 0, seed: 5, ..Default::default() };
        let p = train(&g, &[], &config, &mut noop()).unwrap();
        let h = mean_triple_hinge(&p, &g, config.margin, config.norm, &mut ChaCha8Rng::seed_from_u64(77)).unwrap();
        assert!(h < 0.01 * config.margin, "mean hinge {h}");
    }

    #[test]
    fn norms_hold_after_every_epoch_and_training_is_deterministic() {
        let g = graph(8, 3, &[(0, 0, 1), (1, 0, 2), (2, 1, 3), (3, 2, 4), (5, 1, 6), (6, 2, 7), (1, 1, 0)]);
        let rules = [
            GroundRule::Antisymmetry { forward: t(0, 0, 1), backward: t(1, 1, 0) },
            GroundRule::Inference { body: t(0, 0, 1), head: t(0, 2, 1), concept: Some(0) },
        ];
        for kind in ModelKind::ALL {
            let config = TrainConfig { kind, dim: 5, lr: 0.1, lr2: 0.05, epochs: 20, epochs2: 10, ..Default::default() };
            let mut phases = Vec::new();
            let mut check = |l: &EpochLog, p: &ModelParams| {
                phases.push(l.phase);
                for e in 0..8 {
                    assert!(p.entity(e).iter().map(|x| x * x).sum::<f64>().sqrt() <= 1.0 + 1e-12);
                }
                for r in 0..3 {
                    assert!(p.relation(r).iter().map(|x| x * x).sum::<f64>().sqrt() <= 1.0 + 1e-12);
                    if let Some(w) = p.normal(r) {
                        assert!((w.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() <= 1e-12);
                    }
                }
                Ok(())
            };
            let a = train(&g, &rules, &config, &mut check).unwrap();
            assert_eq!(phases.len(), 30);
            assert_eq!(phases[29], 2);
            let b = train(&g, &rules, &config, &mut noop()).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn phase_two_zero_epochs_equals_phase_one() {
        let g = graph(4, 2, &[(0, 0, 1), (1, 1, 0), (2, 0, 3)]);
        let rules = [GroundRule::Antisymmetry { forward: t(2, 0, 3), backward: t(3, 1, 2) }];
        let c = TrainConfig { dim: 3, epochs: 5, epochs2: 0, ..Default::default() };
        assert_eq!(train(&g, &rules, &c, &mut noop()).unwrap(), train(&g, &[], &c, &mut noop()).unwrap());
    }

    #[test]
    fn divergence_is_reported() {
        let g = graph(4, 1, &[(0, 0, 1), (2, 0, 3)]);
        let c = TrainConfig { dim: 2, lr: f64::MAX, epochs: 3, ..Default::default() };
        let err = train(&g, &[], &c, &mut noop()).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err}");
    }

    #[test]
    fn parallel_mode_trains() {
        let g = graph(6, 2, &[(0, 0, 1), (1, 0, 2), (3, 1, 4), (4, 1, 5), (2, 1, 0)]);
        let c = TrainConfig { dim: 4, margin: 1.0, lr: 0.05, epochs: 300, threads: 2, ..Default::default() };
        let p = train(&g, &[], &c, &mut noop()).unwrap();
        let h = mean_triple_hinge(&p, &g, 1.0, Norm::L1, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(h < 0.1, "{h}");
    }

    #[test]
    fn invalid_configs() {
        for c in [
            TrainConfig { dim: 0, ..Default::default() },
            TrainConfig { margin: 0.0, ..Default::default() },
            TrainConfig { lr: -1.0, ..Default::default() },
            TrainConfig { batch_size: 0, ..Default::default() },
        ] {
            assert!(matches!(c.validate(), Err(Error::Config(_))));
        }
    }
}
