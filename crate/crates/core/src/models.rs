//! Embedding parameters, score functions and their analytic gradients.
//!
//! Every score is built from per-triple residuals `π_r(h) + r − π_r(t)`, where
//! the projection `π_r` is the identity (TransE), a hyperplane projection
//! (TransH) or a matrix product (TransR). Lower scores are more plausible.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::kg::{EntityId, RelationId, Triple, Vocab};
use crate::rules::{ConceptId, GroundRule, RuleType};
use crate::seed::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    TransE,
    TransH,
    TransR,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::TransE, ModelKind::TransH, ModelKind::TransR];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::TransE => "transe",
            ModelKind::TransH => "transh",
            ModelKind::TransR => "transr",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "transe" => Ok(ModelKind::TransE),
            "transh" => Ok(ModelKind::TransH),
            "transr" => Ok(ModelKind::TransR),
            _ => Err(Error::Config(format!("unknown model {s:?} (expected transe, transh or transr)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Norm {
    L1,
    L2,
}

impl Norm {
    pub fn value(self, v: &[f64]) -> f64 {
        match self {
            Norm::L1 => v.iter().map(|x| x.abs()).sum(),
            Norm::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
        }
    }

    /// Writes the (sub)gradient of the norm at `v` into `out`.
    fn grad(self, v: &[f64], out: &mut [f64]) {
        match self {
            Norm::L1 => {
                for (o, &x) in out.iter_mut().zip(v) {
                    *o = if x > 0.0 {
                        1.0
                    } else if x < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                }
            }
            Norm::L2 => {
                let n = self.value(v);
                for (o, &x) in out.iter_mut().zip(v) {
                    *o = if n > 0.0 { x / n } else { 0.0 };
                }
            }
        }
    }
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Norm::L1 => "l1",
            Norm::L2 => "l2",
        })
    }
}

impl FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Norm::L1),
            "l2" => Ok(Norm::L2),
            _ => Err(Error::Config(format!("unknown norm {s:?} (expected l1 or l2)"))),
        }
    }
}

/// Identifies one parameter block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamKey {
    Entity(EntityId),
    Relation(RelationId),
    Normal(RelationId),
    Matrix(RelationId),
    Concept(ConceptId),
}

/// Something the model can score: a plain triple or a ground rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Sample {
    Triple(Triple),
    Ground(GroundRule),
}

/// Which score family (and loss gate) a sample uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SampleKind {
    Triple,
    Rule1,
    Rule2,
    Rule3,
}

impl Sample {
    pub fn kind(&self) -> SampleKind {
        match self {
            Sample::Triple(_) => SampleKind::Triple,
            Sample::Ground(g) => match g.rule_type() {
                RuleType::Inference => SampleKind::Rule1,
                RuleType::Transitivity => SampleKind::Rule2,
                RuleType::Antisymmetry => SampleKind::Rule3,
            },
        }
    }
}

/// Gradient over the few parameter blocks one sample touches.
#[derive(Debug, Clone, Default)]
pub struct SparseGrad {
    slots: Vec<(ParamKey, usize, usize)>,
    data: Vec<f64>,
}

impl SparseGrad {
    pub fn clear(&mut self) {
        self.slots.clear();
        self.data.clear();
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    fn slot(&mut self, key: ParamKey, len: usize) -> &mut [f64] {
        let (off, len) = match self.slots.iter().find(|s| s.0 == key) {
            Some(&(_, off, len)) => (off, len),
            None => {
                let off = self.data.len();
                self.data.resize(off + len, 0.0);
                self.slots.push((key, off, len));
                (off, len)
            }
        };
        &mut self.data[off..off + len]
    }

    pub fn get(&self, key: ParamKey) -> Option<&[f64]> {
        self.slots.iter().find(|s| s.0 == key).map(|&(_, off, len)| &self.data[off..off + len])
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamKey, &[f64])> {
        self.slots.iter().map(|&(k, off, len)| (k, &self.data[off..off + len]))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn l2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn identity(d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        m[i * d + i] = 1.0;
    }
    m
}

/// `out_j = Σ_i v_i m_ij` for row-major `m`.
fn vec_mat(v: &[f64], m: &[f64], out: &mut [f64]) {
    let d = v.len();
    out.iter_mut().for_each(|o| *o = 0.0);
    for (i, &vi) in v.iter().enumerate() {
        if vi != 0.0 {
            axpy(vi, &m[i * d..(i + 1) * d], out);
        }
    }
}

/// `out_i = Σ_j m_ij g_j`.
fn mat_vec(m: &[f64], g: &[f64], out: &mut [f64]) {
    let d = g.len();
    for (i, o) in out.iter_mut().enumerate() {
        *o = dot(&m[i * d..(i + 1) * d], g);
    }
}

/// `m_ij += alpha · a_i b_j`.
fn add_outer(alpha: f64, a: &[f64], b: &[f64], m: &mut [f64]) {
    let d = b.len();
    for (i, &ai) in a.iter().enumerate() {
        if ai != 0.0 {
            axpy(alpha * ai, b, &mut m[i * d..(i + 1) * d]);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    kind: ModelKind,
    dim: usize,
    num_entities: usize,
    num_relations: usize,
    entities: Vec<f64>,
    relations: Vec<f64>,
    normals: Vec<f64>,
    matrices: Vec<f64>,
    concepts: BTreeMap<ConceptId, Vec<f64>>,
}

/// Slack that keeps both projections idempotent under rounding.
const NORM_SLACK: f64 = 4.0 * f64::EPSILON;

fn renormalize(v: &mut [f64], max: f64) {
    let n = l2(v);
    if n > max * (1.0 + NORM_SLACK) {
        v.iter_mut().for_each(|x| *x *= max / n);
    }
}

fn unit_normalize(v: &mut [f64]) {
    let n = l2(v);
    if n > 0.0 && (n - 1.0).abs() > NORM_SLACK {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Random parameters: vectors uniform in `±6/√d` per coordinate then scaled
/// to norm at most 1, unit normals, identity matrices.
pub fn init_params(num_entities: usize, num_relations: usize, dim: usize, kind: ModelKind, seed: u64) -> Result<ModelParams> {
    if dim == 0 {
        return Err(Error::Config("embedding dimension must be at least 1".into()));
    }
    let mut rng = stream_rng(seed, "init");
    let bound = 6.0 / (dim as f64).sqrt();
    let mut block = |n: usize, unit: bool| {
        let mut v: Vec<f64> = (0..n * dim).map(|_| rng.gen_range(-bound..bound)).collect();
        for row in v.chunks_mut(dim) {
            if unit {
                unit_normalize(row);
            } else {
                renormalize(row, 1.0);
            }
        }
        v
    };
    let entities = block(num_entities, false);
    let relations = block(num_relations, false);
    let normals = if kind == ModelKind::TransH { block(num_relations, true) } else { Vec::new() };
    let matrices = if kind == ModelKind::TransR { identity(dim).repeat(num_relations) } else { Vec::new() };
    Ok(ModelParams {
        kind,
        dim,
        num_entities,
        num_relations,
        entities,
        relations,
        normals,
        matrices,
        concepts: BTreeMap::new(),
    })
}

impl ModelParams {
    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_entities(&self) -> usize {
        self.num_entities
    }

    pub fn num_relations(&self) -> usize {
        self.num_relations
    }

    pub fn entity(&self, e: EntityId) -> &[f64] {
        let d = self.dim;
        &self.entities[e as usize * d..(e as usize + 1) * d]
    }

    pub fn relation(&self, r: RelationId) -> &[f64] {
        let d = self.dim;
        &self.relations[r as usize * d..(r as usize + 1) * d]
    }

    pub fn normal(&self, r: RelationId) -> Option<&[f64]> {
        let d = self.dim;
        (!self.normals.is_empty()).then(|| &self.normals[r as usize * d..(r as usize + 1) * d])
    }

    pub fn matrix(&self, r: RelationId) -> Option<&[f64]> {
        let dd = self.dim * self.dim;
        (!self.matrices.is_empty()).then(|| &self.matrices[r as usize * dd..(r as usize + 1) * dd])
    }

    pub fn concept(&self, c: ConceptId) -> Option<&[f64]> {
        self.concepts.get(&c).map(Vec::as_slice)
    }

    pub fn concept_ids(&self) -> impl Iterator<Item = ConceptId> + '_ {
        self.concepts.keys().copied()
    }

    /// Allocates an identity matrix for `c` if it has none yet.
    pub fn ensure_concept(&mut self, c: ConceptId) {
        let d = self.dim;
        self.concepts.entry(c).or_insert_with(|| identity(d));
    }

    pub fn param(&self, key: ParamKey) -> Option<&[f64]> {
        match key {
            ParamKey::Entity(e) => ((e as usize) < self.num_entities).then(|| self.entity(e)),
            ParamKey::Relation(r) => ((r as usize) < self.num_relations).then(|| self.relation(r)),
            ParamKey::Normal(r) => self.normal(r).filter(|_| (r as usize) < self.num_relations),
            ParamKey::Matrix(r) => self.matrix(r).filter(|_| (r as usize) < self.num_relations),
            ParamKey::Concept(c) => self.concept(c),
        }
    }

    /// Mutable block; concept matrices are allocated on first use.
    pub fn param_mut(&mut self, key: ParamKey) -> &mut [f64] {
        let d = self.dim;
        let dd = d * d;
        match key {
            ParamKey::Entity(e) => &mut self.entities[e as usize * d..(e as usize + 1) * d],
            ParamKey::Relation(r) => &mut self.relations[r as usize * d..(r as usize + 1) * d],
            ParamKey::Normal(r) => &mut self.normals[r as usize * d..(r as usize + 1) * d],
            ParamKey::Matrix(r) => &mut self.matrices[r as usize * dd..(r as usize + 1) * dd],
            ParamKey::Concept(c) => self.concepts.entry(c).or_insert_with(|| identity(d)),
        }
    }

    /// `params -= lr · grad`; TransH normals are re-unit-normalized afterwards.
    pub fn apply(&mut self, grad: &SparseGrad, lr: f64) {
        if lr == 0.0 {
            return;
        }
        for (key, g) in grad.iter() {
            let p = self.param_mut(key);
            axpy(-lr, g, p);
            if matches!(key, ParamKey::Normal(_)) {
                unit_normalize(p);
            }
        }
    }

    /// Entity and relation vectors scaled to L2 norm at most 1, normals to unit
    /// norm, concept matrices to Frobenius norm at most `√d`.
    pub fn project_norms(&mut self) {
        let d = self.dim;
        for v in self.entities.chunks_mut(d).chain(self.relations.chunks_mut(d)) {
            renormalize(v, 1.0);
        }
        for v in self.normals.chunks_mut(d) {
            unit_normalize(v);
        }
        let bound = (d as f64).sqrt();
        for m in self.concepts.values_mut() {
            renormalize(m, bound);
        }
    }

    /// `π_r(e)` written into `out`.
    pub fn project_into(&self, e: EntityId, r: RelationId, out: &mut [f64]) {
        let v = self.entity(e);
        match self.kind {
            ModelKind::TransE => out.copy_from_slice(v),
            ModelKind::TransH => {
                let w = self.normal(r).expect("TransH normals");
                let s = dot(w, v);
                for ((o, &vi), &wi) in out.iter_mut().zip(v).zip(w) {
                    *o = vi - s * wi;
                }
            }
            ModelKind::TransR => vec_mat(v, self.matrix(r).expect("TransR matrices"), out),
        }
    }

    pub fn project_entity(&self, e: EntityId, r: RelationId) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.project_into(e, r, &mut out);
        out
    }

    /// `π_r(h) + r − π_r(t)`.
    pub fn residual(&self, t: &Triple) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.residual_into(t, &mut out);
        out
    }

    fn residual_into(&self, t: &Triple, out: &mut [f64]) {
        let mut pt = vec![0.0; self.dim];
        self.project_into(t.head, t.relation, out);
        self.project_into(t.tail, t.relation, &mut pt);
        for ((o, &ri), &ti) in out.iter_mut().zip(self.relation(t.relation)).zip(&pt) {
            *o += ri - ti;
        }
    }

    /// Accumulates `scale · ∂(g·residual(t))/∂θ` into `grad`.
    fn backprop_residual(&self, t: &Triple, g: &[f64], scale: f64, grad: &mut SparseGrad) {
        let d = self.dim;
        let (h, r, tl) = (t.head, t.relation, t.tail);
        axpy(scale, g, grad.slot(ParamKey::Relation(r), d));
        match self.kind {
            ModelKind::TransE => {
                axpy(scale, g, grad.slot(ParamKey::Entity(h), d));
                axpy(-scale, g, grad.slot(ParamKey::Entity(tl), d));
            }
            ModelKind::TransH => {
                let w = self.normal(r).expect("TransH normals");
                let wg = dot(w, g);
                let ge: Vec<f64> = g.iter().zip(w).map(|(gi, wi)| gi - wg * wi).collect();
                axpy(scale, &ge, grad.slot(ParamKey::Entity(h), d));
                axpy(-scale, &ge, grad.slot(ParamKey::Entity(tl), d));
                let (ev_h, ev_t) = (self.entity(h), self.entity(tl));
                let (wh, wt) = (dot(w, ev_h), dot(w, ev_t));
                let gw = grad.slot(ParamKey::Normal(r), d);
                axpy(-scale * wg, ev_h, gw);
                axpy(-scale * wh, g, gw);
                axpy(scale * wg, ev_t, gw);
                axpy(scale * wt, g, gw);
            }
            ModelKind::TransR => {
                let m = self.matrix(r).expect("TransR matrices");
                let mut mg = vec![0.0; d];
                mat_vec(m, g, &mut mg);
                axpy(scale, &mg, grad.slot(ParamKey::Entity(h), d));
                axpy(-scale, &mg, grad.slot(ParamKey::Entity(tl), d));
                let diff: Vec<f64> = self.entity(h).iter().zip(self.entity(tl)).map(|(a, b)| a - b).collect();
                add_outer(scale, &diff, g, grad.slot(ParamKey::Matrix(r), d * d));
            }
        }
    }

    pub fn score_triple(&self, t: &Triple, norm: Norm) -> f64 {
        norm.value(&self.residual(t))
    }

    /// `h · C` for the concept matrix (identity when absent).
    fn concept_product(&self, h: EntityId, concept: Option<ConceptId>) -> Vec<f64> {
        let v = self.entity(h);
        match concept.and_then(|c| self.concept(c)) {
            Some(m) => {
                let mut out = vec![0.0; self.dim];
                vec_mat(v, m, &mut out);
                out
            }
            None => v.to_vec(),
        }
    }

    /// Inference rule: `‖(h·C) ⊗ body − head‖` over the body and head residuals.
    pub fn score_rule1(&self, body: &Triple, head: &Triple, concept: Option<ConceptId>, norm: Norm) -> f64 {
        let p = self.concept_product(body.head, concept);
        let b = self.residual(body);
        let q = self.residual(head);
        let z: Vec<f64> = p.iter().zip(&b).zip(&q).map(|((p, b), q)| p * b - q).collect();
        norm.value(&z)
    }

    /// Transitivity rule: `‖a ⊗ b − c‖` over the two chain residuals and the
    /// closing residual.
    pub fn score_rule2(&self, first: &Triple, second: &Triple, head: &Triple, norm: Norm) -> f64 {
        let (a, b, c) = (self.residual(first), self.residual(second), self.residual(head));
        let z: Vec<f64> = a.iter().zip(&b).zip(&c).map(|((a, b), c)| a * b - c).collect();
        norm.value(&z)
    }

    /// Antisymmetry rule: `‖δ ⊗ δ‖` with `δ` the difference of the forward and
    /// backward residuals.
    pub fn score_rule3(&self, forward: &Triple, backward: &Triple, norm: Norm) -> f64 {
        let (f, b) = (self.residual(forward), self.residual(backward));
        let z: Vec<f64> = f.iter().zip(&b).map(|(f, b)| (f - b) * (f - b)).collect();
        norm.value(&z)
    }

    pub fn score_ground(&self, g: &GroundRule, norm: Norm) -> f64 {
        match g {
            GroundRule::Inference { body, head, concept } => self.score_rule1(body, head, *concept, norm),
            GroundRule::Transitivity { first, second, head } => self.score_rule2(first, second, head, norm),
            GroundRule::Antisymmetry { forward, backward } => self.score_rule3(forward, backward, norm),
        }
    }

    pub fn score(&self, s: &Sample, norm: Norm) -> f64 {
        match s {
            Sample::Triple(t) => self.score_triple(t, norm),
            Sample::Ground(g) => self.score_ground(g, norm),
        }
    }

    /// Accumulates `scale · ∂score(s)/∂θ` into `grad`.
    pub fn accumulate_score_grad(&self, s: &Sample, norm: Norm, scale: f64, grad: &mut SparseGrad) {
        let d = self.dim;
        let mut u = vec![0.0; d];
        match s {
            Sample::Triple(t) => {
                let v = self.residual(t);
                norm.grad(&v, &mut u);
                self.backprop_residual(t, &u, scale, grad);
            }
            Sample::Ground(GroundRule::Inference { body, head, concept }) => {
                let p = self.concept_product(body.head, *concept);
                let b = self.residual(body);
                let q = self.residual(head);
                let z: Vec<f64> = p.iter().zip(&b).zip(&q).map(|((p, b), q)| p * b - q).collect();
                norm.grad(&z, &mut u);
                let gp: Vec<f64> = u.iter().zip(&b).map(|(u, b)| u * b).collect();
                let gb: Vec<f64> = u.iter().zip(&p).map(|(u, p)| u * p).collect();
                let gq: Vec<f64> = u.iter().map(|u| -u).collect();
                self.backprop_residual(body, &gb, scale, grad);
                self.backprop_residual(head, &gq, scale, grad);
                match concept.and_then(|c| self.concept(c).map(|m| (c, m))) {
                    Some((c, m)) => {
                        let mut cg = vec![0.0; d];
                        mat_vec(m, &gp, &mut cg);
                        axpy(scale, &cg, grad.slot(ParamKey::Entity(body.head), d));
                        add_outer(scale, self.entity(body.head), &gp, grad.slot(ParamKey::Concept(c), d * d));
                    }
                    None => axpy(scale, &gp, grad.slot(ParamKey::Entity(body.head), d)),
                }
            }
            Sample::Ground(GroundRule::Transitivity { first, second, head }) => {
                let (a, b, c) = (self.residual(first), self.residual(second), self.residual(head));
                let z: Vec<f64> = a.iter().zip(&b).zip(&c).map(|((a, b), c)| a * b - c).collect();
                norm.grad(&z, &mut u);
                let ga: Vec<f64> = u.iter().zip(&b).map(|(u, b)| u * b).collect();
                let gb: Vec<f64> = u.iter().zip(&a).map(|(u, a)| u * a).collect();
                let gc: Vec<f64> = u.iter().map(|u| -u).collect();
                self.backprop_residual(first, &ga, scale, grad);
                self.backprop_residual(second, &gb, scale, grad);
                self.backprop_residual(head, &gc, scale, grad);
            }
            Sample::Ground(GroundRule::Antisymmetry { forward, backward }) => {
                let (f, b) = (self.residual(forward), self.residual(backward));
                let delta: Vec<f64> = f.iter().zip(&b).map(|(f, b)| f - b).collect();
                let z: Vec<f64> = delta.iter().map(|x| x * x).collect();
                norm.grad(&z, &mut u);
                let gd: Vec<f64> = u.iter().zip(&delta).map(|(u, x)| 2.0 * u * x).collect();
                self.backprop_residual(forward, &gd, scale, grad);
                self.backprop_residual(backward, &gd, -scale, grad);
            }
        }
    }

    /// Hinge value `[γ + s(pos) − s(neg)]₊`; when positive, its gradient is
    /// written into `grad` (which is cleared first).
    pub fn hinge_grad_into(&self, pos: &Sample, neg: &Sample, margin: f64, norm: Norm, grad: &mut SparseGrad) -> Result<f64> {
        grad.clear();
        let loss = hinge_term(self, pos, neg, margin, norm)?;
        if loss > 0.0 {
            self.accumulate_score_grad(pos, norm, 1.0, grad);
            self.accumulate_score_grad(neg, norm, -1.0, grad);
        }
        Ok(loss)
    }
}

/// `[γ + s_k(pos) − s_k(neg)]₊` with `k` the shared sample kind.
pub fn hinge_term(params: &ModelParams, pos: &Sample, neg: &Sample, margin: f64, norm: Norm) -> Result<f64> {
    if pos.kind() != neg.kind() {
        return Err(Error::Contract(format!(
            "positive and negative samples differ in kind ({:?} vs {:?})",
            pos.kind(),
            neg.kind()
        )));
    }
    let x = margin + params.score(pos, norm) - params.score(neg, norm);
    // NaN must propagate so divergence is detected.
    Ok(if x > 0.0 || x.is_nan() { x } else { 0.0 })
}

/// Gradient of the hinge term; empty when the margin is satisfied.
pub fn gradients(params: &ModelParams, pos: &Sample, neg: &Sample, margin: f64, norm: Norm) -> Result<SparseGrad> {
    let mut g = SparseGrad::default();
    params.hinge_grad_into(pos, neg, margin, norm, &mut g)?;
    Ok(g)
}

fn write_row<W: Write>(w: &mut W, tag: &str, label: &str, v: &[f64]) -> Result<()> {
    write!(w, "{tag}\t{label}")?;
    for x in v {
        write!(w, "\t{x}")?;
    }
    writeln!(w)?;
    Ok(())
}

/// Text checkpoint: header `kind d |E| |R| n_concepts`, then one tab-separated
/// labeled row per parameter block. Values use shortest round-trip formatting.
pub fn save_params<W: Write>(
    mut w: W,
    params: &ModelParams,
    entities: &Vocab,
    relations: &Vocab,
    concepts: &Vocab,
) -> Result<()> {
    writeln!(
        w,
        "{} {} {} {} {}",
        params.kind,
        params.dim,
        params.num_entities,
        params.num_relations,
        params.concepts.len()
    )?;
    for e in 0..params.num_entities as u32 {
        write_row(&mut w, "entity", entities.label(e), params.entity(e))?;
    }
    for r in 0..params.num_relations as u32 {
        write_row(&mut w, "relation", relations.label(r), params.relation(r))?;
    }
    for r in 0..params.num_relations as u32 {
        if let Some(v) = params.normal(r) {
            write_row(&mut w, "normal", relations.label(r), v)?;
        }
    }
    for r in 0..params.num_relations as u32 {
        if let Some(m) = params.matrix(r) {
            write_row(&mut w, "matrix", relations.label(r), m)?;
        }
    }
    for (&c, m) in &params.concepts {
        write_row(&mut w, "concept", concepts.label(c), m)?;
    }
    Ok(())
}

/// Reads a checkpoint written by [`save_params`]; the vocabularies must match
/// the ones it was written with.
pub fn load_params<R: BufRead>(reader: R, entities: &Vocab, relations: &Vocab, concepts: &Vocab) -> Result<ModelParams> {
    let mut lines = reader.lines().enumerate();
    let header = match lines.next() {
        Some((_, l)) => l?,
        None => return Err(Error::Mismatch("empty checkpoint".into())),
    };
    let h: Vec<&str> = header.split_whitespace().collect();
    if h.len() != 5 {
        return Err(Error::Parse { line: 1, msg: "expected header `kind d |E| |R| n_concepts`".into() });
    }
    let kind: ModelKind = h[0].parse()?;
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Parse { line: 1, msg: format!("bad count {s:?}") });
    let (dim, ne, nr, nc) = (num(h[1])?, num(h[2])?, num(h[3])?, num(h[4])?);
    if ne != entities.len() {
        return Err(Error::Mismatch(format!("checkpoint has {ne} entities, dataset has {}", entities.len())));
    }
    if nr != relations.len() {
        return Err(Error::Mismatch(format!("checkpoint has {nr} relations, dataset has {}", relations.len())));
    }
    let mut params = init_params(ne, nr, dim, kind, 0)?;
    let mut filled = 0usize;
    for (i, line) in lines {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let perr = |msg: String| Error::Parse { line: i + 1, msg };
        let mut cols = line.split('\t');
        let tag = cols.next().unwrap_or_default();
        let label = cols.next().ok_or_else(|| perr("missing label".into()))?;
        let values = cols.map(|s| s.parse::<f64>().map_err(|_| perr(format!("bad value {s:?}")))).collect::<Result<Vec<_>>>()?;
        let rel = || relations.get(label).ok_or_else(|| perr(format!("unknown relation {label:?}")));
        let key = match tag {
            "entity" => ParamKey::Entity(entities.get(label).ok_or_else(|| perr(format!("unknown entity {label:?}")))?),
            "relation" => ParamKey::Relation(rel()?),
            "normal" if kind == ModelKind::TransH => ParamKey::Normal(rel()?),
            "matrix" if kind == ModelKind::TransR => ParamKey::Matrix(rel()?),
            "concept" => ParamKey::Concept(concepts.get(label).ok_or_else(|| perr(format!("unknown concept {label:?}")))?),
            _ => return Err(perr(format!("unexpected row {tag:?} for {kind}"))),
        };
        let slot = params.param_mut(key);
        if slot.len() != values.len() {
            return Err(perr(format!("expected {} values, found {}", slot.len(), values.len())));
        }
        slot.copy_from_slice(&values);
        filled += 1;
    }
    let expected = ne
        + nr
        + match kind {
            ModelKind::TransE => 0,
            _ => nr,
        }
        + nc;
    if filled != expected || params.concepts.len() != nc {
        return Err(Error::Mismatch(format!("checkpoint has {filled} rows, header implies {expected}")));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const EPS: f64 = 1e-12;

    fn t(h: u32, r: u32, tl: u32) -> Triple {
        Triple::new(h, r, tl)
    }

    fn set(p: &mut ModelParams, key: ParamKey, v: &[f64]) {
        p.param_mut(key).copy_from_slice(v);
    }

    #[test]
    fn init_is_deterministic_and_normalized() {
        let a = init_params(10, 3, 8, ModelKind::TransH, 42).unwrap();
        let b = init_params(10, 3, 8, ModelKind::TransH, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, init_params(10, 3, 8, ModelKind::TransH, 43).unwrap());
        for e in 0..10 {
            assert!(l2(a.entity(e)) <= 1.0 + EPS);
        }
        for r in 0..3 {
            assert!(l2(a.relation(r)) <= 1.0 + EPS);
            assert!((l2(a.normal(r).unwrap()) - 1.0).abs() < EPS);
        }
        let e = init_params(10, 3, 8, ModelKind::TransE, 42).unwrap();
        assert!(e.normal(0).is_none() && e.matrix(0).is_none());
        let r = init_params(10, 3, 4, ModelKind::TransR, 42).unwrap();
        assert_eq!(r.matrix(2).unwrap(), identity(4).as_slice());
        assert!(init_params(10, 3, 0, ModelKind::TransE, 1).is_err());
    }

    #[test]
    fn projections() {
        let mut p = init_params(2, 1, 2, ModelKind::TransH, 0).unwrap();
        set(&mut p, ParamKey::Normal(0), &[1.0, 0.0]);
        set(&mut p, ParamKey::Entity(0), &[0.0, 0.7]);
        assert_eq!(p.project_entity(0, 0), vec![0.0, 0.7]);
        set(&mut p, ParamKey::Entity(1), &[1.0, 0.0]);
        assert_eq!(p.project_entity(1, 0), vec![0.0, 0.0]);

        let mut r = init_params(2, 1, 2, ModelKind::TransR, 0).unwrap();
        let e0 = r.entity(0).to_vec();
        assert_eq!(r.project_entity(0, 0), e0);
        set(&mut r, ParamKey::Matrix(0), &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(r.project_entity(0, 0), vec![e0[1], e0[0]]);
    }

    fn transe_2d(kind: ModelKind) -> ModelParams {
        init_params(4, 3, 2, kind, 0).unwrap()
    }

    #[test]
    fn triple_scores() {
        let mut p = transe_2d(ModelKind::TransE);
        set(&mut p, ParamKey::Entity(0), &[0.5, 0.0]);
        set(&mut p, ParamKey::Relation(0), &[0.0, 0.5]);
        set(&mut p, ParamKey::Entity(1), &[0.5, 0.5]);
        assert_eq!(p.score_triple(&t(0, 0, 1), Norm::L1), 0.0);
        assert_eq!(p.score_triple(&t(0, 0, 1), Norm::L2), 0.0);

        set(&mut p, ParamKey::Entity(0), &[1.0, 0.0]);
        set(&mut p, ParamKey::Relation(0), &[0.0, 0.0]);
        set(&mut p, ParamKey::Entity(1), &[0.0, 1.0]);
        assert_eq!(p.score_triple(&t(0, 0, 1), Norm::L1), 2.0);
        assert_eq!(p.score_triple(&t(0, 0, 1), Norm::L2), 2f64.sqrt());
    }

    /// Copies entity/relation vectors of a TransE model into another kind.
    fn with_kind(src: &ModelParams, kind: ModelKind) -> ModelParams {
        let mut p = init_params(src.num_entities, src.num_relations, src.dim, kind, 99).unwrap();
        p.entities = src.entities.clone();
        p.relations = src.relations.clone();
        p
    }

    #[test]
    fn transr_identity_matches_transe() {
        let e = init_params(5, 3, 6, ModelKind::TransE, 3).unwrap();
        let r = with_kind(&e, ModelKind::TransR);
        let g1 = GroundRule::Inference { body: t(0, 0, 1), head: t(0, 1, 1), concept: Some(2) };
        let g2 = GroundRule::Transitivity { first: t(0, 0, 1), second: t(1, 1, 2), head: t(0, 2, 2) };
        let g3 = GroundRule::Antisymmetry { forward: t(3, 0, 4), backward: t(4, 2, 3) };
        for norm in [Norm::L1, Norm::L2] {
            assert_eq!(e.score_triple(&t(0, 1, 2), norm), r.score_triple(&t(0, 1, 2), norm));
            for g in [g1, g2, g3] {
                assert_eq!(e.score_ground(&g, norm), r.score_ground(&g, norm));
            }
        }
    }

    #[test]
    fn rule1_worked_example() {
        let mut p = transe_2d(ModelKind::TransE);
        set(&mut p, ParamKey::Entity(0), &[1.0, 0.0]);
        set(&mut p, ParamKey::Entity(1), &[0.0, 0.0]);
        set(&mut p, ParamKey::Relation(0), &[0.0, 1.0]);
        set(&mut p, ParamKey::Relation(1), &[1.0, 1.0]);
        p.ensure_concept(5);
        let s = p.score_rule1(&t(0, 0, 1), &t(0, 1, 1), Some(5), Norm::L1);
        assert_eq!(s, 2.0);
        // a missing concept matrix behaves as identity
        assert_eq!(p.score_rule1(&t(0, 0, 1), &t(0, 1, 1), Some(9), Norm::L1), 2.0);

        // perfect satisfaction: both residuals zero
        set(&mut p, ParamKey::Relation(0), &[-1.0, 0.0]);
        set(&mut p, ParamKey::Relation(1), &[-1.0, 0.0]);
        assert_eq!(p.score_rule1(&t(0, 0, 1), &t(0, 1, 1), Some(5), Norm::L2), 0.0);
    }

    #[test]
    fn rule2_worked_examples() {
        let mut p = init_params(3, 3, 1, ModelKind::TransE, 0).unwrap();
        for (k, v) in [(ParamKey::Entity(0), 0.5), (ParamKey::Entity(1), 0.0), (ParamKey::Entity(2), 0.0)] {
            set(&mut p, k, &[v]);
        }
        for (r, v) in [(0, 0.5), (1, 1.0), (2, 0.5)] {
            set(&mut p, ParamKey::Relation(r), &[v]);
        }
        let (a, b, c) = (t(0, 0, 1), t(1, 1, 2), t(0, 2, 2));
        assert_eq!(p.score_rule2(&a, &b, &c, Norm::L1), 0.0);
        // residuals 2, 3 and 5
        set(&mut p, ParamKey::Entity(0), &[0.0]);
        set(&mut p, ParamKey::Relation(0), &[2.0]);
        set(&mut p, ParamKey::Relation(1), &[3.0]);
        set(&mut p, ParamKey::Relation(2), &[5.0]);
        assert_eq!(p.score_rule2(&a, &b, &c, Norm::L1), 1.0);
    }

    #[test]
    fn rule3_examples() {
        let mut p = transe_2d(ModelKind::TransE);
        // h = t and r1 = r2
        let r0 = p.relation(0).to_vec();
        set(&mut p, ParamKey::Relation(1), &r0);
        assert_eq!(p.score_rule3(&t(2, 0, 2), &t(2, 1, 2), Norm::L1), 0.0);

        // TR_f = [1,0], TR_b = [0,0]
        set(&mut p, ParamKey::Entity(0), &[0.0, 0.0]);
        set(&mut p, ParamKey::Entity(1), &[0.0, 0.0]);
        set(&mut p, ParamKey::Relation(0), &[1.0, 0.0]);
        set(&mut p, ParamKey::Relation(1), &[0.0, 0.0]);
        assert_eq!(p.score_rule3(&t(0, 0, 1), &t(1, 1, 0), Norm::L1), 1.0);
    }

    #[test]
    fn rule3_is_quadratic_and_swap_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for kind in ModelKind::ALL {
            let p = init_params(4, 3, 5, kind, rng.gen()).unwrap();
            let (f, b) = (t(0, 0, 1), t(1, 2, 0));
            for norm in [Norm::L1, Norm::L2] {
                assert!((p.score_rule3(&f, &b, norm) - p.score_rule3(&b, &f, norm)).abs() < EPS);
            }
        }
        // scaling δ by c scales the L1 score by c²
        let mut p = init_params(2, 2, 3, ModelKind::TransE, 1).unwrap();
        set(&mut p, ParamKey::Entity(0), &[0.0; 3]);
        set(&mut p, ParamKey::Entity(1), &[0.0; 3]);
        set(&mut p, ParamKey::Relation(1), &[0.0; 3]);
        set(&mut p, ParamKey::Relation(0), &[0.1, -0.2, 0.3]);
        let base = p.score_rule3(&t(0, 0, 1), &t(1, 1, 0), Norm::L1);
        set(&mut p, ParamKey::Relation(0), &[0.3, -0.6, 0.9]);
        let scaled = p.score_rule3(&t(0, 0, 1), &t(1, 1, 0), Norm::L1);
        assert!((scaled - 9.0 * base).abs() < 1e-12);
    }

    #[test]
    fn hinge_flat_region_and_kind_mismatch() {
        let p = init_params(4, 2, 3, ModelKind::TransE, 0).unwrap();
        let pos = Sample::Triple(t(0, 0, 1));
        let neg = Sample::Triple(t(0, 0, 2));
        let g = gradients(&p, &pos, &neg, -100.0, Norm::L1).unwrap();
        assert!(g.is_empty());
        let rule = Sample::Ground(GroundRule::Antisymmetry { forward: t(0, 0, 1), backward: t(1, 1, 0) });
        assert!(matches!(hinge_term(&p, &pos, &rule, 1.0, Norm::L1), Err(Error::Contract(_))));
    }

    #[test]
    fn transe_l2_gradient_is_unit_residual() {
        let p = init_params(4, 2, 5, ModelKind::TransE, 8).unwrap();
        let pos = Sample::Triple(t(0, 0, 1));
        let neg = Sample::Triple(t(2, 0, 3));
        let g = gradients(&p, &pos, &neg, 100.0, Norm::L2).unwrap();
        let v = p.residual(&t(0, 0, 1));
        let n = l2(&v);
        for (gi, vi) in g.get(ParamKey::Entity(0)).unwrap().iter().zip(&v) {
            assert!((gi - vi / n).abs() < 1e-12);
        }
    }

    /// Random parameters with a random sample pair of the requested family.
    fn random_case(kind: ModelKind, family: SampleKind, rng: &mut ChaCha8Rng) -> (ModelParams, Sample, Sample) {
        let d = 8;
        let mut p = init_params(6, 4, d, kind, rng.gen()).unwrap();
        if kind == ModelKind::TransR {
            for r in 0..4 {
                let m: Vec<f64> = (0..d * d).map(|_| rng.gen_range(-0.5..0.5)).collect();
                set(&mut p, ParamKey::Matrix(r), &m);
            }
        }
        let c: Vec<f64> = (0..d * d).map(|_| rng.gen_range(-0.5..0.5)).collect();
        set(&mut p, ParamKey::Concept(1), &c);
        let mk = |e: [u32; 3]| match family {
            SampleKind::Triple => Sample::Triple(t(e[0], 0, e[1])),
            SampleKind::Rule1 => Sample::Ground(GroundRule::Inference {
                body: t(e[0], 0, e[1]),
                head: t(e[0], 1, e[1]),
                concept: Some(1),
            }),
            SampleKind::Rule2 => Sample::Ground(GroundRule::Transitivity {
                first: t(e[0], 0, e[1]),
                second: t(e[1], 1, e[2]),
                head: t(e[0], 2, e[2]),
            }),
            SampleKind::Rule3 => Sample::Ground(GroundRule::Antisymmetry {
                forward: t(e[0], 0, e[1]),
                backward: t(e[1], 3, e[0]),
            }),
        };
        (p, mk([0, 1, 2]), mk([3, 1, 4]))
    }

    /// Every coordinate entering a score sits away from the L1 kink.
    fn is_generic(p: &ModelParams, s: &Sample) -> bool {
        let far = |v: &[f64]| v.iter().all(|x| x.abs() > 1e-3);
        match s {
            Sample::Triple(tr) => far(&p.residual(tr)),
            Sample::Ground(g) => {
                let rs: Vec<Vec<f64>> = g.triples().iter().map(|tr| p.residual(tr)).collect();
                let z: Vec<f64> = match g {
                    GroundRule::Inference { body, concept, .. } => {
                        let pc = p.concept_product(body.head, *concept);
                        (0..p.dim).map(|i| pc[i] * rs[0][i] - rs[1][i]).collect()
                    }
                    GroundRule::Transitivity { .. } => (0..p.dim).map(|i| rs[0][i] * rs[1][i] - rs[2][i]).collect(),
                    GroundRule::Antisymmetry { .. } => (0..p.dim).map(|i| rs[0][i] - rs[1][i]).collect(),
                };
                rs.iter().all(|r| far(r)) && far(&z)
            }
        }
    }

    fn check_fd(kind: ModelKind, family: SampleKind, norm: Norm, cases: usize, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let margin = 50.0;
        let mut done = 0;
        while done < cases {
            let (p, pos, neg) = random_case(kind, family, &mut rng);
            if !is_generic(&p, &pos) || !is_generic(&p, &neg) {
                continue;
            }
            done += 1;
            let g = gradients(&p, &pos, &neg, margin, norm).unwrap();
            assert!(!g.is_empty());
            for (key, gv) in g.iter() {
                for (i, &analytic) in gv.iter().enumerate() {
                    let eps = 1e-5;
                    let mut plus = p.clone();
                    plus.param_mut(key)[i] += eps;
                    let mut minus = p.clone();
                    minus.param_mut(key)[i] -= eps;
                    let fp = hinge_term(&plus, &pos, &neg, margin, norm).unwrap();
                    let fm = hinge_term(&minus, &pos, &neg, margin, norm).unwrap();
                    let numeric = (fp - fm) / (2.0 * eps);
                    let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3);
                    assert!(
                        rel < 1e-4,
                        "{kind} {family:?} {norm} {key:?}[{i}]: analytic {analytic} vs numeric {numeric}"
                    );
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let families = [SampleKind::Triple, SampleKind::Rule1, SampleKind::Rule2, SampleKind::Rule3];
        for (k, kind) in ModelKind::ALL.into_iter().enumerate() {
            for (f, family) in families.into_iter().enumerate() {
                for norm in [Norm::L1, Norm::L2] {
                    check_fd(kind, family, norm, 5, (k * 10 + f) as u64);
                }
            }
        }
    }

    #[test]
    fn distinct_entities_with_equal_triple_scores_differ_on_rule1() {
        let mut p = init_params(4, 2, 2, ModelKind::TransE, 0).unwrap();
        p.ensure_concept(0);
        // (0,r0,1) and (2,r0,3) have the same residual but different heads.
        set(&mut p, ParamKey::Relation(0), &[0.1, 0.2]);
        set(&mut p, ParamKey::Relation(1), &[0.0, 0.0]);
        set(&mut p, ParamKey::Entity(0), &[0.5, 0.0]);
        set(&mut p, ParamKey::Entity(1), &[0.3, 0.1]);
        set(&mut p, ParamKey::Entity(2), &[0.0, 0.5]);
        set(&mut p, ParamKey::Entity(3), &[-0.2, 0.6]);
        let a = (t(0, 0, 1), t(0, 1, 1));
        let b = (t(2, 0, 3), t(2, 1, 3));
        for norm in [Norm::L1, Norm::L2] {
            assert!((p.score_triple(&a.0, norm) - p.score_triple(&b.0, norm)).abs() < EPS);
            assert!((p.score_triple(&a.1, norm) - p.score_triple(&b.1, norm)).abs() < EPS);
            let (sa, sb) = (p.score_rule1(&a.0, &a.1, Some(0), norm), p.score_rule1(&b.0, &b.1, Some(0), norm));
            assert!((sa - sb).abs() > 1e-3, "{sa} vs {sb}");
        }
    }

    #[test]
    fn rule_scores_compose_triple_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let p = init_params(5, 4, 6, ModelKind::TransE, rng.gen()).unwrap();
            let norm = if rng.gen() { Norm::L1 } else { Norm::L2 };
            let (x, y, z) = (t(0, 0, 1), t(1, 1, 2), t(0, 2, 2));
            let (rx, ry, rz) = (p.residual(&x), p.residual(&y), p.residual(&z));
            assert_eq!(norm.value(&rx), p.score_triple(&x, norm));
            let h = p.entity(0);
            let w = t(0, 3, 1);
            let rw = p.residual(&w);
            let s2: Vec<f64> = (0..6).map(|i| h[i] * rx[i] - rw[i]).collect();
            assert!((norm.value(&s2) - p.score_rule1(&x, &w, None, norm)).abs() < EPS);
            let s3: Vec<f64> = (0..6).map(|i| rx[i] * ry[i] - rz[i]).collect();
            assert!((norm.value(&s3) - p.score_rule2(&x, &y, &z, norm)).abs() < EPS);
            let back = t(1, 1, 0);
            let rb = p.residual(&back);
            let s4: Vec<f64> = (0..6).map(|i| (rx[i] - rb[i]).powi(2)).collect();
            assert!((norm.value(&s4) - p.score_rule3(&x, &back, norm)).abs() < EPS);
        }
    }

    #[test]
    fn apply_and_project() {
        let mut p = init_params(3, 2, 4, ModelKind::TransH, 1).unwrap();
        let g = gradients(&p, &Sample::Triple(t(0, 0, 1)), &Sample::Triple(t(0, 0, 2)), 100.0, Norm::L1).unwrap();
        let before = p.clone();
        p.apply(&g, 0.0);
        assert_eq!(p, before);
        p.apply(&g, 0.5);
        assert_ne!(p, before);
        assert!((l2(p.normal(0).unwrap()) - 1.0).abs() < EPS);

        set(&mut p, ParamKey::Entity(0), &[2.0, 0.0, 0.0, 0.0]);
        set(&mut p, ParamKey::Entity(1), &[0.5, 0.0, 0.0, 0.0]);
        set(&mut p, ParamKey::Concept(3), &[2.0; 16]);
        p.project_norms();
        assert_eq!(p.entity(0), &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(p.entity(1), &[0.5, 0.0, 0.0, 0.0]);
        assert!((l2(p.concept(3).unwrap()) - 2.0).abs() < EPS);
        let once = p.clone();
        p.project_norms();
        assert_eq!(p, once);
    }

    fn vocab(prefix: &str, n: usize) -> Vocab {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    #[test]
    fn checkpoint_round_trip() {
        for kind in ModelKind::ALL {
            let mut p = init_params(4, 3, 3, kind, 17).unwrap();
            p.ensure_concept(1);
            p.param_mut(ParamKey::Concept(1))[4] = 0.1 + 0.2;
            let (ev, rv, cv) = (vocab("e", 4), vocab("r", 3), vocab("c", 2));
            let mut buf = Vec::new();
            save_params(&mut buf, &p, &ev, &rv, &cv).unwrap();
            let text = String::from_utf8(buf.clone()).unwrap();
            assert!(text.starts_with(&format!("{kind} 3 4 3 1\n")));
            let back = load_params(buf.as_slice(), &ev, &rv, &cv).unwrap();
            assert_eq!(back, p);

            let err = load_params(buf.as_slice(), &vocab("e", 5), &rv, &cv).unwrap_err();
            assert!(matches!(err, Error::Mismatch(_)));
        }
    }
}
