//! Triple storage: label interning, tab-separated parsing, indexed graphs and
//! train/valid/test splits.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use rustc_hash::{FxHashMap, FxHashSet};

use crate::error::{Error, Result};

pub type EntityId = u32;
pub type RelationId = u32;

/// A fact `(head, relation, tail)` over interned ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub const fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Triple { head, relation, tail }
    }
}

/// Ordered label vocabulary; ids are assigned first-come-first-served.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    labels: Vec<String>,
    index: FxHashMap<String, u32>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, label: &str) -> u32 {
        if let Some(&id) = self.index.get(label) {
            return id;
        }
        let id = self.labels.len() as u32;
        self.labels.push(label.to_owned());
        self.index.insert(label.to_owned(), id);
        id
    }

    pub fn get(&self, label: &str) -> Option<u32> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: u32) -> &str {
        &self.labels[id as usize]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl<S: AsRef<str>> FromIterator<S> for Vocab {
    fn from_iter<I: IntoIterator<Item = S>>(iter: I) -> Self {
        let mut v = Vocab::new();
        for s in iter {
            v.intern(s.as_ref());
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    Head,
    Relation,
    Tail,
}

/// Position of head, relation and tail among the three tab-separated columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ColumnOrder([Field; 3]);

impl ColumnOrder {
    pub const HRT: ColumnOrder = ColumnOrder([Field::Head, Field::Relation, Field::Tail]);
    pub const HTR: ColumnOrder = ColumnOrder([Field::Head, Field::Tail, Field::Relation]);

    pub fn new(fields: [Field; 3]) -> Result<Self> {
        let has = |f| fields.contains(&f);
        if has(Field::Head) && has(Field::Relation) && has(Field::Tail) {
            Ok(ColumnOrder(fields))
        } else {
            Err(Error::Config(format!("column order {fields:?} is not a permutation")))
        }
    }

    pub fn fields(&self) -> [Field; 3] {
        self.0
    }
}

impl Default for ColumnOrder {
    fn default() -> Self {
        ColumnOrder::HRT
    }
}

impl FromStr for ColumnOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let chars: Vec<char> = s.chars().collect();
        if chars.len() != 3 {
            return Err(Error::Config(format!("column order must have 3 letters, got {s:?}")));
        }
        let mut fields = [Field::Head; 3];
        for (slot, c) in fields.iter_mut().zip(&chars) {
            *slot = match c.to_ascii_lowercase() {
                'h' => Field::Head,
                'r' => Field::Relation,
                't' => Field::Tail,
                _ => return Err(Error::Config(format!("bad column letter {c:?} in {s:?}"))),
            };
        }
        ColumnOrder::new(fields)
    }
}

/// Parses tab-separated triples, interning labels into the given vocabularies.
///
/// Blank lines are skipped. The returned list keeps file order and duplicates.
pub fn parse_triples<R: BufRead>(
    reader: R,
    order: ColumnOrder,
    entities: &mut Vocab,
    relations: &mut Vocab,
) -> Result<Vec<Triple>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("expected 3 tab-separated fields, found {}", cols.len()),
            });
        }
        let (mut h, mut r, mut t) = ("", "", "");
        for (field, col) in order.fields().iter().zip(cols) {
            match field {
                Field::Head => h = col,
                Field::Relation => r = col,
                Field::Tail => t = col,
            }
        }
        let head = entities.intern(h);
        let relation = relations.intern(r);
        let tail = entities.intern(t);
        out.push(Triple { head, relation, tail });
    }
    Ok(out)
}

pub fn parse_triple_file(
    path: &Path,
    order: ColumnOrder,
    entities: &mut Vocab,
    relations: &mut Vocab,
) -> Result<Vec<Triple>> {
    let file = File::open(path).map_err(|e| Error::io_at(path, e))?;
    parse_triples(BufReader::new(file), order, entities, relations).map_err(|e| match e {
        Error::Parse { line, msg } => Error::Parse {
            line,
            msg: format!("{}: {msg}", path.display()),
        },
        other => other,
    })
}

/// Deduplicated triple set with the lookup indices used by mining, sampling
/// and filtered ranking. Immutable after construction.
#[derive(Debug, Clone)]
pub struct KnowledgeGraph {
    entities: Vocab,
    relations: Vocab,
    triples: Vec<Triple>,
    set: FxHashSet<Triple>,
    by_head_rel: FxHashMap<(EntityId, RelationId), Vec<EntityId>>,
    by_tail_rel: FxHashMap<(EntityId, RelationId), Vec<EntityId>>,
    by_head: FxHashMap<EntityId, Vec<(RelationId, EntityId)>>,
    by_pair: FxHashMap<(EntityId, EntityId), Vec<RelationId>>,
    by_relation: Vec<Vec<(EntityId, EntityId)>>,
}

impl KnowledgeGraph {
    /// Builds the graph. Duplicates collapse; every index list comes out sorted.
    pub fn new(entities: Vocab, relations: Vocab, triples: impl IntoIterator<Item = Triple>) -> Self {
        let mut triples: Vec<Triple> = triples.into_iter().collect();
        triples.sort_unstable();
        triples.dedup();
        debug_assert!(triples.iter().all(|t| (t.head as usize) < entities.len()
            && (t.tail as usize) < entities.len()
            && (t.relation as usize) < relations.len()));

        let mut by_head_rel: FxHashMap<_, Vec<_>> = FxHashMap::default();
        let mut by_tail_rel: FxHashMap<_, Vec<_>> = FxHashMap::default();
        let mut by_head: FxHashMap<_, Vec<_>> = FxHashMap::default();
        let mut by_pair: FxHashMap<_, Vec<_>> = FxHashMap::default();
        let mut by_relation = vec![Vec::new(); relations.len()];
        for t in &triples {
            by_head_rel.entry((t.head, t.relation)).or_default().push(t.tail);
            by_tail_rel.entry((t.tail, t.relation)).or_default().push(t.head);
            by_head.entry(t.head).or_default().push((t.relation, t.tail));
            by_pair.entry((t.head, t.tail)).or_default().push(t.relation);
            by_relation[t.relation as usize].push((t.head, t.tail));
        }
        // by_tail_rel collects heads in ascending order already; by_pair
        // collects relations in ascending order per pair.
        let set = triples.iter().copied().collect();
        KnowledgeGraph {
            entities,
            relations,
            triples,
            set,
            by_head_rel,
            by_tail_rel,
            by_head,
            by_pair,
            by_relation,
        }
    }

    pub fn entities(&self) -> &Vocab {
        &self.entities
    }

    pub fn relations(&self) -> &Vocab {
        &self.relations
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.relations.len()
    }

    /// Distinct triples in ascending `(head, relation, tail)` order.
    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.set.contains(t)
    }

    pub fn tails(&self, head: EntityId, relation: RelationId) -> &[EntityId] {
        self.by_head_rel.get(&(head, relation)).map_or(&[], Vec::as_slice)
    }

    pub fn heads(&self, tail: EntityId, relation: RelationId) -> &[EntityId] {
        self.by_tail_rel.get(&(tail, relation)).map_or(&[], Vec::as_slice)
    }

    /// Outgoing `(relation, tail)` edges of `head`.
    pub fn out_edges(&self, head: EntityId) -> &[(RelationId, EntityId)] {
        self.by_head.get(&head).map_or(&[], Vec::as_slice)
    }

    /// Relations linking `head` to `tail`.
    pub fn relations_between(&self, head: EntityId, tail: EntityId) -> &[RelationId] {
        self.by_pair.get(&(head, tail)).map_or(&[], Vec::as_slice)
    }

    /// All `(head, tail)` pairs of one relation.
    pub fn pairs(&self, relation: RelationId) -> &[(EntityId, EntityId)] {
        self.by_relation.get(relation as usize).map_or(&[], Vec::as_slice)
    }
}

/// Train graph plus held-out lists sharing one vocabulary.
#[derive(Debug, Clone)]
pub struct DatasetSplits {
    pub train: KnowledgeGraph,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
    pub all_triples: FxHashSet<Triple>,
}

impl DatasetSplits {
    pub fn from_parts(entities: Vocab, relations: Vocab, train: Vec<Triple>, valid: Vec<Triple>, test: Vec<Triple>) -> Self {
        let all_triples = train.iter().chain(&valid).chain(&test).copied().collect();
        DatasetSplits {
            train: KnowledgeGraph::new(entities, relations, train),
            valid,
            test,
            all_triples,
        }
    }

    /// Loads the three files with shared interning (train first, then valid, then test).
    pub fn load(train: &Path, valid: Option<&Path>, test: Option<&Path>, order: ColumnOrder) -> Result<Self> {
        let mut entities = Vocab::new();
        let mut relations = Vocab::new();
        let tr = parse_triple_file(train, order, &mut entities, &mut relations)?;
        let va = match valid {
            Some(p) => parse_triple_file(p, order, &mut entities, &mut relations)?,
            None => Vec::new(),
        };
        let te = match test {
            Some(p) => parse_triple_file(p, order, &mut entities, &mut relations)?,
            None => Vec::new(),
        };
        Ok(Self::from_parts(entities, relations, tr, va, te))
    }

    pub fn entities(&self) -> &Vocab {
        self.train.entities()
    }

    pub fn relations(&self) -> &Vocab {
        self.train.relations()
    }

    pub fn is_known(&self, t: &Triple) -> bool {
        self.all_triples.contains(t)
    }

    /// Keeps triples whose relation label starts with one of `prefixes` and
    /// re-interns both vocabularies densely (train, valid, test order).
    pub fn filter_subset<S: AsRef<str>>(&self, prefixes: &[S]) -> Result<Self> {
        if prefixes.is_empty() {
            return Err(Error::Config("filter_subset needs at least one prefix".into()));
        }
        let old_e = self.entities();
        let old_r = self.relations();
        let keep: Vec<bool> = old_r
            .labels()
            .iter()
            .map(|l| prefixes.iter().any(|p| l.starts_with(p.as_ref())))
            .collect();
        let mut entities = Vocab::new();
        let mut relations = Vocab::new();
        let mut remap = |ts: &mut dyn Iterator<Item = &Triple>| -> Vec<Triple> {
            ts.filter(|t| keep[t.relation as usize])
                .map(|t| Triple {
                    head: entities.intern(old_e.label(t.head)),
                    relation: relations.intern(old_r.label(t.relation)),
                    tail: entities.intern(old_e.label(t.tail)),
                })
                .collect()
        };
        let train = remap(&mut self.train.triples().iter());
        let valid = remap(&mut self.valid.iter());
        let test = remap(&mut self.test.iter());
        Ok(Self::from_parts(entities, relations, train, valid, test))
    }
}
