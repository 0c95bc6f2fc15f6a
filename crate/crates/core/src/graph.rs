//! Triple stores: loading, toy generation, transitive expansion, splits and
//! negative sampling.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

pub const HYPERNYM: &str = "hypernym";
pub const HYPONYM: &str = "hyponym";
pub const PART_MERONYM: &str = "part_meronym";
pub const PART_HOLONYM: &str = "part_holonym";
pub const MEMBER_MERONYM: &str = "member_meronym";
pub const MEMBER_HOLONYM: &str = "member_holonym";

/// Relations expanded by default. Membership is not path-transitive, so the
/// member relations are left out.
pub const DEFAULT_TRANSITIVE: [&str; 4] = [HYPERNYM, HYPONYM, PART_MERONYM, PART_HOLONYM];

/// Retries of uniform rejection sampling before `corrupt_tail` enumerates
/// the valid candidates.
const MAX_REJECTION_TRIES: usize = 64;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("unknown entity `{0}`")]
    UnknownEntity(String),
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
    #[error("duplicate label `{0}` in vocabulary")]
    DuplicateLabel(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no valid tail corruption exists for {0}")]
    Unsatisfiable(String),
}

pub type Result<T, E = GraphError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EntityId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RelationId(pub u32);

impl EntityId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RelationId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Bijection between labels and dense ids `0..len`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    labels: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_labels<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Self::new();
        for label in labels {
            let label = label.into();
            if vocab.index.contains_key(&label) {
                return Err(GraphError::DuplicateLabel(label));
            }
            vocab.intern(&label);
        }
        Ok(vocab)
    }

    /// Returns the id of `label`, assigning the next free id on first sight.
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

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: EntityId,
    pub relation: RelationId,
    pub tail: EntityId,
}

impl Triple {
    pub fn new(head: EntityId, relation: RelationId, tail: EntityId) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }

    pub fn touches(&self, entity: EntityId) -> bool {
        self.head == entity || self.tail == entity
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.head.0, self.relation.0, self.tail.0)
    }
}

/// Entity and relation vocabularies plus a duplicate-free set of triples.
///
/// Triples keep their insertion order so that everything derived from a
/// store (files, batches, splits) is reproducible.
#[derive(Clone, Debug, Default)]
pub struct TripleStore {
    entities: Vocab,
    relations: Vocab,
    triples: Vec<Triple>,
    index: HashSet<Triple>,
}

impl TripleStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_vocab(entities: Vocab, relations: Vocab) -> Self {
        Self {
            entities,
            relations,
            triples: Vec::new(),
            index: HashSet::new(),
        }
    }

    /// Inserts a triple over the existing vocabularies. Returns `false` if it
    /// was already present.
    pub fn insert(&mut self, triple: Triple) -> Result<bool> {
        if triple.head.index() >= self.entities.len() {
            return Err(GraphError::UnknownEntity(format!("#{}", triple.head.0)));
        }
        if triple.tail.index() >= self.entities.len() {
            return Err(GraphError::UnknownEntity(format!("#{}", triple.tail.0)));
        }
        if triple.relation.index() >= self.relations.len() {
            return Err(GraphError::UnknownRelation(format!("#{}", triple.relation.0)));
        }
        Ok(self.insert_unchecked(triple))
    }

    fn insert_unchecked(&mut self, triple: Triple) -> bool {
        if self.index.insert(triple) {
            self.triples.push(triple);
            true
        } else {
            false
        }
    }

    /// Inserts by label, growing the vocabularies as needed.
    pub fn insert_labels(&mut self, head: &str, relation: &str, tail: &str) -> bool {
        let h = EntityId(self.entities.intern(head));
        let r = RelationId(self.relations.intern(relation));
        let t = EntityId(self.entities.intern(tail));
        self.insert_unchecked(Triple::new(h, r, t))
    }

    pub fn contains(&self, triple: &Triple) -> bool {
        self.index.contains(triple)
    }

    pub fn contains_parts(&self, head: EntityId, relation: RelationId, tail: EntityId) -> bool {
        self.index.contains(&Triple::new(head, relation, tail))
    }

    pub fn triples(&self) -> &[Triple] {
        &self.triples
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn entities(&self) -> &Vocab {
        &self.entities
    }

    pub fn relations(&self) -> &Vocab {
        &self.relations
    }

    pub fn entity_count(&self) -> usize {
        self.entities.len()
    }

    pub fn entity_id(&self, label: &str) -> Option<EntityId> {
        self.entities.get(label).map(EntityId)
    }

    pub fn relation_id(&self, label: &str) -> Option<RelationId> {
        self.relations.get(label).map(RelationId)
    }

    pub fn entity_label(&self, id: EntityId) -> &str {
        self.entities.label(id.0)
    }

    pub fn relation_label(&self, id: RelationId) -> &str {
        self.relations.label(id.0)
    }

    /// Parses triple TSV. Returns the store and the number of duplicate lines
    /// that were dropped.
    pub fn read_tsv<R: BufRead>(reader: R) -> Result<(Self, usize)> {
        let mut store = Self::new();
        let mut duplicates = 0;
        for (n, line) in reader.lines().enumerate() {
            let line_no = n + 1;
            let line = line.map_err(|e| GraphError::Malformed {
                line: line_no,
                reason: e.to_string(),
            })?;
            let line = line.strip_suffix('\r').unwrap_or(&line);
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(GraphError::Malformed {
                    line: line_no,
                    reason: format!("expected 3 tab-separated fields, found {}", fields.len()),
                });
            }
            if fields.iter().any(|f| f.is_empty()) {
                return Err(GraphError::Malformed {
                    line: line_no,
                    reason: "empty field".into(),
                });
            }
            if !store.insert_labels(fields[0], fields[1], fields[2]) {
                duplicates += 1;
            }
        }
        Ok((store, duplicates))
    }

    pub fn write_tsv<W: Write>(&self, mut out: W) -> io::Result<()> {
        for t in &self.triples {
            writeln!(
                out,
                "{}\t{}\t{}",
                self.entity_label(t.head),
                self.relation_label(t.relation),
                self.entity_label(t.tail)
            )?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let io_err = |source| GraphError::Io {
            path: path.display().to_string(),
            source,
        };
        let file = File::create(path).map_err(io_err)?;
        let mut out = BufWriter::new(file);
        self.write_tsv(&mut out).map_err(io_err)?;
        out.flush().map_err(io_err)
    }

    /// Resolves a list of relation labels against this store.
    pub fn resolve_relations<S: AsRef<str>>(&self, labels: &[S]) -> Result<Vec<RelationId>> {
        labels
            .iter()
            .map(|l| {
                self.relation_id(l.as_ref())
                    .ok_or_else(|| GraphError::UnknownRelation(l.as_ref().to_owned()))
            })
            .collect()
    }

    /// Resolves a list of entity labels against this store.
    pub fn resolve_entities<S: AsRef<str>>(&self, labels: &[S]) -> Result<Vec<EntityId>> {
        labels
            .iter()
            .map(|l| {
                self.entity_id(l.as_ref())
                    .ok_or_else(|| GraphError::UnknownEntity(l.as_ref().to_owned()))
            })
            .collect()
    }
}

/// Loads a triple TSV file, deduplicating repeated lines.
pub fn load_triples(path: &Path) -> Result<TripleStore> {
    let file = File::open(path).map_err(|source| GraphError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let (store, duplicates) = TripleStore::read_tsv(BufReader::new(file))?;
    if duplicates > 0 {
        log::warn!(
            "{}: dropped {duplicates} duplicate triple(s)",
            path.display()
        );
    }
    Ok(store)
}

/// Adds `(a, r, z)` for every transitive relation `r` whenever `z` is
/// reachable from `a` by a path of at most `max_depth` `r`-edges of the input.
///
/// Paths never mix relations. Input triples keep their order; additions
/// follow, sorted by `(relation, head, tail)`.
pub fn transitive_expand(
    store: &TripleStore,
    transitive: &[RelationId],
    max_depth: usize,
) -> Result<TripleStore> {
    if max_depth < 1 {
        return Err(GraphError::InvalidArgument("max_depth must be >= 1".into()));
    }
    let mut relations: Vec<RelationId> = transitive.to_vec();
    relations.sort();
    relations.dedup();
    if let Some(r) = relations
        .iter()
        .find(|r| r.index() >= store.relations().len())
    {
        return Err(GraphError::UnknownRelation(format!("#{}", r.0)));
    }

    let mut out = store.clone();
    for &relation in &relations {
        let mut adjacency: HashMap<EntityId, Vec<EntityId>> = HashMap::new();
        for t in store.triples().iter().filter(|t| t.relation == relation) {
            adjacency.entry(t.head).or_default().push(t.tail);
        }
        let mut sources: Vec<EntityId> = adjacency.keys().copied().collect();
        sources.sort();

        let reached: Vec<Vec<Triple>> = sources
            .par_iter()
            .map(|&source| {
                let mut found: Vec<EntityId> = bounded_reach(&adjacency, source, max_depth)
                    .into_iter()
                    .collect();
                found.sort();
                found
                    .into_iter()
                    .map(|target| Triple::new(source, relation, target))
                    .filter(|t| !store.contains(t))
                    .collect()
            })
            .collect();
        for t in reached.into_iter().flatten() {
            out.insert_unchecked(t);
        }
    }
    Ok(out)
}

/// Every node reachable from `source` in 1..=`max_depth` steps. `source`
/// itself is included only if a cycle leads back to it.
fn bounded_reach(
    adjacency: &HashMap<EntityId, Vec<EntityId>>,
    source: EntityId,
    max_depth: usize,
) -> HashSet<EntityId> {
    let mut seen = HashSet::new();
    let mut frontier = vec![source];
    for _ in 0..max_depth {
        let mut next = Vec::new();
        for node in frontier {
            for &succ in adjacency.get(&node).map(Vec::as_slice).unwrap_or(&[]) {
                if seen.insert(succ) {
                    next.push(succ);
                }
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    seen
}

/// Train / standard-test / hard-test partition over the id space of the
/// store it was made from.
#[derive(Clone, Debug)]
pub struct DatasetSplits {
    pub entities: Vocab,
    pub relations: Vocab,
    pub train: Vec<Triple>,
    pub standard_test: Vec<Triple>,
    pub hard_test: Vec<Triple>,
    pub holdout: BTreeSet<EntityId>,
}

impl DatasetSplits {
    /// Training store re-indexed onto the entities that occur in training
    /// triples (first-appearance order of the source vocabulary). All
    /// relations are kept so relation ids line up with the source.
    pub fn train_store(&self) -> TripleStore {
        let present: HashSet<EntityId> = self
            .train
            .iter()
            .flat_map(|t| [t.head, t.tail])
            .collect();
        let mut entities = Vocab::new();
        for (i, label) in self.entities.labels().iter().enumerate() {
            if present.contains(&EntityId(i as u32)) {
                entities.intern(label);
            }
        }
        let mut store = TripleStore::with_vocab(entities, self.relations.clone());
        for t in &self.train {
            store.insert_labels(
                self.entities.label(t.head.0),
                self.relations.label(t.relation.0),
                self.entities.label(t.tail.0),
            );
        }
        store
    }

    /// Store holding `triples` over the full source vocabulary.
    pub fn store_of(&self, triples: &[Triple]) -> TripleStore {
        let mut store = TripleStore::with_vocab(self.entities.clone(), self.relations.clone());
        for &t in triples {
            store.insert_unchecked(t);
        }
        store
    }

    pub fn holdout_labels(&self) -> Vec<String> {
        self.holdout
            .iter()
            .map(|e| self.entities.label(e.0).to_owned())
            .collect()
    }
}

/// Splits `store` into training, standard-test and hard-test triples.
///
/// Every triple touching a holdout entity goes to the hard test set. The rest
/// is shuffled with `seed` and `round(test_fraction * remaining)` triples go
/// to the standard test set. A test triple whose entity would not occur in
/// any training triple is swapped for a training triple whose removal leaves
/// both of its entities covered, so the test set only mentions training
/// entities. In degenerate graphs where no such swap exists the test set
/// comes out smaller.
pub fn make_splits(
    store: &TripleStore,
    holdout: &BTreeSet<EntityId>,
    test_fraction: f64,
    seed: u64,
) -> Result<DatasetSplits> {
    if !(0.0..=1.0).contains(&test_fraction) {
        return Err(GraphError::InvalidArgument(format!(
            "test_fraction {test_fraction} outside [0, 1]"
        )));
    }
    if let Some(e) = holdout.iter().find(|e| e.index() >= store.entity_count()) {
        return Err(GraphError::UnknownEntity(format!("#{}", e.0)));
    }

    let (hard, mut remaining): (Vec<usize>, Vec<usize>) = (0..store.len())
        .partition(|&i| holdout.iter().any(|&e| store.triples()[i].touches(e)));
    let target = (test_fraction * remaining.len() as f64).round() as usize;

    let mut rng = crate::seeded_rng(seed);
    remaining.shuffle(&mut rng);
    let mut train_order: Vec<usize> = remaining.split_off(target);
    let tentative_test = remaining;

    let triples = store.triples();
    let mut coverage: HashMap<EntityId, usize> = HashMap::new();
    for &i in &train_order {
        *coverage.entry(triples[i].head).or_default() += 1;
        *coverage.entry(triples[i].tail).or_default() += 1;
    }
    let covered = |c: &HashMap<EntityId, usize>, e: EntityId| c.get(&e).copied().unwrap_or(0) > 0;

    let mut test = Vec::with_capacity(target);
    for i in tentative_test {
        let t = triples[i];
        if covered(&coverage, t.head) && covered(&coverage, t.tail) {
            test.push(i);
        } else {
            *coverage.entry(t.head).or_default() += 1;
            *coverage.entry(t.tail).or_default() += 1;
            train_order.push(i);
        }
    }

    let mut train = Vec::with_capacity(train_order.len());
    for i in train_order {
        let t = triples[i];
        if test.len() < target {
            let h = coverage.get_mut(&t.head).expect("counted");
            *h -= 1;
            let tc = coverage.get_mut(&t.tail).expect("counted");
            *tc -= 1;
            if covered(&coverage, t.head) && covered(&coverage, t.tail) {
                test.push(i);
                continue;
            }
            *coverage.get_mut(&t.head).expect("counted") += 1;
            *coverage.get_mut(&t.tail).expect("counted") += 1;
        }
        train.push(i);
    }
    train.sort_unstable();
    test.sort_unstable();

    Ok(DatasetSplits {
        entities: store.entities().clone(),
        relations: store.relations().clone(),
        train: train.into_iter().map(|i| triples[i]).collect(),
        standard_test: test.into_iter().map(|i| triples[i]).collect(),
        hard_test: hard.into_iter().map(|i| triples[i]).collect(),
        holdout: holdout.clone(),
    })
}

/// Replaces the tail of `triple` with an entity `t'` such that
/// `(head, relation, t')` is not in `store`, uniformly among valid choices.
pub fn corrupt_tail<R: Rng + ?Sized>(
    triple: &Triple,
    store: &TripleStore,
    rng: &mut R,
) -> Result<Triple> {
    let n = store.entity_count();
    let valid = |c: u32| {
        let candidate = Triple::new(triple.head, triple.relation, EntityId(c));
        (c != triple.tail.0 && !store.contains(&candidate)).then_some(candidate)
    };
    if n >= 2 {
        for _ in 0..MAX_REJECTION_TRIES {
            if let Some(t) = valid(rng.random_range(0..n as u32)) {
                return Ok(t);
            }
        }
    }
    let candidates: Vec<Triple> = (0..n as u32).filter_map(valid).collect();
    if candidates.is_empty() {
        return Err(GraphError::Unsatisfiable(triple.to_string()));
    }
    Ok(candidates[rng.random_range(0..candidates.len())])
}

/// Generates a balanced taxonomy with `branching` children per node and
/// `depth` levels below the root, plus `meronym_count` random part-of pairs.
///
/// Nodes are labelled by their path (`n`, `n.0`, `n.0.2`, …). Each tree edge
/// yields `(child, hypernym, parent)` and `(parent, hyponym, child)`; each
/// part pair yields `(whole, part_meronym, part)` and
/// `(part, part_holonym, whole)`.
pub fn gen_toy_graph(
    branching: usize,
    depth: usize,
    meronym_count: usize,
    seed: u64,
) -> Result<TripleStore> {
    if branching < 1 || depth < 1 {
        return Err(GraphError::InvalidArgument(
            "branching and depth must be >= 1".into(),
        ));
    }
    let mut nodes: Vec<(String, Option<usize>)> = vec![("n".to_owned(), None)];
    let mut level = vec![0usize];
    for _ in 0..depth {
        let mut next = Vec::with_capacity(level.len() * branching);
        for &parent in &level {
            for c in 0..branching {
                let label = format!("{}.{c}", nodes[parent].0);
                nodes.push((label, Some(parent)));
                next.push(nodes.len() - 1);
            }
        }
        level = next;
    }

    let max_pairs = nodes.len() * (nodes.len() - 1) / 2;
    if meronym_count > max_pairs {
        return Err(GraphError::InvalidArgument(format!(
            "{meronym_count} part pairs requested but only {max_pairs} node pairs exist"
        )));
    }

    let mut store = TripleStore::new();
    for (label, parent) in &nodes {
        if let Some(p) = parent {
            let parent_label = &nodes[*p].0;
            store.insert_labels(label, HYPERNYM, parent_label);
            store.insert_labels(parent_label, HYPONYM, label);
        }
    }

    let mut rng = crate::seeded_rng(seed);
    let mut used: HashSet<(usize, usize)> = HashSet::new();
    while used.len() < meronym_count {
        let whole = rng.random_range(0..nodes.len());
        let part = rng.random_range(0..nodes.len());
        if whole == part || used.contains(&(part, whole)) || !used.insert((whole, part)) {
            continue;
        }
        store.insert_labels(&nodes[whole].0, PART_MERONYM, &nodes[part].0);
        store.insert_labels(&nodes[part].0, PART_HOLONYM, &nodes[whole].0);
    }
    Ok(store)
}
