//! Link ranking and the ranking metrics: mean rank fraction `μ_r`, `t@n`
//! (true links in the top `n`) and `f@n` (queries with at least one true
//! link in the top `n`).

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::context::ContextStats;
use crate::graph::{EntityId, RelationId, Triple, TripleStore};
use crate::image::{class_mean, ImageError};
use crate::kg::{KgError, KgModel};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("query `{0}`: {1}")]
    InvalidQuery(String, String),
    #[error("query `{0}` has no false candidates")]
    NoFalseCandidates(String),
    #[error("no query has a true candidate")]
    NoTrueCandidates,
    #[error(transparent)]
    Kg(#[from] KgError),
    #[error(transparent)]
    Image(#[from] ImageError),
}

pub type Result<T, E = EvalError> = std::result::Result<T, E>;

pub type Link = (RelationId, EntityId);

/// A vector to predict links for, its candidate links and the true ones.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkQuery {
    pub query_id: String,
    /// Grouping key for per-class evaluation.
    pub class_label: Option<String>,
    pub vector: Vec<f64>,
    pub candidates: Vec<Link>,
    pub truth: HashSet<Link>,
}

impl LinkQuery {
    pub fn new(
        query_id: impl Into<String>,
        vector: Vec<f64>,
        candidates: Vec<Link>,
        truth: HashSet<Link>,
    ) -> Result<Self> {
        let q = Self {
            query_id: query_id.into(),
            class_label: None,
            vector,
            candidates,
            truth,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn with_class(mut self, label: impl Into<String>) -> Self {
        self.class_label = Some(label.into());
        self
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: &str| Err(EvalError::InvalidQuery(self.query_id.clone(), msg.into()));
        if self.candidates.is_empty() {
            return invalid("no candidates");
        }
        let unique: HashSet<&Link> = self.candidates.iter().collect();
        if unique.len() != self.candidates.len() {
            return invalid("duplicate candidates");
        }
        if self.truth.iter().any(|t| !unique.contains(t)) {
            return invalid("true link missing from candidates");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankedLink {
    pub relation: RelationId,
    pub entity: EntityId,
    pub raw_score: f64,
    pub u_score: Option<f64>,
    pub is_true: bool,
    pub candidate_index: usize,
}

impl RankedLink {
    /// Ranking order: by `u` descending when present, then raw score
    /// ascending, then candidate index.
    fn order(&self, other: &Self) -> Ordering {
        let by_u = match (self.u_score, other.u_score) {
            (Some(a), Some(b)) => b.total_cmp(&a),
            _ => Ordering::Equal,
        };
        by_u.then(self.raw_score.total_cmp(&other.raw_score))
            .then(self.candidate_index.cmp(&other.candidate_index))
    }

    /// Whether two links share the same ranking key (ignoring the index).
    fn tied(&self, other: &Self) -> bool {
        self.raw_score.total_cmp(&other.raw_score) == Ordering::Equal
            && match (self.u_score, other.u_score) {
                (Some(a), Some(b)) => a.total_cmp(&b) == Ordering::Equal,
                _ => true,
            }
    }
}

/// Candidates of one query in rank order.
#[derive(Clone, Debug, PartialEq)]
pub struct Ranking {
    pub query_id: String,
    pub links: Vec<RankedLink>,
}

impl Ranking {
    pub fn true_in_top(&self, n: usize) -> usize {
        self.links.iter().take(n).filter(|l| l.is_true).count()
    }
}

/// Scores every candidate `(r, e)` as `f(query, r, g(e))` and sorts them:
/// ascending raw score without context, descending context score `u` with
/// context. Ties fall back to raw score, then candidate order.
pub fn rank_links(model: &KgModel, query: &LinkQuery, context: Option<&ContextStats>) -> Result<Ranking> {
    if query.vector.len() != model.dim() {
        return Err(KgError::Dimension {
            expected: model.dim(),
            actual: query.vector.len(),
        }
        .into());
    }
    let mut links = query
        .candidates
        .iter()
        .enumerate()
        .map(|(i, &(relation, entity))| {
            if entity.index() >= model.entity_count() {
                return Err(KgError::UnknownEntity(entity.0).into());
            }
            let raw_score = model.score(&query.vector, relation, model.entity_vec(entity))?;
            Ok(RankedLink {
                relation,
                entity,
                raw_score,
                u_score: context.map(|c| c.rescore(raw_score, relation, entity)),
                is_true: query.truth.contains(&(relation, entity)),
                candidate_index: i,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    links.sort_by(RankedLink::order);
    Ok(Ranking {
        query_id: query.query_id.clone(),
        links,
    })
}

/// Mean over all true candidates of the fraction of false candidates ranked
/// above them. False candidates tied with a true one count as above.
pub fn mean_rank_fraction(rankings: &[Ranking]) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for r in rankings {
        let falses = r.links.iter().filter(|l| !l.is_true).count();
        if falses == 0 {
            return Err(EvalError::NoFalseCandidates(r.query_id.clone()));
        }
        for (pos, link) in r.links.iter().enumerate().filter(|(_, l)| l.is_true) {
            let above = r
                .links
                .iter()
                .enumerate()
                .filter(|(p, l)| !l.is_true && (*p < pos || l.tied(link)))
                .count();
            total += above as f64 / falses as f64;
            count += 1;
        }
    }
    if count == 0 {
        return Err(EvalError::NoTrueCandidates);
    }
    Ok(total / count as f64)
}

/// Mean number of true links in the top `n`.
pub fn t_at_n(rankings: &[Ranking], n: usize) -> f64 {
    if rankings.is_empty() {
        return 0.0;
    }
    rankings.iter().map(|r| r.true_in_top(n) as f64).sum::<f64>() / rankings.len() as f64
}

/// Fraction of queries with at least one true link in the top `n`.
pub fn f_at_n(rankings: &[Ranking], n: usize) -> f64 {
    if rankings.is_empty() {
        return 0.0;
    }
    rankings.iter().filter(|r| r.true_in_top(n) > 0).count() as f64 / rankings.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    #[default]
    PerImage,
    PerClass,
}

impl EvalMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalMode::PerImage => "per_image",
            EvalMode::PerClass => "per_class",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mu_r: f64,
    pub t_at_n: f64,
    pub f_at_n: f64,
    pub n: usize,
    pub mode: EvalMode,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RankingReport {
    pub rankings: Vec<Ranking>,
    pub mu_r: f64,
    pub t_at_n: f64,
    pub f_at_n: f64,
    pub n: usize,
    pub mode: EvalMode,
}

impl RankingReport {
    pub fn summary(&self) -> Summary {
        Summary {
            mu_r: self.mu_r,
            t_at_n: self.t_at_n,
            f_at_n: self.f_at_n,
            n: self.n,
            mode: self.mode,
        }
    }

    /// `query_id,rank,relation,entity,raw_score,u_score,is_true`; `u_score`
    /// is empty without context. Ranks start at 1.
    pub fn write_csv<W: Write>(&self, model: &KgModel, out: W) -> io::Result<()> {
        write_rankings_csv(&self.rankings, model, out)
    }
}

pub fn write_rankings_csv<W: Write>(rankings: &[Ranking], model: &KgModel, mut out: W) -> io::Result<()> {
    writeln!(out, "query_id,rank,relation,entity,raw_score,u_score,is_true")?;
    for r in rankings {
        for (i, l) in r.links.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.query_id,
                i + 1,
                model.relations.label(l.relation.0),
                model.entities.label(l.entity.0),
                l.raw_score,
                l.u_score.map(|u| u.to_string()).unwrap_or_default(),
                l.is_true
            )?;
        }
    }
    Ok(())
}

/// Collapses queries sharing a class label into one query whose vector is
/// the normalized class mean. Candidates and truth come from the first
/// query of each class; unlabelled queries pass through unchanged.
pub fn collapse_by_class(queries: &[LinkQuery]) -> Result<Vec<LinkQuery>> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<&LinkQuery>> = HashMap::new();
    for q in queries {
        let key = q.class_label.clone().unwrap_or_else(|| q.query_id.clone());
        groups
            .entry(key.clone())
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(q);
    }
    order
        .into_iter()
        .map(|key| {
            let members = &groups[&key];
            let first = members[0];
            if first.class_label.is_none() {
                return Ok(first.clone());
            }
            let vectors: Vec<Vec<f64>> = members.iter().map(|q| q.vector.clone()).collect();
            Ok(LinkQuery {
                query_id: key.clone(),
                class_label: Some(key),
                vector: class_mean(&vectors)?,
                candidates: first.candidates.clone(),
                truth: first.truth.clone(),
            })
        })
        .collect()
}

/// Ranks every query (in parallel, results in input order) and aggregates
/// the three metrics.
pub fn evaluate_dataset(
    model: &KgModel,
    queries: &[LinkQuery],
    context: Option<&ContextStats>,
    n: usize,
    mode: EvalMode,
) -> Result<RankingReport> {
    let collapsed;
    let queries = match mode {
        EvalMode::PerImage => queries,
        EvalMode::PerClass => {
            collapsed = collapse_by_class(queries)?;
            &collapsed
        }
    };
    let rankings = queries
        .par_iter()
        .map(|q| {
            q.validate()?;
            rank_links(model, q, context)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RankingReport {
        mu_r: mean_rank_fraction(&rankings)?,
        t_at_n: t_at_n(&rankings, n),
        f_at_n: f_at_n(&rankings, n),
        n,
        mode,
        rankings,
    })
}

/// Every `(relation, entity)` pair over the model's relations and entities.
pub fn all_links(model: &KgModel) -> Vec<Link> {
    (0..model.relations.len() as u32)
        .flat_map(|r| (0..model.entity_count() as u32).map(move |e| (RelationId(r), EntityId(e))))
        .collect()
}

/// Pairs `(r, e)` where `e` occurs as a tail of `r` in `store`, in
/// `(relation, entity)` order. `store` must share the model's vocabulary.
pub fn observed_links(store: &TripleStore) -> Vec<Link> {
    let set: HashSet<Link> = store.triples().iter().map(|t| (t.relation, t.tail)).collect();
    let mut links: Vec<Link> = set.into_iter().collect();
    links.sort();
    links
}

/// Tail-prediction queries for held-out triples: for each `(h, r, t)` the
/// head vector `g(h)` is ranked against every `(r, e)` whose triple is not
/// already known, plus the true `(r, t)`.
pub fn tail_prediction_queries(model: &KgModel, test: &[Triple], known: &HashSet<Triple>) -> Vec<LinkQuery> {
    test.iter()
        .enumerate()
        .map(|(i, t)| {
            let candidates: Vec<Link> = (0..model.entity_count() as u32)
                .map(EntityId)
                .filter(|&e| e == t.tail || !known.contains(&Triple::new(t.head, t.relation, e)))
                .map(|e| (t.relation, e))
                .collect();
            LinkQuery {
                query_id: format!("q{i}"),
                class_label: None,
                vector: model.entity_vec(t.head).to_vec(),
                candidates,
                truth: HashSet::from([(t.relation, t.tail)]),
            }
        })
        .collect()
}
