//! Premise retrieval: Okapi BM25, unification-based scoring over solved
//! training problems, weighted ensembles, and MAP evaluation.
//!
//! Every model scores the whole indexed corpus for a query. Rankings sort by
//! score descending with ties in corpus order.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::{parse_jsonl, read_text, KbError, Statement};

pub const DEFAULT_K1: f64 = 1.2;
pub const DEFAULT_B: f64 = 0.75;
pub const DEFAULT_ENSEMBLE_WEIGHTS: [f64; 2] = [0.8, 0.2];

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("cannot build an index over an empty collection")]
    EmptyIndex,
    #[error("invalid BM25 parameters k1={k1}, b={b}")]
    InvalidParams { k1: f64, b: f64 },
    #[error("unification model used before fit")]
    UnfittedModel,
    #[error("unification model needs at least one training problem")]
    EmptyTrainingSet,
    #[error("gold explanation cites `{0}`, which is not in the indexed corpus")]
    UnknownStatement(String),
    #[error("{models} models but {weights} weights")]
    LengthMismatch { models: usize, weights: usize },
    #[error("ensemble weights are all zero")]
    AllZeroWeights,
    #[error("ensemble weight {0} is negative")]
    NegativeWeight(f64),
    #[error("ensemble members index different corpora")]
    CorpusMismatch,
    #[error("ranking for `{0}` has no gold entry")]
    MissingGold(String),
    #[error("gold set for `{0}` is empty")]
    EmptyGold(String),
    #[error(transparent)]
    Data(#[from] KbError),
    #[error("malformed ranking line {line}: {reason}")]
    MalformedRanking { line: usize, reason: String },
}

/// Lowercase, split on non-alphanumerics, drop tokens shorter than two
/// characters. No stemming.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2)
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
}

impl Query {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Query {
            id: id.into(),
            text: text.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub query_id: String,
    pub model_name: String,
    pub scored: Vec<(String, f64)>,
}

impl Ranking {
    /// Sorts `ids` by `scores` descending; equal scores keep input order.
    pub fn from_scores(query_id: &str, model_name: &str, ids: &[String], scores: &[f64]) -> Self {
        let mut order: Vec<usize> = (0..ids.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
        Ranking {
            query_id: query_id.to_string(),
            model_name: model_name.to_string(),
            scored: order.into_iter().map(|i| (ids[i].clone(), scores[i])).collect(),
        }
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.scored.iter().map(|(id, _)| id.as_str())
    }

    pub fn top(&self, k: usize) -> &[(String, f64)] {
        &self.scored[..k.min(self.scored.len())]
    }
}

pub trait RetrievalModel: Send + Sync {
    fn name(&self) -> &str;

    /// Statement ids in corpus order; `score` returns one value per id.
    fn statement_ids(&self) -> &[String];

    fn score(&self, text: &str) -> Result<Vec<f64>, RetrievalError>;

    fn query(&self, queries: &[Query]) -> Result<Vec<Ranking>, RetrievalError> {
        queries
            .iter()
            .map(|q| {
                let scores = self.score(&q.text)?;
                Ok(Ranking::from_scores(&q.id, self.name(), self.statement_ids(), &scores))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params {
            k1: DEFAULT_K1,
            b: DEFAULT_B,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Bm25Index {
    name: String,
    ids: Vec<String>,
    term_freqs: Vec<HashMap<String, u32>>,
    lengths: Vec<usize>,
    avg_len: f64,
    doc_freq: HashMap<String, usize>,
    params: Bm25Params,
}

impl Bm25Index {
    pub fn build<I, S, T>(docs: I, params: Bm25Params) -> Result<Self, RetrievalError>
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: AsRef<str>,
    {
        if !(params.k1 >= 0.0 && (0.0..=1.0).contains(&params.b)) {
            return Err(RetrievalError::InvalidParams {
                k1: params.k1,
                b: params.b,
            });
        }
        let mut ids = Vec::new();
        let mut term_freqs = Vec::new();
        let mut lengths = Vec::new();
        let mut doc_freq: HashMap<String, usize> = HashMap::new();
        for (id, text) in docs {
            let tokens = tokenize(text.as_ref());
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in &tokens {
                *tf.entry(t.clone()).or_default() += 1;
            }
            for t in tf.keys() {
                *doc_freq.entry(t.clone()).or_default() += 1;
            }
            ids.push(id.into());
            lengths.push(tokens.len());
            term_freqs.push(tf);
        }
        if ids.is_empty() {
            return Err(RetrievalError::EmptyIndex);
        }
        let avg_len = lengths.iter().sum::<usize>() as f64 / ids.len() as f64;
        Ok(Bm25Index {
            name: "bm25".to_string(),
            ids,
            term_freqs,
            lengths,
            avg_len,
            doc_freq,
            params,
        })
    }

    pub fn from_statements<'a>(
        statements: impl IntoIterator<Item = &'a Statement>,
        params: Bm25Params,
    ) -> Result<Self, RetrievalError> {
        Self::build(statements.into_iter().map(|s| (s.id.clone(), &s.surface)), params)
    }

    pub fn named(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// ln((N - df + 0.5) / (df + 0.5) + 1)
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.ids.len() as f64;
        let df = self.doc_freq.get(term).copied().unwrap_or(0) as f64;
        ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
    }

    /// Scores every document; repeated query tokens count once per occurrence.
    pub fn scores(&self, text: &str) -> Vec<f64> {
        let query = tokenize(text);
        let Bm25Params { k1, b } = self.params;
        let idfs: Vec<f64> = query.iter().map(|t| self.idf(t)).collect();
        (0..self.ids.len())
            .map(|d| {
                let norm = if self.avg_len > 0.0 {
                    1.0 - b + b * self.lengths[d] as f64 / self.avg_len
                } else {
                    1.0
                };
                query
                    .iter()
                    .zip(&idfs)
                    .map(|(t, idf)| {
                        let tf = self.term_freqs[d].get(t).copied().unwrap_or(0) as f64;
                        if tf == 0.0 {
                            0.0
                        } else {
                            idf * tf * (k1 + 1.0) / (tf + k1 * norm)
                        }
                    })
                    .sum()
            })
            .collect()
    }
}

impl RetrievalModel for Bm25Index {
    fn name(&self) -> &str {
        &self.name
    }

    fn statement_ids(&self) -> &[String] {
        &self.ids
    }

    fn score(&self, text: &str) -> Result<Vec<f64>, RetrievalError> {
        Ok(self.scores(text))
    }
}

pub fn bm25_query(index: &Bm25Index, queries: &[Query]) -> Result<Vec<Ranking>, RetrievalError> {
    index.query(queries)
}

/// A solved training problem: its text and the ids of its gold explanation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingProblem {
    pub text: String,
    pub gold_ids: Vec<String>,
}

#[derive(Debug, Clone)]
struct Fitted {
    problems: Bm25Index,
    gold: Vec<Vec<usize>>,
}

/// Scores a fact by how often it explains training problems similar to the
/// query: `score(f, q) = sum over q' of sim(q, q') * [f in gold(q')]`, with
/// `sim` = BM25 of `q` against the training problem texts.
#[derive(Debug, Clone)]
pub struct UnificationModel {
    name: String,
    ids: Vec<String>,
    params: Bm25Params,
    fitted: Option<Fitted>,
}

impl UnificationModel {
    pub fn new<'a>(statements: impl IntoIterator<Item = &'a Statement>, params: Bm25Params) -> Self {
        UnificationModel {
            name: "unification".to_string(),
            ids: statements.into_iter().map(|s| s.id.clone()).collect(),
            params,
            fitted: None,
        }
    }

    pub fn fit(&mut self, training: &[TrainingProblem]) -> Result<(), RetrievalError> {
        if training.is_empty() {
            return Err(RetrievalError::EmptyTrainingSet);
        }
        let position: HashMap<&str, usize> =
            self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let gold = training
            .iter()
            .map(|t| {
                t.gold_ids
                    .iter()
                    .map(|g| {
                        position
                            .get(g.as_str())
                            .copied()
                            .ok_or_else(|| RetrievalError::UnknownStatement(g.clone()))
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        let problems = Bm25Index::build(
            training.iter().enumerate().map(|(i, t)| (i.to_string(), &t.text)),
            self.params,
        )?;
        self.fitted = Some(Fitted { problems, gold });
        Ok(())
    }

    pub fn is_fitted(&self) -> bool {
        self.fitted.is_some()
    }
}

impl RetrievalModel for UnificationModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn statement_ids(&self) -> &[String] {
        &self.ids
    }

    fn score(&self, text: &str) -> Result<Vec<f64>, RetrievalError> {
        let fitted = self.fitted.as_ref().ok_or(RetrievalError::UnfittedModel)?;
        let sims = fitted.problems.scores(text);
        let mut scores = vec![0.0; self.ids.len()];
        for (sim, gold) in sims.iter().zip(&fitted.gold) {
            let mut seen = HashSet::new();
            for &f in gold {
                if seen.insert(f) {
                    scores[f] += sim;
                }
            }
        }
        Ok(scores)
    }
}

pub fn unification_query(
    model: &UnificationModel,
    queries: &[Query],
) -> Result<Vec<Ranking>, RetrievalError> {
    model.query(queries)
}

/// Min-max normalisation onto [0, 1]; constant lists map to zeros.
pub fn min_max(scores: &[f64]) -> Vec<f64> {
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) {
        return vec![0.0; scores.len()];
    }
    scores.iter().map(|s| (s - lo) / (hi - lo)).collect()
}

/// Per-query min-max normalised, weighted sum of member scores.
pub struct EnsembleModel {
    name: String,
    members: Vec<Box<dyn RetrievalModel>>,
    weights: Vec<f64>,
}

impl EnsembleModel {
    pub fn new(members: Vec<Box<dyn RetrievalModel>>, weights: Vec<f64>) -> Result<Self, RetrievalError> {
        if members.len() != weights.len() || members.is_empty() {
            return Err(RetrievalError::LengthMismatch {
                models: members.len(),
                weights: weights.len(),
            });
        }
        if let Some(&w) = weights.iter().find(|w| **w < 0.0 || w.is_nan()) {
            return Err(RetrievalError::NegativeWeight(w));
        }
        if weights.iter().all(|w| *w == 0.0) {
            return Err(RetrievalError::AllZeroWeights);
        }
        if members
            .iter()
            .any(|m| m.statement_ids() != members[0].statement_ids())
        {
            return Err(RetrievalError::CorpusMismatch);
        }
        let name = members
            .iter()
            .map(|m| m.name())
            .collect::<Vec<_>>()
            .join("+");
        Ok(EnsembleModel {
            name,
            members,
            weights,
        })
    }

    pub fn members(&self) -> &[Box<dyn RetrievalModel>] {
        &self.members
    }
}

impl RetrievalModel for EnsembleModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn statement_ids(&self) -> &[String] {
        self.members[0].statement_ids()
    }

    fn score(&self, text: &str) -> Result<Vec<f64>, RetrievalError> {
        let mut total = vec![0.0; self.statement_ids().len()];
        for (model, w) in self.members.iter().zip(&self.weights) {
            for (t, s) in total.iter_mut().zip(min_max(&model.score(text)?)) {
                *t += w * s;
            }
        }
        Ok(total)
    }
}

pub fn ensemble_query(ensemble: &EnsembleModel, queries: &[Query]) -> Result<Vec<Ranking>, RetrievalError> {
    ensemble.query(queries)
}

/// Mean over gold hits of precision at the hit's rank, divided by |gold|.
pub fn average_precision(ranking: &Ranking, gold: &HashSet<String>) -> f64 {
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, id) in ranking.ids().enumerate() {
        if gold.contains(id) {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    total / gold.len() as f64
}

pub fn evaluate_map(
    rankings: &[Ranking],
    gold: &HashMap<String, HashSet<String>>,
) -> Result<f64, RetrievalError> {
    if rankings.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for r in rankings {
        let g = gold
            .get(&r.query_id)
            .ok_or_else(|| RetrievalError::MissingGold(r.query_id.clone()))?;
        if g.is_empty() {
            return Err(RetrievalError::EmptyGold(r.query_id.clone()));
        }
        sum += average_precision(r, g);
    }
    Ok(sum / rankings.len() as f64)
}

pub const RANKING_TSV_HEADER: &str = "query_id\trank\tstatement_id\tscore";

/// `query_id<TAB>rank<TAB>statement_id<TAB>score`, 1-based ranks, scores to
/// six decimals, header first.
pub fn rankings_to_tsv(rankings: &[Ranking]) -> String {
    let mut out = String::from(RANKING_TSV_HEADER);
    out.push('\n');
    for r in rankings {
        for (rank, (id, score)) in r.scored.iter().enumerate() {
            let _ = writeln!(out, "{}\t{}\t{}\t{:.6}", r.query_id, rank + 1, id, score);
        }
    }
    out
}

/// Rows of one query: (rank, statement id, score).
type TsvRows = Vec<(usize, String, f64)>;

pub fn rankings_from_tsv(text: &str, model_name: &str) -> Result<Vec<Ranking>, RetrievalError> {
    let mut by_query: Vec<(String, TsvRows)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || (i == 0 && line == RANKING_TSV_HEADER) {
            continue;
        }
        let bad = |reason: &str| RetrievalError::MalformedRanking {
            line: i + 1,
            reason: reason.to_string(),
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(bad("expected 4 tab-separated columns"));
        }
        let rank: usize = cols[1].parse().map_err(|_| bad("rank is not an integer"))?;
        let score: f64 = cols[3].parse().map_err(|_| bad("score is not a number"))?;
        match by_query.iter_mut().find(|(q, _)| q == cols[0]) {
            Some((_, rows)) => rows.push((rank, cols[2].to_string(), score)),
            None => by_query.push((cols[0].to_string(), vec![(rank, cols[2].to_string(), score)])),
        }
    }
    Ok(by_query
        .into_iter()
        .map(|(query_id, mut rows)| {
            rows.sort_by_key(|(rank, _, _)| *rank);
            Ranking {
                query_id,
                model_name: model_name.to_string(),
                scored: rows.into_iter().map(|(_, id, s)| (id, s)).collect(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoldRecord {
    pub query_id: String,
    pub gold_ids: Vec<String>,
}

pub fn load_gold(path: impl AsRef<Path>) -> Result<HashMap<String, HashSet<String>>, RetrievalError> {
    let text = read_text(path.as_ref())?;
    let records: Vec<GoldRecord> = parse_jsonl(&text)?;
    Ok(records
        .into_iter()
        .map(|r| (r.query_id, r.gold_ids.into_iter().collect()))
        .collect())
}

/// MAP per model name, for reporting.
pub fn map_report(
    per_model: &[(String, Vec<Ranking>)],
    gold: &HashMap<String, HashSet<String>>,
) -> Result<BTreeMap<String, f64>, RetrievalError> {
    per_model
        .iter()
        .map(|(name, r)| Ok((name.clone(), evaluate_map(r, gold)?)))
        .collect()
}
