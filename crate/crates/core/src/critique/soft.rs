//! Soft critiques: parsimony (concept drift), coherence (if-then entailment
//! strength) and uncertainty (hedging), plus majority-vote selection among
//! competing explanations.

use std::collections::{BTreeSet, HashSet};
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use regex::Regex;
use rust_stemmers::{Algorithm, Stemmer};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Critique, CritiqueError, CritiqueKind, CritiqueReport};
use crate::http::{post_with_retry, HttpTransport, ReqwestTransport, RetryPolicy, Slots};
use crate::kb::{Explanation, NliProblem};

pub const STOPWORDS: &str = include_str!("../../assets/stopwords.txt");
pub const HEDGES: &str = include_str!("../../assets/hedges.txt");

fn lexicon_lines(text: &str) -> impl Iterator<Item = &str> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
}

fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConceptSet {
    pub concepts: BTreeSet<String>,
}

impl ConceptSet {
    pub fn len(&self) -> usize {
        self.concepts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concepts.is_empty()
    }

    pub fn difference(&self, other: &ConceptSet) -> ConceptSet {
        ConceptSet {
            concepts: self.concepts.difference(&other.concepts).cloned().collect(),
        }
    }

    pub fn is_subset(&self, other: &ConceptSet) -> bool {
        self.concepts.is_subset(&other.concepts)
    }
}

/// Lowercase, strip punctuation, drop stopwords, stem (Snowball English).
pub struct ConceptExtractor {
    stopwords: HashSet<String>,
    stemmer: Stemmer,
}

impl ConceptExtractor {
    pub fn new(stopwords: impl IntoIterator<Item = String>) -> Self {
        ConceptExtractor {
            stopwords: stopwords.into_iter().map(|w| w.to_lowercase()).collect(),
            stemmer: Stemmer::create(Algorithm::English),
        }
    }

    pub fn shipped() -> &'static ConceptExtractor {
        static EXTRACTOR: OnceLock<ConceptExtractor> = OnceLock::new();
        EXTRACTOR.get_or_init(|| ConceptExtractor::new(lexicon_lines(STOPWORDS).map(String::from)))
    }

    pub fn concepts(&self, text: &str) -> ConceptSet {
        ConceptSet {
            concepts: words(text)
                .filter(|w| !self.stopwords.contains(w))
                .map(|w| self.stemmer.stem(&w).into_owned())
                .collect(),
        }
    }
}

pub fn concepts(text: &str) -> ConceptSet {
    ConceptExtractor::shipped().concepts(text)
}

/// Concepts of the explanation missing from the problem text and candidates.
pub fn concept_drift(problem: &NliProblem, explanation: &Explanation) -> ConceptSet {
    concepts(&explanation.text()).difference(&concepts(&problem.full_text()))
}

pub fn parsimony(problem: &NliProblem, explanation: &Explanation) -> usize {
    concept_drift(problem, explanation).len()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IfThenClause {
    pub antecedent: String,
    pub consequent: String,
    pub source_sentence_index: usize,
}

fn if_then_patterns() -> &'static (Regex, Regex, Regex) {
    static RE: OnceLock<(Regex, Regex, Regex)> = OnceLock::new();
    RE.get_or_init(|| {
        (
            Regex::new(r"(?is)^\s*if\s+(.+?),\s*then\s+(.+?)[\s.!?]*$").expect("valid regex"),
            Regex::new(r"(?is)^\s*if\s+([^,]+?),\s*(.+?)[\s.!?]*$").expect("valid regex"),
            Regex::new(r"(?i)\bthen\b").expect("valid regex"),
        )
    })
}

/// "If A, then B" or, when the sentence has no "then", "If A, B".
pub fn extract_if_then(explanation: &Explanation) -> Vec<IfThenClause> {
    let (with_then, comma, then_word) = if_then_patterns();
    explanation
        .sentences
        .iter()
        .enumerate()
        .filter_map(|(i, s)| {
            let caps = if then_word.is_match(s) {
                with_then.captures(s)?
            } else {
                comma.captures(s)?
            };
            let (a, b) = (caps[1].trim(), caps[2].trim());
            (!a.is_empty() && !b.is_empty()).then(|| IfThenClause {
                antecedent: a.to_string(),
                consequent: b.to_string(),
                source_sentence_index: i,
            })
        })
        .collect()
}

pub trait EntailmentScorer: Send + Sync {
    fn name(&self) -> &str;

    fn range(&self) -> (f64, f64);

    fn score(&self, premise: &str, hypothesis: &str) -> Result<f64, CritiqueError>;
}

/// Jaccard overlap of content stems, in [0, 1]. Two empty sides score 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct LexicalEntailment;

pub fn jaccard(a: &ConceptSet, b: &ConceptSet) -> f64 {
    let union = a.concepts.union(&b.concepts).count();
    if union == 0 {
        return 0.0;
    }
    a.concepts.intersection(&b.concepts).count() as f64 / union as f64
}

impl EntailmentScorer for LexicalEntailment {
    fn name(&self) -> &str {
        "lexical"
    }

    fn range(&self) -> (f64, f64) {
        (0.0, 1.0)
    }

    fn score(&self, premise: &str, hypothesis: &str) -> Result<f64, CritiqueError> {
        Ok(jaccard(&concepts(premise), &concepts(hypothesis)))
    }
}

pub trait HedgeScorer: Send + Sync {
    fn name(&self) -> &str;

    /// Hedging in one sentence; non-negative.
    fn score_sentence(&self, sentence: &str) -> Result<f64, CritiqueError>;
}

/// Counts lexicon matches, longest multi-word entry first.
#[derive(Debug, Clone)]
pub struct HedgeLexicon {
    entries: Vec<Vec<String>>,
}

impl HedgeLexicon {
    pub fn new<S: AsRef<str>>(entries: impl IntoIterator<Item = S>) -> Self {
        let mut entries: Vec<Vec<String>> = entries
            .into_iter()
            .map(|e| words(e.as_ref()).collect::<Vec<_>>())
            .filter(|e| !e.is_empty())
            .collect();
        entries.sort_by(|a, b| b.len().cmp(&a.len()).then_with(|| a.cmp(b)));
        entries.dedup();
        HedgeLexicon { entries }
    }

    pub fn shipped() -> &'static HedgeLexicon {
        static LEXICON: OnceLock<HedgeLexicon> = OnceLock::new();
        LEXICON.get_or_init(|| HedgeLexicon::new(lexicon_lines(HEDGES)))
    }

    pub fn matches(&self, sentence: &str) -> Vec<String> {
        let toks: Vec<String> = words(sentence).collect();
        let mut found = Vec::new();
        let mut i = 0;
        while i < toks.len() {
            match self.entries.iter().find(|e| toks[i..].starts_with(e)) {
                Some(e) => {
                    found.push(e.join(" "));
                    i += e.len();
                }
                None => i += 1,
            }
        }
        found
    }
}

impl HedgeScorer for HedgeLexicon {
    fn name(&self) -> &str {
        "lexicon"
    }

    fn score_sentence(&self, sentence: &str) -> Result<f64, CritiqueError> {
        Ok(self.matches(sentence).len() as f64)
    }
}

/// Sum of per-sentence hedging divided by the number of sentences.
pub fn uncertainty_with(explanation: &Explanation, scorer: &dyn HedgeScorer) -> Result<f64, CritiqueError> {
    if explanation.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for s in &explanation.sentences {
        total += scorer.score_sentence(s)?;
    }
    Ok(total / explanation.len() as f64)
}

pub fn uncertainty(explanation: &Explanation) -> f64 {
    uncertainty_with(explanation, HedgeLexicon::shipped()).expect("lexicon scoring is infallible")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceResult {
    pub score: f64,
    pub clauses: Vec<(IfThenClause, f64)>,
    pub no_clauses: bool,
}

/// Mean entailment over extracted clauses; the scorer's lower bound when
/// there are none.
pub fn coherence(explanation: &Explanation, scorer: &dyn EntailmentScorer) -> Result<CoherenceResult, CritiqueError> {
    let clauses = extract_if_then(explanation);
    if clauses.is_empty() {
        return Ok(CoherenceResult {
            score: scorer.range().0,
            clauses: Vec::new(),
            no_clauses: true,
        });
    }
    let scored = clauses
        .into_iter()
        .map(|c| scorer.score(&c.antecedent, &c.consequent).map(|s| (c, s)))
        .collect::<Result<Vec<_>, _>>()?;
    let score = scored.iter().map(|(_, s)| s).sum::<f64>() / scored.len() as f64;
    Ok(CoherenceResult {
        score,
        clauses: scored,
        no_clauses: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftScores {
    pub parsimony: usize,
    pub coherence: f64,
    pub uncertainty: f64,
}

impl SoftScores {
    pub fn new(coherence: f64, parsimony: usize, uncertainty: f64) -> Self {
        SoftScores {
            parsimony,
            coherence,
            uncertainty,
        }
    }
}

pub fn soft_scores(
    problem: &NliProblem,
    explanation: &Explanation,
    entailment: &dyn EntailmentScorer,
    hedging: &dyn HedgeScorer,
) -> Result<SoftScores, CritiqueError> {
    Ok(SoftScores {
        parsimony: parsimony(problem, explanation),
        coherence: coherence(explanation, entailment)?.score,
        uncertainty: uncertainty_with(explanation, hedging)?,
    })
}

/// Which candidate each criterion voted for, and the resulting winner.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IbeOutcome {
    pub selected: usize,
    pub coherence_vote: usize,
    pub parsimony_vote: usize,
    pub uncertainty_vote: usize,
    pub tally: Vec<usize>,
}

fn first_best(n: usize, better: impl Fn(usize, usize) -> bool) -> usize {
    (1..n).fold(0, |best, i| if better(i, best) { i } else { best })
}

/// One vote per criterion: highest coherence, lowest parsimony, lowest
/// uncertainty. Ties inside a criterion go to the lower index; tallies tie
/// break on coherence, then parsimony, then index.
pub fn ibe_select(candidates: &[SoftScores]) -> Result<IbeOutcome, CritiqueError> {
    let n = candidates.len();
    if n < 2 {
        return Err(CritiqueError::TooFewCandidates(n));
    }
    let c = candidates;
    let coherence_vote = first_best(n, |i, b| c[i].coherence.total_cmp(&c[b].coherence).is_gt());
    let parsimony_vote = first_best(n, |i, b| c[i].parsimony < c[b].parsimony);
    let uncertainty_vote = first_best(n, |i, b| c[i].uncertainty.total_cmp(&c[b].uncertainty).is_lt());
    let mut tally = vec![0; n];
    for v in [coherence_vote, parsimony_vote, uncertainty_vote] {
        tally[v] += 1;
    }
    let selected = first_best(n, |i, b| {
        tally[i]
            .cmp(&tally[b])
            .then_with(|| c[i].coherence.total_cmp(&c[b].coherence))
            .then_with(|| c[b].parsimony.cmp(&c[i].parsimony))
            .is_gt()
    });
    Ok(IbeOutcome {
        selected,
        coherence_vote,
        parsimony_vote,
        uncertainty_vote,
        tally,
    })
}

/// Client for a scoring service: POST `{task, premise?, hypothesis?, text?}`
/// and read `{score}`.
pub struct RemoteScorer {
    url: String,
    transport: Box<dyn HttpTransport>,
    policy: RetryPolicy,
    slots: Slots,
}

impl RemoteScorer {
    pub fn new(url: impl Into<String>, timeout: Duration, policy: RetryPolicy, max_in_flight: usize) -> Result<Self, CritiqueError> {
        let transport = ReqwestTransport::new(timeout).map_err(CritiqueError::ScorerUnavailable)?;
        Ok(Self::with_transport(url, Box::new(transport), policy, max_in_flight))
    }

    pub fn with_transport(url: impl Into<String>, transport: Box<dyn HttpTransport>, policy: RetryPolicy, max_in_flight: usize) -> Self {
        RemoteScorer {
            url: url.into(),
            transport,
            policy,
            slots: Slots::new(max_in_flight),
        }
    }

    fn request(&self, body: serde_json::Value) -> Result<f64, CritiqueError> {
        let (resp, _) = {
            let _slot = self.slots.acquire();
            post_with_retry(self.transport.as_ref(), &self.url, &[], &body, self.policy).map_err(|f| {
                CritiqueError::ScorerUnavailable(format!(
                    "{} after {} attempt(s) (status {:?}): {}",
                    self.url, f.attempts, f.status, f.excerpt
                ))
            })?
        };
        let value: serde_json::Value = serde_json::from_str(&resp.body)
            .map_err(|e| CritiqueError::ScorerUnavailable(format!("malformed reply: {e}")))?;
        value["score"]
            .as_f64()
            .ok_or_else(|| CritiqueError::ScorerUnavailable("reply has no numeric `score`".into()))
    }
}

impl EntailmentScorer for RemoteScorer {
    fn name(&self) -> &str {
        "remote"
    }

    /// P(entail) - P(contradict).
    fn range(&self) -> (f64, f64) {
        (-1.0, 1.0)
    }

    fn score(&self, premise: &str, hypothesis: &str) -> Result<f64, CritiqueError> {
        let s = self.request(json!({"task": "entailment", "premise": premise, "hypothesis": hypothesis}))?;
        if !(-1.0..=1.0).contains(&s) {
            return Err(CritiqueError::ScorerUnavailable(format!("entailment score {s} outside [-1, 1]")));
        }
        Ok(s)
    }
}

impl HedgeScorer for RemoteScorer {
    fn name(&self) -> &str {
        "remote"
    }

    fn score_sentence(&self, sentence: &str) -> Result<f64, CritiqueError> {
        let s = self.request(json!({"task": "hedging", "text": sentence}))?;
        if s < 0.0 || !s.is_finite() {
            return Err(CritiqueError::ScorerUnavailable(format!("hedging score {s} is negative")));
        }
        Ok(s)
    }
}

pub struct ParsimonyCritique;

impl Critique for ParsimonyCritique {
    fn name(&self) -> &str {
        "parsimony"
    }

    fn kind(&self) -> CritiqueKind {
        CritiqueKind::Soft
    }

    fn critique(&self, problem: &NliProblem, explanation: &Explanation) -> Result<CritiqueReport, CritiqueError> {
        let drift = concept_drift(problem, explanation);
        let feedback = if drift.is_empty() {
            "The explanation introduces no concepts beyond the problem.".to_string()
        } else {
            format!(
                "The explanation introduces {} concept(s) not in the problem (stems: {}); drop any that are not needed.",
                drift.len(),
                drift.concepts.iter().cloned().collect::<Vec<_>>().join(", ")
            )
        };
        Ok(CritiqueReport::soft("parsimony", drift.len() as f64, feedback)
            .with_artifact("drift", serde_json::to_string(&drift).expect("serialisable")))
    }
}

pub struct CoherenceCritique {
    scorer: Arc<dyn EntailmentScorer>,
}

impl CoherenceCritique {
    pub fn new(scorer: Arc<dyn EntailmentScorer>) -> Self {
        CoherenceCritique { scorer }
    }
}

impl Critique for CoherenceCritique {
    fn name(&self) -> &str {
        "coherence"
    }

    fn kind(&self) -> CritiqueKind {
        CritiqueKind::Soft
    }

    fn critique(&self, _problem: &NliProblem, explanation: &Explanation) -> Result<CritiqueReport, CritiqueError> {
        let r = coherence(explanation, self.scorer.as_ref())?;
        let feedback = if r.no_clauses {
            "No if-then steps were found; state the reasoning as 'If A, then B' steps.".to_string()
        } else {
            let (weakest, s) = r
                .clauses
                .iter()
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("non-empty");
            format!(
                "Average if-then strength is {:.2} over {} step(s); the weakest step is 'If {}, then {}' ({s:.2}).",
                r.score,
                r.clauses.len(),
                weakest.antecedent,
                weakest.consequent
            )
        };
        let mut report = CritiqueReport::soft("coherence", r.score, feedback)
            .with_artifact("clauses", serde_json::to_string(&r.clauses).expect("serialisable"))
            .with_artifact("scorer", self.scorer.name());
        if r.no_clauses {
            report = report.with_artifact("flag", "no-clauses");
        }
        Ok(report)
    }
}

pub struct UncertaintyCritique {
    scorer: Arc<dyn HedgeScorer>,
}

impl UncertaintyCritique {
    pub fn new(scorer: Arc<dyn HedgeScorer>) -> Self {
        UncertaintyCritique { scorer }
    }
}

impl Default for UncertaintyCritique {
    fn default() -> Self {
        UncertaintyCritique::new(Arc::new(HedgeLexicon::new(lexicon_lines(HEDGES))))
    }
}

impl Critique for UncertaintyCritique {
    fn name(&self) -> &str {
        "uncertainty"
    }

    fn kind(&self) -> CritiqueKind {
        CritiqueKind::Soft
    }

    fn critique(&self, _problem: &NliProblem, explanation: &Explanation) -> Result<CritiqueReport, CritiqueError> {
        let score = uncertainty_with(explanation, self.scorer.as_ref())?;
        let feedback = if score == 0.0 {
            "The explanation states its claims without hedging.".to_string()
        } else {
            format!("Hedging rate is {score:.2} per sentence; state the claims more directly.")
        };
        Ok(CritiqueReport::soft("uncertainty", score, feedback).with_artifact("scorer", self.scorer.name()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn drift_example() {
        let p = NliProblem::new("p", None, "The cat chased the bird?");
        let e = Explanation::from_text("The bird perceived a threat.");
        let drift = concept_drift(&p, &e);
        assert_eq!(drift.concepts.iter().collect::<Vec<_>>(), vec!["perceiv", "threat"]);
        assert_eq!(parsimony(&p, &Explanation::from_text("The bird chased a cat.")), 0);
    }

    #[test]
    fn if_then_forms() {
        let e = Explanation::from_text(
            "If a cat chases a bird, then the bird may perceive a threat. If it rains, the ground gets wet. Birds fly.",
        );
        let c = extract_if_then(&e);
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].antecedent, "a cat chases a bird");
        assert_eq!(c[0].consequent, "the bird may perceive a threat");
        assert_eq!((c[1].antecedent.as_str(), c[1].consequent.as_str()), ("it rains", "the ground gets wet"));
        assert_eq!(c[1].source_sentence_index, 1);
    }

    #[test]
    fn hedges_greedy() {
        let lex = HedgeLexicon::shipped();
        assert_eq!(lex.matches("It may be likely."), vec!["may be", "likely"]);
        assert_eq!(lex.matches("It can be assumed they might"), vec!["it can be assumed", "might"]);
        assert!(lex.matches("Water boils at 100 degrees.").is_empty());
        assert_eq!(uncertainty(&Explanation::from_text("It may rain and likely will.")), 2.0);
    }

    #[test]
    fn coherence_vacuous_and_identical() {
        let none = coherence(&Explanation::from_text("Birds fly."), &LexicalEntailment).unwrap();
        assert!(none.no_clauses);
        assert_eq!(none.score, 0.0);
        let same = coherence(&Explanation::from_text("If X happens, then X happens."), &LexicalEntailment).unwrap();
        assert_eq!(same.score, 1.0);
    }

    #[test]
    fn ibe_full_tie_and_too_few() {
        let s = SoftScores::new(0.5, 2, 1.0);
        assert_eq!(ibe_select(&[s, s]).unwrap().selected, 0);
        assert!(matches!(ibe_select(&[s]), Err(CritiqueError::TooFewCandidates(1))));
    }
}
