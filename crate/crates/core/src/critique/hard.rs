//! Hard critique: ask the generative model for a Horn theory of the problem
//! and explanation, prove the hypothesis, and turn the outcome into feedback
//! that cites the original sentences.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{Critique, CritiqueError, CritiqueKind, CritiqueReport};
use crate::generation::{generate_raw, Bindings, GenerativeModel, PromptTemplate};
use crate::kb::{Explanation, NliProblem};
use crate::logic::{parse_theory, pretty_print, Clause, Theory};
use crate::prover::{HardVerdict, HornProver, ProverBackend};

pub const FORMALISE_PROMPT: &str = include_str!("../../assets/formalise.txt");
pub const DEFAULT_MAX_FORMALISATION_ATTEMPTS: u32 = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormalisationResult {
    pub theory: Theory,
    pub raw_llm_output: String,
    pub attempts: u32,
    /// Clause label to the sentence it formalises.
    pub sentence_map: BTreeMap<String, String>,
    /// Sentences with no clause label pointing at them.
    pub unformalised: Vec<String>,
}

fn label_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(premise|explanation)_(\d+)(?:_\d+)?$").expect("valid regex"))
}

fn numbered(prefix: &str, sentences: &[String]) -> String {
    if sentences.is_empty() {
        return "(none)".to_string();
    }
    sentences
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{prefix}_{}: {s}", i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Takes the first fenced block if the output has one.
fn strip_fences(raw: &str) -> &str {
    let Some(start) = raw.find("```") else {
        return raw;
    };
    let body = &raw[start + 3..];
    let body = body.find('\n').map_or(body, |nl| &body[nl + 1..]);
    body.find("```").map_or(body, |end| &body[..end])
}

pub fn sentence_map(theory: &Theory, premise: &[String], explanation: &[String]) -> BTreeMap<String, String> {
    theory
        .clauses
        .iter()
        .filter_map(|c| {
            let caps = label_pattern().captures(&c.label)?;
            let n: usize = caps[2].parse().ok()?;
            let source = if &caps[1] == "premise" { premise } else { explanation };
            let sentence = source.get(n.checked_sub(1)?)?;
            Some((c.label.clone(), sentence.clone()))
        })
        .collect()
}

pub struct Formaliser {
    model: Arc<dyn GenerativeModel>,
    template: PromptTemplate,
    max_attempts: u32,
}

impl Formaliser {
    pub fn new(model: Arc<dyn GenerativeModel>) -> Self {
        Formaliser {
            model,
            template: PromptTemplate::parse(FORMALISE_PROMPT).expect("shipped prompt parses"),
            max_attempts: DEFAULT_MAX_FORMALISATION_ATTEMPTS,
        }
    }

    pub fn with_template(mut self, template: PromptTemplate) -> Self {
        self.template = template;
        self
    }

    pub fn with_max_attempts(mut self, n: u32) -> Self {
        self.max_attempts = n.max(1);
        self
    }

    /// The premise is axiomatised alongside the explanation; the hypothesis
    /// becomes the goal.
    pub fn formalise(&self, problem: &NliProblem, explanation: &Explanation) -> Result<FormalisationResult, CritiqueError> {
        if explanation.is_empty() {
            return Err(CritiqueError::EmptyExplanation);
        }
        let premise = problem
            .premise
            .as_deref()
            .map(|p| Explanation::from_text(p).sentences)
            .unwrap_or_default();
        let mut bindings = Bindings::new();
        bindings.insert("premise_sentences".into(), numbered("premise", &premise));
        bindings.insert("explanation_sentences".into(), numbered("explanation", &explanation.sentences));
        bindings.insert("hypothesis".into(), problem.hypothesis.clone());
        let base = self
            .template
            .render(&bindings)
            .map_err(crate::generation::GenerationError::from)?;
        let label = format!("{}/formalise", problem.id);
        let mut prompt = base.clone();
        let mut last_error = String::new();
        for attempt in 1..=self.max_attempts {
            let record = generate_raw(self.model.as_ref(), prompt, Some(&label))?;
            let raw = record.response;
            let outcome = parse_theory(strip_fences(&raw))
                .map_err(|e| e.to_string())
                .and_then(|t| {
                    if t.goal.is_empty() {
                        Err("the theory has no `?-` query line".to_string())
                    } else {
                        Ok(t)
                    }
                });
            match outcome {
                Ok(theory) => {
                    let sentence_map = sentence_map(&theory, &premise, &explanation.sentences);
                    let covered: BTreeSet<&String> = sentence_map.values().collect();
                    let unformalised = explanation
                        .sentences
                        .iter()
                        .filter(|s| !covered.contains(s))
                        .cloned()
                        .collect();
                    return Ok(FormalisationResult {
                        theory,
                        raw_llm_output: raw,
                        attempts: attempt,
                        sentence_map,
                        unformalised,
                    });
                }
                Err(e) => {
                    log::debug!("formalisation attempt {attempt} for {} rejected: {e}", problem.id);
                    prompt = format!(
                        "{base}\n\nYour previous output could not be used: {e}\nPrevious output:\n{raw}\n\nReturn a corrected theory."
                    );
                    last_error = e;
                }
            }
        }
        Err(CritiqueError::FormalisationFailed {
            last_error,
            attempts: self.max_attempts,
        })
    }
}

pub fn formalise(
    model: Arc<dyn GenerativeModel>,
    problem: &NliProblem,
    explanation: &Explanation,
    max_attempts: u32,
) -> Result<FormalisationResult, CritiqueError> {
    Formaliser::new(model)
        .with_max_attempts(max_attempts)
        .formalise(problem, explanation)
}

/// Facts that restate a single-atom goal up to variable renaming.
pub fn circular_axioms(theory: &Theory) -> Vec<&Clause> {
    match theory.goal.as_slice() {
        [goal] => theory
            .clauses
            .iter()
            .filter(|c| c.is_fact() && c.head.is_variant_of(goal))
            .collect(),
        _ => Vec::new(),
    }
}

fn cite(label: &str, map: &BTreeMap<String, String>) -> Option<String> {
    map.get(label).map(|s| format!("the sentence '{s}' ({label})"))
}

/// Natural-language feedback. Only labels present in the sentence map are
/// cited; every frontier atom is named.
pub fn render_feedback(result: &FormalisationResult, verdict: &HardVerdict) -> String {
    let map = &result.sentence_map;
    let mut out = Vec::new();
    if verdict.valid {
        let labels: Vec<&str> = verdict
            .proof
            .as_ref()
            .map(|p| p.labels())
            .unwrap_or_default();
        let cited: Vec<&str> = labels.iter().copied().filter(|l| map.contains_key(*l)).collect();
        let steps = verdict.proof.as_ref().map_or(0, |p| p.steps.len());
        let auxiliary = labels.len() - cited.len();
        let mut line = format!("The explanation is logically valid: the hypothesis was proved in {steps} step(s)");
        if !cited.is_empty() {
            line.push_str(&format!(" using {}", cited.join(", ")));
        }
        if auxiliary > 0 {
            line.push_str(&format!(" and {auxiliary} auxiliary clause(s)"));
        }
        line.push('.');
        out.push(line);
    } else {
        out.push("The explanation could not be verified.".to_string());
        if let Some(d) = &verdict.diagnostics {
            // Several clauses can come from one sentence; name it once.
            let mut unused: Vec<(&str, Vec<&str>)> = Vec::new();
            for label in &d.unused_clauses {
                let Some(sentence) = map.get(label) else { continue };
                match unused.iter_mut().find(|(s, _)| *s == sentence.as_str()) {
                    Some((_, labels)) => labels.push(label),
                    None => unused.push((sentence, vec![label])),
                }
            }
            let mut parts: Vec<String> = unused
                .into_iter()
                .map(|(sentence, labels)| match labels.as_slice() {
                    [one] => format!("the sentence '{sentence}' ({one}) was never used"),
                    many => format!("clauses {} from the sentence '{sentence}' were never used", many.join(", ")),
                })
                .collect();
            parts.extend(d.frontier.iter().map(|a| format!("subgoal {a} could not be derived")));
            if !parts.is_empty() {
                out.push(format!("{}.", capitalise(&parts.join("; "))));
            }
            if d.depth_limited {
                out.push(format!(
                    "The proof search stopped at depth {} before finishing.",
                    d.depth_reached
                ));
            }
        }
    }
    for s in &result.unformalised {
        out.push(format!("The sentence '{s}' was not formalised."));
    }
    for c in circular_axioms(&result.theory) {
        let whom = cite(&c.label, map).unwrap_or_else(|| "an axiom".to_string());
        out.push(format!(
            "Warning: {whom} states the hypothesis {} directly, so the proof is circular.",
            c.head
        ));
    }
    out.join("\n")
}

fn capitalise(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

pub struct HardCritique {
    name: String,
    formaliser: Formaliser,
    prover: Arc<dyn ProverBackend>,
}

impl HardCritique {
    pub fn new(model: Arc<dyn GenerativeModel>) -> Self {
        HardCritique {
            name: "horn".to_string(),
            formaliser: Formaliser::new(model),
            prover: Arc::new(HornProver::default()),
        }
    }

    pub fn with_prover(mut self, prover: Arc<dyn ProverBackend>) -> Self {
        self.name = prover.name().to_string();
        self.prover = prover;
        self
    }

    pub fn with_formaliser(mut self, formaliser: Formaliser) -> Self {
        self.formaliser = formaliser;
        self
    }
}

impl Critique for HardCritique {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> CritiqueKind {
        CritiqueKind::Hard
    }

    fn critique(&self, problem: &NliProblem, explanation: &Explanation) -> Result<CritiqueReport, CritiqueError> {
        let result = match self.formaliser.formalise(problem, explanation) {
            Ok(r) => r,
            Err(CritiqueError::FormalisationFailed { last_error, attempts }) => {
                let verdict = HardVerdict {
                    valid: false,
                    proof: None,
                    diagnostics: None,
                };
                let feedback = format!(
                    "The explanation could not be formalised after {attempts} attempt(s): {last_error}. \
                     Use short, literal sentences that state each link explicitly."
                );
                return Ok(CritiqueReport::hard(&self.name, verdict.clone(), feedback)
                    .with_artifact("verdict", verdict.to_json())
                    .with_artifact("formalisation_error", last_error)
                    .with_artifact("attempts", attempts.to_string()));
            }
            Err(e) => return Err(e),
        };
        let verdict = self.prover.verify(&result.theory)?;
        let feedback = render_feedback(&result, &verdict);
        Ok(CritiqueReport::hard(&self.name, verdict.clone(), feedback)
            .with_artifact("theory", pretty_print(&result.theory))
            .with_artifact("verdict", verdict.to_json())
            .with_artifact("raw_output", result.raw_llm_output.clone())
            .with_artifact("attempts", result.attempts.to_string())
            .with_artifact("sentence_map", json(&result.sentence_map))
            .with_artifact("unformalised", json(&result.unformalised)))
    }
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("serialisable")
}

pub fn hard_critique(
    model: Arc<dyn GenerativeModel>,
    prover: Arc<dyn ProverBackend>,
    problem: &NliProblem,
    explanation: &Explanation,
) -> Result<CritiqueReport, CritiqueError> {
    HardCritique::new(model).with_prover(prover).critique(problem, explanation)
}
