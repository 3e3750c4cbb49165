//! The conjecture-criticism loop: generate an explanation, critique it, feed
//! the critiques back into a repair prompt, and stop once a hard critique
//! verifies it or the iteration budget runs out.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::critique::hard::HardCritique;
use crate::critique::soft::{CoherenceCritique, EntailmentScorer, HedgeScorer, ParsimonyCritique, UncertaintyCritique};
use crate::critique::{Critique, CritiqueError, CritiqueKind, CritiqueReport};
use crate::generation::{generate_raw, Bindings, GenerativeModel, PromptTemplate};
use crate::kb::{Explanation, KnowledgeBase, NliProblem};
use crate::prover::{HardVerdict, ProverBackend};
use crate::retrieval::{Bm25Index, Bm25Params, Query, RetrievalError, RetrievalModel};

pub const EXPLAIN_PROMPT: &str = include_str!("../assets/explain.txt");
pub const REPAIR_PROMPT: &str = include_str!("../assets/repair.txt");

#[derive(Debug, Error)]
pub enum RefineError {
    #[error("invalid refinement config: {0}")]
    Config(String),
    #[error(transparent)]
    Critique(#[from] CritiqueError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefinementConfig {
    pub max_iterations: usize,
    pub critiques: Vec<String>,
    pub stop_on_valid: bool,
    /// 0 turns retrieval off.
    pub retrieval_top_k: usize,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        RefinementConfig {
            max_iterations: 10,
            critiques: vec!["hard".to_string()],
            stop_on_valid: true,
            retrieval_top_k: 0,
        }
    }
}

/// Named critiques available to a refinement run.
#[derive(Default, Clone)]
pub struct CritiqueRegistry {
    entries: Vec<(String, Arc<dyn Critique>)>,
}

impl CritiqueRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// `hard`, `parsimony`, `coherence` and `uncertainty`.
    pub fn standard(
        formaliser: Arc<dyn GenerativeModel>,
        prover: Arc<dyn ProverBackend>,
        entailment: Arc<dyn EntailmentScorer>,
        hedging: Arc<dyn HedgeScorer>,
    ) -> Self {
        let mut r = Self::new();
        r.register("hard", Arc::new(HardCritique::new(formaliser).with_prover(prover)));
        r.register("parsimony", Arc::new(ParsimonyCritique));
        r.register("coherence", Arc::new(CoherenceCritique::new(entailment)));
        r.register("uncertainty", Arc::new(UncertaintyCritique::new(hedging)));
        r
    }

    pub fn register(&mut self, name: &str, critique: Arc<dyn Critique>) {
        self.entries.retain(|(n, _)| n != name);
        self.entries.push((name.to_string(), critique));
    }

    pub fn get(&self, name: &str) -> Option<&Arc<dyn Critique>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, c)| c)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub index: usize,
    pub explanation: Explanation,
    pub reports: Vec<CritiqueReport>,
    /// Prompt that produced the next iteration's explanation.
    pub feedback_prompt: Option<String>,
}

impl IterationRecord {
    pub fn is_valid(&self) -> bool {
        self.reports.iter().any(|r| r.kind == CritiqueKind::Hard && r.is_valid())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementTrace {
    pub problem: NliProblem,
    pub iterations: Vec<IterationRecord>,
    pub final_valid: bool,
    pub stopped_at: usize,
}

impl RefinementTrace {
    /// Index of the first iteration with a valid hard verdict.
    pub fn first_valid(&self) -> Option<usize> {
        self.iterations.iter().position(IterationRecord::is_valid)
    }

    pub fn final_explanation(&self) -> &Explanation {
        &self.iterations.last().expect("trace is never empty").explanation
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum TraceLine {
    Header {
        problem: NliProblem,
        final_valid: bool,
        stopped_at: usize,
        iterations: usize,
    },
    Iteration(IterationRecord),
}

/// Header line first, then one line per iteration.
pub fn trace_to_jsonl(trace: &RefinementTrace) -> String {
    let header = TraceLine::Header {
        problem: trace.problem.clone(),
        final_valid: trace.final_valid,
        stopped_at: trace.stopped_at,
        iterations: trace.iterations.len(),
    };
    std::iter::once(header)
        .chain(trace.iterations.iter().cloned().map(TraceLine::Iteration))
        .map(|l| serde_json::to_string(&l).expect("trace serialises") + "\n")
        .collect()
}

pub fn traces_from_jsonl(text: &str) -> Result<Vec<RefinementTrace>, serde_json::Error> {
    let mut traces: Vec<RefinementTrace> = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        match serde_json::from_str(line)? {
            TraceLine::Header {
                problem,
                final_valid,
                stopped_at,
                ..
            } => traces.push(RefinementTrace {
                problem,
                iterations: Vec::new(),
                final_valid,
                stopped_at,
            }),
            TraceLine::Iteration(rec) => match traces.last_mut() {
                Some(t) => t.iterations.push(rec),
                None => {
                    return Err(serde::de::Error::custom("iteration record before any header"));
                }
            },
        }
    }
    Ok(traces)
}

fn verdict_cell(rec: &IterationRecord) -> String {
    let hard: Vec<&CritiqueReport> = rec.reports.iter().filter(|r| r.kind == CritiqueKind::Hard).collect();
    if hard.is_empty() {
        return "-".to_string();
    }
    hard.iter()
        .map(|r| if r.is_valid() { "Valid" } else { "Invalid" })
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn trace_to_markdown(trace: &RefinementTrace) -> String {
    let p = &trace.problem;
    let mut out = format!("## {}\n\n", p.id);
    if let Some(premise) = &p.premise {
        let _ = writeln!(out, "**Premise:** {premise}  ");
    }
    let _ = writeln!(out, "**Hypothesis:** {}\n", p.hypothesis);
    out.push_str("| Iteration | Explanation | Validity | Scores |\n|---|---|---|---|\n");
    for rec in &trace.iterations {
        let scores: Vec<String> = rec
            .reports
            .iter()
            .filter_map(|r| r.score.map(|s| format!("{}: {s:.2}", r.name)))
            .collect();
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} |",
            rec.index,
            rec.explanation.text().replace('|', "\\|"),
            verdict_cell(rec),
            if scores.is_empty() { "-".to_string() } else { scores.join(", ") }
        );
    }
    let _ = writeln!(
        out,
        "\nFinal: {} after {} iteration(s).\n",
        if trace.final_valid { "valid" } else { "not verified" },
        trace.iterations.len()
    );
    for rec in &trace.iterations {
        for r in &rec.reports {
            let _ = writeln!(out, "- iteration {} / {}: {}", rec.index, r.name, r.feedback.replace('\n', " "));
        }
    }
    out
}

struct Retrieval {
    model: Arc<dyn RetrievalModel>,
    kb: Arc<KnowledgeBase>,
}

pub struct Refiner {
    generator: Arc<dyn GenerativeModel>,
    registry: CritiqueRegistry,
    config: RefinementConfig,
    explain: PromptTemplate,
    repair: PromptTemplate,
    retrieval: Option<Retrieval>,
}

impl Refiner {
    pub fn new(generator: Arc<dyn GenerativeModel>, registry: CritiqueRegistry, config: RefinementConfig) -> Result<Self, RefineError> {
        if config.max_iterations == 0 {
            return Err(RefineError::Config("max_iterations must be at least 1".into()));
        }
        if let Some(name) = config.critiques.iter().find(|n| registry.get(n).is_none()) {
            return Err(RefineError::Config(format!(
                "unknown critique `{name}` (registered: {})",
                registry.names().collect::<Vec<_>>().join(", ")
            )));
        }
        Ok(Refiner {
            generator,
            registry,
            config,
            explain: PromptTemplate::parse(EXPLAIN_PROMPT).expect("shipped prompt parses"),
            repair: PromptTemplate::parse(REPAIR_PROMPT).expect("shipped prompt parses"),
            retrieval: None,
        })
    }

    pub fn with_templates(mut self, explain: PromptTemplate, repair: PromptTemplate) -> Self {
        self.explain = explain;
        self.repair = repair;
        self
    }

    /// Retrieval over `kb` with BM25 defaults.
    pub fn with_kb(self, kb: Arc<KnowledgeBase>) -> Result<Self, RefineError> {
        let index = Bm25Index::from_statements(kb.statements(), Bm25Params::default())?;
        Ok(self.with_retriever(Arc::new(index), kb))
    }

    pub fn with_retriever(mut self, model: Arc<dyn RetrievalModel>, kb: Arc<KnowledgeBase>) -> Self {
        self.retrieval = Some(Retrieval { model, kb });
        self
    }

    pub fn config(&self) -> &RefinementConfig {
        &self.config
    }

    fn retrieved_facts(&self, problem: &NliProblem) -> Result<String, RefineError> {
        let k = self.config.retrieval_top_k;
        if k == 0 {
            return Ok(String::new());
        }
        let r = self
            .retrieval
            .as_ref()
            .ok_or_else(|| RefineError::Config("retrieval_top_k > 0 but no knowledge base".into()))?;
        let ranking = r
            .model
            .query(&[Query::new(problem.id.clone(), problem.query_text())])?
            .remove(0);
        let mut out = String::from("Relevant facts:\n");
        for (id, _) in ranking.top(k) {
            if let Some(s) = r.kb.get(id) {
                let _ = writeln!(out, "- {}", s.surface);
            }
        }
        Ok(out)
    }

    fn bindings(&self, problem: &NliProblem, retrieved: &str) -> Bindings {
        let mut b = Bindings::new();
        b.insert("premise".into(), problem.premise.clone().unwrap_or_default());
        b.insert("hypothesis".into(), problem.hypothesis.clone());
        b.insert("retrieved_facts".into(), retrieved.to_string());
        b
    }

    fn render(&self, template: &PromptTemplate, bindings: &Bindings) -> Result<String, RefineError> {
        let vars = template.variables();
        let used: Bindings = bindings
            .iter()
            .filter(|(k, _)| vars.contains(*k))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        template
            .render(&used)
            .map_err(|e| RefineError::Config(format!("prompt template: {e}")))
    }

    fn generator_failure(e: &CritiqueError) -> CritiqueReport {
        let verdict = HardVerdict {
            valid: false,
            proof: None,
            diagnostics: None,
        };
        CritiqueReport::hard("generator", verdict, format!("The generator failed to produce an explanation: {e}."))
            .with_artifact("error", e.to_string())
    }

    fn run_critiques(&self, problem: &NliProblem, explanation: &Explanation) -> Result<Vec<CritiqueReport>, RefineError> {
        let mut reports = Vec::new();
        for name in &self.config.critiques {
            let critique = self.registry.get(name).expect("validated at construction");
            match critique.critique(problem, explanation) {
                Ok(r) => reports.push(r),
                // Generation trouble inside a hard critique is recorded, not fatal.
                Err(e @ (CritiqueError::Generation(_) | CritiqueError::EmptyExplanation))
                    if critique.kind() == CritiqueKind::Hard =>
                {
                    let verdict = HardVerdict {
                        valid: false,
                        proof: None,
                        diagnostics: None,
                    };
                    reports.push(
                        CritiqueReport::hard(critique.name(), verdict, format!("The critique could not run: {e}."))
                            .with_artifact("error", e.to_string()),
                    );
                }
                Err(e) => return Err(e.into()),
            }
        }
        Ok(reports)
    }

    pub fn refine(&self, problem: &NliProblem, initial: Option<Explanation>) -> Result<RefinementTrace, RefineError> {
        let retrieved = self.retrieved_facts(problem)?;
        let mut bindings = self.bindings(problem, &retrieved);
        let label = format!("{}/generate", problem.id);
        let generate = |prompt: String| {
            generate_raw(self.generator.as_ref(), prompt, Some(&label))
                .map(|r| Explanation::from_text(&r.response))
                .map_err(CritiqueError::from)
        };

        let mut current: Result<Explanation, CritiqueError> = match initial {
            Some(e) => Ok(e),
            None => generate(self.render(&self.explain, &bindings)?),
        };
        let mut last_good = Explanation::default();
        let mut iterations = Vec::new();
        for index in 0..self.config.max_iterations {
            let (explanation, reports) = match current {
                Ok(e) => {
                    let reports = self.run_critiques(problem, &e)?;
                    last_good = e.clone();
                    (e, reports)
                }
                Err(err) => (last_good.clone(), vec![Self::generator_failure(&err)]),
            };
            let valid = reports.iter().any(|r| r.kind == CritiqueKind::Hard && r.is_valid());
            let last = index + 1 == self.config.max_iterations;
            if (valid && self.config.stop_on_valid) || last {
                iterations.push(IterationRecord {
                    index,
                    explanation,
                    reports,
                    feedback_prompt: None,
                });
                break;
            }
            let feedback = reports
                .iter()
                .map(|r| format!("[{}] {}", r.name, r.feedback))
                .collect::<Vec<_>>()
                .join("\n");
            bindings.insert("previous_explanation".into(), explanation.sentences.join("\n"));
            bindings.insert("feedback".into(), feedback);
            let prompt = self.render(&self.repair, &bindings)?;
            current = generate(prompt.clone());
            iterations.push(IterationRecord {
                index,
                explanation,
                reports,
                feedback_prompt: Some(prompt),
            });
        }
        let final_valid = iterations.last().is_some_and(IterationRecord::is_valid);
        Ok(RefinementTrace {
            problem: problem.clone(),
            stopped_at: iterations.len() - 1,
            iterations,
            final_valid,
        })
    }
}

pub fn refine(
    generator: Arc<dyn GenerativeModel>,
    registry: CritiqueRegistry,
    config: RefinementConfig,
    problem: &NliProblem,
    initial: Option<Explanation>,
    kb: Option<Arc<KnowledgeBase>>,
) -> Result<RefinementTrace, RefineError> {
    let mut refiner = Refiner::new(generator, registry, config)?;
    if let Some(kb) = kb {
        refiner = refiner.with_kb(kb)?;
    }
    refiner.refine(problem, initial)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSummary {
    /// Entry i counts problems valid at some iteration <= i.
    pub cumulative_valid: Vec<usize>,
    pub problems: usize,
    pub failures: BTreeMap<String, String>,
}

pub struct BatchResult {
    pub traces: Vec<Result<RefinementTrace, RefineError>>,
    pub summary: BatchSummary,
}

pub fn summarise(traces: &[Result<RefinementTrace, RefineError>], problems: &[NliProblem], max_iterations: usize) -> BatchSummary {
    let mut cumulative = vec![0; if problems.is_empty() { 0 } else { max_iterations }];
    let mut failures = BTreeMap::new();
    for (t, p) in traces.iter().zip(problems) {
        match t {
            Ok(t) => {
                if let Some(first) = t.first_valid() {
                    for c in cumulative.iter_mut().skip(first) {
                        *c += 1;
                    }
                }
            }
            Err(e) => {
                failures.insert(p.id.clone(), e.to_string());
            }
        }
    }
    BatchSummary {
        cumulative_valid: cumulative,
        problems: problems.len(),
        failures,
    }
}

/// Runs `refine` for each problem on up to `workers` threads. Results keep
/// input order; one problem's failure does not affect the others.
pub fn refine_batch(
    refiner: &Refiner,
    problems: &[NliProblem],
    initial: &[Option<Explanation>],
    workers: usize,
) -> BatchResult {
    let slots: Vec<Mutex<Option<Result<RefinementTrace, RefineError>>>> =
        problems.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    thread::scope(|s| {
        for _ in 0..workers.clamp(1, problems.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= problems.len() {
                    break;
                }
                let init = initial.get(i).cloned().flatten();
                let result = refiner.refine(&problems[i], init);
                *slots[i].lock().unwrap_or_else(|e| e.into_inner()) = Some(result);
            });
        }
    });
    let traces: Vec<_> = slots
        .into_iter()
        .map(|m| m.into_inner().unwrap_or_else(|e| e.into_inner()).expect("every slot filled"))
        .collect();
    let summary = summarise(&traces, problems, refiner.config.max_iterations);
    BatchResult { traces, summary }
}

pub fn summary_to_markdown(summary: &BatchSummary) -> String {
    let mut out = format!("Verified explanations by iteration ({} problems)\n\n", summary.problems);
    out.push_str("| Iteration | Valid |\n|---|---|\n");
    for (i, c) in summary.cumulative_valid.iter().enumerate() {
        let _ = writeln!(out, "| {i} | {c} |");
    }
    if !summary.failures.is_empty() {
        out.push_str("\nFailures:\n");
        for (id, e) in &summary.failures {
            let _ = writeln!(out, "- {id}: {e}");
        }
    }
    out
}
