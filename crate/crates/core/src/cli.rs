//! The `peirce` command line. Every subcommand reads a TOML config (paths in
//! it are relative to the config file), writes its files under the output
//! directory and maps failures onto exit codes: 2 config, 3 data, 4 remote.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::critique::hard::{Formaliser, HardCritique};
use crate::critique::soft::{
    soft_scores, CoherenceCritique, EntailmentScorer, HedgeLexicon, HedgeScorer, LexicalEntailment, ParsimonyCritique,
    RemoteScorer, SoftScores, UncertaintyCritique,
};
use crate::critique::soft::ibe_select;
use crate::critique::{Critique, CritiqueError, CritiqueReport};
use crate::generation::{generate_raw, Bindings, GenerationError, GenerativeModel, PromptTemplate, RemoteChatModel, RemoteConfig, ReplayModel};
use crate::http::RetryPolicy;
use crate::kb::{load_kb, parse_jsonl, read_text, Explanation, KbError, KnowledgeBase, NliProblem, Statement, FORMAT_JSONL_V1};
use crate::prover::{HornProver, ProverBackend, ProverError, SubprocessProver, DEFAULT_MAX_DEPTH};
use crate::refine::{
    refine_batch, summary_to_markdown, trace_to_jsonl, trace_to_markdown, CritiqueRegistry, RefineError, RefinementConfig,
    Refiner, EXPLAIN_PROMPT,
};
use crate::retrieval::{
    evaluate_map, load_gold, rankings_from_tsv, rankings_to_tsv, Bm25Index, Bm25Params, EnsembleModel, Query, Ranking,
    RetrievalError, RetrievalModel, TrainingProblem, UnificationModel, DEFAULT_B, DEFAULT_ENSEMBLE_WEIGHTS, DEFAULT_K1,
};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Remote(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Remote(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Remote(m) => write!(f, "remote service error: {m}"),
        }
    }
}

impl From<KbError> for CliError {
    fn from(e: KbError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<RetrievalError> for CliError {
    fn from(e: RetrievalError) -> Self {
        match e {
            RetrievalError::InvalidParams { .. }
            | RetrievalError::LengthMismatch { .. }
            | RetrievalError::AllZeroWeights
            | RetrievalError::NegativeWeight(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<GenerationError> for CliError {
    fn from(e: GenerationError) -> Self {
        match e {
            GenerationError::Transport { .. } | GenerationError::MalformedResponse(_) => CliError::Remote(e.to_string()),
            GenerationError::Config(_) | GenerationError::EmptyScript => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<CritiqueError> for CliError {
    fn from(e: CritiqueError) -> Self {
        match e {
            CritiqueError::Generation(g) => g.into(),
            CritiqueError::ScorerUnavailable(_) => CliError::Remote(e.to_string()),
            CritiqueError::Prover(ProverError::External(_)) => CliError::Remote(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<RefineError> for CliError {
    fn from(e: RefineError) -> Self {
        match e {
            RefineError::Config(m) => CliError::Config(m),
            RefineError::Critique(c) => c.into(),
            RefineError::Retrieval(r) => r.into(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "peirce", version, about = "Conjecture and criticism for explanation-based NLI")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `out_dir` from the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true)]
    pub max_iterations: Option<usize>,
    /// Maximum proof depth for the built-in prover.
    #[arg(long, global = true)]
    pub depth: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Knowledge-base inspection.
    Kb {
        #[command(subcommand)]
        command: KbCommand,
    },
    /// Rank statements for each query problem; report MAP when gold is given.
    Retrieve {
        queries: PathBuf,
        #[arg(long)]
        gold: Option<PathBuf>,
    },
    /// Run critiques over `{problem, explanation}` records.
    Critique {
        #[command(subcommand)]
        command: CritiqueCommand,
    },
    /// Refine explanations for every problem in a JSONL file.
    Refine { problems: PathBuf },
    /// Select the best explanation among candidates by soft-critique vote.
    Ibe { candidates: PathBuf },
    /// Offline evaluation.
    Eval {
        #[command(subcommand)]
        command: EvalCommand,
    },
}

#[derive(Debug, Subcommand)]
pub enum KbCommand {
    /// Counts and annotation breakdown; uses the config's knowledge bases when no path is given.
    Stats { path: Option<PathBuf> },
}

#[derive(Debug, Subcommand)]
pub enum CritiqueCommand {
    Hard { input: PathBuf },
    Soft { input: PathBuf },
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// MAP of a ranking TSV against a gold JSONL file.
    Map { rankings: PathBuf, gold: PathBuf },
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub out_dir: Option<PathBuf>,
    pub kb: KbSection,
    pub retrieval: RetrievalSection,
    pub generator: GeneratorSection,
    pub prover: ProverSection,
    pub refine: RefinementConfig,
    pub critique: CritiqueSection,
    pub scorers: ScorerSection,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KbSection {
    pub paths: Vec<PathBuf>,
    pub format: String,
    pub name: String,
}

impl Default for KbSection {
    fn default() -> Self {
        KbSection {
            paths: Vec::new(),
            format: FORMAT_JSONL_V1.to_string(),
            name: "kb".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalSection {
    pub models: Vec<String>,
    pub k1: f64,
    pub b: f64,
    pub weights: Vec<f64>,
    /// Solved problems (with `gold_premise_ids`) for the unification model.
    pub training: Option<PathBuf>,
    /// Rows per query in ranking files; 0 keeps all.
    pub top_k: usize,
}

impl Default for RetrievalSection {
    fn default() -> Self {
        RetrievalSection {
            models: vec!["bm25".to_string(), "unification".to_string()],
            k1: DEFAULT_K1,
            b: DEFAULT_B,
            weights: DEFAULT_ENSEMBLE_WEIGHTS.to_vec(),
            training: None,
            top_k: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorKind {
    #[default]
    Replay,
    Remote,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorSection {
    pub kind: GeneratorKind,
    pub script: Option<PathBuf>,
    pub remote: RemoteConfig,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProverSection {
    pub max_depth: usize,
    /// External prover command line; the built-in prover when empty.
    pub command: Vec<String>,
}

impl Default for ProverSection {
    fn default() -> Self {
        ProverSection {
            max_depth: DEFAULT_MAX_DEPTH,
            command: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CritiqueSection {
    pub max_formalisation_attempts: u32,
    pub soft: Vec<String>,
}

impl Default for CritiqueSection {
    fn default() -> Self {
        CritiqueSection {
            max_formalisation_attempts: 3,
            soft: vec!["parsimony".into(), "coherence".into(), "uncertainty".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScorerSection {
    pub entailment_url: Option<String>,
    pub hedging_url: Option<String>,
    pub retry_limit: u32,
    pub backoff_ms: u64,
    pub timeout_s: u64,
    pub max_in_flight: usize,
}

impl Default for ScorerSection {
    fn default() -> Self {
        ScorerSection {
            entailment_url: None,
            hedging_url: None,
            retry_limit: 3,
            backoff_ms: 500,
            timeout_s: 30,
            max_in_flight: 4,
        }
    }
}

impl PipelineConfig {
    /// Parses, resolves relative paths against the file's directory, and
    /// checks that referenced files exist.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut config: PipelineConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve(base);
        config.validate()?;
        Ok(config)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.kb.paths.iter_mut().for_each(fix);
        self.out_dir.iter_mut().for_each(fix);
        self.retrieval.training.iter_mut().for_each(fix);
        self.generator.script.iter_mut().for_each(fix);
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let files = self
            .kb
            .paths
            .iter()
            .chain(&self.retrieval.training)
            .chain(&self.generator.script);
        for f in files {
            if !f.is_file() {
                return Err(CliError::Config(format!("referenced file {} does not exist", f.display())));
            }
        }
        if self.retrieval.weights.len() != self.retrieval.models.len() {
            return Err(CliError::Config(format!(
                "{} retrieval models but {} weights",
                self.retrieval.models.len(),
                self.retrieval.weights.len()
            )));
        }
        if let Some(m) = self.retrieval.models.iter().find(|m| !matches!(m.as_str(), "bm25" | "unification")) {
            return Err(CliError::Config(format!("unknown retrieval model `{m}`")));
        }
        Ok(())
    }
}

struct Context {
    cli_seed: u64,
    config: PipelineConfig,
    out: PathBuf,
    workers: usize,
    depth: usize,
}

impl Context {
    fn new(cli: &Cli) -> Result<Self, CliError> {
        let mut config = match &cli.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(n) = cli.max_iterations {
            config.refine.max_iterations = n;
        }
        let out = cli
            .out
            .clone()
            .or_else(|| config.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("peirce-out"));
        let depth = cli.depth.unwrap_or(config.prover.max_depth);
        if depth == 0 {
            return Err(CliError::Config("prover depth must be positive".into()));
        }
        Ok(Context {
            cli_seed: cli.seed,
            workers: cli.workers.unwrap_or(4).max(1),
            depth,
            config,
            out,
        })
    }

    fn write(&self, name: &str, contents: &str) -> Result<PathBuf, CliError> {
        fs::create_dir_all(&self.out).map_err(|e| CliError::Data(format!("{}: {e}", self.out.display())))?;
        let path = self.out.join(name);
        fs::write(&path, contents).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        Ok(path)
    }

    fn kb(&self) -> Result<KnowledgeBase, CliError> {
        let kb = &self.config.kb;
        if kb.paths.is_empty() {
            return Err(CliError::Config("no knowledge base paths configured ([kb] paths)".into()));
        }
        if kb.paths.len() == 1 {
            return Ok(load_kb(&kb.paths[0], &kb.format)?);
        }
        let mut statements: Vec<Statement> = Vec::new();
        for p in &kb.paths {
            statements.extend(load_kb(p, &kb.format)?.statements().iter().cloned());
        }
        Ok(KnowledgeBase::from_statements(&kb.name, statements)?)
    }

    fn generator(&self) -> Result<Arc<dyn GenerativeModel>, CliError> {
        let g = &self.config.generator;
        match g.kind {
            GeneratorKind::Replay => {
                let script = g
                    .script
                    .as_ref()
                    .ok_or_else(|| CliError::Config("replay generator needs [generator] script".into()))?;
                Ok(Arc::new(ReplayModel::load(script)?))
            }
            GeneratorKind::Remote => {
                let mut remote = g.remote.clone();
                remote.decoding.seed = Some(self.cli_seed);
                Ok(Arc::new(RemoteChatModel::from_env(remote)?))
            }
        }
    }

    fn prover(&self) -> Arc<dyn ProverBackend> {
        match self.config.prover.command.split_first() {
            Some((program, args)) => Arc::new(SubprocessProver {
                program: program.clone(),
                args: args.to_vec(),
            }),
            None => Arc::new(HornProver { max_depth: self.depth }),
        }
    }

    fn remote_scorer(&self, url: &str) -> Result<RemoteScorer, CliError> {
        let s = &self.config.scorers;
        let policy = RetryPolicy {
            limit: s.retry_limit,
            backoff_ms: s.backoff_ms,
        };
        Ok(RemoteScorer::new(url, Duration::from_secs(s.timeout_s), policy, s.max_in_flight)?)
    }

    fn entailment(&self) -> Result<Arc<dyn EntailmentScorer>, CliError> {
        match &self.config.scorers.entailment_url {
            Some(url) => Ok(Arc::new(self.remote_scorer(url)?)),
            None => Ok(Arc::new(LexicalEntailment)),
        }
    }

    fn hedging(&self) -> Result<Arc<dyn HedgeScorer>, CliError> {
        match &self.config.scorers.hedging_url {
            Some(url) => Ok(Arc::new(self.remote_scorer(url)?)),
            None => Ok(Arc::new(HedgeLexicon::shipped().clone())),
        }
    }

    fn hard_critique(&self, model: Arc<dyn GenerativeModel>) -> HardCritique {
        let formaliser = Formaliser::new(model.clone()).with_max_attempts(self.config.critique.max_formalisation_attempts);
        HardCritique::new(model)
            .with_prover(self.prover())
            .with_formaliser(formaliser)
    }

    fn registry(&self, model: Arc<dyn GenerativeModel>) -> Result<CritiqueRegistry, CliError> {
        let mut r = CritiqueRegistry::new();
        r.register("hard", Arc::new(self.hard_critique(model)));
        r.register("parsimony", Arc::new(ParsimonyCritique));
        r.register("coherence", Arc::new(CoherenceCritique::new(self.entailment()?)));
        r.register("uncertainty", Arc::new(UncertaintyCritique::new(self.hedging()?)));
        Ok(r)
    }
}

fn read_records<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CliError> {
    Ok(parse_jsonl(&read_text(path)?)?)
}

fn jsonl<T: Serialize>(items: &[T]) -> String {
    items
        .iter()
        .map(|i| serde_json::to_string(i).expect("serialisable") + "\n")
        .collect()
}

fn kb_stats(kb: &KnowledgeBase) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "knowledge base: {}", kb.name());
    let _ = writeln!(out, "statements: {}", kb.len());
    let explained = kb.iter().filter(|s| !s.premise_ids.is_empty()).count();
    let _ = writeln!(out, "with explanations: {explained}");
    let mut counts: std::collections::BTreeMap<(String, String), usize> = Default::default();
    for s in kb.iter() {
        for (k, v) in &s.annotations {
            *counts.entry((k.clone(), v.clone())).or_default() += 1;
        }
    }
    for ((k, v), n) in counts {
        let _ = writeln!(out, "{k}={v}: {n}");
    }
    for w in kb.warnings() {
        let _ = writeln!(out, "warning: {w}");
    }
    out
}

fn cmd_kb_stats(ctx: &Context, path: Option<&Path>) -> Result<String, CliError> {
    let kb = match path {
        Some(p) => load_kb(p, &ctx.config.kb.format)?,
        None => ctx.kb()?,
    };
    Ok(kb_stats(&kb))
}

fn build_models(ctx: &Context, kb: &KnowledgeBase) -> Result<Vec<Box<dyn RetrievalModel>>, CliError> {
    let r = &ctx.config.retrieval;
    let params = Bm25Params { k1: r.k1, b: r.b };
    let mut models: Vec<Box<dyn RetrievalModel>> = Vec::new();
    for name in &r.models {
        match name.as_str() {
            "bm25" => models.push(Box::new(Bm25Index::from_statements(kb.statements(), params)?)),
            "unification" => {
                let path = r
                    .training
                    .as_ref()
                    .ok_or_else(|| CliError::Config("unification needs [retrieval] training".into()))?;
                let training: Vec<TrainingProblem> = read_records::<NliProblem>(path)?
                    .into_iter()
                    .filter_map(|p| {
                        let text = p.query_text();
                        p.gold_premise_ids.map(|gold_ids| TrainingProblem { text, gold_ids })
                    })
                    .collect();
                let mut m = UnificationModel::new(kb.statements(), params);
                m.fit(&training)?;
                models.push(Box::new(m));
            }
            other => return Err(CliError::Config(format!("unknown retrieval model `{other}`"))),
        }
    }
    Ok(models)
}

fn truncate(rankings: Vec<Ranking>, k: usize) -> Vec<Ranking> {
    if k == 0 {
        return rankings;
    }
    rankings
        .into_iter()
        .map(|mut r| {
            r.scored.truncate(k);
            r
        })
        .collect()
}

fn cmd_retrieve(ctx: &Context, queries: &Path, gold: Option<&Path>) -> Result<String, CliError> {
    let kb = ctx.kb()?;
    let problems: Vec<NliProblem> = read_records(queries)?;
    let queries: Vec<Query> = problems.iter().map(|p| Query::new(p.id.clone(), p.query_text())).collect();
    let models = build_models(ctx, &kb)?;
    let mut per_model: Vec<(String, Vec<Ranking>)> = Vec::new();
    for m in &models {
        per_model.push((m.name().to_string(), m.query(&queries)?));
    }
    if models.len() > 1 {
        let ensemble = EnsembleModel::new(models, ctx.config.retrieval.weights.clone())?;
        per_model.push(("ensemble".to_string(), ensemble.query(&queries)?));
    }
    let mut out = String::new();
    for (name, rankings) in &per_model {
        let path = ctx.write(
            &format!("rankings_{name}.tsv"),
            &rankings_to_tsv(&truncate(rankings.clone(), ctx.config.retrieval.top_k)),
        )?;
        let _ = writeln!(out, "wrote {}", path.display());
    }
    if let Some(gold) = gold {
        let gold = load_gold(gold)?;
        let mut report = std::collections::BTreeMap::new();
        out.push_str("\nmodel\tMAP\n");
        for (name, rankings) in &per_model {
            let map = evaluate_map(rankings, &gold)?;
            let _ = writeln!(out, "{name}\t{map:.2}");
            report.insert(name.clone(), map);
        }
        ctx.write("map.json", &(serde_json::to_string_pretty(&report).expect("serialisable") + "\n"))?;
    }
    Ok(out)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct CritiqueInput {
    problem: NliProblem,
    explanation: String,
}

#[derive(Serialize)]
struct CritiqueOutput<'a> {
    problem_id: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    scores: Option<SoftScores>,
    reports: Vec<CritiqueReport>,
}

fn cmd_critique_hard(ctx: &Context, input: &Path) -> Result<String, CliError> {
    let records: Vec<CritiqueInput> = read_records(input)?;
    let critique = ctx.hard_critique(ctx.generator()?);
    let mut rows = Vec::new();
    let mut out = String::new();
    for r in &records {
        let report = critique.critique(&r.problem, &Explanation::from_text(&r.explanation))?;
        let _ = writeln!(out, "{}\t{}", r.problem.id, if report.is_valid() { "valid" } else { "invalid" });
        rows.push(CritiqueOutput {
            problem_id: &r.problem.id,
            scores: None,
            reports: vec![report],
        });
    }
    ctx.write("critique_hard.jsonl", &jsonl(&rows))?;
    Ok(out)
}

fn cmd_critique_soft(ctx: &Context, input: &Path) -> Result<String, CliError> {
    let records: Vec<CritiqueInput> = read_records(input)?;
    let registry = soft_registry(ctx)?;
    let (entailment, hedging) = (ctx.entailment()?, ctx.hedging()?);
    let mut rows = Vec::new();
    let mut out = String::from("problem\tcoherence\tparsimony\tuncertainty\n");
    for r in &records {
        let e = Explanation::from_text(&r.explanation);
        let scores = soft_scores(&r.problem, &e, entailment.as_ref(), hedging.as_ref())?;
        let reports = registry
            .iter()
            .map(|c| c.critique(&r.problem, &e))
            .collect::<Result<Vec<_>, _>>()?;
        let _ = writeln!(
            out,
            "{}\t{:.2}\t{}\t{:.2}",
            r.problem.id, scores.coherence, scores.parsimony, scores.uncertainty
        );
        rows.push(CritiqueOutput {
            problem_id: &r.problem.id,
            scores: Some(scores),
            reports,
        });
    }
    ctx.write("critique_soft.jsonl", &jsonl(&rows))?;
    Ok(out)
}

fn soft_registry(ctx: &Context) -> Result<Vec<Arc<dyn Critique>>, CliError> {
    ctx.config
        .critique
        .soft
        .iter()
        .map(|name| -> Result<Arc<dyn Critique>, CliError> {
            match name.as_str() {
                "parsimony" => Ok(Arc::new(ParsimonyCritique)),
                "coherence" => Ok(Arc::new(CoherenceCritique::new(ctx.entailment()?))),
                "uncertainty" => Ok(Arc::new(UncertaintyCritique::new(ctx.hedging()?))),
                other => Err(CliError::Config(format!("unknown soft critique `{other}`"))),
            }
        })
        .collect()
}

fn cmd_refine(ctx: &Context, problems: &Path) -> Result<String, CliError> {
    let problems: Vec<NliProblem> = read_records(problems)?;
    for p in &problems {
        p.validate().map_err(CliError::Data)?;
    }
    let (traces_jsonl, report_md, summary) = if problems.is_empty() {
        let summary = crate::refine::summarise(&[], &[], ctx.config.refine.max_iterations);
        (String::new(), String::new(), summary)
    } else {
        let model = ctx.generator()?;
        let mut refiner = Refiner::new(model.clone(), ctx.registry(model)?, ctx.config.refine.clone())?;
        if ctx.config.refine.retrieval_top_k > 0 {
            refiner = refiner.with_kb(Arc::new(ctx.kb()?))?;
        }
        let result = refine_batch(&refiner, &problems, &[], ctx.workers);
        let mut traces = String::new();
        let mut md = String::from("# Refinement report\n\n");
        for t in result.traces.iter().flatten() {
            traces.push_str(&trace_to_jsonl(t));
            md.push_str(&trace_to_markdown(t));
            md.push('\n');
        }
        (traces, md, result.summary)
    };
    ctx.write("traces.jsonl", &traces_jsonl)?;
    ctx.write("report.md", &report_md)?;
    ctx.write("summary.json", &(serde_json::to_string_pretty(&summary).expect("serialisable") + "\n"))?;
    Ok(summary_to_markdown(&summary))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct IbeInput {
    problem: NliProblem,
    /// One explanation per candidate; generated when absent.
    #[serde(default)]
    explanations: Option<Vec<String>>,
    /// Precomputed scores, used as given.
    #[serde(default)]
    scores: Option<Vec<SoftScores>>,
    /// Index of the correct candidate, for accuracy.
    #[serde(default)]
    gold: Option<usize>,
}

#[derive(Serialize)]
struct IbeOutput<'a> {
    problem_id: &'a str,
    selected: usize,
    coherence_vote: usize,
    parsimony_vote: usize,
    uncertainty_vote: usize,
    tally: Vec<usize>,
    scores: Vec<SoftScores>,
    #[serde(skip_serializing_if = "Option::is_none")]
    correct: Option<bool>,
}

fn candidate_explanations(ctx: &Context, model: &mut Option<Arc<dyn GenerativeModel>>, p: &NliProblem) -> Result<Vec<Explanation>, CliError> {
    let candidates = p
        .candidates
        .as_ref()
        .ok_or_else(|| CliError::Data(format!("problem `{}` has neither explanations nor candidates", p.id)))?;
    if model.is_none() {
        *model = Some(ctx.generator()?);
    }
    let model = model.as_ref().expect("just set");
    let template = PromptTemplate::parse(EXPLAIN_PROMPT).expect("shipped prompt parses");
    candidates
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut b = Bindings::new();
            b.insert("premise".into(), p.hypothesis.clone());
            b.insert("hypothesis".into(), c.clone());
            b.insert("retrieved_facts".into(), String::new());
            let prompt = template.render(&b).map_err(GenerationError::from)?;
            let label = format!("{}/candidate_{}", p.id, i + 1);
            Ok(Explanation::from_text(&generate_raw(model.as_ref(), prompt, Some(&label))?.response))
        })
        .collect()
}

fn cmd_ibe(ctx: &Context, input: &Path) -> Result<String, CliError> {
    let records: Vec<IbeInput> = read_records(input)?;
    let (entailment, hedging) = (ctx.entailment()?, ctx.hedging()?);
    let mut model = None;
    let mut rows = Vec::new();
    let mut out = String::from("problem\tselected\tvotes\n");
    let (mut judged, mut correct) = (0, 0);
    for r in &records {
        let scores = match &r.scores {
            Some(s) => s.clone(),
            None => {
                let explanations = match &r.explanations {
                    Some(e) => e.iter().map(|t| Explanation::from_text(t)).collect(),
                    None => candidate_explanations(ctx, &mut model, &r.problem)?,
                };
                explanations
                    .iter()
                    .map(|e| soft_scores(&r.problem, e, entailment.as_ref(), hedging.as_ref()))
                    .collect::<Result<Vec<_>, _>>()?
            }
        };
        let outcome = ibe_select(&scores).map_err(|e| CliError::Data(format!("{}: {e}", r.problem.id)))?;
        let hit = r.gold.map(|g| g == outcome.selected);
        if let Some(h) = hit {
            judged += 1;
            correct += usize::from(h);
        }
        let votes = outcome.tally.iter().map(usize::to_string).collect::<Vec<_>>().join("-");
        let _ = writeln!(out, "{}\t{}\t{votes}", r.problem.id, outcome.selected + 1);
        rows.push(IbeOutput {
            problem_id: &r.problem.id,
            selected: outcome.selected,
            coherence_vote: outcome.coherence_vote,
            parsimony_vote: outcome.parsimony_vote,
            uncertainty_vote: outcome.uncertainty_vote,
            tally: outcome.tally,
            scores,
            correct: hit,
        });
    }
    if judged > 0 {
        let _ = writeln!(out, "accuracy\t{correct}/{judged}\t{:.2}", correct as f64 / judged as f64);
    }
    ctx.write("ibe.jsonl", &jsonl(&rows))?;
    Ok(out)
}

fn cmd_eval_map(rankings: &Path, gold: &Path) -> Result<String, CliError> {
    let text = read_text(rankings)?;
    let rankings = rankings_from_tsv(&text, "input")?;
    let gold = load_gold(gold)?;
    Ok(format!("MAP\t{:.4}\n", evaluate_map(&rankings, &gold)?))
}

fn dispatch(cli: &Cli) -> Result<String, CliError> {
    let ctx = Context::new(cli)?;
    match &cli.command {
        Command::Kb {
            command: KbCommand::Stats { path },
        } => cmd_kb_stats(&ctx, path.as_deref()),
        Command::Retrieve { queries, gold } => cmd_retrieve(&ctx, queries, gold.as_deref()),
        Command::Critique {
            command: CritiqueCommand::Hard { input },
        } => cmd_critique_hard(&ctx, input),
        Command::Critique {
            command: CritiqueCommand::Soft { input },
        } => cmd_critique_soft(&ctx, input),
        Command::Refine { problems } => cmd_refine(&ctx, problems),
        Command::Ibe { candidates } => cmd_ibe(&ctx, candidates),
        Command::Eval {
            command: EvalCommand::Map { rankings, gold },
        } => cmd_eval_map(rankings, gold),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(out) => {
            print!("{out}");
            0
        }
        Err(e) => {
            eprintln!("peirce: {e}");
            e.exit_code()
        }
    }
}
