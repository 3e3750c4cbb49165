//! Statement knowledge bases: corpora of facts and claims whose premise links
//! form explanations.
//!
//! The on-disk format (`jsonl-v1`) is one JSON object per line:
//!
//! ```text
//! {"id":"f1","surface":"an infant is a baby","entities":[],"premise_ids":[],"annotations":{"type":"fact"}}
//! ```
//!
//! Only `id` and `surface` are required.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const FORMAT_JSONL_V1: &str = "jsonl-v1";

#[derive(Debug, Error)]
pub enum KbError {
    #[error("file not found: {0}")]
    FileMissing(String),
    #[error("unsupported corpus format `{0}`")]
    UnsupportedFormat(String),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("premise `{0}` does not resolve to a statement")]
    DanglingPremise(String),
    #[error("premise cycle: {}", .0.join(" -> "))]
    PremiseCycle(Vec<String>),
    #[error("unknown statement id `{0}`")]
    UnknownId(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Statement {
    pub id: String,
    pub surface: String,
    #[serde(default)]
    pub entities: Vec<String>,
    #[serde(default)]
    pub premise_ids: Vec<String>,
    #[serde(default)]
    pub annotations: BTreeMap<String, String>,
}

impl Statement {
    pub fn new(id: impl Into<String>, surface: impl Into<String>) -> Self {
        Statement {
            id: id.into(),
            surface: surface.into(),
            entities: Vec::new(),
            premise_ids: Vec::new(),
            annotations: BTreeMap::new(),
        }
    }

    pub fn with_premises(mut self, ids: &[&str]) -> Self {
        self.premise_ids = ids.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn annotate(mut self, key: &str, value: &str) -> Self {
        self.annotations.insert(key.to_string(), value.to_string());
        self
    }

    pub fn annotation(&self, key: &str) -> Option<&str> {
        self.annotations.get(key).map(String::as_str)
    }
}

/// An immutable, load-ordered collection of statements.
#[derive(Debug, Clone, Default)]
pub struct KnowledgeBase {
    name: String,
    statements: Vec<Statement>,
    index: HashMap<String, usize>,
    warnings: Vec<String>,
}

impl KnowledgeBase {
    /// Validates ids, premise links and acyclicity.
    pub fn from_statements(
        name: impl Into<String>,
        statements: Vec<Statement>,
    ) -> Result<Self, KbError> {
        let mut index = HashMap::with_capacity(statements.len());
        for (pos, s) in statements.iter().enumerate() {
            if index.insert(s.id.clone(), pos).is_some() {
                return Err(KbError::MalformedRecord {
                    line: pos + 1,
                    reason: format!("duplicate id `{}`", s.id),
                });
            }
        }
        let kb = KnowledgeBase {
            name: name.into(),
            statements,
            index,
            warnings: Vec::new(),
        };
        kb.check_links()?;
        Ok(kb.with_split_warnings())
    }

    fn check_links(&self) -> Result<(), KbError> {
        for s in &self.statements {
            if let Some(missing) = s.premise_ids.iter().find(|p| !self.index.contains_key(*p)) {
                return Err(KbError::DanglingPremise(missing.clone()));
            }
        }
        // iterative three-colour DFS
        const WHITE: u8 = 0;
        const GREY: u8 = 1;
        const BLACK: u8 = 2;
        let mut colour = vec![WHITE; self.statements.len()];
        for root in 0..self.statements.len() {
            if colour[root] != WHITE {
                continue;
            }
            let mut stack: Vec<(usize, usize)> = vec![(root, 0)];
            colour[root] = GREY;
            while let Some(&mut (node, ref mut next)) = stack.last_mut() {
                let premises = &self.statements[node].premise_ids;
                if *next == premises.len() {
                    colour[node] = BLACK;
                    stack.pop();
                    continue;
                }
                let child = self.index[&premises[*next]];
                *next += 1;
                match colour[child] {
                    WHITE => {
                        colour[child] = GREY;
                        stack.push((child, 0));
                    }
                    GREY => {
                        let start = stack.iter().position(|(n, _)| *n == child).unwrap();
                        let mut chain: Vec<String> = stack[start..]
                            .iter()
                            .map(|(n, _)| self.statements[*n].id.clone())
                            .collect();
                        chain.push(self.statements[child].id.clone());
                        return Err(KbError::PremiseCycle(chain));
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    fn with_split_warnings(mut self) -> Self {
        for s in &self.statements {
            let Some(split) = s.annotation("split") else {
                continue;
            };
            for p in &s.premise_ids {
                let premise = &self.statements[self.index[p]];
                if let Some(other) = premise.annotation("split") {
                    if other != split {
                        let msg = format!(
                            "statement `{}` ({split}) links premise `{}` ({other})",
                            s.id, premise.id
                        );
                        log::warn!("{msg}");
                        self.warnings.push(msg);
                    }
                }
            }
        }
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.statements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.statements.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Statement> {
        self.statements.iter()
    }

    pub fn statements(&self) -> &[Statement] {
        &self.statements
    }

    pub fn get(&self, id: &str) -> Option<&Statement> {
        self.index.get(id).map(|&i| &self.statements[i])
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Load-time notes such as premise links that cross dataset splits.
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Statements whose annotation `key` equals `value`, in corpus order.
    pub fn filter_statements(&self, key: &str, value: &str) -> Vec<&Statement> {
        self.statements
            .iter()
            .filter(|s| s.annotation(key) == Some(value))
            .collect()
    }

    /// The premises of `id`, in link order.
    pub fn explanation_of(&self, id: &str) -> Result<Vec<&Statement>, KbError> {
        let s = self.get(id).ok_or_else(|| KbError::UnknownId(id.to_string()))?;
        Ok(s.premise_ids
            .iter()
            .map(|p| &self.statements[self.index[p]])
            .collect())
    }

    /// Canonical `jsonl-v1` text: one line per statement, keys in schema
    /// order, annotation keys sorted, LF endings.
    pub fn to_canonical_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.statements {
            out.push_str(&serde_json::to_string(s).expect("statement serialises"));
            out.push('\n');
        }
        out
    }
}

impl<'a> IntoIterator for &'a KnowledgeBase {
    type Item = &'a Statement;
    type IntoIter = std::slice::Iter<'a, Statement>;

    fn into_iter(self) -> Self::IntoIter {
        self.statements.iter()
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String, KbError> {
    if !path.exists() {
        return Err(KbError::FileMissing(path.display().to_string()));
    }
    fs::read_to_string(path).map_err(|source| KbError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Parses JSONL text, skipping blank lines; errors carry 1-based line numbers.
pub(crate) fn parse_jsonl<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>, KbError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| KbError::MalformedRecord {
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

pub fn parse_kb(name: &str, text: &str) -> Result<KnowledgeBase, KbError> {
    let statements: Vec<Statement> = parse_jsonl(text)?;
    let lines: Vec<usize> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, _)| i + 1)
        .collect();
    KnowledgeBase::from_statements(name, statements).map_err(|e| match e {
        KbError::MalformedRecord { line, reason } => KbError::MalformedRecord {
            line: lines[line - 1],
            reason,
        },
        other => other,
    })
}

pub fn load_kb(path: impl AsRef<Path>, format: &str) -> Result<KnowledgeBase, KbError> {
    if format != FORMAT_JSONL_V1 {
        return Err(KbError::UnsupportedFormat(format.to_string()));
    }
    let path = path.as_ref();
    let text = read_text(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_kb(&name, &text)
}

pub fn save_kb(kb: &KnowledgeBase, path: impl AsRef<Path>) -> Result<(), KbError> {
    let path = path.as_ref();
    fs::write(path, kb.to_canonical_jsonl()).map_err(|source| KbError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// A problem to be explained: a premise/hypothesis pair, or a question with
/// candidate answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NliProblem {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub premise: Option<String>,
    pub hypothesis: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_premise_ids: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub annotations: BTreeMap<String, String>,
}

impl NliProblem {
    pub fn new(id: impl Into<String>, premise: Option<&str>, hypothesis: impl Into<String>) -> Self {
        NliProblem {
            id: id.into(),
            premise: premise.map(str::to_string),
            hypothesis: hypothesis.into(),
            candidates: None,
            gold_premise_ids: None,
            annotations: BTreeMap::new(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.hypothesis.trim().is_empty() {
            return Err(format!("problem `{}` has an empty hypothesis", self.id));
        }
        if let Some(c) = &self.candidates {
            if c.len() < 2 {
                return Err(format!("problem `{}` needs at least two candidates", self.id));
            }
        }
        Ok(())
    }

    /// Premise and hypothesis joined, as used for retrieval queries.
    pub fn query_text(&self) -> String {
        match &self.premise {
            Some(p) => format!("{p} {}", self.hypothesis),
            None => self.hypothesis.clone(),
        }
    }

    /// All problem-side text: premise, hypothesis and candidates.
    pub fn full_text(&self) -> String {
        let mut parts: Vec<&str> = self.premise.iter().map(String::as_str).collect();
        parts.push(&self.hypothesis);
        if let Some(c) = &self.candidates {
            parts.extend(c.iter().map(String::as_str));
        }
        parts.join(" ")
    }
}

pub fn load_problems(path: impl AsRef<Path>) -> Result<Vec<NliProblem>, KbError> {
    let text = read_text(path.as_ref())?;
    let problems: Vec<NliProblem> = parse_jsonl(&text)?;
    for (i, p) in problems.iter().enumerate() {
        p.validate()
            .map_err(|reason| KbError::MalformedRecord { line: i + 1, reason })?;
    }
    Ok(problems)
}

/// An ordered list of natural-language premise sentences.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Explanation {
    pub sentences: Vec<String>,
}

impl Explanation {
    pub fn new<S: Into<String>>(sentences: impl IntoIterator<Item = S>) -> Self {
        Explanation {
            sentences: sentences
                .into_iter()
                .map(Into::into)
                .map(|s: String| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect(),
        }
    }

    /// Splits on `.`, `!` or `?` followed by whitespace, and on newlines.
    pub fn from_text(text: &str) -> Self {
        let mut sentences = Vec::new();
        for line in text.lines() {
            let mut current = String::new();
            let mut chars = line.chars().peekable();
            while let Some(c) = chars.next() {
                current.push(c);
                if matches!(c, '.' | '!' | '?') && chars.peek().is_none_or(|n| n.is_whitespace()) {
                    sentences.push(std::mem::take(&mut current));
                }
            }
            sentences.push(current);
        }
        Explanation::new(sentences)
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn text(&self) -> String {
        self.sentences.join(" ")
    }

    pub fn push(&mut self, sentence: impl Into<String>) {
        self.sentences.push(sentence.into());
    }
}
