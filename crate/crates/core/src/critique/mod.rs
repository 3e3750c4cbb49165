//! Critique models. Hard critiques formalise and prove; soft critiques score
//! natural-language quality. Both produce a [`CritiqueReport`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generation::GenerationError;
use crate::kb::{Explanation, NliProblem};
use crate::prover::{HardVerdict, ProverError};

pub mod hard;
pub mod soft;

#[derive(Debug, Error)]
pub enum CritiqueError {
    #[error("explanation is empty")]
    EmptyExplanation,
    #[error("formalisation failed after {attempts} attempt(s): {last_error}")]
    FormalisationFailed { last_error: String, attempts: u32 },
    #[error(transparent)]
    Generation(#[from] GenerationError),
    #[error(transparent)]
    Prover(#[from] ProverError),
    #[error("scorer unavailable: {0}")]
    ScorerUnavailable(String),
    #[error("need at least two candidates, got {0}")]
    TooFewCandidates(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CritiqueKind {
    Hard,
    Soft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CritiqueReport {
    pub kind: CritiqueKind,
    pub name: String,
    pub verdict: Option<HardVerdict>,
    pub score: Option<f64>,
    pub feedback: String,
    pub artifacts: BTreeMap<String, String>,
}

impl CritiqueReport {
    pub fn hard(name: &str, verdict: HardVerdict, feedback: String) -> Self {
        CritiqueReport {
            kind: CritiqueKind::Hard,
            name: name.to_string(),
            verdict: Some(verdict),
            score: None,
            feedback,
            artifacts: BTreeMap::new(),
        }
    }

    pub fn soft(name: &str, score: f64, feedback: String) -> Self {
        CritiqueReport {
            kind: CritiqueKind::Soft,
            name: name.to_string(),
            verdict: None,
            score: Some(score),
            feedback,
            artifacts: BTreeMap::new(),
        }
    }

    pub fn with_artifact(mut self, key: &str, value: impl Into<String>) -> Self {
        self.artifacts.insert(key.to_string(), value.into());
        self
    }

    /// True only for a hard report whose verdict is valid.
    pub fn is_valid(&self) -> bool {
        self.verdict.as_ref().is_some_and(|v| v.valid)
    }
}

pub trait Critique: Send + Sync {
    fn name(&self) -> &str;

    fn kind(&self) -> CritiqueKind;

    fn critique(&self, problem: &NliProblem, explanation: &Explanation) -> Result<CritiqueReport, CritiqueError>;
}
