//! Goal provability over function-free Horn theories.
//!
//! [`prove`] runs SLD resolution (leftmost selection, clauses in source order,
//! occurs check) under iterative deepening on proof-tree height. A branch is
//! pruned when its selected atom is identical to one of its own ancestors;
//! any proof through such a branch has a shorter counterpart. A selected atom
//! sharing no variable with the remaining goals is solved on its own and
//! committed to its first refutation, and such atoms that fail without
//! touching the depth bound or a pruned loop are remembered as failing.
//!
//! [`brute_force_entailed`] is an independent oracle: it saturates the
//! Herbrand base by forward chaining and checks the goal against the fixpoint.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;
use std::process::{Command, Stdio};
use std::rc::Rc;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::logic::{pretty_print, Atom, Clause, Term, Theory};

pub const DEFAULT_MAX_DEPTH: usize = 50;
pub const DEFAULT_HERBRAND_CAP: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum ProverError {
    #[error("theory has no goal")]
    NoGoal,
    #[error("depth limit must be positive")]
    DepthLimitNonPositive,
    #[error("Herbrand base has {size} ground atoms, above the cap of {cap}")]
    BaseTooLarge { size: usize, cap: usize },
    #[error("proof cites unknown clause label `{0}`")]
    UnknownLabel(String),
    #[error("external prover failed: {0}")]
    External(String),
}

/// Idempotent variable bindings.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Substitution {
    bindings: BTreeMap<String, Term>,
}

impl Substitution {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, var: &str) -> Option<&Term> {
        self.bindings.get(var)
    }

    pub fn len(&self) -> usize {
        self.bindings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bindings.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Term)> {
        self.bindings.iter()
    }

    pub fn apply_term(&self, term: &Term) -> Term {
        match term {
            Term::Var(v) => self.bindings.get(v).cloned().unwrap_or_else(|| term.clone()),
            Term::Const(_) => term.clone(),
        }
    }

    pub fn apply(&self, atom: &Atom) -> Atom {
        Atom {
            predicate: atom.predicate.clone(),
            args: atom.args.iter().map(|t| self.apply_term(t)).collect(),
        }
    }

    /// Binds `var` to `term`, rewriting existing bindings so the result
    /// stays idempotent. Binding a variable to itself is a no-op.
    pub fn bind(&mut self, var: &str, term: Term) {
        let term = self.apply_term(&term);
        if matches!(&term, Term::Var(v) if v == var) {
            return;
        }
        for value in self.bindings.values_mut() {
            if matches!(value, Term::Var(v) if v == var) {
                *value = term.clone();
            }
        }
        self.bindings.insert(var.to_string(), term);
    }

    /// `self` followed by `other`.
    pub fn compose(&self, other: &Substitution) -> Substitution {
        let mut out = Substitution {
            bindings: self
                .bindings
                .iter()
                .map(|(k, v)| (k.clone(), other.apply_term(v)))
                .collect(),
        };
        for (k, v) in &other.bindings {
            out.bindings.entry(k.clone()).or_insert_with(|| v.clone());
        }
        out.bindings.retain(|k, v| !matches!(v, Term::Var(x) if x == k));
        out
    }

    pub fn insert_raw(&mut self, var: impl Into<String>, term: Term) {
        self.bindings.insert(var.into(), term);
    }
}

/// Most general unifier of `goal` and `head`. Head-side variables are bound
/// first so goal variables survive into the answer.
pub fn unify(goal: &Atom, head: &Atom) -> Option<Substitution> {
    if goal.predicate != head.predicate || goal.args.len() != head.args.len() {
        return None;
    }
    let mut s = Substitution::new();
    for (g, h) in goal.args.iter().zip(&head.args) {
        let g = s.apply_term(g);
        let h = s.apply_term(h);
        if g == h {
            continue;
        }
        match (&g, &h) {
            (_, Term::Var(hv)) => s.bind(hv, g.clone()),
            (Term::Var(gv), _) => s.bind(gv, h.clone()),
            _ => return None,
        }
    }
    Some(s)
}

fn rename(clause: &Clause, step: usize) -> (Atom, Vec<Atom>) {
    let rn = |a: &Atom| Atom {
        predicate: a.predicate.clone(),
        args: a
            .args
            .iter()
            .map(|t| match t {
                Term::Var(v) => Term::Var(format!("{v}#{step}")),
                c => c.clone(),
            })
            .collect(),
    };
    (rn(&clause.head), clause.body.iter().map(rn).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofStep {
    #[serde(with = "atom_text")]
    pub goal: Atom,
    pub clause: String,
    pub bindings: Substitution,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Proof {
    pub steps: Vec<ProofStep>,
    pub depth: usize,
}

impl Proof {
    /// Clause labels in first-use order.
    pub fn labels(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.steps
            .iter()
            .map(|s| s.clause.as_str())
            .filter(|l| seen.insert(*l))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureDiagnostics {
    #[serde(with = "atoms_text")]
    pub frontier: Vec<Atom>,
    pub unused_clauses: Vec<String>,
    pub depth_reached: usize,
    pub depth_limited: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardVerdict {
    pub valid: bool,
    pub proof: Option<Proof>,
    pub diagnostics: Option<FailureDiagnostics>,
}

impl HardVerdict {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("verdict serialises")
    }
}

/// Anything that can decide a theory: the built-in prover or an adapter.
pub trait ProverBackend: Send + Sync {
    fn name(&self) -> &str;
    fn verify(&self, theory: &Theory) -> Result<HardVerdict, ProverError>;
}

#[derive(Debug, Clone)]
pub struct HornProver {
    pub max_depth: usize,
}

impl Default for HornProver {
    fn default() -> Self {
        HornProver {
            max_depth: DEFAULT_MAX_DEPTH,
        }
    }
}

impl ProverBackend for HornProver {
    fn name(&self) -> &str {
        "horn"
    }

    fn verify(&self, theory: &Theory) -> Result<HardVerdict, ProverError> {
        prove(theory, self.max_depth)
    }
}

/// Runs an external program that reads theory text on stdin and writes a
/// verdict as JSON on stdout.
#[derive(Debug, Clone)]
pub struct SubprocessProver {
    pub program: String,
    pub args: Vec<String>,
}

impl ProverBackend for SubprocessProver {
    fn name(&self) -> &str {
        &self.program
    }

    fn verify(&self, theory: &Theory) -> Result<HardVerdict, ProverError> {
        let ext = |e: std::io::Error| ProverError::External(format!("{}: {e}", self.program));
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(ext)?;
        child
            .stdin
            .take()
            .expect("stdin piped")
            .write_all(pretty_print(theory).as_bytes())
            .map_err(ext)?;
        let output = child.wait_with_output().map_err(ext)?;
        if !output.status.success() {
            return Err(ProverError::External(format!(
                "{} exited with {}: {}",
                self.program,
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            )));
        }
        serde_json::from_slice(&output.stdout)
            .map_err(|e| ProverError::External(format!("unreadable verdict: {e}")))
    }
}

/// Interned term: variables are global ids into the binding store,
/// constants index the program's constant table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum T {
    V(u32),
    C(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct IAtom {
    pred: u32,
    args: Vec<T>,
}

/// A clause with variables numbered locally from 0.
struct IClause {
    head: IAtom,
    body: Vec<IAtom>,
    var_names: Vec<String>,
}

struct Program<'t> {
    theory: &'t Theory,
    preds: Vec<&'t str>,
    consts: Vec<&'t str>,
    clauses: Vec<IClause>,
    by_pred: Vec<Vec<usize>>,
    goal: Vec<IAtom>,
    goal_vars: Vec<String>,
}

impl<'t> Program<'t> {
    fn new(theory: &'t Theory) -> Self {
        let mut pred_ids: HashMap<(&str, usize), u32> = HashMap::new();
        let mut const_ids: HashMap<&str, u32> = HashMap::new();
        let mut preds = Vec::new();
        let mut consts = Vec::new();
        let mut intern = |atom: &'t Atom, vars: &mut Vec<String>| {
            let pred = *pred_ids.entry((&atom.predicate, atom.arity())).or_insert_with(|| {
                preds.push(atom.predicate.as_str());
                preds.len() as u32 - 1
            });
            let args = atom
                .args
                .iter()
                .map(|t| match t {
                    Term::Var(v) => T::V(match vars.iter().position(|n| n == v) {
                        Some(i) => i as u32,
                        None => {
                            vars.push(v.clone());
                            vars.len() as u32 - 1
                        }
                    }),
                    Term::Const(c) => T::C(*const_ids.entry(c).or_insert_with(|| {
                        consts.push(c.as_str());
                        consts.len() as u32 - 1
                    })),
                })
                .collect();
            IAtom { pred, args }
        };
        let clauses: Vec<IClause> = theory
            .clauses
            .iter()
            .map(|c| {
                let mut var_names = Vec::new();
                let head = intern(&c.head, &mut var_names);
                let body = c.body.iter().map(|a| intern(a, &mut var_names)).collect();
                IClause { head, body, var_names }
            })
            .collect();
        let mut goal_vars = Vec::new();
        let goal = theory.goal.iter().map(|a| intern(a, &mut goal_vars)).collect();
        let mut by_pred = vec![Vec::new(); preds.len()];
        for (i, c) in clauses.iter().enumerate() {
            by_pred[c.head.pred as usize].push(i);
        }
        Program {
            theory,
            preds,
            consts,
            clauses,
            by_pred,
            goal,
            goal_vars,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum Origin {
    Goal(u32),
    Clause { clause: u32, local: u32, step: u32 },
}

/// Variable bindings with a trail for undo on backtracking.
struct Store {
    binding: Vec<Option<T>>,
    origin: Vec<Origin>,
    trail: Vec<u32>,
}

impl Store {
    fn deref(&self, mut t: T) -> T {
        while let T::V(v) = t {
            match self.binding[v as usize] {
                Some(next) => t = next,
                None => break,
            }
        }
        t
    }

    fn resolve(&self, atom: &IAtom) -> IAtom {
        IAtom {
            pred: atom.pred,
            args: atom.args.iter().map(|t| self.deref(*t)).collect(),
        }
    }

    fn bind(&mut self, v: u32, t: T) {
        self.binding[v as usize] = Some(t);
        self.trail.push(v);
    }

    fn mark(&self) -> (usize, usize) {
        (self.trail.len(), self.binding.len())
    }

    fn undo(&mut self, (trail, vars): (usize, usize)) {
        for v in self.trail.drain(trail..) {
            self.binding[v as usize] = None;
        }
        self.binding.truncate(vars);
        self.origin.truncate(vars);
    }

    fn fresh(&mut self, clause: usize, n: usize, step: usize) -> u32 {
        let base = self.binding.len() as u32;
        for local in 0..n {
            self.binding.push(None);
            self.origin.push(Origin::Clause {
                clause: clause as u32,
                local: local as u32,
                step: step as u32,
            });
        }
        base
    }
}

struct Ancestor {
    atom: IAtom,
    parent: Option<Rc<Ancestor>>,
}

#[derive(Clone)]
struct Pending {
    atom: Rc<IAtom>,
    depth: usize,
    ancestors: Option<Rc<Ancestor>>,
}

/// What an unconditional failure touched, so memo hits still feed diagnostics.
#[derive(Clone)]
struct FailureTrace {
    frontier: Vec<Atom>,
    used: Vec<usize>,
}

/// A resolution step as taken: the selected goal and the unifier, both
/// fully dereferenced at the time of the step.
struct IStep {
    clause: usize,
    goal: IAtom,
    mgu: Vec<(u32, T)>,
}

struct Search<'p, 't> {
    program: &'p Program<'t>,
    store: Store,
    limit: usize,
    cut: bool,
    cut_events: usize,
    prune_events: usize,
    budget: usize,
    exhausted: bool,
    used: Vec<bool>,
    frontier: Vec<Atom>,
    steps: Vec<IStep>,
    proof_depth: usize,
    failures: &'p mut HashMap<IAtom, FailureTrace>,
}

/// Renumbers variables by first occurrence so variants share a key.
fn canonical(atom: &IAtom) -> IAtom {
    let mut seen: Vec<u32> = Vec::new();
    IAtom {
        pred: atom.pred,
        args: atom
            .args
            .iter()
            .map(|t| match t {
                T::V(v) => T::V(match seen.iter().position(|s| s == v) {
                    Some(i) => i as u32,
                    None => {
                        seen.push(*v);
                        seen.len() as u32 - 1
                    }
                }),
                c => *c,
            })
            .collect(),
    }
}

fn offset(t: T, base: u32) -> T {
    match t {
        T::V(v) => T::V(base + v),
        c => c,
    }
}

impl Search<'_, '_> {
    fn var_name(&self, v: u32) -> String {
        match self.store.origin[v as usize] {
            Origin::Goal(i) => self.program.goal_vars[i as usize].clone(),
            Origin::Clause { clause, local, step } => {
                format!("{}#{step}", self.program.clauses[clause as usize].var_names[local as usize])
            }
        }
    }

    fn term(&self, t: T) -> Term {
        match t {
            T::V(v) => Term::Var(self.var_name(v)),
            T::C(c) => Term::Const(self.program.consts[c as usize].to_string()),
        }
    }

    fn atom(&self, a: &IAtom) -> Atom {
        Atom {
            predicate: self.program.preds[a.pred as usize].to_string(),
            args: a.args.iter().map(|t| self.term(*t)).collect(),
        }
    }

    fn note_frontier(&mut self, atom: &IAtom) {
        let atom = self.atom(atom);
        if !self.frontier.contains(&atom) {
            self.frontier.push(atom);
        }
    }

    fn shares_vars(&self, selected: &IAtom, rest: &[Pending]) -> bool {
        selected.args.iter().any(|t| {
            matches!(t, T::V(_))
                && rest
                    .iter()
                    .any(|g| g.atom.args.iter().any(|u| self.store.deref(*u) == *t))
        })
    }

    /// Finds the first refutation of `goals`, leaving its bindings in the
    /// store. On failure the store and step list are as on entry.
    fn solve(&mut self, goals: &[Pending]) -> bool {
        let Some((first, rest)) = goals.split_first() else {
            return true;
        };
        if self.exhausted {
            return false;
        }
        if first.depth > self.limit {
            self.cut = true;
            self.cut_events += 1;
            return false;
        }
        let selected = self.store.resolve(&first.atom);
        let mut anc = first.ancestors.as_deref();
        while let Some(a) = anc {
            if a.atom.pred == selected.pred
                && a.atom.args.iter().zip(&selected.args).all(|(x, y)| self.store.deref(*x) == *y)
            {
                self.prune_events += 1;
                return false;
            }
            anc = a.parent.as_deref();
        }

        if rest.is_empty() || self.shares_vars(&selected, rest) {
            return self.expand(first, selected, rest);
        }

        // Independent subgoal: its bindings cannot reach the rest of the
        // goal list, so its first refutation is as good as any other.
        let key = canonical(&selected);
        if let Some(trace) = self.failures.get(&key).cloned() {
            for atom in trace.frontier {
                if !self.frontier.contains(&atom) {
                    self.frontier.push(atom);
                }
            }
            for i in trace.used {
                self.used[i] = true;
            }
            return false;
        }
        let (cuts, prunes) = (self.cut_events, self.prune_events);
        let frontier_mark = self.frontier.len();
        let used_before = self.used.clone();
        let (step_mark, depth_mark, store_mark) = (self.steps.len(), self.proof_depth, self.store.mark());
        if self.expand(first, selected, &[]) {
            if self.solve(rest) {
                return true;
            }
            self.steps.truncate(step_mark);
            self.proof_depth = depth_mark;
            self.store.undo(store_mark);
            return false;
        }
        if !self.exhausted && cuts == self.cut_events && prunes == self.prune_events {
            let used = self
                .used
                .iter()
                .zip(&used_before)
                .enumerate()
                .filter(|(_, (now, before))| **now && !**before)
                .map(|(i, _)| i)
                .collect();
            self.failures.insert(
                key,
                FailureTrace {
                    frontier: self.frontier[frontier_mark..].to_vec(),
                    used,
                },
            );
        }
        false
    }

    fn unify_head(&mut self, selected: &IAtom, head: &IAtom, base: u32) -> bool {
        for (g, h) in selected.args.iter().zip(&head.args) {
            let g = self.store.deref(*g);
            let h = self.store.deref(offset(*h, base));
            if g == h {
                continue;
            }
            match (g, h) {
                (_, T::V(hv)) => self.store.bind(hv, g),
                (T::V(gv), _) => self.store.bind(gv, h),
                _ => return false,
            }
        }
        true
    }

    fn expand(&mut self, first: &Pending, selected: IAtom, rest: &[Pending]) -> bool {
        let program = self.program;
        let step_no = self.steps.len() + 1;
        let mut matched = false;
        let link = Rc::new(Ancestor {
            atom: selected,
            parent: first.ancestors.clone(),
        });
        let selected = &link.atom;
        for &i in &program.by_pred[selected.pred as usize] {
            let clause = &program.clauses[i];
            if self.budget == 0 {
                self.exhausted = true;
                self.cut = true;
                return false;
            }
            self.budget -= 1;
            let mark = self.store.mark();
            let base = self.store.fresh(i, clause.var_names.len(), step_no);
            if !self.unify_head(selected, &clause.head, base) {
                self.store.undo(mark);
                continue;
            }
            matched = true;
            self.used[i] = true;
            let mgu = self.store.trail[mark.0..]
                .iter()
                .map(|&v| (v, self.store.deref(T::V(v))))
                .collect();
            let mut next: Vec<Pending> = clause
                .body
                .iter()
                .map(|a| Pending {
                    atom: Rc::new(IAtom {
                        pred: a.pred,
                        args: a.args.iter().map(|t| offset(*t, base)).collect(),
                    }),
                    depth: first.depth + 1,
                    ancestors: Some(link.clone()),
                })
                .collect();
            next.extend_from_slice(rest);
            self.steps.push(IStep {
                clause: i,
                goal: selected.clone(),
                mgu,
            });
            let saved_depth = self.proof_depth;
            self.proof_depth = self.proof_depth.max(first.depth);
            if self.solve(&next) {
                return true;
            }
            self.proof_depth = saved_depth;
            self.steps.pop();
            self.store.undo(mark);
            if self.exhausted {
                return false;
            }
        }
        if !matched {
            self.note_frontier(selected);
        }
        false
    }

    fn proof(&self) -> Proof {
        let steps = self
            .steps
            .iter()
            .map(|s| {
                let mut bindings = Substitution::new();
                for &(v, t) in &s.mgu {
                    bindings.insert_raw(self.var_name(v), self.term(t));
                }
                ProofStep {
                    goal: self.atom(&s.goal),
                    clause: self.program.theory.clauses[s.clause].label.clone(),
                    bindings,
                }
            })
            .collect();
        Proof {
            steps,
            depth: self.proof_depth,
        }
    }
}

/// Search limits for [`prove_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SearchLimits {
    pub max_depth: usize,
    /// Clause-resolution attempts across all deepening rounds. Running out
    /// counts as a depth cut.
    pub max_resolutions: usize,
}

pub const DEFAULT_MAX_RESOLUTIONS: usize = 200_000;

impl Default for SearchLimits {
    fn default() -> Self {
        SearchLimits {
            max_depth: DEFAULT_MAX_DEPTH,
            max_resolutions: DEFAULT_MAX_RESOLUTIONS,
        }
    }
}

/// Decides whether `theory.goal` follows from `theory.clauses` within
/// `max_depth` levels of proof tree.
pub fn prove(theory: &Theory, max_depth: usize) -> Result<HardVerdict, ProverError> {
    prove_with(
        theory,
        SearchLimits {
            max_depth,
            ..SearchLimits::default()
        },
    )
}

pub fn prove_with(theory: &Theory, limits: SearchLimits) -> Result<HardVerdict, ProverError> {
    if theory.goal.is_empty() {
        return Err(ProverError::NoGoal);
    }
    if limits.max_depth == 0 {
        return Err(ProverError::DepthLimitNonPositive);
    }
    let program = Program::new(theory);
    let initial: Vec<Pending> = program
        .goal
        .iter()
        .map(|atom| Pending {
            atom: Rc::new(atom.clone()),
            depth: 1,
            ancestors: None,
        })
        .collect();
    let n_goal_vars = program.goal_vars.len();

    let mut failures = HashMap::new();
    let mut budget = limits.max_resolutions;
    let mut last = None;
    for limit in 1..=limits.max_depth {
        let mut search = Search {
            program: &program,
            store: Store {
                binding: vec![None; n_goal_vars],
                origin: (0..n_goal_vars as u32).map(Origin::Goal).collect(),
                trail: Vec::new(),
            },
            limit,
            cut: false,
            cut_events: 0,
            prune_events: 0,
            budget,
            exhausted: false,
            used: vec![false; theory.clauses.len()],
            frontier: Vec::new(),
            steps: Vec::new(),
            proof_depth: 0,
            failures: &mut failures,
        };
        if search.solve(&initial) {
            return Ok(HardVerdict {
                valid: true,
                proof: Some(search.proof()),
                diagnostics: None,
            });
        }
        budget = search.budget;
        let stop = !search.cut || search.exhausted;
        last = Some((limit, search.cut, search.used, search.frontier));
        if stop {
            break;
        }
    }
    let (limit, cut, used, frontier) = last.expect("at least one deepening round");
    let unused_clauses = theory
        .clauses
        .iter()
        .zip(&used)
        .filter(|(_, used)| !**used)
        .map(|(c, _)| c.label.clone())
        .collect();
    Ok(HardVerdict {
        valid: false,
        proof: None,
        diagnostics: Some(FailureDiagnostics {
            frontier,
            unused_clauses,
            depth_reached: limit,
            depth_limited: cut,
        }),
    })
}

/// Replays `proof` against `theory`: each step must select the current
/// leftmost goal, and its bindings must unify that goal with the named
/// clause's head. Returns whether the replay ends with no goals left.
pub fn check_proof(theory: &Theory, proof: &Proof) -> Result<bool, ProverError> {
    if let Some(step) = proof.steps.iter().find(|s| theory.clause(&s.clause).is_none()) {
        return Err(ProverError::UnknownLabel(step.clause.clone()));
    }
    let mut goals: Vec<Atom> = theory.goal.clone();
    let mut subst = Substitution::new();
    for (i, step) in proof.steps.iter().enumerate() {
        let Some((first, rest)) = goals.split_first() else {
            return Ok(false);
        };
        let selected = subst.apply(first);
        if selected != step.goal {
            return Ok(false);
        }
        let clause = theory.clause(&step.clause).expect("checked above");
        let (head, body) = rename(clause, i + 1);
        if step.bindings.apply(&selected) != step.bindings.apply(&head) {
            return Ok(false);
        }
        if step
            .bindings
            .iter()
            .any(|(_, t)| matches!(t, Term::Var(v) if step.bindings.get(v).is_some()))
        {
            return Ok(false);
        }
        let mut next = body;
        next.extend_from_slice(rest);
        goals = next;
        subst = subst.compose(&step.bindings);
    }
    Ok(goals.is_empty())
}

/// Forward-chaining fixpoint over the Herbrand base; true when some
/// grounding of the goal conjunction holds.
pub fn brute_force_entailed(theory: &Theory, cap: usize) -> Result<bool, ProverError> {
    if theory.goal.is_empty() {
        return Err(ProverError::NoGoal);
    }
    let signature = theory.signature();
    let mut constants = theory.constants();
    if constants.is_empty() && signature.iter().any(|(_, n)| *n > 0) {
        // the Herbrand universe is never empty
        constants.push("#0".to_string());
    }
    let mut size = 0usize;
    for (_, arity) in &signature {
        let n = (constants.len() as u32)
            .checked_pow(*arity as u32)
            .map(|n| n as usize)
            .unwrap_or(usize::MAX);
        size = size.saturating_add(n);
    }
    if size > cap {
        return Err(ProverError::BaseTooLarge { size, cap });
    }

    let mut facts = FactStore::default();
    loop {
        let mut derived = Vec::new();
        for clause in &theory.clauses {
            facts.join(&clause.body, &mut HashMap::new(), &mut |binding| {
                for_each_grounding(&clause.head, binding, &constants, &mut |ground| {
                    if !facts.contains(&ground) {
                        derived.push(ground);
                    }
                });
            });
        }
        if derived.is_empty() {
            break;
        }
        for fact in derived {
            facts.insert(fact);
        }
    }

    let mut found = false;
    facts.join(&theory.goal, &mut HashMap::new(), &mut |_| found = true);
    Ok(found)
}

#[derive(Default)]
struct FactStore {
    all: HashSet<Vec<String>>,
    by_pred: HashMap<String, Vec<Vec<String>>>,
}

impl FactStore {
    fn key(pred: &str, args: &[String]) -> Vec<String> {
        let mut k = vec![pred.to_string()];
        k.extend_from_slice(args);
        k
    }

    fn contains(&self, ground: &(String, Vec<String>)) -> bool {
        self.all.contains(&Self::key(&ground.0, &ground.1))
    }

    fn insert(&mut self, ground: (String, Vec<String>)) {
        if self.all.insert(Self::key(&ground.0, &ground.1)) {
            self.by_pred.entry(ground.0).or_default().push(ground.1);
        }
    }

    fn join(
        &self,
        atoms: &[Atom],
        binding: &mut HashMap<String, String>,
        emit: &mut dyn FnMut(&HashMap<String, String>),
    ) {
        let Some((first, rest)) = atoms.split_first() else {
            emit(binding);
            return;
        };
        let Some(rows) = self.by_pred.get(&first.predicate) else {
            return;
        };
        for row in rows {
            let mut added = Vec::new();
            let mut ok = true;
            for (term, value) in first.args.iter().zip(row) {
                match term {
                    Term::Const(c) => {
                        if c != value {
                            ok = false;
                            break;
                        }
                    }
                    Term::Var(v) => match binding.get(v) {
                        Some(bound) if bound != value => {
                            ok = false;
                            break;
                        }
                        Some(_) => {}
                        None => {
                            binding.insert(v.clone(), value.clone());
                            added.push(v.clone());
                        }
                    },
                }
            }
            if ok {
                self.join(rest, binding, emit);
            }
            for v in added {
                binding.remove(&v);
            }
        }
    }
}

fn for_each_grounding(
    head: &Atom,
    binding: &HashMap<String, String>,
    constants: &[String],
    emit: &mut dyn FnMut((String, Vec<String>)),
) {
    let free: Vec<&str> = {
        let mut seen = Vec::new();
        for v in head.vars() {
            if !binding.contains_key(v) && !seen.contains(&v) {
                seen.push(v);
            }
        }
        seen
    };
    let mut choice = vec![0usize; free.len()];
    if !free.is_empty() && constants.is_empty() {
        return;
    }
    loop {
        let args = head
            .args
            .iter()
            .map(|t| match t {
                Term::Const(c) => c.clone(),
                Term::Var(v) => match binding.get(v) {
                    Some(val) => val.clone(),
                    None => {
                        let idx = free.iter().position(|f| f == v).expect("free var");
                        constants[choice[idx]].clone()
                    }
                },
            })
            .collect();
        emit((head.predicate.clone(), args));
        // odometer over the free variables
        let mut i = 0;
        loop {
            if i == choice.len() {
                return;
            }
            choice[i] += 1;
            if choice[i] < constants.len() {
                break;
            }
            choice[i] = 0;
            i += 1;
        }
    }
}

pub(crate) fn parse_atom_text(text: &str) -> Result<Atom, String> {
    let text = text.trim();
    let (predicate, args) = match text.find('(') {
        None => (text, Vec::new()),
        Some(open) => {
            let inner = text[open + 1..]
                .strip_suffix(')')
                .ok_or_else(|| format!("unbalanced atom `{text}`"))?;
            let args = inner
                .split(',')
                .map(|a| match a.trim() {
                    "" => Err(format!("empty argument in `{text}`")),
                    a => Ok(Term::from_text(a)),
                })
                .collect::<Result<Vec<_>, String>>()?;
            (&text[..open], args)
        }
    };
    if !predicate.starts_with(|c: char| c.is_ascii_lowercase()) {
        return Err(format!("bad predicate in `{text}`"));
    }
    Ok(Atom::new(predicate, args))
}

mod atom_text {
    use super::*;

    pub fn serialize<S: Serializer>(atom: &Atom, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&atom.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Atom, D::Error> {
        let text = String::deserialize(d)?;
        parse_atom_text(&text).map_err(serde::de::Error::custom)
    }
}

mod atoms_text {
    use super::*;

    pub fn serialize<S: Serializer>(atoms: &[Atom], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(atoms.iter().map(|a| a.to_string()))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Atom>, D::Error> {
        Vec::<String>::deserialize(d)?
            .iter()
            .map(|t| parse_atom_text(t).map_err(serde::de::Error::custom))
            .collect()
    }
}
