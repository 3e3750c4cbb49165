//! Function-free Horn programs: terms, atoms, labelled clauses and goals,
//! with a Prolog-style concrete syntax.
//!
//! ```text
//! % comment
//! @label(explanation_1)
//! baby(X) :- infant(X).
//! infant(a).
//! ?- baby(a).
//! ```
//!
//! Clauses without an `@label(..)` directive are numbered `axiom_1`,
//! `axiom_2`, ... in order of appearance among unlabelled clauses.

use std::collections::{HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Var(String),
    Const(String),
}

impl Term {
    pub fn var(name: impl Into<String>) -> Self {
        Term::Var(name.into())
    }

    pub fn constant(name: impl Into<String>) -> Self {
        Term::Const(name.into())
    }

    pub fn is_var(&self) -> bool {
        matches!(self, Term::Var(_))
    }

    pub fn name(&self) -> &str {
        match self {
            Term::Var(n) | Term::Const(n) => n,
        }
    }
}

impl Term {
    /// Classifies by the first character: uppercase or `_` is a variable.
    pub fn from_text(text: &str) -> Term {
        match text.chars().next() {
            Some(c) if c.is_ascii_uppercase() || c == '_' => Term::var(text),
            _ => Term::constant(text),
        }
    }
}

impl Serialize for Term {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for Term {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        if text.is_empty() {
            return Err(serde::de::Error::custom("empty term"));
        }
        Ok(Term::from_text(&text))
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Atom {
    pub predicate: String,
    pub args: Vec<Term>,
}

impl Atom {
    pub fn new(predicate: impl Into<String>, args: Vec<Term>) -> Self {
        Atom {
            predicate: predicate.into(),
            args,
        }
    }

    pub fn arity(&self) -> usize {
        self.args.len()
    }

    pub fn is_ground(&self) -> bool {
        self.args.iter().all(|t| !t.is_var())
    }

    pub fn vars(&self) -> impl Iterator<Item = &str> {
        self.args.iter().filter_map(|t| match t {
            Term::Var(v) => Some(v.as_str()),
            Term::Const(_) => None,
        })
    }

    /// Equality up to a consistent renaming of variables.
    pub fn is_variant_of(&self, other: &Atom) -> bool {
        if self.predicate != other.predicate || self.args.len() != other.args.len() {
            return false;
        }
        let mut fwd: HashMap<&str, &str> = HashMap::new();
        let mut bwd: HashMap<&str, &str> = HashMap::new();
        for (a, b) in self.args.iter().zip(&other.args) {
            match (a, b) {
                (Term::Const(x), Term::Const(y)) if x == y => {}
                (Term::Var(x), Term::Var(y)) => {
                    if *fwd.entry(x).or_insert(y) != y || *bwd.entry(y).or_insert(x) != x {
                        return false;
                    }
                }
                _ => return false,
            }
        }
        true
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.predicate)?;
        if !self.args.is_empty() {
            f.write_str("(")?;
            for (i, arg) in self.args.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                write!(f, "{arg}")?;
            }
            f.write_str(")")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Clause {
    pub head: Atom,
    pub body: Vec<Atom>,
    pub label: String,
}

impl Clause {
    pub fn is_fact(&self) -> bool {
        self.body.is_empty()
    }
}

impl fmt::Display for Clause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.head)?;
        if !self.body.is_empty() {
            f.write_str(" :- ")?;
            write_conjunction(f, &self.body)?;
        }
        f.write_str(".")
    }
}

fn write_conjunction(f: &mut fmt::Formatter<'_>, atoms: &[Atom]) -> fmt::Result {
    for (i, atom) in atoms.iter().enumerate() {
        if i > 0 {
            f.write_str(", ")?;
        }
        write!(f, "{atom}")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Theory {
    pub clauses: Vec<Clause>,
    pub goal: Vec<Atom>,
}

impl Theory {
    pub fn clause(&self, label: &str) -> Option<&Clause> {
        self.clauses.iter().find(|c| c.label == label)
    }

    pub fn constants(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        let atoms = self
            .clauses
            .iter()
            .flat_map(|c| std::iter::once(&c.head).chain(&c.body))
            .chain(&self.goal);
        for atom in atoms {
            for t in &atom.args {
                if let Term::Const(c) = t {
                    if seen.insert(c.as_str()) {
                        out.push(c.clone());
                    }
                }
            }
        }
        out
    }

    /// Predicate arities in first-seen order.
    pub fn signature(&self) -> Vec<(String, usize)> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        let atoms = self
            .clauses
            .iter()
            .flat_map(|c| std::iter::once(&c.head).chain(&c.body))
            .chain(&self.goal);
        for atom in atoms {
            if seen.insert((atom.predicate.as_str(), atom.arity())) {
                out.push((atom.predicate.clone(), atom.arity()));
            }
        }
        out
    }
}

impl fmt::Display for Theory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&pretty_print(self))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at line {line}, column {column}: expected {expected}")]
    Syntax {
        line: usize,
        column: usize,
        expected: String,
    },
    #[error("predicate `{predicate}` used with conflicting arities {arities:?}")]
    ArityConflict {
        predicate: String,
        arities: Vec<usize>,
    },
    #[error("label `{label}` is attached to more than one clause")]
    DuplicateLabel { label: String },
}

/// Canonical text: one clause per line, each preceded by its `@label`
/// directive, goal last.
pub fn pretty_print(theory: &Theory) -> String {
    let mut out = String::new();
    for clause in &theory.clauses {
        out.push_str("@label(");
        out.push_str(&clause.label);
        out.push_str(")\n");
        out.push_str(&clause.to_string());
        out.push('\n');
    }
    if !theory.goal.is_empty() {
        let goal = theory
            .goal
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join(", ");
        out.push_str("?- ");
        out.push_str(&goal);
        out.push_str(".\n");
    }
    out
}

pub fn parse_theory(source: &str) -> Result<Theory, ParseError> {
    let tokens = Lexer::new(source).tokenize()?;
    let mut parser = Parser {
        tokens,
        pos: 0,
    };
    let theory = parser.theory()?;
    check_arities(&theory)?;
    Ok(theory)
}

fn check_arities(theory: &Theory) -> Result<(), ParseError> {
    let mut seen: Vec<(&str, Vec<usize>)> = Vec::new();
    let atoms = theory
        .clauses
        .iter()
        .flat_map(|c| std::iter::once(&c.head).chain(&c.body))
        .chain(&theory.goal);
    for atom in atoms {
        match seen.iter_mut().find(|(p, _)| *p == atom.predicate) {
            Some((_, arities)) if !arities.contains(&atom.arity()) => arities.push(atom.arity()),
            Some(_) => {}
            None => seen.push((&atom.predicate, vec![atom.arity()])),
        }
    }
    match seen.into_iter().find(|(_, arities)| arities.len() > 1) {
        Some((predicate, arities)) => Err(ParseError::ArityConflict {
            predicate: predicate.to_string(),
            arities,
        }),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Lower(String),
    Upper(String),
    Number(String),
    LParen,
    RParen,
    Comma,
    Dot,
    Neck,
    Query,
    At,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Lower(s) | Tok::Upper(s) | Tok::Number(s) => format!("`{s}`"),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Dot => "`.`".into(),
            Tok::Neck => "`:-`".into(),
            Tok::Query => "`?-`".into(),
            Tok::At => "`@`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    column: usize,
}

struct Lexer<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: usize,
    column: usize,
}

impl<'a> Lexer<'a> {
    fn new(source: &'a str) -> Self {
        Lexer {
            chars: source.chars().peekable(),
            line: 1,
            column: 1,
        }
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.column = 1;
        } else {
            self.column += 1;
        }
        Some(c)
    }

    fn error(&self, line: usize, column: usize, expected: &str) -> ParseError {
        ParseError::Syntax {
            line,
            column,
            expected: expected.to_string(),
        }
    }

    fn tokenize(mut self) -> Result<Vec<Spanned>, ParseError> {
        let mut out = Vec::new();
        loop {
            let (line, column) = (self.line, self.column);
            let Some(&c) = self.chars.peek() else {
                out.push(Spanned {
                    tok: Tok::Eof,
                    line,
                    column,
                });
                return Ok(out);
            };
            let tok = match c {
                c if c.is_whitespace() => {
                    self.bump();
                    continue;
                }
                '%' => {
                    while let Some(&c) = self.chars.peek() {
                        if c == '\n' {
                            break;
                        }
                        self.bump();
                    }
                    continue;
                }
                '(' => {
                    self.bump();
                    Tok::LParen
                }
                ')' => {
                    self.bump();
                    Tok::RParen
                }
                ',' => {
                    self.bump();
                    Tok::Comma
                }
                '.' => {
                    self.bump();
                    Tok::Dot
                }
                '@' => {
                    self.bump();
                    Tok::At
                }
                ':' => {
                    self.bump();
                    if self.chars.peek() == Some(&'-') {
                        self.bump();
                        Tok::Neck
                    } else {
                        return Err(self.error(line, column, "`:-`"));
                    }
                }
                '?' => {
                    self.bump();
                    if self.chars.peek() == Some(&'-') {
                        self.bump();
                        Tok::Query
                    } else {
                        return Err(self.error(line, column, "`?-`"));
                    }
                }
                c if c.is_ascii_alphanumeric() || c == '_' => {
                    let mut word = String::new();
                    while let Some(&c) = self.chars.peek() {
                        if c.is_ascii_alphanumeric() || c == '_' {
                            word.push(c);
                            self.bump();
                        } else {
                            break;
                        }
                    }
                    if c.is_ascii_lowercase() {
                        Tok::Lower(word)
                    } else if c.is_ascii_digit() {
                        Tok::Number(word)
                    } else {
                        Tok::Upper(word)
                    }
                }
                _ => {
                    return Err(self.error(
                        line,
                        column,
                        "an identifier, `(`, `)`, `,`, `.`, `:-`, `?-` or `@label`",
                    ))
                }
            };
            out.push(Spanned { tok, line, column });
        }
    }
}

struct Parser {
    tokens: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Spanned {
        &self.tokens[self.pos]
    }

    fn advance(&mut self) -> Spanned {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn fail<T>(&self, expected: &str) -> Result<T, ParseError> {
        let t = self.peek();
        Err(ParseError::Syntax {
            line: t.line,
            column: t.column,
            expected: format!("{expected}, found {}", t.tok.describe()),
        })
    }

    fn expect(&mut self, tok: Tok, expected: &str) -> Result<(), ParseError> {
        if self.peek().tok == tok {
            self.advance();
            Ok(())
        } else {
            self.fail(expected)
        }
    }

    fn theory(&mut self) -> Result<Theory, ParseError> {
        let mut theory = Theory::default();
        let mut labels = HashSet::new();
        let mut auto = 0usize;
        let mut has_goal = false;
        loop {
            match self.peek().tok {
                Tok::Eof => break,
                Tok::Query => {
                    if has_goal {
                        return self.fail("a single `?-` goal per theory");
                    }
                    self.advance();
                    theory.goal = self.conjunction()?;
                    self.expect(Tok::Dot, "`.` after goal")?;
                    has_goal = true;
                }
                _ => {
                    let label = if self.peek().tok == Tok::At {
                        Some(self.label_directive()?)
                    } else {
                        None
                    };
                    let label = match label {
                        Some(l) => l,
                        None => {
                            auto += 1;
                            format!("axiom_{auto}")
                        }
                    };
                    let clause = self.clause(label)?;
                    if !labels.insert(clause.label.clone()) {
                        return Err(ParseError::DuplicateLabel {
                            label: clause.label,
                        });
                    }
                    theory.clauses.push(clause);
                }
            }
        }
        Ok(theory)
    }

    fn label_directive(&mut self) -> Result<String, ParseError> {
        self.expect(Tok::At, "`@`")?;
        match &self.peek().tok {
            Tok::Lower(w) if w == "label" => {
                self.advance();
            }
            _ => return self.fail("`label` after `@`"),
        }
        self.expect(Tok::LParen, "`(` after `@label`")?;
        let name = match self.advance().tok {
            Tok::Lower(s) | Tok::Upper(s) | Tok::Number(s) => s,
            _ => {
                self.pos -= 1;
                return self.fail("a label name");
            }
        };
        self.expect(Tok::RParen, "`)` closing `@label(`")?;
        Ok(name)
    }

    fn clause(&mut self, label: String) -> Result<Clause, ParseError> {
        let head = self.atom()?;
        let body = match self.peek().tok {
            Tok::Neck => {
                self.advance();
                self.conjunction()?
            }
            Tok::Dot => Vec::new(),
            _ => return self.fail("`.` or `:-` after clause head"),
        };
        self.expect(Tok::Dot, "`,` or `.` in clause body")?;
        Ok(Clause { head, body, label })
    }

    fn conjunction(&mut self) -> Result<Vec<Atom>, ParseError> {
        let mut atoms = vec![self.atom()?];
        while self.peek().tok == Tok::Comma {
            self.advance();
            atoms.push(self.atom()?);
        }
        Ok(atoms)
    }

    fn atom(&mut self) -> Result<Atom, ParseError> {
        let predicate = match &self.peek().tok {
            Tok::Lower(s) => s.clone(),
            _ => return self.fail("a predicate name starting with a lowercase letter"),
        };
        self.advance();
        let mut args = Vec::new();
        if self.peek().tok == Tok::LParen {
            self.advance();
            args.push(self.term()?);
            loop {
                match self.peek().tok {
                    Tok::Comma => {
                        self.advance();
                        args.push(self.term()?);
                    }
                    Tok::RParen => {
                        self.advance();
                        break;
                    }
                    _ => return self.fail("`,` or `)` in argument list"),
                }
            }
        }
        Ok(Atom { predicate, args })
    }

    fn term(&mut self) -> Result<Term, ParseError> {
        let term = match &self.peek().tok {
            Tok::Upper(s) => Term::Var(s.clone()),
            Tok::Lower(s) | Tok::Number(s) => Term::Const(s.clone()),
            _ => return self.fail("a constant or variable"),
        };
        self.advance();
        Ok(term)
    }
}
