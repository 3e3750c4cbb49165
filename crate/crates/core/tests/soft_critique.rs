use std::sync::{Arc, Mutex};

use peirce::critique::soft::*;
use peirce::critique::{Critique, CritiqueError};
use peirce::http::{HttpResponse, HttpTransport, RetryPolicy};
use peirce::kb::{Explanation, NliProblem};
use proptest::prelude::*;
use serde_json::Value;

fn cat_bird() -> NliProblem {
    let mut p = NliProblem::new("copa-cat", None, "The cat chased the bird? What was the effect?");
    p.candidates = Some(vec!["The bird flew away.".into(), "The bird caught a worm".into()]);
    p
}

const GPT4O_1: &str = "If a cat chases a bird, then the bird may perceive a threat.
If the bird perceives a threat, then it is likely to take evasive action to escape.
If the bird takes evasive action to escape, then it may fly away from the area.
If the bird flies away from the area, then it will no longer be in the vicinity of the cat.
Therefore, since the cat chased the bird, the bird perceived a threat and took evasive action by flying away to escape from the cat.";

const GPT4O_2: &str = "If a cat chases a bird, then the bird may become startled or distracted.
If the bird is startled or distracted, then it may stop focusing on its current activity, such as foraging for food.
If the bird stops focusing on foraging, then it may inadvertently come across other food sources, such as worms.
If the bird comes across a worm, then it may catch the worm as a food source.
Therefore, since the cat chased the bird, causing it to become startled and stop foraging, the bird may have inadvertently caught a worm as a result of this distraction.";

#[test]
fn injected_score_votes() {
    let gpt4o = [SoftScores::new(0.25, 6, 1.03), SoftScores::new(0.09, 9, 2.33)];
    let gpt35 = [SoftScores::new(0.06, 1, 1.39), SoftScores::new(-0.05, 2, 1.65)];
    for row in [gpt4o, gpt35] {
        let out = ibe_select(&row).unwrap();
        assert_eq!(out.selected, 0);
        assert_eq!(out.tally, vec![3, 0]);
    }
}

#[test]
fn cat_bird_lexical_uncertainty_ordering() {
    let (a, b) = (Explanation::from_text(GPT4O_1), Explanation::from_text(GPT4O_2));
    assert_eq!((a.len(), b.len()), (5, 5));
    // may, likely, may in the first; five hedges in the second.
    assert!((uncertainty(&a) - 0.6).abs() < 1e-12);
    assert!((uncertainty(&b) - 1.0).abs() < 1e-12);
    assert_eq!(extract_if_then(&a).len(), 4);
    let p = cat_bird();
    let s1 = soft_scores(&p, &a, &LexicalEntailment, HedgeLexicon::shipped()).unwrap();
    let s2 = soft_scores(&p, &b, &LexicalEntailment, HedgeLexicon::shipped()).unwrap();
    assert!(s1.uncertainty < s2.uncertainty);
    assert!(s1.parsimony < s2.parsimony);
}

#[test]
fn drift_counts_new_stems() {
    let p = NliProblem::new("p", None, "The cat chased the bird?");
    let e = Explanation::from_text("The bird perceived a threat.");
    assert_eq!(parsimony(&p, &e), 2);
    let r = ParsimonyCritique.critique(&p, &e).unwrap();
    assert_eq!(r.score, Some(2.0));
    assert!(r.feedback.contains("perceiv, threat"));
}

#[test]
fn coherence_means_clause_scores() {
    let jaccard_by_hand = |a: &[&str], b: &[&str]| {
        let inter = a.iter().filter(|x| b.contains(x)).count() as f64;
        inter / ((a.len() + b.len()) as f64 - inter)
    };
    let first = jaccard_by_hand(&["red", "blue", "green"], &["red", "cold", "warm"]);
    let second = jaccard_by_hand(&["red", "blue", "green"], &["red", "blue", "cold", "warm"]);
    assert!((first - 0.2).abs() < 1e-12 && (second - 0.4).abs() < 1e-12);

    let e = Explanation::from_text("If red blue green, then red cold warm. If red blue green, then red blue cold warm.");
    let r = coherence(&e, &LexicalEntailment).unwrap();
    assert!((r.clauses[0].1 - first).abs() < 1e-12);
    assert!((r.clauses[1].1 - second).abs() < 1e-12);
    assert!((r.score - 0.3).abs() < 1e-12);
}

#[test]
fn no_clause_report_is_flagged() {
    let c = CoherenceCritique::new(Arc::new(LexicalEntailment));
    let r = c.critique(&cat_bird(), &Explanation::from_text("Birds fly.")).unwrap();
    assert_eq!(r.score, Some(0.0));
    assert_eq!(r.artifacts.get("flag").map(String::as_str), Some("no-clauses"));
}

#[derive(Default)]
struct Canned {
    replies: Mutex<Vec<(u16, String)>>,
    seen: Mutex<Vec<Value>>,
}

struct Shared(Arc<Canned>);

impl HttpTransport for Shared {
    fn post_json(&self, _: &str, _: &[(String, String)], body: &Value) -> Result<HttpResponse, String> {
        self.0.seen.lock().unwrap().push(body.clone());
        let (status, body) = self.0.replies.lock().unwrap().remove(0);
        Ok(HttpResponse { status, body })
    }
}

fn canned(replies: &[(u16, &str)]) -> Arc<Canned> {
    Arc::new(Canned {
        replies: Mutex::new(replies.iter().map(|(s, b)| (*s, b.to_string())).collect()),
        ..Canned::default()
    })
}

fn scorer(c: &Arc<Canned>, limit: u32) -> RemoteScorer {
    RemoteScorer::with_transport("http://x", Box::new(Shared(c.clone())), RetryPolicy { limit, backoff_ms: 0 }, 1)
}

#[test]
fn remote_scorer_protocol() {
    let c = canned(&[(503, ""), (200, r#"{"score": -0.05}"#)]);
    let s = scorer(&c, 2);
    assert_eq!(EntailmentScorer::score(&s, "p", "h").unwrap(), -0.05);
    assert_eq!(EntailmentScorer::range(&s), (-1.0, 1.0));
    assert_eq!(
        c.seen.lock().unwrap()[1],
        serde_json::json!({"task": "entailment", "premise": "p", "hypothesis": "h"})
    );

    let c = canned(&[(200, r#"{"score": 0.5}"#)]);
    assert_eq!(scorer(&c, 2).score_sentence("It may rain.").unwrap(), 0.5);
    assert_eq!(c.seen.lock().unwrap()[0], serde_json::json!({"task": "hedging", "text": "It may rain."}));

    let c = canned(&[(500, ""), (500, "")]);
    assert!(matches!(scorer(&c, 2).score_sentence("x"), Err(CritiqueError::ScorerUnavailable(_))));
    let c = canned(&[(200, r#"{"score": 3}"#)]);
    assert!(EntailmentScorer::score(&scorer(&c, 1), "a", "b").is_err());
}

const WORDS: [&str; 16] = [
    "cat", "bird", "worm", "tree", "river", "stone", "cloud", "rain", "sun", "wing", "nest", "seed", "wind", "leaf", "fox", "grass",
];

fn sentence() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(&WORDS[..]), 1..7).prop_map(|w| {
        let mut s = w.join(" ");
        s[..1].make_ascii_uppercase();
        s + "."
    })
}

fn conditional() -> impl Strategy<Value = String> {
    (prop::collection::vec(prop::sample::select(&WORDS[..]), 1..5), prop::collection::vec(prop::sample::select(&WORDS[..]), 1..5))
        .prop_map(|(a, b)| format!("If the {}, then the {}.", a.join(" "), b.join(" ")))
}

fn sentences() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop_oneof![sentence(), conditional()], 1..6)
}

fn scores() -> impl Strategy<Value = Vec<SoftScores>> {
    prop::collection::vec(
        (-1.0f64..1.0, 0usize..10, 0.0f64..3.0).prop_map(|(c, p, u)| SoftScores::new(c, p, u)),
        2..6,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn parsimony_zero_on_subset_vocabulary(problem in sentences(), pick in prop::collection::vec(any::<prop::sample::Index>(), 1..8)) {
        let p = NliProblem::new("p", None, problem.join(" "));
        let vocab: Vec<&str> = problem.iter().flat_map(|s| s.split(|c: char| !c.is_alphanumeric())).filter(|w| !w.is_empty()).collect();
        let words: Vec<String> = pick.iter().map(|i| vocab[i.index(vocab.len())].to_uppercase()).collect();
        let e = Explanation::from_text(&(words.join(", ") + "!"));
        prop_assert_eq!(parsimony(&p, &e), 0);
    }

    #[test]
    fn uncertainty_zero_without_hedges(s in sentences()) {
        prop_assert_eq!(uncertainty(&Explanation::new(s)), 0.0);
    }

    #[test]
    fn coherence_in_unit_interval(s in sentences()) {
        let c = coherence(&Explanation::new(s), &LexicalEntailment).unwrap().score;
        prop_assert!((0.0..=1.0).contains(&c));
    }

    #[test]
    fn scores_invariant_under_reordering(s in sentences(), hedged in prop::collection::vec(any::<bool>(), 6), seed in any::<u64>()) {
        let mut s: Vec<String> = s.into_iter().zip(&hedged).map(|(x, h)| if *h { x.replace("the", "perhaps the") } else { x }).collect();
        let p = NliProblem::new("p", None, "cat bird tree");
        let a = Explanation::new(s.clone());
        use rand::{seq::SliceRandom, SeedableRng};
        s.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let b = Explanation::new(s);
        let ca = coherence(&a, &LexicalEntailment).unwrap().score;
        let cb = coherence(&b, &LexicalEntailment).unwrap().score;
        prop_assert!((ca - cb).abs() < 1e-12);
        prop_assert_eq!(uncertainty(&a), uncertainty(&b));
        prop_assert_eq!(parsimony(&p, &a), parsimony(&p, &b));
    }

    #[test]
    fn parsimony_monotone_under_append(problem in sentence(), s in sentences(), extra in prop_oneof![sentence(), conditional()]) {
        let p = NliProblem::new("p", None, problem);
        let mut e = Explanation::new(s);
        let before = parsimony(&p, &e);
        e.push(extra);
        prop_assert!(parsimony(&p, &e) >= before);
    }

    #[test]
    fn ibe_invariant_under_monotone_transform(c in scores(), which in 0..3usize, shift in -5.0f64..5.0, scale in 0.1f64..10.0) {
        let base = ibe_select(&c).unwrap();
        let t: Vec<SoftScores> = c.iter().map(|s| match which {
            0 => SoftScores::new(s.coherence * scale + shift, s.parsimony, s.uncertainty),
            1 => SoftScores::new(s.coherence, s.parsimony * 3 + 1, s.uncertainty),
            _ => SoftScores::new(s.coherence, s.parsimony, (s.uncertainty * scale).exp()),
        }).collect();
        let after = ibe_select(&t).unwrap();
        prop_assert_eq!(base.selected, after.selected);
        prop_assert_eq!(base.tally, after.tally);
    }

    #[test]
    fn ibe_total_and_deterministic(c in scores()) {
        let a = ibe_select(&c).unwrap();
        prop_assert!(a.selected < c.len());
        prop_assert_eq!(a.tally.iter().sum::<usize>(), 3);
        prop_assert_eq!(a, ibe_select(&c).unwrap());
    }
}
