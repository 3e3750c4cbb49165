use std::collections::{HashMap, HashSet};

use peirce::kb::Statement;
use peirce::retrieval::*;
use proptest::prelude::*;

// Direct Okapi evaluation, kept separate from the index code.
fn okapi(docs: &[&str], query: &str, k1: f64, b: f64) -> Vec<f64> {
    let toks: Vec<Vec<String>> = docs
        .iter()
        .map(|d| {
            d.to_lowercase()
                .split(|c: char| !c.is_alphanumeric())
                .filter(|t| t.len() >= 2)
                .map(String::from)
                .collect()
        })
        .collect();
    let n = docs.len() as f64;
    let avg = toks.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let q: Vec<String> = query.split_whitespace().map(|s| s.to_lowercase()).collect();
    toks.iter()
        .map(|d| {
            q.iter()
                .map(|t| {
                    let df = toks.iter().filter(|x| x.contains(t)).count() as f64;
                    let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
                    let tf = d.iter().filter(|x| *x == t).count() as f64;
                    idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * d.len() as f64 / avg))
                })
                .sum()
        })
        .collect()
}

fn ids(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn gold(pairs: &[(&str, &[&str])]) -> HashMap<String, HashSet<String>> {
    pairs
        .iter()
        .map(|(q, g)| (q.to_string(), g.iter().map(|s| s.to_string()).collect()))
        .collect()
}

/// Fixed-score model for ensemble tests.
struct Fixed {
    name: String,
    ids: Vec<String>,
    scores: Vec<f64>,
}

impl RetrievalModel for Fixed {
    fn name(&self) -> &str {
        &self.name
    }
    fn statement_ids(&self) -> &[String] {
        &self.ids
    }
    fn score(&self, _: &str) -> Result<Vec<f64>, RetrievalError> {
        Ok(self.scores.clone())
    }
}

fn fixed(name: &str, ids: &[String], scores: Vec<f64>) -> Box<dyn RetrievalModel> {
    Box::new(Fixed {
        name: name.into(),
        ids: ids.to_vec(),
        scores,
    })
}

#[test]
fn bm25_three_document_corpus() {
    let docs = ["two sets set difference", "cats chase birds", "sets union intersection"];
    let idx = Bm25Index::build(
        [("D1", docs[0]), ("D2", docs[1]), ("D3", docs[2])],
        Bm25Params::default(),
    )
    .unwrap();
    let expected = okapi(&docs, "set difference", 1.2, 0.75);
    let got = idx.scores("set difference");
    for (g, e) in got.iter().zip(&expected) {
        assert!((g - e).abs() < 1e-12, "{got:?} vs {expected:?}");
    }
    let r = &bm25_query(&idx, &[Query::new("q", "set difference")]).unwrap()[0];
    assert_eq!(r.scored[0].0, "D1");
    assert_eq!(got[1], 0.0);
    assert_eq!(got[2], 0.0);
}

fn training_corpus() -> (Vec<Statement>, Vec<TrainingProblem>) {
    let facts = ["f", "g", "h", "k"].map(|id| Statement::new(id, id));
    let tp = |text: &str, gold: &[&str]| TrainingProblem {
        text: text.into(),
        gold_ids: ids(gold),
    };
    let training = vec![
        tp("metal spoon conducts heat", &["f", "g"]),
        tp("metal pan conducts heat quickly", &["f", "h"]),
        tp("plants need sunlight to grow", &["k"]),
        tp("animals eat plants for energy", &["g"]),
    ];
    (facts.to_vec(), training)
}

#[test]
fn unification_score_is_similarity_weighted_gold_count() {
    let (facts, training) = training_corpus();
    let mut m = UnificationModel::new(&facts, Bm25Params::default());
    m.fit(&training).unwrap();
    let q = "does a metal pot conduct heat";
    let sims = Bm25Index::build(
        training.iter().enumerate().map(|(i, t)| (i.to_string(), t.text.clone())),
        Bm25Params::default(),
    )
    .unwrap()
    .scores(q);
    let scores = m.score(q).unwrap();
    for (fi, f) in ["f", "g", "h", "k"].iter().enumerate() {
        let oracle: f64 = training
            .iter()
            .zip(&sims)
            .filter(|(t, _)| t.gold_ids.iter().any(|g| g == f))
            .map(|(_, s)| s)
            .sum();
        assert!((scores[fi] - oracle).abs() < 1e-12);
    }
    // f explains both metal problems; h and k each explain one.
    let r = &unification_query(&m, &[Query::new("q", q)]).unwrap()[0];
    assert_eq!(r.scored[0].0, "f");
    assert!(scores[0] > scores[2] && scores[0] > scores[3]);
}

#[test]
fn unification_identical_query_tops_its_unique_fact() {
    let (facts, training) = training_corpus();
    let mut m = UnificationModel::new(&facts, Bm25Params::default());
    m.fit(&training).unwrap();
    let scores = m.score("plants need sunlight to grow").unwrap();
    // k is the only fact unique to a single explanation besides h.
    assert!(scores[3] > scores[2]);
}

#[test]
fn ensemble_hand_case() {
    let docs = ids(&["A", "B"]);
    let e = EnsembleModel::new(
        vec![fixed("m1", &docs, vec![2.0, 0.0]), fixed("m2", &docs, vec![0.0, 1.0])],
        DEFAULT_ENSEMBLE_WEIGHTS.to_vec(),
    )
    .unwrap();
    let r = &ensemble_query(&e, &[Query::new("q", "")]).unwrap()[0];
    assert_eq!(r.scored[0].0, "A");
    assert!((r.scored[0].1 - 0.8).abs() < 1e-12);
    assert!((r.scored[1].1 - 0.2).abs() < 1e-12);
}

#[test]
fn ap_and_map_closed_forms() {
    let corpus = ids(&["a", "b", "g", "c"]);
    let r = Ranking::from_scores("q1", "m", &corpus, &[4.0, 3.0, 2.0, 1.0]);
    let ap = evaluate_map(std::slice::from_ref(&r), &gold(&[("q1", &["g"])])).unwrap();
    assert!((ap - 1.0 / 3.0).abs() < 1e-9);

    let perfect = Ranking::from_scores("q1", "m", &corpus, &[1.0, 2.0, 3.0, 0.0]);
    let half = Ranking::from_scores("q2", "m", &corpus, &[4.0, 3.0, 0.0, 0.0]);
    let g = gold(&[("q1", &["g", "b"]), ("q2", &["b"])]);
    let map = evaluate_map(&[perfect, half], &g).unwrap();
    assert!((map - 0.75).abs() < 1e-9);
}

fn order(r: &Ranking) -> Vec<String> {
    r.ids().map(String::from).collect()
}

const VOCAB: [&str; 6] = ["alpha", "beta", "gamma", "delta", "eps", "zeta"];

fn docs_strategy() -> impl Strategy<Value = Vec<Vec<usize>>> {
    prop::collection::vec(prop::collection::vec(0..VOCAB.len(), 0..8), 1..7)
}

fn text(words: &[usize]) -> String {
    words.iter().map(|&w| VOCAB[w]).collect::<Vec<_>>().join(" ")
}

fn index(docs: &[Vec<usize>]) -> Bm25Index {
    Bm25Index::build(
        docs.iter().enumerate().map(|(i, d)| (format!("d{i}"), text(d))),
        Bm25Params::default(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn bm25_monotone_in_query_term(docs in docs_strategy(), pick in any::<prop::sample::Index>(), term in 0..3usize) {
        // Query terms come from the first three words, fillers from the rest.
        let query = "alpha beta gamma";
        let d = pick.index(docs.len());
        let before = index(&docs).query(&[Query::new("q", query)]).unwrap().remove(0);
        let mut grown = docs.clone();
        grown[d].push(term);
        for (i, other) in grown.iter_mut().enumerate() {
            if i != d {
                other.push(5);
            }
        }
        let after = index(&grown).query(&[Query::new("q", query)]).unwrap().remove(0);
        let id = format!("d{d}");
        let rank = |r: &Ranking| r.ids().position(|x| x == id).unwrap();
        prop_assert!(rank(&after) <= rank(&before), "{:?} -> {:?}", before, after);
    }

    #[test]
    fn single_model_ensemble_is_identity(docs in docs_strategy(), q in prop::collection::vec(0..6usize, 1..4)) {
        let idx = index(&docs);
        let query = [Query::new("q", text(&q))];
        let base = idx.query(&query).unwrap().remove(0);
        let e = EnsembleModel::new(vec![Box::new(idx.clone())], vec![1.0]).unwrap();
        prop_assert_eq!(order(&e.query(&query).unwrap()[0]), order(&base));
        let e2 = EnsembleModel::new(vec![Box::new(idx.clone()), Box::new(idx.clone().named("other"))], vec![1.0, 0.0]).unwrap();
        prop_assert_eq!(order(&e2.query(&query).unwrap()[0]), order(&base));
    }

    #[test]
    fn ensemble_invariant_to_positive_rescaling(
        a in prop::collection::vec(0u8..10, 2..8),
        scale in 0.01f64..100.0,
        w in 0.1f64..1.0,
    ) {
        let n = a.len();
        let corpus: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
        let s1: Vec<f64> = a.iter().map(|&x| x as f64).collect();
        let s2: Vec<f64> = (0..n).map(|i| ((i * 7) % 5) as f64).collect();
        let q = [Query::new("q", "")];
        let e = EnsembleModel::new(vec![fixed("a", &corpus, s1.clone()), fixed("b", &corpus, s2.clone())], vec![w, 1.0 - w]).unwrap();
        let scaled: Vec<f64> = s1.iter().map(|x| x * scale).collect();
        let e2 = EnsembleModel::new(vec![fixed("a", &corpus, scaled), fixed("b", &corpus, s2)], vec![w, 1.0 - w]).unwrap();
        let r1 = e.query(&q).unwrap().remove(0);
        let r2 = e2.query(&q).unwrap().remove(0);
        prop_assert_eq!(order(&r1), order(&r2));
    }

    #[test]
    fn map_bounds_and_perfect_iff_gold_first(
        scores in prop::collection::vec(0u8..5, 1..8),
        gold_mask in prop::collection::vec(any::<bool>(), 8),
    ) {
        let n = scores.len();
        let corpus: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
        let g: HashSet<String> = (0..n).filter(|&i| gold_mask[i]).map(|i| corpus[i].clone()).collect();
        prop_assume!(!g.is_empty());
        let s: Vec<f64> = scores.iter().map(|&x| x as f64).collect();
        let r = Ranking::from_scores("q", "m", &corpus, &s);
        let mut gm = HashMap::new();
        gm.insert("q".to_string(), g.clone());
        let map = evaluate_map(std::slice::from_ref(&r), &gm).unwrap();
        prop_assert!((0.0..=1.0).contains(&map));
        let first_non_gold = r.ids().position(|id| !g.contains(id)).unwrap_or(n);
        let last_gold = r.scored.iter().rposition(|(id, _)| g.contains(id)).unwrap();
        prop_assert_eq!(map == 1.0, last_gold < first_non_gold);
    }

    #[test]
    fn ranking_sorted_with_corpus_order_ties(scores in prop::collection::vec(0u8..4, 1..10)) {
        let corpus: Vec<String> = (0..scores.len()).map(|i| format!("{i:02}")).collect();
        let s: Vec<f64> = scores.iter().map(|&x| x as f64).collect();
        let r = Ranking::from_scores("q", "m", &corpus, &s);
        for w in r.scored.windows(2) {
            prop_assert!(w[0].1 > w[1].1 || (w[0].1 == w[1].1 && w[0].0 < w[1].0));
        }
    }
}
