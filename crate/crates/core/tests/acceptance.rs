//! End-to-end acceptance checks. Runs as a plain binary and prints one
//! PASS/FAIL line per criterion; exits non-zero if any fails.

mod common;

use std::collections::{HashMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use peirce::cli::{GeneratorKind, PipelineConfig};
use peirce::critique::soft::*;
use peirce::generation::ReplayModel;
use peirce::kb::{load_kb, load_problems, Explanation, NliProblem, FORMAT_JSONL_V1};
use peirce::logic::{parse_theory, pretty_print};
use peirce::prover::{brute_force_entailed, check_proof, prove, HornProver, DEFAULT_HERBRAND_CAP};
use peirce::refine::{CritiqueRegistry, RefinementConfig, RefinementTrace, Refiner};
use peirce::retrieval::*;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(rel)
}

fn refine_fixture(id: &str) -> RefinementTrace {
    let model = Arc::new(ReplayModel::load(fixture("refine_replay.json")).unwrap());
    let registry = CritiqueRegistry::standard(
        model.clone(),
        Arc::new(HornProver::default()),
        Arc::new(LexicalEntailment),
        Arc::new(HedgeLexicon::shipped().clone()),
    );
    let refiner = Refiner::new(model, registry, RefinementConfig::default()).unwrap();
    let problem = load_problems(fixture("refine_problems.jsonl"))
        .unwrap()
        .into_iter()
        .find(|p| p.id == id)
        .unwrap();
    refiner.refine(&problem, None).unwrap()
}

fn validity(t: &RefinementTrace) -> Vec<bool> {
    t.iterations.iter().map(|i| i.is_valid()).collect()
}

fn infant_case_end_to_end() {
    let start = Instant::now();
    let t = refine_fixture("esnli-infant");
    let elapsed = start.elapsed();
    assert_eq!(validity(&t), vec![false, true]);
    assert!(t.final_valid);
    assert!(elapsed < Duration::from_secs(1), "{elapsed:?}");
}

fn trait_and_brca2_cases() {
    for id in ["worldtree-trait", "clinical-brca2"] {
        let t = refine_fixture(id);
        assert_eq!(validity(&t), vec![false, false, true], "{id}");
        assert_eq!(t.stopped_at, 2);
    }
}

fn prover_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut checked = 0;
    while checked < 250 {
        let theory = common::random_theory(&mut rng);
        let verdict = prove(&theory, 50).unwrap();
        if verdict.diagnostics.as_ref().is_some_and(|d| d.depth_limited) {
            continue;
        }
        assert_eq!(verdict.valid, brute_force_entailed(&theory, DEFAULT_HERBRAND_CAP).unwrap(), "{theory}");
        if let Some(p) = &verdict.proof {
            assert!(check_proof(&theory, p).unwrap());
        }
        checked += 1;
    }
    assert!(start.elapsed() < Duration::from_secs(30));
}

fn injected_score_votes() {
    let rows = [
        [SoftScores::new(0.25, 6, 1.03), SoftScores::new(0.09, 9, 2.33)],
        [SoftScores::new(0.06, 1, 1.39), SoftScores::new(-0.05, 2, 1.65)],
    ];
    for row in rows {
        let out = ibe_select(&row).unwrap();
        assert_eq!((out.selected, out.tally), (0, vec![3, 0]));
    }
}

fn retrieval_properties() {
    // Hand case: relevant at ranks 1, 3, 5 of 5, then relevant at rank 2 of 2.
    let ids: Vec<String> = ["a", "b", "c", "d", "e"].map(String::from).to_vec();
    let r1 = Ranking::from_scores("q1", "m", &ids, &[5.0, 4.0, 3.0, 2.0, 1.0]);
    let r2 = Ranking::from_scores("q2", "m", &ids[..2], &[2.0, 1.0]);
    let gold: HashMap<String, HashSet<String>> = [
        ("q1".to_string(), ["a", "c", "e"].map(String::from).into()),
        ("q2".to_string(), ["b"].map(String::from).into()),
    ]
    .into();
    let ap1 = (1.0 + 2.0 / 3.0 + 3.0 / 5.0) / 3.0;
    assert!((average_precision(&r1, &gold["q1"]) - ap1).abs() < 1e-9);
    assert!((evaluate_map(&[r1, r2], &gold).unwrap() - (ap1 + 0.5) / 2.0).abs() < 1e-9);

    let kb = load_kb(fixture("retrieval/kb.jsonl"), FORMAT_JSONL_V1).unwrap();
    let training: Vec<TrainingProblem> = load_problems(fixture("retrieval/train.jsonl"))
        .unwrap()
        .into_iter()
        .map(|p| TrainingProblem {
            text: p.query_text(),
            gold_ids: p.gold_premise_ids.unwrap(),
        })
        .collect();
    let queries: Vec<Query> = load_problems(fixture("retrieval/queries.jsonl"))
        .unwrap()
        .iter()
        .map(|p| Query::new(p.id.clone(), p.query_text()))
        .collect();
    let gold = load_gold(fixture("retrieval/gold.jsonl")).unwrap();
    let members = || -> Vec<Box<dyn RetrievalModel>> {
        let bm25 = Bm25Index::from_statements(kb.statements(), Bm25Params::default()).unwrap();
        let mut unif = UnificationModel::new(kb.statements(), Bm25Params::default());
        unif.fit(&training).unwrap();
        vec![Box::new(bm25), Box::new(unif)]
    };
    let m = members();
    let component: Vec<Vec<Ranking>> = m.iter().map(|x| x.query(&queries).unwrap()).collect();

    let identity = EnsembleModel::new(members(), vec![1.0, 0.0]).unwrap().query(&queries).unwrap();
    for (a, b) in identity.iter().zip(&component[0]) {
        assert_eq!(a.ids().collect::<Vec<_>>(), b.ids().collect::<Vec<_>>());
    }

    let ensemble = EnsembleModel::new(members(), DEFAULT_ENSEMBLE_WEIGHTS.to_vec()).unwrap().query(&queries).unwrap();
    let best = component.iter().map(|r| evaluate_map(r, &gold).unwrap()).fold(0.0, f64::max);
    let ens = evaluate_map(&ensemble, &gold).unwrap();
    assert!(ens >= best, "ensemble {ens} < best component {best}");
}

const WORDS: [&str; 12] = ["cat", "bird", "worm", "tree", "river", "stone", "rain", "sun", "nest", "seed", "fox", "grass"];

fn sentence() -> impl Strategy<Value = String> {
    prop_oneof![
        prop::collection::vec(prop::sample::select(&WORDS[..]), 1..6).prop_map(|w| w.join(" ") + "."),
        (prop::collection::vec(prop::sample::select(&WORDS[..]), 1..4), prop::collection::vec(prop::sample::select(&WORDS[..]), 1..4))
            .prop_map(|(a, b)| format!("If the {}, then the {}.", a.join(" "), b.join(" "))),
    ]
}

fn soft_invariants() {
    let mut runner = TestRunner::new(Config {
        failure_persistence: None,
        ..Config::with_cases(128)
    });
    let sents = || prop::collection::vec(sentence(), 1..6);
    runner
        .run(&(sents(), any::<prop::sample::Index>()), |(s, idx)| {
            let p = NliProblem::new("p", None, s.join(" "));
            let words: Vec<&str> = s.iter().flat_map(|x| x.split(|c: char| !c.is_alphanumeric())).filter(|w| !w.is_empty()).collect();
            let e = Explanation::from_text(&format!("{}.", words[idx.index(words.len())]));
            prop_assert_eq!(parsimony(&p, &e), 0);
            let e = Explanation::new(s.clone());
            prop_assert_eq!(uncertainty(&e), 0.0);
            let c = coherence(&e, &LexicalEntailment).unwrap().score;
            prop_assert!((0.0..=1.0).contains(&c));
            Ok(())
        })
        .unwrap();
    runner
        .run(&(sents(), sentence()), |(s, extra)| {
            let p = NliProblem::new("p", None, "cat bird");
            let mut rev = s.clone();
            rev.reverse();
            let (a, b) = (Explanation::new(s.clone()), Explanation::new(rev));
            let diff = coherence(&a, &LexicalEntailment).unwrap().score - coherence(&b, &LexicalEntailment).unwrap().score;
            prop_assert!(diff.abs() < 1e-12);
            prop_assert_eq!(parsimony(&p, &a), parsimony(&p, &b));
            prop_assert_eq!(uncertainty(&a), uncertainty(&b));
            let mut longer = a.clone();
            longer.push(extra);
            prop_assert!(parsimony(&p, &longer) >= parsimony(&p, &a));
            Ok(())
        })
        .unwrap();
}

fn parser_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..256 {
        let t = common::random_theory(&mut rng);
        let text = pretty_print(&t);
        assert_eq!(parse_theory(&text).unwrap(), t, "{text}");
    }
}

/// Runs the CLI over the shipped fixtures into `out`, offline.
fn cli_run(out: &Path) -> Vec<(String, Vec<u8>)> {
    let cfg = fixture("refine.toml");
    let f = |p: &str| fixture(p).to_string_lossy().into_owned();
    let steps = [
        vec!["refine".to_string(), f("refine_problems.jsonl")],
        vec!["critique".into(), "hard".into(), f("critique.jsonl")],
        vec!["critique".into(), "soft".into(), f("critique.jsonl")],
        vec!["ibe".into(), f("ibe/cat_bird_scores.jsonl")],
    ];
    for s in steps {
        let status = Command::new(env!("CARGO_BIN_EXE_peirce"))
            .args(["--seed", "0", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(out)
            .args(&s)
            .env_remove("PEIRCE_API_KEY")
            .env("HTTP_PROXY", "http://127.0.0.1:9")
            .env("HTTPS_PROXY", "http://127.0.0.1:9")
            .output()
            .unwrap();
        assert!(status.status.success(), "{s:?}: {}", String::from_utf8_lossy(&status.stderr));
    }
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn determinism() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (x, y) = (cli_run(a.path()), cli_run(b.path()));
    assert_eq!(x.len(), 4);
    assert!(x == y, "JSONL outputs differ between runs");
}

fn hermetic(total: Duration) {
    let cfg = PipelineConfig::load(&fixture("refine.toml")).unwrap();
    assert_eq!(cfg.generator.kind, GeneratorKind::Replay);
    assert!(cfg.scorers.entailment_url.is_none() && cfg.scorers.hedging_url.is_none());
    assert!(cfg.prover.command.is_empty());
    assert!(total < Duration::from_secs(120), "{total:?}");
}

type Criterion = (&'static str, Box<dyn Fn()>);

fn main() {
    let start = Instant::now();
    let criteria: Vec<Criterion> = vec![
        ("e-SNLI infant case verifies at iteration 1", Box::new(infant_case_end_to_end)),
        ("learned-trait and BRCA2 cases verify at iteration 2", Box::new(trait_and_brca2_cases)),
        ("prover agrees with forward chaining on random theories", Box::new(prover_oracle)),
        ("injected cat-and-bird scores select explanation 1 by 3-0", Box::new(injected_score_votes)),
        ("retrieval MAP hand cases, identity weights, ensemble gain", Box::new(retrieval_properties)),
        ("soft-critique invariants", Box::new(soft_invariants)),
        ("parser round trip", Box::new(parser_round_trip)),
        ("byte-identical CLI outputs across runs", Box::new(determinism)),
    ];
    std::panic::set_hook(Box::new(|info| eprintln!("  {info}")));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let ok = catch_unwind(AssertUnwindSafe(check)).is_ok();
        failed += usize::from(!ok);
        println!("criterion {}: {} {name}", i + 1, if ok { "PASS" } else { "FAIL" });
    }
    let total = start.elapsed();
    let ok = catch_unwind(AssertUnwindSafe(|| hermetic(total))).is_ok();
    failed += usize::from(!ok);
    println!("criterion 9: {} offline run in {:.1}s", if ok { "PASS" } else { "FAIL" }, total.as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
