mod common;

use common::*;

use dop_core::disambiguate::{
    most_probable_derivation, most_probable_interpretation, parse_distribution, report, tree_probability, Estimator,
    Mode, SampleConfig,
};
use dop_core::fragments::extract;
use dop_core::parser::build_forest;
use dop_core::treebank::corpus_from_str;

fn exact() -> SampleConfig {
    SampleConfig {
        estimator: Estimator::Exact,
        ..SampleConfig::default()
    }
}

#[test]
fn sampling_is_unbiased_and_modal_outputs_match() {
    criteria::monte_carlo().unwrap();
}

#[test]
fn rebracketed_parses_merge_into_one_interpretation() {
    criteria::equivalence_merging().unwrap();
}

#[test]
fn interpretation_is_the_existential_conjunction() {
    criteria::semantics_correctness().unwrap();
}

#[test]
fn exact_parse_distribution_matches_enumeration() {
    for name in criteria::FIXTURES {
        let c = load(name);
        let b = extract(&c, criteria::DEFAULT_DEPTH).unwrap();
        for t in &c.trees {
            let oracle = enumerate_by_composition(&b, &t.sentence);
            let total: f64 = oracle.iter().map(|d| d.prob).sum();
            let parses = parse_probabilities(&oracle);
            let forest = build_forest(&b, &t.sentence).unwrap();
            let dist = parse_distribution(&forest, &exact()).unwrap();
            assert_eq!(dist.entries.len(), parses.len());
            let probs = parses.iter().map(|(k, v)| (k.clone(), v.0)).collect();
            assert_eq!(dist.entries[0].key, argmax(&probs), "{name} {:?}", t.sentence);
            for e in &dist.entries {
                let want = parses[&e.key].0 / total;
                assert!((e.estimate - want).abs() <= 1e-12, "{name}: {} vs {want}", e.estimate);
            }

            let (_, a, lp) = most_probable_derivation(&forest).unwrap();
            let tp = tree_probability(&b, &a.tree);
            assert!(
                lp <= tp.log_prob + 1e-12 && tp.log_prob <= 1e-12,
                "{name}: {lp} {}",
                tp.log_prob
            );
            assert!((tp.log_prob.exp() - parses[&tree_key(&a.tree)].0).abs() <= 1e-12);
        }
    }
}

#[test]
fn interpretations_ignore_variable_names_and_conjunct_order() {
    let text = std::fs::read_to_string(fixture("two_sentence.jsonl")).unwrap();
    let perturbed = text
        .replace(
            "lambda P:<e,t>. lambda Q:<e,t>. exists x:e. (and (P x) (Q x))",
            "lambda R:<e,t>. lambda S:<e,t>. exists z:e. (and (S z) (R z))",
        )
        .replace(
            "lambda P:<e,t>. lambda Q:<e,t>. forall x:e. (implies (P x) (Q x))",
            "lambda A:<e,t>. lambda B:<e,t>. forall y:e. (implies (A y) (B y))",
        );
    assert_ne!(text, perturbed);
    let summarize = |text: &str| {
        let c = corpus_from_str(text, signature()).unwrap();
        let b = extract(&c, criteria::DEFAULT_DEPTH).unwrap();
        let f = build_forest(&b, &words("a woman whistles")).unwrap();
        most_probable_interpretation(&f, &exact())
            .unwrap()
            .entries
            .iter()
            .map(|e| (e.formula.as_ref().unwrap().to_string(), e.estimate, e.support))
            .collect::<Vec<_>>()
    };
    let (a, b) = (summarize(&text), summarize(&perturbed));
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.0, y.0);
        assert_eq!(x.2, y.2);
        assert!((x.1 - y.1).abs() <= 1e-12);
    }
}

#[test]
fn reports_are_bit_stable_and_carry_metadata() {
    let b = extract(&load("toy_quantifier"), 4).unwrap();
    let f = build_forest(&b, &words("every woman whistles")).unwrap();
    let cfg = SampleConfig {
        n_samples: 2000,
        seed: 5,
        jobs: 3,
        estimator: Estimator::Sample,
    };
    for mode in [Mode::Mpd, Mode::Mpp, Mode::Mpi] {
        let r = report(&f, mode, &cfg).unwrap();
        assert_eq!(r.to_string(), report(&f, mode, &cfg).unwrap().to_string());
        assert!(r["analyses"][0]["topSem"].is_string());
        if mode != Mode::Mpd {
            assert_eq!(r["seed"], 5);
            assert_eq!(r["nSamples"], 2000);
            assert_eq!(r["estimator"], "sample");
            assert!(r["stderr"].as_f64().unwrap() >= 0.0);
        }
    }
    let auto = report(&f, Mode::Mpp, &SampleConfig::default()).unwrap();
    assert_eq!(auto["estimator"], "exact");
    assert_eq!(auto["stderr"], 0.0);
}
