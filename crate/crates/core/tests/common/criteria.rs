//! One check per acceptance criterion. Each returns a short summary on
//! success and a diagnostic on failure.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use dop_core::disambiguate::{
    most_probable_interpretation, most_probable_parse, parse_distribution, sample_many, tree_probability, Estimator,
    Mode, SampleConfig,
};
use dop_core::evalharness::{evaluate, gold_top_semantics, split, CategoryCounts, EvalOptions};
use dop_core::fragments::{extract, extract_syntactic, FragmentBank};
use dop_core::parser::build_forest;
use dop_core::semalgebra::{equivalent, normalize, parse_term_str, type_of, SemType};
use dop_core::suggest::SuggestionModel;
use dop_core::treebank::{validate_tree, AnnotatedTree, Corpus, NodePath, Strictness};

use super::*;

pub type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)*) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($fmt)*));
        }
    };
}

pub const FIXTURES: &[&str] = &[
    "toy_quantifier",
    "toy_relational",
    "two_sentence",
    "bracketing",
    "typegate",
    "two_derivations",
    "five_derivations",
];

pub const DEFAULT_DEPTH: usize = 10;

fn bank(name: &str, depth: usize) -> Result<FragmentBank, String> {
    extract(&load(name), depth).map_err(|e| format!("{name}: {e}"))
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs())
}

fn distinct_sentences(c: &Corpus) -> Vec<Vec<String>> {
    let mut v: Vec<Vec<String>> = c.trees.iter().map(|t| t.sentence.clone()).collect();
    v.sort();
    v.dedup();
    v
}

pub fn fragment_bank_oracle() -> Outcome {
    let start = Instant::now();
    let mut keys = 0;
    for name in ["toy_quantifier", "toy_relational"] {
        let c = load(name);
        ensure!(c.trees.len() >= 8, "{name} has {} trees", c.trees.len());
        for depth in 1..=4 {
            let got = bank_counts(&extract(&c, depth).map_err(|e| e.to_string())?);
            let want = brute_force_counts(&c, depth);
            if got != want {
                let missing: Vec<&String> = want.keys().filter(|k| !got.contains_key(*k)).take(3).collect();
                let extra: Vec<&String> = got.keys().filter(|k| !want.contains_key(*k)).take(3).collect();
                let off: Vec<&String> = got
                    .keys()
                    .filter(|k| want.get(*k).is_some_and(|w| w != &got[*k]))
                    .take(3)
                    .collect();
                return Err(format!(
                    "{name} depth {depth}: missing {missing:?}, extra {extra:?}, miscounted {off:?}"
                ));
            }
            keys += got.len();
        }
    }
    let elapsed = start.elapsed();
    ensure!(elapsed.as_secs_f64() < 5.0, "took {elapsed:.2?}");
    Ok(format!("{keys} keys over 8 banks in {elapsed:.2?}"))
}

pub fn probability_normalization() -> Outcome {
    let mut banks = 0;
    for name in FIXTURES {
        let c = load(name);
        for depth in [1, 2, 3, 4, DEFAULT_DEPTH] {
            for b in [extract(&c, depth), extract_syntactic(&c, depth)] {
                let b = b.map_err(|e| format!("{name}: {e}"))?;
                let mut sums: BTreeMap<&str, f64> = BTreeMap::new();
                for id in 0..b.len() {
                    *sums.entry(b.fragment(id).cat()).or_insert(0.0) += b.prob(id);
                }
                for (cat, s) in sums {
                    ensure!((s - 1.0).abs() <= 1e-12, "{name} depth {depth} category {cat}: sum {s}");
                }
                banks += 1;
            }
        }
    }
    Ok(format!("{banks} banks"))
}

pub fn derivation_sum() -> Outcome {
    let mut sentences = 0;
    let mut derivations = 0;
    for name in FIXTURES {
        let c = load(name);
        let b = bank(name, DEFAULT_DEPTH)?;
        for s in distinct_sentences(&c) {
            let oracle = enumerate_by_composition(&b, &s);
            let forest = build_forest(&b, &s).map_err(|e| format!("{name} {s:?}: {e}"))?;
            let total: f64 = oracle.iter().map(|d| d.prob).sum();
            ensure!(
                rel_close(forest.inside_log(), total.ln(), 1e-9),
                "{name} {s:?}: inside {} vs oracle {}",
                forest.inside_log(),
                total.ln()
            );
            ensure!(
                forest.derivation_count() == oracle.len() as u128,
                "{name} {s:?}: {} derivations vs oracle {}",
                forest.derivation_count(),
                oracle.len()
            );
            let mut listed: Vec<Vec<usize>> = forest
                .enumerate(ENUMERATION_CAP)
                .into_iter()
                .map(|(d, _)| d.fragments)
                .collect();
            listed.sort();
            let want: Vec<Vec<usize>> = oracle.iter().map(|d| d.fragments.clone()).collect();
            ensure!(
                listed == want,
                "{name} {s:?}: enumerated derivations differ from oracle"
            );
            sentences += 1;
            derivations += oracle.len();
        }
    }
    Ok(format!("{sentences} sentences, {derivations} derivations"))
}

pub fn multiple_derivations() -> Outcome {
    let b = bank("two_sentence", DEFAULT_DEPTH)?;
    let s = words("a woman whistles");
    let oracle = enumerate_by_composition(&b, &s);
    let parses = parse_probabilities(&oracle);
    let mut best = None;
    for (key, (p, tree, _)) in &parses {
        let n = oracle.iter().filter(|d| &tree_key(&d.tree) == key).count();
        if n >= 3 {
            best = Some((tree.clone(), *p, n));
        }
    }
    let (tree, p, n) = best.ok_or("no parse tree with three or more derivations")?;
    let tp = tree_probability(&b, &tree);
    ensure!(
        tp.n_derivations == n as u128,
        "tree DP counts {} derivations, oracle {n}",
        tp.n_derivations
    );
    ensure!(
        rel_close(tp.log_prob.exp(), p, 1e-12),
        "tree probability {} vs oracle {p}",
        tp.log_prob.exp()
    );
    Ok(format!("{n} derivations of one tree, P = {p:.6}"))
}

pub const EXPECTED_A_WOMAN_WHISTLES: &str = "(exists _1:e. (and (whistle _1) (woman _1)))";

pub fn semantics_correctness() -> Outcome {
    let sig = signature();
    let b = bank("two_sentence", DEFAULT_DEPTH)?;
    let forest = build_forest(&b, &words("a woman whistles")).map_err(|e| e.to_string())?;
    let cfg = SampleConfig {
        estimator: Estimator::Exact,
        ..SampleConfig::default()
    };
    let mpi = most_probable_interpretation(&forest, &cfg).map_err(|e| e.to_string())?;
    let top = mpi.entries[0]
        .formula
        .clone()
        .ok_or("top interpretation has no formula")?;
    let hand = parse_term_str("exists y:e. (and (woman y) (whistle y))", &sig).map_err(|e| e.to_string())?;
    ensure!(
        equivalent(&top, &hand),
        "top interpretation {top} is not equivalent to {hand}"
    );
    ensure!(top.to_string() == EXPECTED_A_WOMAN_WHISTLES, "canonical form {top}");

    let mut checked = 0;
    for name in FIXTURES {
        let c = load(name);
        let b = bank(name, DEFAULT_DEPTH)?;
        for s in distinct_sentences(&c) {
            let forest = build_forest(&b, &s).map_err(|e| format!("{name} {s:?}: {e}"))?;
            let mut by_tree: BTreeMap<String, String> = BTreeMap::new();
            for (d, _) in forest.enumerate(ENUMERATION_CAP) {
                let a = d.analysis(&b).map_err(|e| format!("{name} {s:?}: {e}"))?;
                let direct = d.tree(&b).map_err(|e| e.to_string())?;
                ensure!(a.tree == direct, "{name} {s:?}: composed tree differs from direct tree");
                let sem = a.top_sem.as_ref().map(|t| normalize(t).to_string()).unwrap_or_default();
                let prev = by_tree.entry(tree_key(&a.tree)).or_insert_with(|| sem.clone());
                ensure!(
                    *prev == sem,
                    "{name} {s:?}: derivations of one tree disagree: {prev} vs {sem}"
                );
                checked += 1;
            }
        }
    }
    Ok(format!("{top}; {checked} derivations agree per tree"))
}

fn chi_square(counts: &BTreeMap<Vec<usize>, usize>, expected: &[(Vec<usize>, f64)], n: usize) -> Result<f64, String> {
    for k in counts.keys() {
        ensure!(
            expected.iter().any(|(e, _)| e == k),
            "sampled derivation {k:?} is not in the oracle set"
        );
    }
    Ok(expected
        .iter()
        .map(|(k, p)| {
            let e = p * n as f64;
            let o = *counts.get(k).unwrap_or(&0) as f64;
            (o - e).powi(2) / e
        })
        .sum())
}

pub const MC_SAMPLES: usize = 10_000;
pub const MC_SEED: u64 = 20_240_601;

pub fn monte_carlo() -> Outcome {
    let start = Instant::now();
    let mut notes = Vec::new();
    for (name, expected_derivations) in [("two_derivations", 2), ("five_derivations", 5)] {
        let b = bank(name, DEFAULT_DEPTH)?;
        let s = words("w");
        let oracle = enumerate_by_composition(&b, &s);
        ensure!(
            oracle.len() == expected_derivations,
            "{name}: oracle found {} derivations",
            oracle.len()
        );
        let total: f64 = oracle.iter().map(|d| d.prob).sum();
        let expected: Vec<(Vec<usize>, f64)> = oracle.iter().map(|d| (d.fragments.clone(), d.prob / total)).collect();
        let forest = build_forest(&b, &s).map_err(|e| e.to_string())?;
        for jobs in [1, 4] {
            let mut counts = BTreeMap::new();
            for d in sample_many(&forest, MC_SAMPLES, MC_SEED, jobs) {
                *counts.entry(d.fragments).or_insert(0) += 1;
            }
            let stat = chi_square(&counts, &expected, MC_SAMPLES)?;
            let df = (expected.len() - 1) as f64;
            let critical = ChiSquared::new(df).unwrap().inverse_cdf(0.999);
            ensure!(
                stat < critical,
                "{name} jobs={jobs}: chi-square {stat:.3} ≥ {critical:.3}"
            );
            notes.push(format!("{name}/{jobs}: {stat:.2}<{critical:.2}"));
        }

        let parses = parse_probabilities(&oracle);
        let parse_probs: BTreeMap<String, f64> = parses.iter().map(|(k, v)| (k.clone(), v.0)).collect();
        let want_tree = argmax(&parse_probs);
        let want_interp = argmax(&interpretation_probabilities(&oracle));
        for estimator in [Estimator::Sample, Estimator::Exact] {
            let cfg = SampleConfig {
                n_samples: MC_SAMPLES,
                seed: MC_SEED,
                jobs: 2,
                estimator,
            };
            let mpp = most_probable_parse(&forest, &cfg).map_err(|e| e.to_string())?;
            ensure!(
                mpp.key == want_tree,
                "{name} {estimator:?}: modal parse {} vs oracle {want_tree}",
                mpp.key
            );
            let mpi = most_probable_interpretation(&forest, &cfg).map_err(|e| e.to_string())?;
            let got = mpi.entries[0]
                .formula
                .as_ref()
                .map(|f| f.to_string())
                .unwrap_or_default();
            ensure!(
                got == want_interp,
                "{name} {estimator:?}: modal interpretation {got} vs oracle {want_interp}"
            );
        }
    }
    let elapsed = start.elapsed();
    ensure!(elapsed.as_secs_f64() < 30.0, "took {elapsed:.2?}");
    Ok(format!("{} in {elapsed:.2?}", notes.join(", ")))
}

pub fn equivalence_merging() -> Outcome {
    let b = bank("bracketing", DEFAULT_DEPTH)?;
    let s = words("a tall man smiles");
    let oracle = enumerate_by_composition(&b, &s);
    let parses = parse_probabilities(&oracle);
    ensure!(
        parses.len() == 2,
        "expected two parse trees, oracle found {}",
        parses.len()
    );
    let brackets: Vec<String> = parses.values().map(|(_, t, _)| bare_bracketing(t)).collect();
    ensure!(brackets[0] != brackets[1], "the two parses share a bracketing");
    let interps = interpretation_probabilities(&oracle);
    ensure!(
        interps.len() == 1,
        "expected one interpretation class, oracle found {}",
        interps.len()
    );
    let merged = *interps.values().next().unwrap();
    let p: Vec<f64> = parses.values().map(|v| v.0).collect();
    ensure!(
        rel_close(merged, p[0] + p[1], 1e-12),
        "class probability {merged} vs parse sum {}",
        p[0] + p[1]
    );
    ensure!(
        merged > p[0] && merged > p[1],
        "class probability does not exceed its members"
    );

    let forest = build_forest(&b, &s).map_err(|e| e.to_string())?;
    let cfg = SampleConfig {
        estimator: Estimator::Exact,
        ..SampleConfig::default()
    };
    let mpi = most_probable_interpretation(&forest, &cfg).map_err(|e| e.to_string())?;
    ensure!(
        mpi.entries.len() == 1 && mpi.entries[0].support == 2,
        "library did not merge the two analyses"
    );
    let total: f64 = oracle.iter().map(|d| d.prob).sum();
    let dist = parse_distribution(&forest, &cfg).map_err(|e| e.to_string())?;
    for e in &dist.entries {
        let want = parses[&e.key].0 / total;
        ensure!(
            rel_close(e.estimate, want, 1e-12),
            "parse estimate {} vs oracle {want}",
            e.estimate
        );
    }
    Ok(format!("P(class) = {merged:.6} = {:.6} + {:.6}", p[0], p[1]))
}

/// Derivations found by category matching alone, ignoring site types.
fn enumerate_by_category(bank: &FragmentBank, sentence: &[String]) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut stack: Vec<(dop_core::treebank::Node, Vec<NodePath>, Vec<usize>)> = Vec::new();
    for (id, e) in bank.entries().iter().enumerate() {
        if bank.start_categories().contains(e.fragment.cat()) {
            let open = e.fragment.sites.iter().map(|s| s.path.clone()).collect();
            stack.push((e.fragment.root.to_node(), open, vec![id]));
        }
    }
    while let Some((tree, open, seq)) = stack.pop() {
        let mut leaves = Vec::new();
        frontier(&tree, &mut leaves);
        if !compatible(&leaves, sentence) {
            continue;
        }
        let Some((site, rest)) = open.split_first() else {
            out.push(seq);
            continue;
        };
        let cat = tree.get(site).unwrap().cat.clone();
        for (id, e) in bank.entries().iter().enumerate() {
            if e.fragment.cat() != cat {
                continue;
            }
            let mut t = tree.clone();
            *t.get_mut(site).unwrap() = e.fragment.root.to_node();
            let mut o: Vec<NodePath> = e
                .fragment
                .sites
                .iter()
                .map(|s| NodePath(site.0.iter().chain(&s.path.0).copied().collect()))
                .collect();
            o.extend(rest.iter().cloned());
            let mut q = seq.clone();
            q.push(id);
            stack.push((t, o, q));
        }
    }
    out
}

pub fn type_gate() -> Outcome {
    let b = bank("typegate", DEFAULT_DEPTH)?;
    let mut notes = Vec::new();
    for s in ["john walks", "a man walks"] {
        let s = words(s);
        let by_cat = enumerate_by_category(&b, &s);
        let ill = by_cat
            .iter()
            .filter(|seq| {
                dop_core::parser::Derivation {
                    fragments: (*seq).clone(),
                }
                .analysis(&b)
                .is_err()
            })
            .count();
        ensure!(ill > 0, "{s:?}: fixture has no type-mismatched fragment pair");
        let forest = build_forest(&b, &s).map_err(|e| e.to_string())?;
        ensure!(
            forest.derivation_count() == (by_cat.len() - ill) as u128,
            "{s:?}: forest has {} derivations, expected {} well-typed",
            forest.derivation_count(),
            by_cat.len() - ill
        );
        ensure!(forest.rejected_links() > 0, "{s:?}: no links rejected");
        for (d, _) in forest.enumerate(ENUMERATION_CAP) {
            let a = d
                .analysis(&b)
                .map_err(|e| format!("{s:?}: ill-typed derivation in forest: {e}"))?;
            let top = a.top_sem.ok_or("missing top semantics")?;
            ensure!(
                type_of(&top).ok() == Some(SemType::T),
                "{s:?}: top formula {top} is not of type t"
            );
        }
        notes.push(format!("{}: {ill} of {} rejected", s.join(" "), by_cat.len()));
    }
    Ok(notes.join("; "))
}

/// Category counts from oracle derivations, scoring the same output the
/// harness uses in `mode`.
pub fn oracle_eval(bank: &FragmentBank, test: &[AnnotatedTree], mode: Mode) -> CategoryCounts {
    let mut c = CategoryCounts::default();
    for gold in test {
        let ds = if gold.sentence.iter().all(|w| bank.vocabulary().contains(w.as_str())) {
            enumerate_by_composition(bank, &gold.sentence)
        } else {
            Vec::new()
        };
        if ds.is_empty() {
            c.unparsed += 1;
            continue;
        }
        let (tree, sem) = match mode {
            Mode::Mpd => {
                let best = ds.iter().map(|d| d.prob).fold(0.0, f64::max);
                let d = ds
                    .iter()
                    .find(|d| (best - d.prob).abs() <= 1e-12 * best.max(1.0))
                    .unwrap();
                (d.tree.clone(), d.top_sem.clone())
            }
            Mode::Mpp | Mode::Mpi => {
                let parses = parse_probabilities(&ds);
                let class_of = |sem: &Option<dop_core::semalgebra::Term>| {
                    sem.as_ref().map(|s| normalize(s).to_string()).unwrap_or_default()
                };
                let mut pool: BTreeMap<String, f64> = parses.iter().map(|(k, v)| (k.clone(), v.0)).collect();
                if mode == Mode::Mpi {
                    let class = argmax(&interpretation_probabilities(&ds));
                    pool.retain(|k, _| class_of(&parses[k].2) == class);
                }
                let k = argmax(&pool);
                (parses[&k].1.clone(), parses[&k].2.clone())
            }
        };
        let syntax = bare_bracketing(&tree) == bare_bracketing(&gold.root);
        let semantics = match (sem, gold_top_semantics(gold)) {
            (Some(a), Some(g)) => equivalent(&a, &g),
            _ => false,
        };
        match (syntax, semantics) {
            (true, true) => c.exact_match += 1,
            (true, false) => c.syntax_only += 1,
            (false, true) => c.semantics_only += 1,
            (false, false) => c.both_wrong += 1,
        }
    }
    c
}

pub const EVAL_SEED: u64 = 7;

pub fn eval_partition() -> Outcome {
    let mut notes = Vec::new();
    for (name, test_size) in [("toy_quantifier", 2), ("toy_relational", 3)] {
        let c = load(name);
        let (train, test) = split(&c.trees, test_size, EVAL_SEED).map_err(|e| e.to_string())?;
        let train = Corpus {
            signature: c.signature.clone(),
            trees: train,
        };
        let b = extract(&train, DEFAULT_DEPTH).map_err(|e| e.to_string())?;
        for mode in [Mode::Mpd, Mode::Mpp, Mode::Mpi] {
            let opts = EvalOptions {
                mode,
                sampling: SampleConfig {
                    seed: EVAL_SEED,
                    ..SampleConfig::default()
                },
                syntactic_bank: None,
                timings: false,
            };
            let report = evaluate(&b, &test, &opts);
            ensure!(
                report.counts.total() == test.len(),
                "{name} {mode:?}: counts sum to {}",
                report.counts.total()
            );
            let want = oracle_eval(&b, &test, mode);
            ensure!(
                report.counts == want,
                "{name} {mode:?}: {:?} vs oracle {want:?}",
                report.counts
            );
            notes.push(format!(
                "{name}/{mode:?} {}/{}/{}/{}/{}",
                want.exact_match, want.syntax_only, want.semantics_only, want.both_wrong, want.unparsed
            ));
        }
    }
    Ok(notes.join(", "))
}

pub const SUGGEST_TRIALS: usize = 1000;

pub fn suggestor() -> Outcome {
    let sig = signature();
    let mut trees = load("toy_quantifier").trees;
    trees.extend(load("toy_relational").trees);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut proposals = 0;
    for trial in 0..SUGGEST_TRIALS {
        let i = rng.random_range(0..trees.len());
        let train: Vec<&AnnotatedTree> = trees
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, t)| t)
            .collect();
        let model = SuggestionModel::train(sig.clone(), train.iter().copied());
        let mut annotated = Vec::new();
        trees[i].root.walk(&NodePath::root(), &mut |p, n| {
            if n.sem.is_some() {
                annotated.push(p.clone());
            }
        });
        let target = annotated[rng.random_range(0..annotated.len())].clone();
        let mut probe = trees[i].clone();
        for p in &annotated {
            if *p == target || rng.random_bool(0.3) {
                probe.root.get_mut(p).unwrap().sem = None;
            }
        }
        let got = model.suggest_node(&probe, &target).map_err(|e| e.to_string())?;
        let fresh = SuggestionModel::train(sig.clone(), train.iter().copied());
        let reloaded = SuggestionModel::from_json(&model.to_json()).map_err(|e| e.to_string())?;
        ensure!(
            fresh.suggest_node(&probe, &target).ok().flatten() == got,
            "trial {trial}: retrained model disagrees"
        );
        ensure!(
            reloaded.suggest_node(&probe, &target).ok().flatten() == got,
            "trial {trial}: reloaded model disagrees"
        );
        let Some(s) = got else { continue };
        proposals += 1;
        let node = probe.root.get(&target).unwrap();
        ensure!(
            (s.proposal.arity() as usize) <= node.children.len(),
            "trial {trial}: arity {} on a node with {} children",
            s.proposal.arity(),
            node.children.len()
        );
        let mut filled = probe.clone();
        filled.root.get_mut(&target).unwrap().sem = Some(s.proposal.clone());
        let violations = validate_tree(&filled, &sig, Strictness::Lenient);
        ensure!(
            violations.is_empty(),
            "trial {trial}: proposal {} at {target} in tree {} gives {violations:?}",
            s.proposal,
            probe.id
        );
    }
    Ok(format!(
        "{SUGGEST_TRIALS} trials, {proposals} proposals, all type-correct and reproducible"
    ))
}

pub type Criterion = fn() -> Outcome;

pub const ALL: &[(&str, Criterion)] = &[
    ("fragment-bank oracle equivalence", fragment_bank_oracle),
    ("probability normalization", probability_normalization),
    ("derivation-sum correctness", derivation_sum),
    ("multiple derivations of one parse", multiple_derivations),
    ("semantics correctness", semantics_correctness),
    ("Monte Carlo soundness", monte_carlo),
    ("equivalence-class merging", equivalence_merging),
    ("type-gate enforcement", type_gate),
    ("eval harness partition", eval_partition),
    ("suggestor determinism and type-safety", suggestor),
];
