mod common;

use common::*;

use dop_core::suggest::{coverage_report, SuggestionModel};
use dop_core::treebank::{validate_tree, AnnotatedTree, NodePath, Strictness};
use proptest::prelude::*;

fn pool() -> Vec<AnnotatedTree> {
    let mut t = load("toy_quantifier").trees;
    t.extend(load("toy_relational").trees);
    t
}

fn annotated_paths(t: &AnnotatedTree) -> Vec<NodePath> {
    let mut out = Vec::new();
    t.root.walk(&NodePath::root(), &mut |p, n| {
        if n.sem.is_some() {
            out.push(p.clone());
        }
    });
    out
}

#[test]
fn randomized_leave_one_out_suggestions_are_typed_and_reproducible() {
    criteria::suggestor().unwrap();
}

proptest! {
    #[test]
    fn incremental_training_equals_batch(order in Just((0..20usize).collect::<Vec<_>>()).prop_shuffle(), k in 0usize..20) {
        let trees = pool();
        let sig = signature();
        let chosen: Vec<&AnnotatedTree> = order.iter().take(k + 1).map(|&i| &trees[i]).collect();
        let mut m = SuggestionModel::train(sig.clone(), chosen[..k].iter().copied());
        m.observe(chosen[k]);
        let batch = SuggestionModel::train(sig.clone(), chosen.iter().copied());
        prop_assert_eq!(&m, &batch);
        let sorted = {
            let mut v = chosen.clone();
            v.sort_by(|a, b| a.id.cmp(&b.id));
            v
        };
        prop_assert_eq!(m, SuggestionModel::train(sig, sorted));
    }

    #[test]
    fn observing_a_schema_never_lowers_its_rank(mask in any::<u32>(), tree in 0usize..20, node in any::<prop::sample::Index>()) {
        let trees = pool();
        let train: Vec<&AnnotatedTree> = trees.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, t)| t).collect();
        let mut m = SuggestionModel::train(signature(), train);
        let t = &trees[tree];
        let paths = annotated_paths(t);
        let n = t.root.get(&paths[node.index(paths.len())]).unwrap();
        let s = n.sem.as_ref().unwrap().to_string();
        let rank = |m: &SuggestionModel| m.context_ranking(n).iter().position(|(x, _)| *x == s).unwrap_or(usize::MAX);
        let before = rank(&m);
        m.observe_node(n);
        prop_assert!(rank(&m) <= before);
        prop_assert_eq!(rank(&m), m.context_ranking(n).iter().position(|(x, _)| *x == s).unwrap());
    }
}

#[test]
fn training_set_is_fully_recovered() {
    let c = load("toy_quantifier");
    let m = SuggestionModel::train(c.signature.clone(), &c.trees);
    let r = coverage_report(&m, &c.trees);
    assert!(r.overall.total > 0);
    assert_eq!(r.overall.correct, r.overall.total);
    assert_eq!(r.no_proposal, 0);
    assert_eq!(r.backoff.total, 0);
}

#[test]
fn empty_inputs() {
    let m = SuggestionModel::new(signature());
    assert!(m.is_empty());
    let c = load("toy_quantifier");
    let mut probe = c.trees[0].clone();
    probe.root.sem = None;
    assert!(m.suggestions_for(&probe).is_empty());
    let r = coverage_report(&m, &[]).to_json();
    assert_eq!(r["overall"]["total"], 0);
    assert_eq!(r["overall"]["empty"], true);
    assert!(r["overall"]["accuracy"].is_null());
}

#[test]
fn unseen_production_backs_off_to_category() {
    let c = load("toy_quantifier");
    let m = SuggestionModel::train(c.signature.clone(), &c.trees);
    let mut probe = load("bracketing").get("2").unwrap().clone();
    let np: NodePath = "0".parse().unwrap();
    probe.root.get_mut(&np).unwrap().sem = None;
    let s = m.suggest_node(&probe, &np).unwrap().unwrap();
    assert!(s.backoff);
    assert_eq!(s.proposal.to_string(), "(d1 d2)");
    let v = serde_json::to_value(&s).unwrap();
    assert_eq!(v["nodePath"], "0");
    assert_eq!(v["proposal"], "(d1 d2)");
    assert_eq!(v["backoff"], true);
}

/// Leave-one-out accuracy recounted directly from the training trees.
fn oracle_correct(train: &[AnnotatedTree], held: &AnnotatedTree) -> (usize, usize) {
    let sig = signature();
    let (mut correct, mut total) = (0, 0);
    for path in annotated_paths(held) {
        let gold_node = held.root.get(&path).unwrap();
        let gold = gold_node.sem.as_ref().unwrap().to_string();
        let same_context = |n: &dop_core::treebank::Node| {
            n.cat == gold_node.cat
                && n.word == gold_node.word
                && n.children
                    .iter()
                    .map(|c| &c.cat)
                    .eq(gold_node.children.iter().map(|c| &c.cat))
        };
        let mut exact = std::collections::BTreeMap::<String, u64>::new();
        let mut backoff = std::collections::BTreeMap::<String, u64>::new();
        for t in train {
            t.root.walk(&NodePath::root(), &mut |_, n| {
                if let Some(s) = &n.sem {
                    if same_context(n) {
                        *exact.entry(s.to_string()).or_default() += 1;
                    }
                    if n.cat == gold_node.cat {
                        *backoff.entry(s.to_string()).or_default() += 1;
                    }
                }
            });
        }
        let mut hidden = held.clone();
        let mut pick = None;
        for table in [exact, backoff] {
            let mut ranked: Vec<(String, u64)> = table.into_iter().collect();
            ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            for (s, _) in ranked {
                let schema = dop_core::semalgebra::parse_formula(&s, &sig).unwrap();
                if gold_node.word.is_some() && schema.arity() > 0 {
                    continue;
                }
                hidden.root.get_mut(&path).unwrap().sem = Some(schema);
                if validate_tree(&hidden, &sig, Strictness::Lenient).is_empty() {
                    pick = Some(s);
                    break;
                }
            }
            if pick.is_some() {
                break;
            }
        }
        total += 1;
        correct += usize::from(pick.as_deref() == Some(gold.as_str()));
    }
    (correct, total)
}

#[test]
fn leave_one_out_accuracy_matches_recount() {
    for name in ["toy_quantifier", "toy_relational"] {
        let c = load(name);
        for i in 0..c.trees.len() {
            let train: Vec<AnnotatedTree> = c
                .trees
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, t)| t.clone())
                .collect();
            let m = SuggestionModel::train(c.signature.clone(), &train);
            let r = coverage_report(&m, std::slice::from_ref(&c.trees[i]));
            let (correct, total) = oracle_correct(&train, &c.trees[i]);
            assert_eq!(
                (r.overall.correct, r.overall.total),
                (correct, total),
                "{name} held out {}",
                c.trees[i].id
            );
        }
    }
}
