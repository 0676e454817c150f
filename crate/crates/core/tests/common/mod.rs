//! Independent oracles shared by the integration tests and the acceptance
//! runner: brute-force fragment counting, derivation search by explicit
//! composition, and exact probabilities from the enumerated derivations.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use dop_core::fragments::FragmentBank;
use dop_core::parser::{compose, PartialTree};
use dop_core::semalgebra::{normalize, Signature, Term};
use dop_core::treebank::{load_corpus, AnnotatedTree, Corpus, Node};

pub mod criteria;
mod fragment_oracle;

pub use fragment_oracle::{bank_counts, brute_force_counts};

pub const ENUMERATION_CAP: usize = 100_000;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn load(name: &str) -> Corpus {
    load_corpus(&fixture(&format!("{name}.jsonl")), &fixture("toy_signature.json")).unwrap()
}

pub fn signature() -> Signature {
    load("two_sentence").signature
}

pub fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

/// count / (sum of counts sharing the root category), recomputed here.
pub fn oracle_prob(bank: &FragmentBank, id: usize) -> f64 {
    let cat = bank.fragment(id).cat();
    let total: u64 = bank
        .entries()
        .iter()
        .filter(|e| e.fragment.cat() == cat)
        .map(|e| e.count)
        .sum();
    bank.count(id) as f64 / total as f64
}

#[derive(Clone, Debug, PartialEq, Eq)]
enum Leaf {
    Word(String),
    Site,
}

fn frontier(n: &Node, out: &mut Vec<Leaf>) {
    if let Some(w) = &n.word {
        out.push(Leaf::Word(w.clone()));
    } else if n.children.is_empty() {
        out.push(Leaf::Site);
    } else {
        for c in &n.children {
            frontier(c, out);
        }
    }
}

/// Whether the frontier can still yield `sentence`, each site covering at
/// least one word.
fn compatible(leaves: &[Leaf], sentence: &[String]) -> bool {
    let n = sentence.len();
    let mut reach = vec![false; n + 1];
    reach[0] = true;
    for l in leaves {
        let mut next = vec![false; n + 1];
        for i in 0..=n {
            if !reach[i] {
                continue;
            }
            match l {
                Leaf::Word(w) => {
                    if i < n && &sentence[i] == w {
                        next[i + 1] = true;
                    }
                }
                Leaf::Site => {
                    for r in &mut next[i + 1..=n] {
                        *r = true;
                    }
                }
            }
        }
        reach = next;
    }
    reach[n]
}

#[derive(Clone, Debug)]
pub struct OracleDerivation {
    pub fragments: Vec<usize>,
    pub prob: f64,
    pub tree: Node,
    pub top_sem: Option<Term>,
}

/// All derivations of `sentence`, found by leftmost composition from every
/// start-category fragment. Panics past the enumeration cap.
pub fn enumerate_by_composition(bank: &FragmentBank, sentence: &[String]) -> Vec<OracleDerivation> {
    let mut out = Vec::new();
    let mut stack: Vec<(PartialTree, Vec<usize>, f64)> = Vec::new();
    for (id, e) in bank.entries().iter().enumerate() {
        if bank.start_categories().contains(e.fragment.cat()) {
            stack.push((PartialTree::new(&e.fragment), vec![id], oracle_prob(bank, id)));
        }
    }
    while let Some((t, seq, p)) = stack.pop() {
        let mut leaves = Vec::new();
        frontier(&t.root, &mut leaves);
        if !compatible(&leaves, sentence) {
            continue;
        }
        if t.is_complete() {
            let a = t.into_analysis().unwrap();
            out.push(OracleDerivation {
                fragments: seq,
                prob: p,
                tree: a.tree,
                top_sem: a.top_sem,
            });
            assert!(out.len() <= ENUMERATION_CAP, "enumeration cap exceeded");
            continue;
        }
        for (id, e) in bank.entries().iter().enumerate() {
            if let Ok(next) = compose(&t, &e.fragment) {
                let mut s = seq.clone();
                s.push(id);
                stack.push((next, s, p * oracle_prob(bank, id)));
            }
        }
    }
    out.sort_by(|a, b| a.fragments.cmp(&b.fragments));
    out
}

pub fn tree_key(n: &Node) -> String {
    n.to_json().to_string()
}

/// Exact P(tree) for every derived tree, as sums over oracle derivations.
pub fn parse_probabilities(ds: &[OracleDerivation]) -> BTreeMap<String, (f64, Node, Option<Term>)> {
    let mut out: BTreeMap<String, (f64, Node, Option<Term>)> = BTreeMap::new();
    for d in ds {
        out.entry(tree_key(&d.tree)).and_modify(|e| e.0 += d.prob).or_insert((
            d.prob,
            d.tree.clone(),
            d.top_sem.clone(),
        ));
    }
    out
}

/// Exact P(interpretation) keyed by the canonical normal form.
pub fn interpretation_probabilities(ds: &[OracleDerivation]) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    for (p, _, sem) in parse_probabilities(ds).into_values() {
        let key = sem.map(|s| normalize(&s).to_string()).unwrap_or_default();
        *out.entry(key).or_insert(0.0) += p;
    }
    out
}

pub fn argmax<K: Clone + Ord>(m: &BTreeMap<K, f64>) -> K {
    let best = m.values().cloned().fold(f64::NEG_INFINITY, f64::max);
    m.iter()
        .find(|(_, v)| (best - **v).abs() <= 1e-12 * best.abs().max(1.0))
        .map(|(k, _)| k.clone())
        .unwrap()
}

/// Labelled bracketing with every schema dropped.
pub fn bare_bracketing(n: &Node) -> String {
    match &n.word {
        Some(w) => format!("({} {})", n.cat, w),
        None => {
            let kids: Vec<String> = n.children.iter().map(bare_bracketing).collect();
            format!("({} {})", n.cat, kids.join(" "))
        }
    }
}

pub fn trees_of(corpus: &Corpus) -> Vec<AnnotatedTree> {
    corpus.trees.clone()
}
