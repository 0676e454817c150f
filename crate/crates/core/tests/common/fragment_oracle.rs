//! Brute-force fragment counting: every antichain cut set below every
//! annotated node, filtered by a depth computed from the cut set alone.

use std::collections::{BTreeMap, BTreeSet};

use dop_core::fragments::{decompose_at, FragmentBank};
use dop_core::treebank::{Corpus, Node, NodePath};

/// Fragment depth computed straight from the tree and the cut set.
fn cut_depth(n: &Node, path: &NodePath, cuts: &BTreeSet<NodePath>) -> usize {
    if cuts.contains(path) {
        0
    } else if n.word.is_some() {
        1
    } else {
        1 + n
            .children
            .iter()
            .enumerate()
            .map(|(i, c)| cut_depth(c, &path.child(i), cuts))
            .max()
            .unwrap_or(0)
    }
}

/// Every subset of proper descendants that is an antichain, as a cut set.
fn antichains(paths: &[NodePath]) -> Vec<Vec<NodePath>> {
    let n = paths.len();
    assert!(n < 20, "tree too large for subset enumeration");
    let mut out = Vec::new();
    for mask in 0u32..(1 << n) {
        let chosen: Vec<&NodePath> = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| &paths[i]).collect();
        let ok = chosen.iter().all(|a| chosen.iter().all(|b| !a.is_strictly_below(b)));
        if ok {
            out.push(chosen.into_iter().cloned().collect());
        }
    }
    out
}

/// Fragment key → count, by trying every cut set below every annotated node.
pub fn brute_force_counts(corpus: &Corpus, max_depth: usize) -> BTreeMap<String, u64> {
    let mut counts = BTreeMap::new();
    for t in &corpus.trees {
        let mut roots = Vec::new();
        t.root.walk(&NodePath::root(), &mut |p, n| {
            if n.sem.is_some() {
                roots.push(p.clone());
            }
        });
        for root in roots {
            let mut below = Vec::new();
            t.root.walk(&NodePath::root(), &mut |p, _| {
                if p.is_strictly_below(&root) {
                    below.push(p.clone());
                }
            });
            let sub = t.root.get(&root).unwrap();
            for cuts in antichains(&below) {
                let set: BTreeSet<NodePath> = cuts.iter().cloned().collect();
                if cut_depth(sub, &root, &set) > max_depth {
                    continue;
                }
                let f = decompose_at(t, &root, &cuts).unwrap();
                *counts.entry(f.key).or_insert(0) += 1;
            }
        }
    }
    counts
}

pub fn bank_counts(bank: &FragmentBank) -> BTreeMap<String, u64> {
    bank.entries()
        .iter()
        .map(|e| (e.fragment.key.clone(), e.count))
        .collect()
}
