//! Fragment composition and chart parsing.
//!
//! Every bank fragment is read as a context-free rule from its root
//! category to its frontier (words and sites). A CKY-style chart over
//! `(span, category)` items records, for each item, the fragments that can
//! cover the span together with the child items filling their sites. A site
//! typed τ only links to alternatives whose root semantics has type τ, so
//! ill-typed combinations never enter the forest.
//!
//! A derivation is the pre-order list of its fragments, which is also the
//! order of leftmost substitution.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};

use rand::Rng;

use crate::fragments::{FragBody, Fragment, FragmentBank, FrontierItem};
use crate::semalgebra::{SemType, Term};
use crate::treebank::{Node, NodePath};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseError {
    #[error("unknown word(s): {}", .0.join(", "))]
    UnknownWord(Vec<String>),
    #[error("no parse")]
    NoParse,
    #[error("empty sentence")]
    EmptySentence,
    #[error("site expects category {expected}, fragment has {found}")]
    CategoryMismatch { expected: String, found: String },
    #[error("site expects semantics of type {expected}, fragment has {found}")]
    TypeMismatch { expected: String, found: String },
    #[error("no open substitution site")]
    NoOpenSite,
    #[error("derivation is incomplete")]
    Incomplete,
    #[error("derivation sequence does not fit the bank")]
    MalformedDerivation,
}

/// An open substitution site of a partial tree.
#[derive(Clone, Debug, PartialEq)]
pub struct OpenSite {
    pub path: NodePath,
    pub cat: String,
    pub ty: Option<SemType>,
    uvar: Option<u32>,
}

/// Result of composing fragments; sites are nodes without word or children.
#[derive(Clone, Debug, PartialEq)]
pub struct PartialTree {
    pub root: Node,
    pub open: Vec<OpenSite>,
    /// Pending root semantics; unification variables mark typed open sites.
    pub sem: Option<Term>,
    next_uvar: u32,
}

impl PartialTree {
    pub fn new(f: &Fragment) -> PartialTree {
        let mut t = PartialTree {
            root: Node::internal(f.cat(), None, Vec::new()),
            open: vec![OpenSite {
                path: NodePath::root(),
                cat: f.cat().to_string(),
                ty: None,
                uvar: Some(0),
            }],
            sem: Some(Term::UVar(0, SemType::T)),
            next_uvar: 1,
        };
        t.plug(f);
        if f.root_sem.is_none() {
            t.sem = None;
        }
        t
    }

    pub fn is_complete(&self) -> bool {
        self.open.is_empty()
    }

    fn plug(&mut self, f: &Fragment) {
        let site = self.open.remove(0);
        let base = self.next_uvar;
        let fresh: Vec<OpenSite> = f
            .sites
            .iter()
            .enumerate()
            .map(|(i, s)| OpenSite {
                path: NodePath(site.path.0.iter().chain(&s.path.0).copied().collect()),
                cat: s.cat.clone(),
                ty: s.ty.clone(),
                uvar: s.ty.as_ref().map(|_| base + i as u32),
            })
            .collect();
        self.next_uvar += f.sites.len() as u32;
        *self.root.get_mut(&site.path).expect("open site exists") = f.root.to_node();
        if let (Some(u), Some(sem), Some(fsem)) = (site.uvar, &self.sem, &f.root_sem) {
            self.sem = Some(sem.bind_uvar(u, &fsem.shift_uvars(base)));
        }
        self.open.splice(0..0, fresh);
    }

    pub fn into_analysis(self) -> Result<Analysis, ParseError> {
        if !self.is_complete() {
            return Err(ParseError::Incomplete);
        }
        Ok(Analysis {
            tree: self.root,
            top_sem: self.sem,
        })
    }
}

/// Substitutes `f` at the leftmost open site of `t`.
pub fn compose(t: &PartialTree, f: &Fragment) -> Result<PartialTree, ParseError> {
    let site = t.open.first().ok_or(ParseError::NoOpenSite)?;
    if site.cat != f.cat() {
        return Err(ParseError::CategoryMismatch {
            expected: site.cat.clone(),
            found: f.cat().to_string(),
        });
    }
    if let Some(ty) = &site.ty {
        let found = f.sem_type();
        if found.as_ref() != Some(ty) {
            return Err(ParseError::TypeMismatch {
                expected: ty.to_string(),
                found: found.map_or("none".to_string(), |t| t.to_string()),
            });
        }
    }
    let mut out = t.clone();
    out.plug(f);
    Ok(out)
}

/// A complete parse tree with its top semantics.
#[derive(Clone, Debug, PartialEq)]
pub struct Analysis {
    pub tree: Node,
    pub top_sem: Option<Term>,
}

/// Fragment ids in pre-order (leftmost-substitution order).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Derivation {
    pub fragments: Vec<usize>,
}

impl Derivation {
    pub fn log_prob(&self, bank: &FragmentBank) -> f64 {
        self.fragments.iter().map(|&f| bank.log_prob(f)).sum()
    }

    /// Builds the analysis by successive composition.
    pub fn analysis(&self, bank: &FragmentBank) -> Result<Analysis, ParseError> {
        let (&first, rest) = self.fragments.split_first().ok_or(ParseError::MalformedDerivation)?;
        let mut t = PartialTree::new(bank.fragment(first));
        for &f in rest {
            t = compose(&t, bank.fragment(f))?;
        }
        t.into_analysis()
    }

    /// The derived tree, built directly without tracking semantics.
    pub fn tree(&self, bank: &FragmentBank) -> Result<Node, ParseError> {
        fn build(bank: &FragmentBank, seq: &[usize], pos: &mut usize) -> Result<Node, ParseError> {
            let id = *seq.get(*pos).ok_or(ParseError::MalformedDerivation)?;
            *pos += 1;
            let f = bank.fragment(id);
            let mut node = f.root.to_node();
            for s in &f.sites {
                let sub = build(bank, seq, pos)?;
                if sub.cat != s.cat {
                    return Err(ParseError::MalformedDerivation);
                }
                *node.get_mut(&s.path).expect("site path") = sub;
            }
            Ok(node)
        }
        let mut pos = 0;
        let node = build(bank, &self.fragments, &mut pos)?;
        if pos != self.fragments.len() {
            return Err(ParseError::MalformedDerivation);
        }
        Ok(node)
    }

    pub fn keys<'b>(&self, bank: &'b FragmentBank) -> Vec<&'b str> {
        self.fragments.iter().map(|&f| bank.fragment(f).key.as_str()).collect()
    }
}

pub type ItemId = usize;

/// Reference from an alternative to the item filling one of its sites.
#[derive(Clone, Debug, PartialEq)]
pub struct ChildRef {
    pub item: ItemId,
    /// Required root-semantics type; `None` accepts any alternative.
    pub gate: Option<SemType>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Alternative {
    pub fragment: usize,
    pub children: Vec<ChildRef>,
    pub root_type: Option<SemType>,
}

impl Alternative {
    fn passes(&self, gate: &Option<SemType>) -> bool {
        gate.is_none() || self.root_type == *gate
    }
}

#[derive(Clone, Debug)]
pub struct Item {
    pub start: usize,
    pub end: usize,
    pub cat: String,
    pub alts: Vec<Alternative>,
}

#[derive(Clone, Debug)]
struct Scores {
    inside: f64,
    count: u128,
    best: f64,
    best_seq: Vec<usize>,
}

impl Scores {
    fn empty() -> Scores {
        Scores {
            inside: f64::NEG_INFINITY,
            count: 0,
            best: f64::NEG_INFINITY,
            best_seq: Vec::new(),
        }
    }

    fn add(&mut self, inside: f64, count: u128, best: f64, seq: &[usize]) {
        self.inside = log_add(self.inside, inside);
        self.count = self.count.saturating_add(count);
        if beats(best, seq, self.best, &self.best_seq) {
            self.best = best;
            self.best_seq = seq.to_vec();
        }
    }
}

#[derive(Clone, Debug)]
struct ItemScores {
    all: Scores,
    typed: BTreeMap<SemType, Scores>,
}

impl ItemScores {
    fn get(&self, gate: &Option<SemType>) -> &Scores {
        match gate {
            None => &self.all,
            Some(t) => &self.typed[t],
        }
    }
}

/// Relative tolerance under which two log-probabilities count as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

pub fn log_sum_exp(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(f64::NEG_INFINITY, log_add)
}

pub fn scores_tie(a: f64, b: f64) -> bool {
    a == b || (a - b).abs() <= TIE_TOLERANCE * a.abs().max(b.abs()).max(1.0)
}

/// True if (`a`, `seq_a`) is preferred to (`b`, `seq_b`): higher score, or a
/// tie and a lexicographically smaller fragment sequence.
fn beats(a: f64, seq_a: &[usize], b: f64, seq_b: &[usize]) -> bool {
    if seq_b.is_empty() {
        return true;
    }
    if scores_tie(a, b) {
        seq_a < seq_b
    } else {
        a > b
    }
}

/// Packed chart of all derivations of a sentence.
pub struct Forest<'b> {
    bank: &'b FragmentBank,
    sentence: Vec<String>,
    items: Vec<Item>,
    /// Children before parents.
    order: Vec<ItemId>,
    roots: Vec<ItemId>,
    scores: Vec<ItemScores>,
    total: Scores,
    rejected_links: usize,
}

/// Frontier symbols of a fragment read as a rule right-hand side.
#[derive(Clone, Debug, PartialEq)]
enum Symbol {
    Word(String),
    Site(String, Option<SemType>),
}

struct Rule {
    fragment: usize,
    rhs: Vec<Symbol>,
    root_type: Option<SemType>,
}

/// Reusable parser over a bank.
pub struct ChartParser<'b> {
    bank: &'b FragmentBank,
    rules: Vec<Rule>,
    vocabulary: BTreeSet<&'b str>,
}

impl<'b> ChartParser<'b> {
    pub fn new(bank: &'b FragmentBank) -> Self {
        let rules = bank
            .entries()
            .iter()
            .enumerate()
            .map(|(id, e)| Rule {
                fragment: id,
                rhs: e
                    .fragment
                    .frontier
                    .iter()
                    .map(|item| match item {
                        FrontierItem::Word(w) => Symbol::Word(w.clone()),
                        FrontierItem::Site(i) => {
                            let s = &e.fragment.sites[*i];
                            Symbol::Site(s.cat.clone(), s.ty.clone())
                        }
                    })
                    .collect(),
                root_type: bank.sem_type(id).cloned(),
            })
            .collect();
        ChartParser {
            bank,
            rules,
            vocabulary: bank.vocabulary(),
        }
    }

    pub fn parse(&self, sentence: &[String]) -> Result<Forest<'b>, ParseError> {
        if sentence.is_empty() {
            return Err(ParseError::EmptySentence);
        }
        let mut unknown: Vec<String> = sentence
            .iter()
            .filter(|w| !self.vocabulary.contains(w.as_str()))
            .cloned()
            .collect();
        if !unknown.is_empty() {
            unknown.dedup();
            return Err(ParseError::UnknownWord(unknown));
        }
        let n = sentence.len();
        let words: BTreeSet<&str> = sentence.iter().map(String::as_str).collect();
        let candidates: Vec<&Rule> = self
            .rules
            .iter()
            .filter(|r| {
                r.rhs.len() <= n
                    && r.rhs.iter().all(|s| match s {
                        Symbol::Word(w) => words.contains(w.as_str()),
                        Symbol::Site(..) => true,
                    })
            })
            .collect();
        let (mut unary, mut other): (Vec<&Rule>, Vec<&Rule>) = candidates
            .into_iter()
            .partition(|r| matches!(r.rhs.as_slice(), [Symbol::Site(..)]));
        unary.sort_by_key(|r| (self.bank.unary_rank(self.bank.fragment(r.fragment).cat()), r.fragment));
        other.sort_by_key(|r| r.fragment);

        let mut chart = Chart {
            sentence,
            items: Vec::new(),
            index: HashMap::new(),
            rejected: 0,
        };
        for len in 1..=n {
            for start in 0..=n - len {
                let end = start + len;
                for rule in other.iter().chain(unary.iter()) {
                    if rule.rhs.len() > len {
                        continue;
                    }
                    let mut found = Vec::new();
                    chart.match_rhs(&rule.rhs, 0, start, end, &mut Vec::new(), &mut found);
                    for children in found {
                        let cat = self.bank.fragment(rule.fragment).cat();
                        let id = chart.item_id(start, end, cat);
                        chart.items[id].alts.push(Alternative {
                            fragment: rule.fragment,
                            children,
                            root_type: rule.root_type.clone(),
                        });
                    }
                }
            }
        }
        let roots: Vec<ItemId> = self
            .bank
            .start_categories()
            .iter()
            .filter_map(|c| chart.index.get(&(0, n, c.clone())).copied())
            .collect();
        if roots.is_empty() {
            return Err(ParseError::NoParse);
        }
        let Chart { items, rejected, .. } = chart;
        Ok(Forest::finish(self.bank, sentence.to_vec(), items, roots, rejected))
    }
}

struct Chart<'s> {
    sentence: &'s [String],
    items: Vec<Item>,
    index: HashMap<(usize, usize, String), ItemId>,
    rejected: usize,
}

impl Chart<'_> {
    fn item_id(&mut self, start: usize, end: usize, cat: &str) -> ItemId {
        if let Some(&id) = self.index.get(&(start, end, cat.to_string())) {
            return id;
        }
        self.items.push(Item {
            start,
            end,
            cat: cat.to_string(),
            alts: Vec::new(),
        });
        self.index.insert((start, end, cat.to_string()), self.items.len() - 1);
        self.items.len() - 1
    }

    /// Dotted matching of `rhs[k..]` against `[pos, end)`.
    fn match_rhs(
        &mut self,
        rhs: &[Symbol],
        k: usize,
        pos: usize,
        end: usize,
        acc: &mut Vec<ChildRef>,
        out: &mut Vec<Vec<ChildRef>>,
    ) {
        if k == rhs.len() {
            if pos == end {
                out.push(acc.clone());
            }
            return;
        }
        let remaining = rhs.len() - k - 1;
        if pos + remaining >= end {
            return;
        }
        match &rhs[k] {
            Symbol::Word(w) => {
                if self.sentence[pos] == *w {
                    self.match_rhs(rhs, k + 1, pos + 1, end, acc, out);
                }
            }
            Symbol::Site(cat, gate) => {
                for l in pos + 1..=end - remaining {
                    let Some(&item) = self.index.get(&(pos, l, cat.clone())) else {
                        continue;
                    };
                    if !self.items[item].alts.iter().any(|a| a.passes(gate)) {
                        self.rejected += 1;
                        continue;
                    }
                    acc.push(ChildRef {
                        item,
                        gate: gate.clone(),
                    });
                    self.match_rhs(rhs, k + 1, l, end, acc, out);
                    acc.pop();
                }
            }
        }
    }
}

/// Parses `sentence` against `bank`.
pub fn build_forest<'b>(bank: &'b FragmentBank, sentence: &[String]) -> Result<Forest<'b>, ParseError> {
    ChartParser::new(bank).parse(sentence)
}

impl<'b> Forest<'b> {
    fn finish(
        bank: &'b FragmentBank,
        sentence: Vec<String>,
        items: Vec<Item>,
        roots: Vec<ItemId>,
        rejected: usize,
    ) -> Self {
        // children-first order: shorter spans first, then unary rank
        let mut order: Vec<ItemId> = (0..items.len()).collect();
        order.sort_by_key(|&i| (items[i].end - items[i].start, bank.unary_rank(&items[i].cat), i));
        let mut scores: Vec<Option<ItemScores>> = vec![None; items.len()];
        for &id in &order {
            let mut s = ItemScores {
                all: Scores::empty(),
                typed: BTreeMap::new(),
            };
            for alt in &items[id].alts {
                let mut inside = bank.log_prob(alt.fragment);
                let mut count: u128 = 1;
                let mut best = inside;
                let mut seq = vec![alt.fragment];
                for c in &alt.children {
                    let cs = scores[c.item].as_ref().expect("children scored first").get(&c.gate);
                    inside += cs.inside;
                    count = count.saturating_mul(cs.count);
                    best += cs.best;
                    seq.extend_from_slice(&cs.best_seq);
                }
                s.all.add(inside, count, best, &seq);
                if let Some(t) = &alt.root_type {
                    s.typed
                        .entry(t.clone())
                        .or_insert_with(Scores::empty)
                        .add(inside, count, best, &seq);
                }
            }
            scores[id] = Some(s);
        }
        let scores: Vec<ItemScores> = scores.into_iter().map(|s| s.expect("scored")).collect();
        let mut total = Scores::empty();
        for &r in &roots {
            let s = &scores[r].all;
            total.add(s.inside, s.count, s.best, &s.best_seq);
        }
        Forest {
            bank,
            sentence,
            items,
            order,
            roots,
            scores,
            total,
            rejected_links: rejected,
        }
    }

    pub fn bank(&self) -> &'b FragmentBank {
        self.bank
    }

    pub fn sentence(&self) -> &[String] {
        &self.sentence
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn roots(&self) -> &[ItemId] {
        &self.roots
    }

    /// Items ordered children before parents.
    pub fn bottom_up_order(&self) -> &[ItemId] {
        &self.order
    }

    /// Site links refused because no alternative had the required type.
    pub fn rejected_links(&self) -> usize {
        self.rejected_links
    }

    /// Log of the summed probability of all derivations.
    pub fn inside_log(&self) -> f64 {
        self.total.inside
    }

    /// Number of derivations, saturating at `u128::MAX`.
    pub fn derivation_count(&self) -> u128 {
        self.total.count
    }

    /// Log inside score of an item restricted to `gate`.
    pub fn item_inside(&self, item: ItemId, gate: &Option<SemType>) -> f64 {
        self.scores[item].get(gate).inside
    }

    fn alt_inside(&self, alt: &Alternative) -> f64 {
        self.bank.log_prob(alt.fragment)
            + alt
                .children
                .iter()
                .map(|c| self.scores[c.item].get(&c.gate).inside)
                .sum::<f64>()
    }

    /// Most probable derivation; ties go to the smallest fragment sequence.
    pub fn viterbi(&self) -> (Derivation, f64) {
        (
            Derivation {
                fragments: self.total.best_seq.clone(),
            },
            self.total.best,
        )
    }

    /// Draws a derivation from P(derivation | sentence).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Derivation {
        let mut seq = Vec::new();
        let root_weights: Vec<f64> = self.roots.iter().map(|&r| self.scores[r].all.inside).collect();
        let r = self.roots[pick(rng, &root_weights, self.total.inside)];
        self.sample_item(r, &None, rng, &mut seq);
        Derivation { fragments: seq }
    }

    fn sample_item<R: Rng + ?Sized>(&self, item: ItemId, gate: &Option<SemType>, rng: &mut R, seq: &mut Vec<usize>) {
        let alts: Vec<&Alternative> = self.items[item].alts.iter().filter(|a| a.passes(gate)).collect();
        let weights: Vec<f64> = alts.iter().map(|a| self.alt_inside(a)).collect();
        let alt = alts[pick(rng, &weights, self.scores[item].get(gate).inside)];
        seq.push(alt.fragment);
        for c in &alt.children {
            self.sample_item(c.item, &c.gate, rng, seq);
        }
    }

    /// Up to `limit` derivations in non-increasing probability order, with
    /// their log-probabilities.
    pub fn enumerate(&self, limit: usize) -> Vec<(Derivation, f64)> {
        let mut out = Vec::new();
        let mut heap = BinaryHeap::new();
        for &r in &self.roots {
            heap.push(Hyp {
                priority: self.scores[r].all.best,
                logp: 0.0,
                seq: Vec::new(),
                pending: vec![(r, None)],
            });
        }
        while let Some(h) = heap.pop() {
            if out.len() >= limit {
                break;
            }
            let Some(((item, gate), rest)) = h.pending.split_first() else {
                out.push((Derivation { fragments: h.seq }, h.logp));
                continue;
            };
            let rest_best: f64 = rest.iter().map(|(i, g)| self.scores[*i].get(g).best).sum();
            for alt in self.items[*item].alts.iter().filter(|a| a.passes(gate)) {
                let logp = h.logp + self.bank.log_prob(alt.fragment);
                let child_best: f64 = alt.children.iter().map(|c| self.scores[c.item].get(&c.gate).best).sum();
                let mut seq = h.seq.clone();
                seq.push(alt.fragment);
                let mut pending: Vec<(ItemId, Option<SemType>)> =
                    alt.children.iter().map(|c| (c.item, c.gate.clone())).collect();
                pending.extend(rest.iter().cloned());
                heap.push(Hyp {
                    priority: logp + child_best + rest_best,
                    logp,
                    seq,
                    pending,
                });
            }
        }
        out
    }
}

/// Index drawn with probability proportional to `exp(weights[i] - total)`.
fn pick<R: Rng + ?Sized>(rng: &mut R, weights: &[f64], total: f64) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += (w - total).exp();
        if u < acc {
            return i;
        }
    }
    // rounding left a sliver of mass; give it to the last positive weight
    weights.iter().rposition(|w| *w > f64::NEG_INFINITY).unwrap_or(0)
}

struct Hyp {
    priority: f64,
    logp: f64,
    seq: Vec<usize>,
    pending: Vec<(ItemId, Option<SemType>)>,
}

impl PartialEq for Hyp {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Hyp {}

impl PartialOrd for Hyp {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Hyp {
    fn cmp(&self, other: &Self) -> Ordering {
        self.priority
            .total_cmp(&other.priority)
            .then_with(|| other.seq.cmp(&self.seq))
            .then_with(|| other.pending.len().cmp(&self.pending.len()))
    }
}

/// Derivations of `forest` in non-increasing probability order.
pub fn enumerate_derivations(forest: &Forest<'_>, limit: usize) -> Vec<(Derivation, f64)> {
    forest.enumerate(limit)
}

/// Whether `f` can be placed at `node`, returning the nodes under its sites.
pub fn match_fragment<'n>(f: &Fragment, node: &'n Node) -> Option<Vec<&'n Node>> {
    fn go<'n>(f: &crate::fragments::FragNode, n: &'n Node, sites: &mut Vec<&'n Node>) -> bool {
        if f.cat != n.cat {
            return false;
        }
        match &f.body {
            FragBody::Site(_) => {
                sites.push(n);
                true
            }
            FragBody::Word(w) => f.sem == n.sem && n.children.is_empty() && n.word.as_deref() == Some(w),
            FragBody::Children(kids) => {
                f.sem == n.sem
                    && n.children.len() == kids.len()
                    && kids.iter().zip(&n.children).all(|(k, c)| go(k, c, sites))
            }
        }
    }
    let mut sites = Vec::new();
    go(&f.root, node, &mut sites).then_some(sites)
}
