//! Fragment extraction and substitution probabilities.
//!
//! A fragment is a connected piece of a corpus tree: a root node and, for
//! every node below it, a choice between keeping it (with its word or its
//! daughters) and cutting it off as a substitution site. A cut node whose
//! corpus meaning has type τ becomes a site typed τ, and the fragment's root
//! semantics mentions a unification variable of type τ in its place.
//!
//! Fragments are identified by a canonical key:
//! `(CAT{schema} child ...)`, `(CAT{schema} "word")`, and sites
//! `(CAT @type)` or `(CAT @_)` when untyped. Unannotated nodes omit the
//! braces.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde_json::Value;

use crate::semalgebra::{parse_formula, type_of, Schema, SemError, SemType, Signature, Term};
use crate::treebank::{expand_available, is_valid_category, AnnotatedTree, Corpus, Node, NodePath};

#[derive(Debug, thiserror::Error)]
pub enum FragmentError {
    #[error("invalid cut: {0}")]
    InvalidCut(String),
    #[error("fragment not in bank: {0}")]
    UnknownFragment(String),
    #[error("unary cycle among categories {0:?}")]
    UnaryCycle(Vec<String>),
    #[error("max depth must be at least 1")]
    BadDepth,
    #[error("malformed fragment key at offset {pos}: {message}")]
    KeySyntax { pos: usize, message: String },
    #[error("malformed bank: {0}")]
    BankFormat(String),
    #[error("semantics: {0}")]
    Sem(#[from] SemError),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FragBody {
    Word(String),
    Children(Vec<FragNode>),
    /// Substitution site; `None` when the cut node had no semantics.
    Site(Option<SemType>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FragNode {
    pub cat: String,
    pub sem: Option<Schema>,
    pub body: FragBody,
}

impl FragNode {
    fn depth(&self) -> usize {
        match &self.body {
            FragBody::Word(_) => 1,
            FragBody::Site(_) => 0,
            FragBody::Children(kids) => 1 + kids.iter().map(FragNode::depth).max().unwrap_or(0),
        }
    }

    fn write_key(&self, out: &mut String) {
        out.push('(');
        out.push_str(&self.cat);
        if let Some(s) = &self.sem {
            let _ = write!(out, "{{{}}}", s);
        }
        match &self.body {
            FragBody::Word(w) => {
                out.push(' ');
                out.push_str(&Value::String(w.clone()).to_string());
            }
            FragBody::Site(Some(ty)) => {
                let _ = write!(out, " @{}", ty);
            }
            FragBody::Site(None) => out.push_str(" @_"),
            FragBody::Children(kids) => {
                for k in kids {
                    out.push(' ');
                    k.write_key(out);
                }
            }
        }
        out.push(')');
    }

    /// Expanded semantics; the `next` counter numbers sites left to right.
    fn semantics(&self, next: &mut u32) -> Result<Option<Term>, FragmentError> {
        match &self.body {
            FragBody::Site(ty) => {
                let id = *next;
                *next += 1;
                Ok(ty.clone().map(|ty| Term::UVar(id, ty)))
            }
            FragBody::Word(_) => Ok(self.sem.as_ref().map(|s| s.template().clone())),
            FragBody::Children(kids) => {
                let mut daughters = Vec::with_capacity(kids.len());
                for k in kids {
                    daughters.push(k.semantics(next)?);
                }
                match &self.sem {
                    None => Ok(None),
                    Some(s) => match s.instantiate_partial(&daughters) {
                        Ok(t) => Ok(Some(t)),
                        Err(SemError::MissingDaughter(i)) => Err(FragmentError::InvalidCut(format!(
                            "schema of `{}` references d{}, which has no semantics",
                            self.cat, i
                        ))),
                        Err(e) => Err(e.into()),
                    },
                }
            }
        }
    }

    fn collect_frontier(&self, path: NodePath, sites: &mut Vec<Site>, frontier: &mut Vec<FrontierItem>) {
        match &self.body {
            FragBody::Word(w) => frontier.push(FrontierItem::Word(w.clone())),
            FragBody::Site(ty) => {
                frontier.push(FrontierItem::Site(sites.len()));
                sites.push(Site {
                    path,
                    cat: self.cat.clone(),
                    ty: ty.clone(),
                });
            }
            FragBody::Children(kids) => {
                for (i, k) in kids.iter().enumerate() {
                    k.collect_frontier(path.child(i), sites, frontier);
                }
            }
        }
    }

    /// Converts to a tree node; sites become childless, wordless nodes.
    pub fn to_node(&self) -> Node {
        match &self.body {
            FragBody::Word(w) => Node::lexical(self.cat.clone(), w.clone(), self.sem.clone()),
            FragBody::Site(_) => Node::internal(self.cat.clone(), None, Vec::new()),
            FragBody::Children(kids) => Node::internal(
                self.cat.clone(),
                self.sem.clone(),
                kids.iter().map(FragNode::to_node).collect(),
            ),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Site {
    /// Path relative to the fragment root.
    pub path: NodePath,
    pub cat: String,
    pub ty: Option<SemType>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FrontierItem {
    Word(String),
    /// Index into `Fragment::sites`.
    Site(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Fragment {
    pub root: FragNode,
    pub sites: Vec<Site>,
    pub frontier: Vec<FrontierItem>,
    /// Root semantics with `UVar(i)` standing for typed site `i`; `None` when
    /// the root is unannotated.
    pub root_sem: Option<Term>,
    pub depth: usize,
    pub key: String,
}

impl Fragment {
    pub fn new(root: FragNode) -> Result<Fragment, FragmentError> {
        let mut key = String::new();
        root.write_key(&mut key);
        let mut sites = Vec::new();
        let mut frontier = Vec::new();
        root.collect_frontier(NodePath::root(), &mut sites, &mut frontier);
        let root_sem = root.semantics(&mut 0)?;
        let depth = root.depth();
        if depth == 0 {
            return Err(FragmentError::InvalidCut(
                "a fragment needs at least one expansion".into(),
            ));
        }
        Ok(Fragment {
            root,
            sites,
            frontier,
            root_sem,
            depth,
            key,
        })
    }

    pub fn cat(&self) -> &str {
        &self.root.cat
    }

    /// Type of the root semantics, if annotated.
    pub fn sem_type(&self) -> Option<SemType> {
        self.root_sem.as_ref().and_then(|t| type_of(t).ok())
    }

    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.frontier.iter().filter_map(|f| match f {
            FrontierItem::Word(w) => Some(w.as_str()),
            FrontierItem::Site(_) => None,
        })
    }

    /// True for fragments whose frontier is a single site.
    pub fn unary_target(&self) -> Option<&str> {
        match self.frontier.as_slice() {
            [FrontierItem::Site(i)] => Some(&self.sites[*i].cat),
            _ => None,
        }
    }

    /// Parses a canonical key, resolving constants against `sig`.
    pub fn from_key(key: &str, sig: &Signature) -> Result<Fragment, FragmentError> {
        let mut p = KeyParser { src: key, pos: 0, sig };
        let root = p.node()?;
        p.skip_ws();
        if p.pos != key.len() {
            return Err(p.err("trailing input"));
        }
        Fragment::new(root)
    }
}

struct KeyParser<'a> {
    src: &'a str,
    pos: usize,
    sig: &'a Signature,
}

impl KeyParser<'_> {
    fn err(&self, message: &str) -> FragmentError {
        FragmentError::KeySyntax {
            pos: self.pos,
            message: message.into(),
        }
    }

    fn skip_ws(&mut self) {
        let rest = &self.src[self.pos..];
        self.pos += rest.len() - rest.trim_start().len();
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn expect(&mut self, c: char) -> Result<(), FragmentError> {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += c.len_utf8();
            Ok(())
        } else {
            Err(self.err(&format!("expected `{}`", c)))
        }
    }

    fn node(&mut self) -> Result<FragNode, FragmentError> {
        self.expect('(')?;
        let start = self.pos;
        let len: usize = self.src[start..]
            .chars()
            .take_while(|c| !c.is_whitespace() && !"(){}\"@".contains(*c))
            .map(char::len_utf8)
            .sum();
        self.pos += len;
        let cat = self.src[start..self.pos].to_string();
        if !is_valid_category(&cat) {
            return Err(self.err("expected a category"));
        }
        let mut sem = None;
        if self.peek() == Some('{') {
            let end = self.src[self.pos..]
                .find('}')
                .ok_or_else(|| self.err("unclosed schema"))?;
            let text = &self.src[self.pos + 1..self.pos + end];
            sem = Some(parse_formula(text, self.sig)?);
            self.pos += end + 1;
        }
        self.skip_ws();
        let body = match self.peek() {
            Some('"') => {
                let rest = &self.src[self.pos..];
                let mut de = serde_json::Deserializer::from_str(rest).into_iter::<String>();
                let word = match de.next() {
                    Some(Ok(w)) => w,
                    _ => return Err(self.err("bad word literal")),
                };
                self.pos += de.byte_offset();
                FragBody::Word(word)
            }
            Some('@') => {
                self.pos += 1;
                if self.peek() == Some('_') {
                    self.pos += 1;
                    FragBody::Site(None)
                } else {
                    let rest = &self.src[self.pos..];
                    let len = rest.find(')').ok_or_else(|| self.err("unclosed site"))?;
                    let ty: SemType = rest[..len].trim().parse()?;
                    self.pos += len;
                    FragBody::Site(Some(ty))
                }
            }
            _ => {
                let mut kids = Vec::new();
                while self.peek() == Some('(') {
                    kids.push(self.node()?);
                    self.skip_ws();
                }
                if kids.is_empty() {
                    return Err(self.err("expected word, site or daughters"));
                }
                FragBody::Children(kids)
            }
        };
        self.expect(')')?;
        Ok(FragNode { cat, sem, body })
    }
}

/// Corpus context for one tree: expanded-semantics types per node.
struct TreeTypes {
    types: HashMap<NodePath, SemType>,
}

impl TreeTypes {
    fn new(t: &AnnotatedTree) -> Self {
        let types = expand_available(t)
            .into_iter()
            .filter_map(|(p, term)| type_of(&term).ok().map(|ty| (p, ty)))
            .collect();
        TreeTypes { types }
    }

    fn site(&self, n: &Node, path: &NodePath) -> FragNode {
        FragNode {
            cat: n.cat.clone(),
            sem: None,
            body: FragBody::Site(self.types.get(path).cloned()),
        }
    }
}

/// All expansions of `n` with depth at most `budget` (≥ 1).
fn expansions(n: &Node, path: &NodePath, budget: usize, ctx: &TreeTypes) -> Vec<FragNode> {
    if n.is_lexical() {
        return vec![FragNode {
            cat: n.cat.clone(),
            sem: n.sem.clone(),
            body: FragBody::Word(n.word.clone().unwrap_or_default()),
        }];
    }
    let mut partial: Vec<Vec<FragNode>> = vec![Vec::new()];
    for (i, c) in n.children.iter().enumerate() {
        let cp = path.child(i);
        let mut options = vec![ctx.site(c, &cp)];
        if budget > 1 {
            options.extend(expansions(c, &cp, budget - 1, ctx));
        }
        partial = partial
            .into_iter()
            .flat_map(|prefix| {
                options.iter().map(move |o| {
                    let mut v = prefix.clone();
                    v.push(o.clone());
                    v
                })
            })
            .collect();
    }
    partial
        .into_iter()
        .map(|kids| FragNode {
            cat: n.cat.clone(),
            sem: n.sem.clone(),
            body: FragBody::Children(kids),
        })
        .collect()
}

/// Builds the fragment rooted at `root_path` with sites at `cut_paths`.
pub fn decompose_at(
    t: &AnnotatedTree,
    root_path: &NodePath,
    cut_paths: &[NodePath],
) -> Result<Fragment, FragmentError> {
    let root = t
        .root
        .get(root_path)
        .ok_or_else(|| FragmentError::InvalidCut(format!("no node at root path `{}`", root_path)))?;
    for (i, c) in cut_paths.iter().enumerate() {
        if !c.is_strictly_below(root_path) {
            return Err(FragmentError::InvalidCut(format!(
                "`{}` is not below the root `{}`",
                c, root_path
            )));
        }
        if t.root.get(c).is_none() {
            return Err(FragmentError::InvalidCut(format!("no node at `{}`", c)));
        }
        for (j, d) in cut_paths.iter().enumerate() {
            if i != j && (c == d || c.is_strictly_below(d)) {
                return Err(FragmentError::InvalidCut(format!("cuts `{}` and `{}` overlap", c, d)));
            }
        }
    }
    let ctx = TreeTypes::new(t);
    fn build(n: &Node, path: &NodePath, cuts: &[NodePath], ctx: &TreeTypes) -> FragNode {
        if cuts.contains(path) {
            return ctx.site(n, path);
        }
        let body = if n.is_lexical() {
            FragBody::Word(n.word.clone().unwrap_or_default())
        } else {
            FragBody::Children(
                n.children
                    .iter()
                    .enumerate()
                    .map(|(i, c)| build(c, &path.child(i), cuts, ctx))
                    .collect(),
            )
        };
        FragNode {
            cat: n.cat.clone(),
            sem: n.sem.clone(),
            body,
        }
    }
    let mut node = build(root, root_path, cut_paths, &ctx);
    // the root itself is never a site
    if let FragBody::Site(_) = node.body {
        node = build(root, root_path, &[], &ctx);
    }
    Fragment::new(node)
}

#[derive(Clone, Debug)]
pub struct BankEntry {
    pub fragment: Fragment,
    pub count: u64,
}

/// Multiset of fragments with per-category totals. Entries are sorted by
/// key; an entry's index is its fragment id.
#[derive(Clone, Debug)]
pub struct FragmentBank {
    max_depth: usize,
    signature: Signature,
    signature_ref: Option<String>,
    start: BTreeSet<String>,
    entries: Vec<BankEntry>,
    index: HashMap<String, usize>,
    root_totals: BTreeMap<String, u64>,
    sem_types: Vec<Option<SemType>>,
    unary_rank: HashMap<String, usize>,
}

impl FragmentBank {
    pub fn from_counts(
        max_depth: usize,
        signature: Signature,
        start: BTreeSet<String>,
        counts: BTreeMap<String, (Fragment, u64)>,
    ) -> Result<FragmentBank, FragmentError> {
        let mut entries = Vec::with_capacity(counts.len());
        let mut root_totals: BTreeMap<String, u64> = BTreeMap::new();
        let mut index = HashMap::with_capacity(counts.len());
        for (key, (fragment, count)) in counts {
            *root_totals.entry(fragment.cat().to_string()).or_default() += count;
            index.insert(key, entries.len());
            entries.push(BankEntry { fragment, count });
        }
        let sem_types = entries.iter().map(|e| e.fragment.sem_type()).collect();
        let unary_rank = unary_order(&entries)?;
        Ok(FragmentBank {
            max_depth,
            signature,
            signature_ref: None,
            start,
            entries,
            index,
            root_totals,
            sem_types,
            unary_rank,
        })
    }

    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    pub fn signature(&self) -> &Signature {
        &self.signature
    }

    pub fn signature_ref(&self) -> Option<&str> {
        self.signature_ref.as_deref()
    }

    pub fn set_signature_ref(&mut self, r: Option<String>) {
        self.signature_ref = r;
    }

    /// Categories allowed at the root of a complete analysis.
    pub fn start_categories(&self) -> &BTreeSet<String> {
        &self.start
    }

    pub fn entries(&self) -> &[BankEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn fragment(&self, id: usize) -> &Fragment {
        &self.entries[id].fragment
    }

    pub fn count(&self, id: usize) -> u64 {
        self.entries[id].count
    }

    pub fn id_of(&self, key: &str) -> Option<usize> {
        self.index.get(key).copied()
    }

    /// Type of fragment `id`'s root semantics.
    pub fn sem_type(&self, id: usize) -> Option<&SemType> {
        self.sem_types[id].as_ref()
    }

    /// Position of `cat` in an order where unary fragments' targets precede
    /// their roots.
    pub fn unary_rank(&self, cat: &str) -> usize {
        self.unary_rank.get(cat).copied().unwrap_or(0)
    }

    pub fn root_totals(&self) -> &BTreeMap<String, u64> {
        &self.root_totals
    }

    /// Probability of fragment `id` among fragments with the same root
    /// category.
    pub fn prob(&self, id: usize) -> f64 {
        let e = &self.entries[id];
        e.count as f64 / self.root_totals[e.fragment.cat()] as f64
    }

    pub fn log_prob(&self, id: usize) -> f64 {
        let e = &self.entries[id];
        (e.count as f64).ln() - (self.root_totals[e.fragment.cat()] as f64).ln()
    }

    /// Exact probability as (count, total).
    pub fn prob_ratio(&self, id: usize) -> (u64, u64) {
        let e = &self.entries[id];
        (e.count, self.root_totals[e.fragment.cat()])
    }

    pub fn vocabulary(&self) -> BTreeSet<&str> {
        self.entries.iter().flat_map(|e| e.fragment.words()).collect()
    }

    pub fn to_json(&self) -> Value {
        serde_json::json!({
            "maxDepth": self.max_depth,
            "signatureRef": self.signature_ref,
            "signature": self.signature,
            "startCategories": self.start,
            "entries": self.entries.iter().map(|e| serde_json::json!({
                "fragment": e.fragment.key,
                "count": e.count,
            })).collect::<Vec<_>>(),
        })
    }

    pub fn from_json(v: &Value) -> Result<FragmentBank, FragmentError> {
        let bad = |m: &str| FragmentError::BankFormat(m.to_string());
        let max_depth = v["maxDepth"].as_u64().ok_or_else(|| bad("missing `maxDepth`"))? as usize;
        let signature: Signature =
            serde_json::from_value(v["signature"].clone()).map_err(|e| FragmentError::BankFormat(e.to_string()))?;
        let start: BTreeSet<String> = serde_json::from_value(v["startCategories"].clone())
            .map_err(|e| FragmentError::BankFormat(e.to_string()))?;
        let mut counts = BTreeMap::new();
        for e in v["entries"].as_array().ok_or_else(|| bad("missing `entries`"))? {
            let key = e["fragment"].as_str().ok_or_else(|| bad("entry without `fragment`"))?;
            let count = e["count"]
                .as_u64()
                .filter(|c| *c > 0)
                .ok_or_else(|| bad("entry without positive `count`"))?;
            let f = Fragment::from_key(key, &signature)?;
            if f.key != key {
                return Err(FragmentError::BankFormat(format!("non-canonical key `{}`", key)));
            }
            counts.insert(f.key.clone(), (f, count));
        }
        let mut bank = FragmentBank::from_counts(max_depth, signature, start, counts)?;
        bank.signature_ref = v["signatureRef"].as_str().map(str::to_string);
        Ok(bank)
    }
}

/// Ranks categories so that the target of every unary fragment ranks below
/// its root; fails on a unary cycle.
fn unary_order(entries: &[BankEntry]) -> Result<HashMap<String, usize>, FragmentError> {
    let mut edges: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for e in entries {
        if let Some(target) = e.fragment.unary_target() {
            edges.entry(e.fragment.cat()).or_default().insert(target);
        }
    }
    // iterative DFS with colours
    let mut state: HashMap<&str, u8> = HashMap::new();
    let mut rank = HashMap::new();
    for &start in edges.keys() {
        if state.contains_key(start) {
            continue;
        }
        let mut stack: Vec<(&str, Vec<&str>)> = vec![(start, edges[start].iter().copied().collect())];
        state.insert(start, 1);
        while let Some((node, pending)) = stack.last_mut() {
            let node = *node;
            match pending.pop() {
                Some(next) => match state.get(next) {
                    Some(1) => {
                        let mut cycle: Vec<String> = stack
                            .iter()
                            .map(|(n, _)| n.to_string())
                            .skip_while(|n| n != next)
                            .collect();
                        cycle.sort();
                        return Err(FragmentError::UnaryCycle(cycle));
                    }
                    Some(_) => {}
                    None => {
                        state.insert(next, 1);
                        let succ = edges.get(next).map(|s| s.iter().copied().collect()).unwrap_or_default();
                        stack.push((next, succ));
                    }
                },
                None => {
                    state.insert(node, 2);
                    rank.insert(node.to_string(), rank.len());
                    stack.pop();
                }
            }
        }
    }
    Ok(rank)
}

/// Probability of `f` among bank fragments with its root category.
pub fn substitution_probability(bank: &FragmentBank, f: &Fragment) -> Result<f64, FragmentError> {
    let id = bank
        .id_of(&f.key)
        .ok_or_else(|| FragmentError::UnknownFragment(f.key.clone()))?;
    Ok(bank.prob(id))
}

pub fn substitution_log_probability(bank: &FragmentBank, f: &Fragment) -> Result<f64, FragmentError> {
    let id = bank
        .id_of(&f.key)
        .ok_or_else(|| FragmentError::UnknownFragment(f.key.clone()))?;
    Ok(bank.log_prob(id))
}

/// Extracts every fragment of depth ≤ `max_depth` rooted at an annotated
/// node. Trees are processed in parallel; the result does not depend on the
/// number of threads.
pub fn extract(corpus: &Corpus, max_depth: usize) -> Result<FragmentBank, FragmentError> {
    extract_with(corpus, max_depth, true)
}

/// Extracts from the corpus with all semantics removed, rooting fragments at
/// every node. Used as the syntax-only baseline.
pub fn extract_syntactic(corpus: &Corpus, max_depth: usize) -> Result<FragmentBank, FragmentError> {
    extract_with(&corpus.without_semantics(), max_depth, false)
}

fn extract_with(corpus: &Corpus, max_depth: usize, require_root_sem: bool) -> Result<FragmentBank, FragmentError> {
    if max_depth == 0 {
        return Err(FragmentError::BadDepth);
    }
    let per_tree: Vec<BTreeMap<String, (FragNode, u64)>> = corpus
        .trees
        .par_iter()
        .map(|t| {
            let ctx = TreeTypes::new(t);
            let mut counts: BTreeMap<String, (FragNode, u64)> = BTreeMap::new();
            t.root.walk(&NodePath::root(), &mut |path, n| {
                if require_root_sem && n.sem.is_none() {
                    return;
                }
                for f in expansions(n, path, max_depth, &ctx) {
                    let mut key = String::new();
                    f.write_key(&mut key);
                    counts.entry(key).or_insert((f, 0)).1 += 1;
                }
            });
            counts
        })
        .collect();
    let mut merged: BTreeMap<String, (FragNode, u64)> = BTreeMap::new();
    for m in per_tree {
        for (k, (f, c)) in m {
            merged.entry(k).or_insert((f, 0)).1 += c;
        }
    }
    let counts = merged
        .into_iter()
        .map(|(k, (root, c))| Ok((k, (Fragment::new(root)?, c))))
        .collect::<Result<BTreeMap<_, _>, FragmentError>>()?;
    let start = corpus.trees.iter().map(|t| t.root.cat.clone()).collect();
    log::debug!("extracted {} distinct fragments at depth ≤ {}", counts.len(), max_depth);
    FragmentBank::from_counts(max_depth, corpus.signature.clone(), start, counts)
}
