//! Semantically annotated syntax trees: data model, JSONL corpus format,
//! validation and bottom-up expansion of daughter schemas.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;

use crate::semalgebra::{parse_formula, Schema, SemError, SemType, Signature, Term};

#[derive(Debug, thiserror::Error)]
pub enum TreebankError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("invalid signature: {0}")]
    Signature(String),
    #[error("{} validation failure(s); first: tree {}: {}", .0.len(), .0[0].0, .0[0].1)]
    Validation(Vec<(String, Violation)>),
    #[error("node {0} has no semantics but its parent's schema references it")]
    MissingSemantics(NodePath),
    #[error("no node at path `{0}`")]
    InvalidPath(String),
}

/// Address of a node: 0-based child indices from the root, written `0.1`.
/// The root is the empty path.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodePath(pub Vec<usize>);

impl NodePath {
    pub fn root() -> Self {
        NodePath(Vec::new())
    }

    pub fn child(&self, i: usize) -> Self {
        let mut v = self.0.clone();
        v.push(i);
        NodePath(v)
    }

    pub fn is_root(&self) -> bool {
        self.0.is_empty()
    }

    /// True if `self` lies strictly below `other`.
    pub fn is_strictly_below(&self, other: &NodePath) -> bool {
        self.0.len() > other.0.len() && self.0.starts_with(&other.0)
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }
}

impl fmt::Display for NodePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, i) in self.0.iter().enumerate() {
            if k > 0 {
                f.write_str(".")?;
            }
            write!(f, "{}", i)?;
        }
        Ok(())
    }
}

impl FromStr for NodePath {
    type Err = TreebankError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.is_empty() {
            return Ok(NodePath::root());
        }
        s.split('.')
            .map(|p| p.parse::<usize>())
            .collect::<Result<Vec<_>, _>>()
            .map(NodePath)
            .map_err(|_| TreebankError::InvalidPath(s.to_string()))
    }
}

impl Serialize for NodePath {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NodePath {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Node {
    pub cat: String,
    pub sem: Option<Schema>,
    pub children: Vec<Node>,
    pub word: Option<String>,
}

impl Node {
    pub fn lexical(cat: impl Into<String>, word: impl Into<String>, sem: Option<Schema>) -> Node {
        Node {
            cat: cat.into(),
            sem,
            children: Vec::new(),
            word: Some(word.into()),
        }
    }

    pub fn internal(cat: impl Into<String>, sem: Option<Schema>, children: Vec<Node>) -> Node {
        Node {
            cat: cat.into(),
            sem,
            children,
            word: None,
        }
    }

    pub fn is_lexical(&self) -> bool {
        self.children.is_empty()
    }

    pub fn get(&self, path: &NodePath) -> Option<&Node> {
        path.0.iter().try_fold(self, |n, &i| n.children.get(i))
    }

    pub fn get_mut(&mut self, path: &NodePath) -> Option<&mut Node> {
        path.0.iter().try_fold(self, |n, &i| n.children.get_mut(i))
    }

    /// Leaf words left to right.
    pub fn words(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.walk(&NodePath::root(), &mut |_, n| {
            if let Some(w) = &n.word {
                out.push(w.clone());
            }
        });
        out
    }

    /// Pre-order traversal with paths.
    pub fn walk<'a>(&'a self, path: &NodePath, f: &mut impl FnMut(&NodePath, &'a Node)) {
        f(path, self);
        for (i, c) in self.children.iter().enumerate() {
            c.walk(&path.child(i), f);
        }
    }

    /// Category-labelled bracketing without semantics, e.g.
    /// `(S (NP (Det a) (N man)) (VP whistles))`.
    pub fn bracketing(&self) -> String {
        let mut s = String::new();
        self.write_bracketing(&mut s);
        s
    }

    fn write_bracketing(&self, out: &mut String) {
        out.push('(');
        out.push_str(&self.cat);
        if let Some(w) = &self.word {
            out.push(' ');
            out.push_str(w);
        }
        for c in &self.children {
            out.push(' ');
            c.write_bracketing(out);
        }
        out.push(')');
    }

    pub fn to_json(&self) -> Value {
        let mut m = serde_json::Map::new();
        m.insert("cat".into(), Value::String(self.cat.clone()));
        m.insert(
            "sem".into(),
            self.sem.as_ref().map_or(Value::Null, |s| Value::String(s.to_string())),
        );
        match &self.word {
            Some(w) if self.children.is_empty() => {
                m.insert("word".into(), Value::String(w.clone()));
            }
            _ => {
                m.insert(
                    "children".into(),
                    Value::Array(self.children.iter().map(Node::to_json).collect()),
                );
            }
        }
        Value::Object(m)
    }

    pub fn count_nodes(&self) -> usize {
        1 + self.children.iter().map(Node::count_nodes).sum::<usize>()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnnotatedTree {
    pub id: String,
    pub sentence: Vec<String>,
    pub root: Node,
}

impl AnnotatedTree {
    pub fn to_json(&self) -> Value {
        serde_json::json!({
            "id": self.id,
            "sentence": self.sentence,
            "root": self.root.to_json(),
        })
    }

    /// Paths of nodes without semantics, in pre-order.
    pub fn unannotated_paths(&self) -> Vec<NodePath> {
        let mut out = Vec::new();
        self.root.walk(&NodePath::root(), &mut |p, n| {
            if n.sem.is_none() {
                out.push(p.clone());
            }
        });
        out
    }

    pub fn is_fully_annotated(&self) -> bool {
        self.unannotated_paths().is_empty()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Corpus {
    pub signature: Signature,
    pub trees: Vec<AnnotatedTree>,
}

impl Corpus {
    pub fn get(&self, id: &str) -> Option<&AnnotatedTree> {
        self.trees.iter().find(|t| t.id == id)
    }

    /// JSON Lines serialization, one tree per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for t in &self.trees {
            out.push_str(&t.to_json().to_string());
            out.push('\n');
        }
        out
    }

    /// Copy with every annotation removed.
    pub fn without_semantics(&self) -> Corpus {
        fn strip(n: &Node) -> Node {
            Node {
                cat: n.cat.clone(),
                sem: None,
                children: n.children.iter().map(strip).collect(),
                word: n.word.clone(),
            }
        }
        Corpus {
            signature: self.signature.clone(),
            trees: self
                .trees
                .iter()
                .map(|t| AnnotatedTree {
                    id: t.id.clone(),
                    sentence: t.sentence.clone(),
                    root: strip(&t.root),
                })
                .collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    Arity,
    Type,
    UnknownConstant,
    MissingDaughterSem,
    Syntax,
    Structure,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub path: NodePath,
    pub kind: ViolationKind,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = serde_json::to_value(self.kind).expect("kind serializes");
        write!(
            f,
            "node `{}` [{}]: {}",
            self.path,
            kind.as_str().unwrap_or_default(),
            self.message
        )
    }
}

impl Violation {
    pub fn from_sem_error(path: NodePath, err: &SemError) -> Violation {
        let kind = match err {
            SemError::Syntax { .. } => ViolationKind::Syntax,
            SemError::UnknownConstant(_) => ViolationKind::UnknownConstant,
            SemError::TypeMismatch { .. } | SemError::IllTyped { .. } => ViolationKind::Type,
            SemError::Arity { .. } => ViolationKind::Arity,
            SemError::MissingDaughter(_) => ViolationKind::MissingDaughterSem,
        };
        Violation {
            path,
            kind,
            message: err.to_string(),
        }
    }
}

/// How schemas that reference unannotated daughters are treated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strictness {
    /// Referencing a daughter without semantics is a violation.
    Strict,
    /// Such daughters are treated as having an unknown type; used while a
    /// tree is being annotated.
    Lenient,
}

/// Parses one corpus line. Formula errors do not abort parsing: the
/// offending node is left unannotated and the error is returned as a
/// violation.
pub fn parse_tree_json(value: &Value, sig: &Signature) -> Result<(AnnotatedTree, Vec<Violation>), String> {
    let obj = value.as_object().ok_or("tree must be a JSON object")?;
    let id = obj
        .get("id")
        .and_then(Value::as_str)
        .ok_or("missing string field `id`")?
        .to_string();
    let sentence = obj
        .get("sentence")
        .and_then(Value::as_array)
        .ok_or("missing array field `sentence`")?
        .iter()
        .map(|v| v.as_str().map(str::to_string).ok_or("sentence tokens must be strings"))
        .collect::<Result<Vec<_>, _>>()?;
    let mut violations = Vec::new();
    let root = parse_node(
        obj.get("root").ok_or("missing field `root`")?,
        sig,
        NodePath::root(),
        &mut violations,
    )?;
    Ok((AnnotatedTree { id, sentence, root }, violations))
}

fn parse_node(v: &Value, sig: &Signature, path: NodePath, violations: &mut Vec<Violation>) -> Result<Node, String> {
    let obj = v
        .as_object()
        .ok_or_else(|| format!("node {}: must be a JSON object", path))?;
    let cat = obj
        .get("cat")
        .and_then(Value::as_str)
        .ok_or_else(|| format!("node `{}`: missing string field `cat`", path))?
        .to_string();
    let sem = match obj.get("sem") {
        None | Some(Value::Null) => None,
        Some(Value::String(text)) => match parse_formula(text, sig) {
            Ok(s) => Some(s),
            Err(e) => {
                violations.push(Violation::from_sem_error(path.clone(), &e));
                None
            }
        },
        Some(_) => return Err(format!("node `{}`: `sem` must be a string or null", path)),
    };
    match (obj.get("word"), obj.get("children")) {
        (Some(Value::String(w)), None) => Ok(Node::lexical(cat, w.clone(), sem)),
        (None, Some(Value::Array(kids))) => {
            let children = kids
                .iter()
                .enumerate()
                .map(|(i, k)| parse_node(k, sig, path.child(i), violations))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Node::internal(cat, sem, children))
        }
        _ => Err(format!(
            "node `{}`: exactly one of `word` (string) or `children` (array) is required",
            path
        )),
    }
}

/// Violations keyed by tree id.
pub type TreeViolations = Vec<(String, Violation)>;

/// Parses JSONL text. Blank lines are skipped. Returns trees and the
/// violations found per tree id.
pub fn parse_corpus_text(text: &str, sig: &Signature) -> Result<(Vec<AnnotatedTree>, TreeViolations), TreebankError> {
    let mut trees = Vec::new();
    let mut violations = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(line).map_err(|e| TreebankError::Format {
            line: i + 1,
            message: format!("column {}: {}", e.column(), e),
        })?;
        let (tree, vs) =
            parse_tree_json(&value, sig).map_err(|message| TreebankError::Format { line: i + 1, message })?;
        violations.extend(vs.into_iter().map(|v| (tree.id.clone(), v)));
        trees.push(tree);
    }
    Ok((trees, violations))
}

pub fn read_signature(path: &Path) -> Result<Signature, TreebankError> {
    let text = std::fs::read_to_string(path).map_err(|source| TreebankError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Signature::from_json_str(&text).map_err(|e| TreebankError::Signature(e.to_string()))
}

/// Loads and fully validates a corpus.
pub fn load_corpus(corpus_path: &Path, signature_path: &Path) -> Result<Corpus, TreebankError> {
    let signature = read_signature(signature_path)?;
    let text = std::fs::read_to_string(corpus_path).map_err(|source| TreebankError::Io {
        path: corpus_path.to_path_buf(),
        source,
    })?;
    corpus_from_str(&text, signature)
}

pub fn corpus_from_str(text: &str, signature: Signature) -> Result<Corpus, TreebankError> {
    let (trees, mut violations) = parse_corpus_text(text, &signature)?;
    let mut seen = HashSet::new();
    for t in &trees {
        if !seen.insert(t.id.as_str()) {
            violations.push((
                t.id.clone(),
                Violation {
                    path: NodePath::root(),
                    kind: ViolationKind::Structure,
                    message: format!("duplicate tree id `{}`", t.id),
                },
            ));
        }
        for v in validate_tree(t, &signature, Strictness::Strict) {
            violations.push((t.id.clone(), v));
        }
    }
    if !violations.is_empty() {
        return Err(TreebankError::Validation(violations));
    }
    Ok(Corpus { signature, trees })
}

/// Categories are non-empty and free of whitespace and `(){}"@`, which the
/// fragment key syntax reserves.
pub fn is_valid_category(cat: &str) -> bool {
    !cat.is_empty() && !cat.chars().any(|c| c.is_whitespace() || "(){}\"@".contains(c))
}

/// Checks structure and the typing of every annotated node. An empty result
/// means the tree is valid.
pub fn validate_tree(t: &AnnotatedTree, sig: &Signature, mode: Strictness) -> Vec<Violation> {
    let mut out = Vec::new();
    if t.root.words() != t.sentence {
        out.push(Violation {
            path: NodePath::root(),
            kind: ViolationKind::Structure,
            message: "leaf words do not match the sentence".into(),
        });
    }
    check_node(&t.root, &NodePath::root(), sig, mode, &mut out, &mut BTreeMap::new());
    out
}

/// Semantic type of every node whose type is determined by its own
/// annotation and what is known below it. Unannotated daughters count as
/// unknown.
pub fn inferred_types(t: &AnnotatedTree, sig: &Signature) -> BTreeMap<NodePath, SemType> {
    let mut types = BTreeMap::new();
    check_node(
        &t.root,
        &NodePath::root(),
        sig,
        Strictness::Lenient,
        &mut Vec::new(),
        &mut types,
    );
    types
}

/// Returns the node's semantic type if it is determined.
fn check_node(
    n: &Node,
    path: &NodePath,
    sig: &Signature,
    mode: Strictness,
    out: &mut Vec<Violation>,
    types: &mut BTreeMap<NodePath, SemType>,
) -> Option<SemType> {
    let ty = check_node_inner(n, path, sig, mode, out, types);
    if let Some(ty) = &ty {
        types.insert(path.clone(), ty.clone());
    }
    ty
}

fn check_node_inner(
    n: &Node,
    path: &NodePath,
    sig: &Signature,
    mode: Strictness,
    out: &mut Vec<Violation>,
    types: &mut BTreeMap<NodePath, SemType>,
) -> Option<SemType> {
    if !is_valid_category(&n.cat) {
        out.push(Violation {
            path: path.clone(),
            kind: ViolationKind::Structure,
            message: format!("invalid category `{}`", n.cat),
        });
    }
    if n.children.is_empty() != n.word.is_some() {
        out.push(Violation {
            path: path.clone(),
            kind: ViolationKind::Structure,
            message: "a node has either a word or children".into(),
        });
    }
    let daughter_types: Vec<Option<SemType>> = n
        .children
        .iter()
        .enumerate()
        .map(|(i, c)| check_node(c, &path.child(i), sig, mode, out, types))
        .collect();
    let schema = n.sem.as_ref()?;
    let before = out.len();
    for (name, ty) in schema.template().constants() {
        if sig.get(&name) != Some(&ty) {
            out.push(Violation {
                path: path.clone(),
                kind: ViolationKind::UnknownConstant,
                message: format!("constant `{}` of type {} is not declared", name, ty),
            });
        }
    }
    if schema.arity() as usize > n.children.len() {
        out.push(Violation {
            path: path.clone(),
            kind: ViolationKind::Arity,
            message: format!(
                "schema references d{} but the node has {} daughter(s)",
                schema.arity(),
                n.children.len()
            ),
        });
    }
    if mode == Strictness::Strict {
        for i in schema.template().placeholders() {
            if let Some(c) = n.children.get(i as usize - 1) {
                if c.sem.is_none() {
                    out.push(Violation {
                        path: path.clone(),
                        kind: ViolationKind::MissingDaughterSem,
                        message: format!("schema references d{}, which has no semantics", i),
                    });
                }
            }
        }
    }
    if out.len() > before {
        return None;
    }
    match schema.result_type(&daughter_types) {
        Ok(ty) => ty,
        Err(e) => {
            out.push(Violation::from_sem_error(path.clone(), &e));
            None
        }
    }
}

/// Expanded (instantiated, unreduced) semantics of every annotated node.
/// Fails if a schema references a daughter without semantics.
pub fn expand_semantics(t: &AnnotatedTree) -> Result<BTreeMap<NodePath, Term>, TreebankError> {
    let mut out = BTreeMap::new();
    expand_node(&t.root, &NodePath::root(), true, &mut out)?;
    Ok(out)
}

/// Like `expand_semantics`, but nodes whose expansion is not computable
/// (missing or ill-typed daughters) are omitted instead of failing.
pub fn expand_available(t: &AnnotatedTree) -> BTreeMap<NodePath, Term> {
    let mut out = BTreeMap::new();
    let _ = expand_node(&t.root, &NodePath::root(), false, &mut out);
    out
}

fn expand_node(
    n: &Node,
    path: &NodePath,
    strict: bool,
    out: &mut BTreeMap<NodePath, Term>,
) -> Result<Option<Term>, TreebankError> {
    let mut daughters = Vec::with_capacity(n.children.len());
    for (i, c) in n.children.iter().enumerate() {
        daughters.push(expand_node(c, &path.child(i), strict, out)?);
    }
    let Some(schema) = &n.sem else {
        return Ok(None);
    };
    match schema.instantiate_partial(&daughters) {
        Ok(term) => {
            out.insert(path.clone(), term.clone());
            Ok(Some(term))
        }
        Err(SemError::MissingDaughter(i)) if strict => Err(TreebankError::MissingSemantics(path.child(i as usize - 1))),
        Err(_) if !strict => Ok(None),
        Err(e) => Err(TreebankError::Validation(vec![(
            String::new(),
            Violation::from_sem_error(path.clone(), &e),
        )])),
    }
}
