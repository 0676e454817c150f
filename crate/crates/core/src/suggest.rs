//! Annotation proposals from a first-order model over local productions.
//!
//! Three frequency tables are kept: internal nodes keyed by category and
//! daughter categories, lexical nodes keyed by category and word, and a
//! category-only backoff table fed by every annotated node. Schemas are
//! stored by their canonical serialization.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::semalgebra::{parse_formula, Schema, SemType, Signature};
use crate::treebank::{inferred_types, AnnotatedTree, Node, NodePath, TreebankError};

type Tally = BTreeMap<String, u64>;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SuggestionModel {
    signature: Signature,
    internal: BTreeMap<(String, Vec<String>), Tally>,
    lexical: BTreeMap<(String, String), Tally>,
    backoff: BTreeMap<String, Tally>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Alternative {
    pub schema: String,
    pub support: u64,
    pub backoff: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Suggestion {
    pub node_path: NodePath,
    #[serde(serialize_with = "ser_display")]
    pub proposal: Schema,
    pub support: u64,
    pub backoff: bool,
    /// Surviving candidates after the proposal, in rank order.
    pub alternatives: Vec<Alternative>,
}

fn ser_display<S: serde::Serializer>(s: &Schema, ser: S) -> Result<S::Ok, S::Error> {
    ser.collect_str(s)
}

#[derive(Debug, thiserror::Error)]
pub enum ModelFormatError {
    #[error("malformed model: {0}")]
    Shape(String),
    #[error("model formula `{formula}`: {source}")]
    Formula {
        formula: String,
        source: crate::semalgebra::SemError,
    },
}

fn internal_key(n: &Node) -> (String, Vec<String>) {
    (n.cat.clone(), n.children.iter().map(|c| c.cat.clone()).collect())
}

fn bump(t: &mut Tally, s: &str, delta: i64) {
    if delta > 0 {
        *t.entry(s.to_string()).or_insert(0) += delta as u64;
    } else if let Some(c) = t.get_mut(s) {
        *c = c.saturating_sub(delta.unsigned_abs());
        if *c == 0 {
            t.remove(s);
        }
    }
}

fn ranked(t: Option<&Tally>) -> Vec<(&str, u64)> {
    let mut v: Vec<(&str, u64)> = t.into_iter().flatten().map(|(s, c)| (s.as_str(), *c)).collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    v
}

impl SuggestionModel {
    pub fn new(signature: Signature) -> Self {
        SuggestionModel {
            signature,
            ..Default::default()
        }
    }

    pub fn train<'a>(signature: Signature, trees: impl IntoIterator<Item = &'a AnnotatedTree>) -> Self {
        let mut m = SuggestionModel::new(signature);
        for t in trees {
            m.observe(t);
        }
        m
    }

    pub fn signature(&self) -> &Signature {
        &self.signature
    }

    pub fn is_empty(&self) -> bool {
        self.backoff.is_empty()
    }

    /// Tallies every annotated node of `t`.
    pub fn observe(&mut self, t: &AnnotatedTree) {
        self.update(t, 1);
    }

    /// Removes the tallies contributed by an earlier `observe(t)`.
    pub fn forget(&mut self, t: &AnnotatedTree) {
        self.update(t, -1);
    }

    /// Tallies one annotated node in its context; unannotated nodes are
    /// ignored.
    pub fn observe_node(&mut self, n: &Node) {
        self.update_node(n, 1);
    }

    fn update(&mut self, t: &AnnotatedTree, delta: i64) {
        t.root.walk(&NodePath::root(), &mut |_, n| self.update_node(n, delta));
    }

    fn update_node(&mut self, n: &Node, delta: i64) {
        let Some(sem) = &n.sem else { return };
        let s = sem.to_string();
        match &n.word {
            Some(w) => {
                let key = (n.cat.clone(), w.clone());
                let tally = self.lexical.entry(key.clone()).or_default();
                bump(tally, &s, delta);
                if tally.is_empty() {
                    self.lexical.remove(&key);
                }
            }
            None => {
                let key = internal_key(n);
                let tally = self.internal.entry(key.clone()).or_default();
                bump(tally, &s, delta);
                if tally.is_empty() {
                    self.internal.remove(&key);
                }
            }
        }
        let tally = self.backoff.entry(n.cat.clone()).or_default();
        bump(tally, &s, delta);
        if tally.is_empty() {
            self.backoff.remove(&n.cat);
        }
    }

    /// Count of `schema` in the exact context of `node`.
    pub fn context_count(&self, node: &Node, schema: &str) -> u64 {
        self.exact_tally(node).and_then(|t| t.get(schema)).copied().unwrap_or(0)
    }

    /// Candidates for `node` in the exact context, ranked.
    pub fn context_ranking(&self, node: &Node) -> Vec<(String, u64)> {
        ranked(self.exact_tally(node))
            .into_iter()
            .map(|(s, c)| (s.to_string(), c))
            .collect()
    }

    fn exact_tally(&self, node: &Node) -> Option<&Tally> {
        match &node.word {
            Some(w) => self.lexical.get(&(node.cat.clone(), w.clone())),
            None => self.internal.get(&internal_key(node)),
        }
    }

    /// Proposal for the node at `path`, or `None` when no candidate
    /// survives the arity and daughter-type filters.
    pub fn suggest_node(&self, t: &AnnotatedTree, path: &NodePath) -> Result<Option<Suggestion>, TreebankError> {
        let node = t.root.get(path).ok_or(TreebankError::InvalidPath(path.to_string()))?;
        let types = inferred_types(t, &self.signature);
        let daughter_types: Vec<Option<SemType>> = (0..node.children.len())
            .map(|i| types.get(&path.child(i)).cloned())
            .collect();
        Ok(self.suggest_with(node, path, &daughter_types))
    }

    fn suggest_with(&self, node: &Node, path: &NodePath, daughter_types: &[Option<SemType>]) -> Option<Suggestion> {
        let admissible = |s: &str| -> Option<Schema> {
            let schema = parse_formula(s, &self.signature).ok()?;
            if schema.arity() as usize > node.children.len() {
                return None;
            }
            if node.word.is_some() && schema.arity() > 0 {
                return None;
            }
            schema.check_daughter_types(daughter_types).ok()?;
            Some(schema)
        };
        let mut survivors: Vec<(Schema, String, u64, bool)> = Vec::new();
        for (backoff, tally) in [(false, self.exact_tally(node)), (true, self.backoff.get(&node.cat))] {
            for (s, c) in ranked(tally) {
                if survivors.iter().any(|x| x.1 == s) {
                    continue;
                }
                if let Some(schema) = admissible(s) {
                    survivors.push((schema, s.to_string(), c, backoff));
                }
            }
        }
        let mut it = survivors.into_iter();
        let (proposal, _, support, backoff) = it.next()?;
        Some(Suggestion {
            node_path: path.clone(),
            proposal,
            support,
            backoff,
            alternatives: it
                .map(|(_, schema, support, backoff)| Alternative {
                    schema,
                    support,
                    backoff,
                })
                .collect(),
        })
    }

    /// Suggestions for every unannotated node of `t`, in preorder.
    pub fn suggestions_for(&self, t: &AnnotatedTree) -> Vec<Suggestion> {
        t.unannotated_paths()
            .iter()
            .filter_map(|p| self.suggest_node(t, p).ok().flatten())
            .collect()
    }

    pub fn to_json(&self) -> Value {
        let internal: Vec<Value> = self
            .internal
            .iter()
            .map(|((cat, ds), t)| serde_json::json!({"cat": cat, "daughters": ds, "schemas": t}))
            .collect();
        let lexical: Vec<Value> = self
            .lexical
            .iter()
            .map(|((cat, w), t)| serde_json::json!({"cat": cat, "word": w, "schemas": t}))
            .collect();
        let backoff: Vec<Value> = self
            .backoff
            .iter()
            .map(|(cat, t)| serde_json::json!({"cat": cat, "schemas": t}))
            .collect();
        serde_json::json!({
            "signature": self.signature.to_json(),
            "internal": internal,
            "lexical": lexical,
            "backoff": backoff,
        })
    }

    pub fn from_json(v: &Value) -> Result<Self, ModelFormatError> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Row {
            cat: String,
            #[serde(default)]
            daughters: Option<Vec<String>>,
            #[serde(default)]
            word: Option<String>,
            schemas: Tally,
        }
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Doc {
            signature: Signature,
            internal: Vec<Row>,
            lexical: Vec<Row>,
            backoff: Vec<Row>,
        }
        let doc: Doc = serde_json::from_value(v.clone()).map_err(|e| ModelFormatError::Shape(e.to_string()))?;
        let mut m = SuggestionModel::new(doc.signature);
        let check = |t: &Tally, sig: &Signature| -> Result<(), ModelFormatError> {
            for (s, c) in t {
                if *c == 0 {
                    return Err(ModelFormatError::Shape(format!("zero count for `{}`", s)));
                }
                let schema = parse_formula(s, sig).map_err(|source| ModelFormatError::Formula {
                    formula: s.clone(),
                    source,
                })?;
                if schema.to_string() != *s {
                    return Err(ModelFormatError::Shape(format!("`{}` is not in canonical form", s)));
                }
            }
            Ok(())
        };
        for r in doc.internal {
            check(&r.schemas, &m.signature)?;
            let ds = r
                .daughters
                .ok_or_else(|| ModelFormatError::Shape("internal row without daughters".into()))?;
            m.internal.insert((r.cat, ds), r.schemas);
        }
        for r in doc.lexical {
            check(&r.schemas, &m.signature)?;
            let w = r
                .word
                .ok_or_else(|| ModelFormatError::Shape("lexical row without word".into()))?;
            m.lexical.insert((r.cat, w), r.schemas);
        }
        for r in doc.backoff {
            check(&r.schemas, &m.signature)?;
            m.backoff.insert(r.cat, r.schemas);
        }
        Ok(m)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Tallies {
    pub correct: usize,
    pub total: usize,
}

impl Tallies {
    fn add(&mut self, ok: bool) {
        self.total += 1;
        self.correct += usize::from(ok);
    }

    pub fn accuracy(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }

    fn to_json(self) -> Value {
        serde_json::json!({
            "correct": self.correct,
            "total": self.total,
            "accuracy": self.accuracy(),
            "empty": self.total == 0,
        })
    }
}

/// Node-level accuracy of top proposals on gold trees. Each annotated node
/// is scored by hiding its own annotation and keeping the rest of the gold
/// tree in place.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CoverageReport {
    pub overall: Tallies,
    pub internal: Tallies,
    pub lexical: Tallies,
    pub exact: Tallies,
    pub backoff: Tallies,
    pub no_proposal: usize,
}

impl CoverageReport {
    pub fn to_json(&self) -> Value {
        serde_json::json!({
            "overall": self.overall.to_json(),
            "internal": self.internal.to_json(),
            "lexical": self.lexical.to_json(),
            "exact": self.exact.to_json(),
            "backoff": self.backoff.to_json(),
            "noProposal": self.no_proposal,
        })
    }
}

pub fn coverage_report<'a>(
    m: &SuggestionModel,
    held_out: impl IntoIterator<Item = &'a AnnotatedTree>,
) -> CoverageReport {
    let mut r = CoverageReport::default();
    for t in held_out {
        let mut paths = Vec::new();
        t.root.walk(&NodePath::root(), &mut |p, n| {
            if let Some(s) = &n.sem {
                paths.push((p.clone(), s.to_string(), n.word.is_some()));
            }
        });
        for (path, gold, lexical) in paths {
            let mut hidden = t.clone();
            if let Some(n) = hidden.root.get_mut(&path) {
                n.sem = None;
            }
            let s = m.suggest_node(&hidden, &path).ok().flatten();
            let ok = s.as_ref().is_some_and(|s| s.proposal.to_string() == gold);
            r.overall.add(ok);
            if lexical {
                r.lexical.add(ok);
            } else {
                r.internal.add(ok);
            }
            match &s {
                Some(s) if s.backoff => r.backoff.add(ok),
                Some(_) => r.exact.add(ok),
                None => r.no_proposal += 1,
            }
        }
    }
    r
}
