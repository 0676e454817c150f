//! Annotation state: the base corpus, the journal of committed
//! annotations, and the suggestion model trained on the current trees.

use std::collections::{BTreeMap, HashSet};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use dop_core::semalgebra::{normalize, parse_formula, type_of, Signature};
use dop_core::suggest::{Suggestion, SuggestionModel};
use dop_core::treebank::{
    expand_available, inferred_types, parse_corpus_text, parse_tree_json, read_signature, validate_tree, AnnotatedTree,
    NodePath, Strictness, TreebankError, Violation,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct JournalEntry {
    pub tree_id: String,
    pub node_path: NodePath,
    pub sem: String,
    pub timestamp: String,
    pub accepted_from_suggestion: bool,
}

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub corpus: PathBuf,
    pub signature: PathBuf,
    /// Defaults to `<corpus>.journal.jsonl` beside the corpus file.
    pub journal: Option<PathBuf>,
    /// Timestamps count seconds from the epoch by journal position instead
    /// of reading the wall clock.
    pub logical_clock: bool,
}

impl SessionConfig {
    pub fn journal_path(&self) -> PathBuf {
        self.journal.clone().unwrap_or_else(|| {
            let mut name = self.corpus.file_name().unwrap_or_default().to_os_string();
            name.push(".journal.jsonl");
            self.corpus.with_file_name(name)
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error(transparent)]
    Treebank(#[from] TreebankError),
    #[error("{path}: tree `{tree}` at node `{}`: {}", violation.path, violation.message)]
    Corpus {
        path: PathBuf,
        tree: String,
        violation: Violation,
    },
    #[error("{path}: duplicate tree id `{id}`")]
    DuplicateId { path: PathBuf, id: String },
    #[error("{path}:{line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}:{line}: {message}")]
    Journal {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CommitError {
    #[error("no tree with id `{0}`")]
    NotFound(String),
    #[error("no node at path `{0}`")]
    InvalidPath(String),
    #[error("annotation rejected")]
    Rejected(Vec<Violation>),
    #[error("journal write failed: {0}")]
    Io(String),
}

pub struct Session {
    signature: Signature,
    trees: Vec<AnnotatedTree>,
    journal_path: PathBuf,
    journal: Vec<JournalEntry>,
    model: SuggestionModel,
    logical_clock: bool,
}

impl Session {
    /// Loads the corpus leniently (unannotated nodes are allowed) and
    /// replays the journal, re-checking every entry.
    pub fn open(config: &SessionConfig) -> Result<Session, SessionError> {
        let signature = read_signature(&config.signature)?;
        let text = std::fs::read_to_string(&config.corpus).map_err(|source| SessionError::Io {
            path: config.corpus.clone(),
            source,
        })?;
        let (trees, violations) = parse_corpus_text(&text, &signature).map_err(|e| match e {
            TreebankError::Format { line, message } => SessionError::Format {
                path: config.corpus.clone(),
                line,
                message,
            },
            other => other.into(),
        })?;
        if let Some((tree, violation)) = violations.into_iter().next() {
            return Err(SessionError::Corpus {
                path: config.corpus.clone(),
                tree,
                violation,
            });
        }
        let mut seen = HashSet::new();
        for t in &trees {
            if !seen.insert(t.id.clone()) {
                return Err(SessionError::DuplicateId {
                    path: config.corpus.clone(),
                    id: t.id.clone(),
                });
            }
            if let Some(violation) = validate_tree(t, &signature, Strictness::Lenient).into_iter().next() {
                return Err(SessionError::Corpus {
                    path: config.corpus.clone(),
                    tree: t.id.clone(),
                    violation,
                });
            }
        }
        let model = SuggestionModel::train(signature.clone(), &trees);
        let mut session = Session {
            signature,
            trees,
            journal_path: config.journal_path(),
            journal: Vec::new(),
            model,
            logical_clock: config.logical_clock,
        };
        session.replay()?;
        Ok(session)
    }

    fn replay(&mut self) -> Result<(), SessionError> {
        let path = self.journal_path.clone();
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
            Err(source) => return Err(SessionError::Io { path, source }),
        };
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fail = |message: String| SessionError::Journal {
                path: path.clone(),
                line: i + 1,
                message,
            };
            let entry: JournalEntry = serde_json::from_str(line).map_err(|e| fail(e.to_string()))?;
            let updated = self
                .checked_update(&entry.tree_id, &entry.node_path, &entry.sem)
                .map_err(|e| match e {
                    CommitError::Rejected(vs) => fail(vs.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")),
                    other => fail(other.to_string()),
                })?;
            self.apply(updated);
            self.journal.push(entry);
        }
        log::info!(
            "replayed {} journal entries from {}",
            self.journal.len(),
            path.display()
        );
        Ok(())
    }

    pub fn signature(&self) -> &Signature {
        &self.signature
    }

    pub fn trees(&self) -> &[AnnotatedTree] {
        &self.trees
    }

    pub fn tree(&self, id: &str) -> Option<&AnnotatedTree> {
        self.trees.iter().find(|t| t.id == id)
    }

    pub fn journal(&self) -> &[JournalEntry] {
        &self.journal
    }

    pub fn journal_path(&self) -> &Path {
        &self.journal_path
    }

    pub fn model(&self) -> &SuggestionModel {
        &self.model
    }

    /// First tree in corpus order with a missing annotation, and its first
    /// unannotated node in preorder.
    pub fn next_unannotated(&self) -> Option<(&AnnotatedTree, NodePath)> {
        self.trees
            .iter()
            .find_map(|t| t.unannotated_paths().into_iter().next().map(|p| (t, p)))
    }

    pub fn suggestions(&self, id: &str) -> Option<Vec<Suggestion>> {
        self.tree(id).map(|t| self.model.suggestions_for(t))
    }

    /// Expanded formula of every node whose meaning is computable, with its
    /// normal form and type.
    pub fn expanded(&self, id: &str) -> Option<BTreeMap<String, Value>> {
        let t = self.tree(id)?;
        Some(
            expand_available(t)
                .into_iter()
                .map(|(p, term)| {
                    let v = json!({
                        "formula": term.to_string(),
                        "normalized": normalize(&term).to_string(),
                        "type": type_of(&term).ok().map(|ty| ty.to_string()),
                    });
                    (p.to_string(), v)
                })
                .collect(),
        )
    }

    /// The corpus with every committed annotation applied.
    pub fn corpus_jsonl(&self) -> String {
        self.trees.iter().map(|t| t.to_json().to_string() + "\n").collect()
    }

    fn checked_update(&self, id: &str, path: &NodePath, sem: &str) -> Result<(usize, AnnotatedTree), CommitError> {
        let index = self
            .trees
            .iter()
            .position(|t| t.id == id)
            .ok_or_else(|| CommitError::NotFound(id.to_string()))?;
        let mut updated = self.trees[index].clone();
        let node = updated
            .root
            .get_mut(path)
            .ok_or_else(|| CommitError::InvalidPath(path.to_string()))?;
        let schema = parse_formula(sem, &self.signature)
            .map_err(|e| CommitError::Rejected(vec![Violation::from_sem_error(path.clone(), &e)]))?;
        node.sem = Some(schema);
        let violations = validate_tree(&updated, &self.signature, Strictness::Lenient);
        if !violations.is_empty() {
            return Err(CommitError::Rejected(violations));
        }
        Ok((index, updated))
    }

    fn apply(&mut self, (index, updated): (usize, AnnotatedTree)) {
        self.model.forget(&self.trees[index]);
        self.model.observe(&updated);
        self.trees[index] = updated;
    }

    fn timestamp(&self) -> String {
        let at = if self.logical_clock {
            DateTime::<Utc>::from_timestamp(self.journal.len() as i64 + 1, 0).expect("small timestamp")
        } else {
            Utc::now()
        };
        at.to_rfc3339_opts(SecondsFormat::Millis, true)
    }

    /// Type-checks the annotation in the context of its tree, appends it to
    /// the journal and applies it. A re-annotated node keeps only its latest
    /// formula; the journal keeps the history.
    pub fn annotate(&mut self, id: &str, path: &NodePath, sem: &str) -> Result<JournalEntry, CommitError> {
        let updated = self.checked_update(id, path, sem)?;
        let canonical = updated
            .1
            .root
            .get(path)
            .and_then(|n| n.sem.as_ref())
            .expect("just set")
            .to_string();
        let accepted_from_suggestion = self
            .model
            .suggest_node(&self.trees[updated.0], path)
            .ok()
            .flatten()
            .is_some_and(|s| s.proposal.to_string() == canonical);
        let entry = JournalEntry {
            tree_id: id.to_string(),
            node_path: path.clone(),
            sem: sem.to_string(),
            timestamp: self.timestamp(),
            accepted_from_suggestion,
        };
        let line = serde_json::to_string(&entry).expect("entry serializes") + "\n";
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.journal_path)
            .map_err(|e| CommitError::Io(e.to_string()))?;
        file.write_all(line.as_bytes())
            .and_then(|_| file.sync_data())
            .map_err(|e| CommitError::Io(e.to_string()))?;
        self.apply(updated);
        self.journal.push(entry.clone());
        Ok(entry)
    }

    /// Checks a submitted tree against the signature without storing it.
    pub fn typecheck(&self, tree: &Value) -> Result<Value, String> {
        let (t, mut violations) = parse_tree_json(tree, &self.signature)?;
        violations.extend(validate_tree(&t, &self.signature, Strictness::Lenient));
        let types: BTreeMap<String, String> = inferred_types(&t, &self.signature)
            .into_iter()
            .map(|(p, ty)| (p.to_string(), ty.to_string()))
            .collect();
        Ok(json!({
            "ok": violations.is_empty(),
            "violations": violations,
            "types": types,
        }))
    }
}
