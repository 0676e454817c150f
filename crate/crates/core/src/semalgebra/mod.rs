//! Typed lambda-calculus kernel: types, terms, concrete syntax, type
//! checking, daughter schemas and canonical normal forms.

mod normal;
mod parse;
mod term;
mod types;
mod typing;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use normal::{equivalent, normalize};
pub use parse::{is_valid_constant_name, parse_formula, parse_term_str};
pub use term::{Connective, Quantifier, Term};
pub use types::SemType;
pub use typing::{infer_schema_type, type_of};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SemError {
    #[error("syntax error at offset {pos}: {message}")]
    Syntax { pos: usize, message: String },
    #[error("unknown constant `{0}`")]
    UnknownConstant(String),
    #[error("type mismatch in `{term}`: expected {expected}, found {actual}")]
    TypeMismatch {
        term: String,
        expected: String,
        actual: String,
    },
    #[error("ill-typed term `{term}`: {reason}")]
    IllTyped { term: String, reason: String },
    #[error("schema references d{index} but only {given} daughters were given")]
    Arity { index: u8, given: usize },
    #[error("schema references d{0}, whose meaning is not available")]
    MissingDaughter(u8),
}

/// Declared constants and their types.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "BTreeMap<String, SemType>", into = "BTreeMap<String, SemType>")]
pub struct Signature {
    constants: BTreeMap<String, SemType>,
}

impl Signature {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<&SemType> {
        self.constants.get(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, ty: SemType) -> Result<(), SemError> {
        let name = name.into();
        if !is_valid_constant_name(&name) {
            return Err(SemError::Syntax {
                pos: 0,
                message: format!("`{}` is not a valid constant name", name),
            });
        }
        self.constants.insert(name, ty);
        Ok(())
    }

    /// Builds a signature from `(name, type string)` pairs.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<Self, SemError> {
        let mut sig = Signature::new();
        for (name, ty) in pairs {
            sig.insert(name, ty.parse()?)?;
        }
        Ok(sig)
    }

    pub fn from_json_str(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("signature serializes")
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &SemType)> {
        self.constants.iter()
    }

    pub fn len(&self) -> usize {
        self.constants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constants.is_empty()
    }
}

impl TryFrom<BTreeMap<String, SemType>> for Signature {
    type Error = SemError;

    fn try_from(map: BTreeMap<String, SemType>) -> Result<Self, SemError> {
        let mut sig = Signature::new();
        for (name, ty) in map {
            sig.insert(name, ty)?;
        }
        Ok(sig)
    }
}

impl From<Signature> for BTreeMap<String, SemType> {
    fn from(sig: Signature) -> Self {
        sig.constants
    }
}

/// A formula template whose leaves may include daughter placeholders
/// `d1..d9`. Arity 0 means the schema is a closed formula.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Schema {
    template: Term,
    arity: u8,
}

impl Schema {
    /// Wraps a template, checking that it is typeable for some assignment of
    /// daughter types.
    pub fn new(template: Term) -> Result<Self, SemError> {
        if let Some(v) = template.free_vars().into_iter().next() {
            return Err(SemError::IllTyped {
                term: template.to_string(),
                reason: format!("free variable `{}`", v),
            });
        }
        infer_schema_type(&template, &[])?;
        let arity = template.max_placeholder();
        Ok(Schema { template, arity })
    }

    /// A schema for a closed formula, type-checked.
    pub fn closed(term: Term) -> Result<Self, SemError> {
        let s = Schema::new(term)?;
        if s.arity > 0 {
            return Err(SemError::Arity {
                index: s.arity,
                given: 0,
            });
        }
        type_of(&s.template)?;
        Ok(s)
    }

    pub fn template(&self) -> &Term {
        &self.template
    }

    pub fn arity(&self) -> u8 {
        self.arity
    }

    /// Type of the schema's result given the daughters' types; `None` when it
    /// depends on an unknown daughter.
    pub fn result_type(&self, daughters: &[Option<SemType>]) -> Result<Option<SemType>, SemError> {
        infer_schema_type(&self.template, daughters)
    }

    /// Checks the template against known daughter types. Daughters beyond
    /// the slice, or `None`, are unconstrained.
    pub fn check_daughter_types(&self, daughters: &[Option<SemType>]) -> Result<(), SemError> {
        infer_schema_type(&self.template, daughters).map(|_| ())
    }

    /// Replaces every placeholder `di` by `daughters[i-1]`. No reduction is
    /// performed. Daughters must be closed terms (unification variables are
    /// allowed).
    pub fn instantiate(&self, daughters: &[Term]) -> Result<Term, SemError> {
        if (self.arity as usize) > daughters.len() {
            return Err(SemError::Arity {
                index: self.arity,
                given: daughters.len(),
            });
        }
        let opts: Vec<Option<Term>> = daughters.iter().cloned().map(Some).collect();
        self.instantiate_partial(&opts)
    }

    /// Like `instantiate`, but daughters may be absent; referencing an absent
    /// daughter is a `MissingDaughter` error.
    pub fn instantiate_partial(&self, daughters: &[Option<Term>]) -> Result<Term, SemError> {
        for i in self.template.placeholders() {
            match daughters.get(i as usize - 1) {
                None => {
                    return Err(SemError::Arity {
                        index: i,
                        given: daughters.len(),
                    })
                }
                Some(None) => return Err(SemError::MissingDaughter(i)),
                Some(Some(_)) => {}
            }
        }
        let mut types = Vec::with_capacity(daughters.len());
        for d in daughters {
            types.push(match d {
                Some(t) => Some(type_of(t)?),
                None => None,
            });
        }
        infer_schema_type(&self.template, &types)?;
        let out = self.template.replace_leaves(&|t| match t {
            Term::Placeholder(i) => daughters[*i as usize - 1].clone(),
            _ => None,
        });
        type_of(&out)?;
        Ok(out)
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.template.fmt(f)
    }
}
