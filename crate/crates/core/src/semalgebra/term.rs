use std::collections::BTreeSet;
use std::fmt;

use super::SemType;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Connective {
    And,
    Or,
    Not,
    Implies,
}

impl Connective {
    pub fn keyword(self) -> &'static str {
        match self {
            Connective::And => "and",
            Connective::Or => "or",
            Connective::Not => "not",
            Connective::Implies => "implies",
        }
    }

    pub fn is_commutative(self) -> bool {
        matches!(self, Connective::And | Connective::Or)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Quantifier {
    Exists,
    Forall,
}

impl Quantifier {
    pub fn keyword(self) -> &'static str {
        match self {
            Quantifier::Exists => "exists",
            Quantifier::Forall => "forall",
        }
    }
}

/// A formula of typed higher-order logic.
///
/// `Placeholder(i)` stands for the meaning of the i-th daughter (1-based) and
/// only occurs inside schema templates. `UVar` is a typed unification
/// variable left behind at a fragment's substitution site.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Term {
    Var(String, SemType),
    Const(String, SemType),
    App(Box<Term>, Box<Term>),
    Lam(String, SemType, Box<Term>),
    Conn(Connective, Vec<Term>),
    Quant(Quantifier, String, SemType, Box<Term>),
    Eq(Box<Term>, Box<Term>),
    UVar(u32, SemType),
    Placeholder(u8),
}

impl Term {
    pub fn var(name: impl Into<String>, ty: SemType) -> Term {
        Term::Var(name.into(), ty)
    }

    pub fn constant(name: impl Into<String>, ty: SemType) -> Term {
        Term::Const(name.into(), ty)
    }

    pub fn app(fun: Term, arg: Term) -> Term {
        Term::App(Box::new(fun), Box::new(arg))
    }

    pub fn lam(var: impl Into<String>, ty: SemType, body: Term) -> Term {
        Term::Lam(var.into(), ty, Box::new(body))
    }

    pub fn quant(kind: Quantifier, var: impl Into<String>, ty: SemType, body: Term) -> Term {
        Term::Quant(kind, var.into(), ty, Box::new(body))
    }

    pub fn exists(var: impl Into<String>, ty: SemType, body: Term) -> Term {
        Term::quant(Quantifier::Exists, var, ty, body)
    }

    pub fn forall(var: impl Into<String>, ty: SemType, body: Term) -> Term {
        Term::quant(Quantifier::Forall, var, ty, body)
    }

    pub fn and(args: Vec<Term>) -> Term {
        Term::Conn(Connective::And, args)
    }

    pub fn or(args: Vec<Term>) -> Term {
        Term::Conn(Connective::Or, args)
    }

    pub fn negation(arg: Term) -> Term {
        Term::Conn(Connective::Not, vec![arg])
    }

    pub fn implies(lhs: Term, rhs: Term) -> Term {
        Term::Conn(Connective::Implies, vec![lhs, rhs])
    }

    pub fn eq(lhs: Term, rhs: Term) -> Term {
        Term::Eq(Box::new(lhs), Box::new(rhs))
    }

    /// Highest placeholder index occurring in the term, 0 if none.
    pub fn max_placeholder(&self) -> u8 {
        let mut max = 0;
        self.visit(&mut |t| {
            if let Term::Placeholder(i) = t {
                max = max.max(*i);
            }
        });
        max
    }

    pub fn placeholders(&self) -> BTreeSet<u8> {
        let mut out = BTreeSet::new();
        self.visit(&mut |t| {
            if let Term::Placeholder(i) = t {
                out.insert(*i);
            }
        });
        out
    }

    pub fn has_uvars(&self) -> bool {
        let mut found = false;
        self.visit(&mut |t| found |= matches!(t, Term::UVar(..)));
        found
    }

    /// All constants with their annotated types.
    pub fn constants(&self) -> BTreeSet<(String, SemType)> {
        let mut out = BTreeSet::new();
        self.visit(&mut |t| {
            if let Term::Const(name, ty) = t {
                out.insert((name.clone(), ty.clone()));
            }
        });
        out
    }

    /// Free (unbound) variable names.
    pub fn free_vars(&self) -> BTreeSet<String> {
        fn go(t: &Term, bound: &mut Vec<String>, out: &mut BTreeSet<String>) {
            match t {
                Term::Var(name, _) => {
                    if !bound.contains(name) {
                        out.insert(name.clone());
                    }
                }
                Term::Lam(x, _, body) | Term::Quant(_, x, _, body) => {
                    bound.push(x.clone());
                    go(body, bound, out);
                    bound.pop();
                }
                Term::App(f, a) | Term::Eq(f, a) => {
                    go(f, bound, out);
                    go(a, bound, out);
                }
                Term::Conn(_, args) => args.iter().for_each(|a| go(a, bound, out)),
                Term::Const(..) | Term::UVar(..) | Term::Placeholder(_) => {}
            }
        }
        let mut out = BTreeSet::new();
        go(self, &mut Vec::new(), &mut out);
        out
    }

    pub fn is_closed(&self) -> bool {
        self.free_vars().is_empty()
    }

    /// Pre-order traversal.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Term)) {
        f(self);
        match self {
            Term::App(a, b) | Term::Eq(a, b) => {
                a.visit(f);
                b.visit(f);
            }
            Term::Lam(_, _, body) | Term::Quant(_, _, _, body) => body.visit(f),
            Term::Conn(_, args) => args.iter().for_each(|a| a.visit(f)),
            Term::Var(..) | Term::Const(..) | Term::UVar(..) | Term::Placeholder(_) => {}
        }
    }

    /// Rebuilds the term bottom-up, replacing leaves for which `f` returns `Some`.
    /// Replacements are inserted verbatim, so they must be closed (no capture
    /// check is performed).
    pub fn replace_leaves(&self, f: &impl Fn(&Term) -> Option<Term>) -> Term {
        if let Some(r) = f(self) {
            return r;
        }
        match self {
            Term::App(a, b) => Term::app(a.replace_leaves(f), b.replace_leaves(f)),
            Term::Eq(a, b) => Term::eq(a.replace_leaves(f), b.replace_leaves(f)),
            Term::Lam(x, ty, body) => Term::lam(x.clone(), ty.clone(), body.replace_leaves(f)),
            Term::Quant(q, x, ty, body) => Term::quant(*q, x.clone(), ty.clone(), body.replace_leaves(f)),
            Term::Conn(c, args) => Term::Conn(*c, args.iter().map(|a| a.replace_leaves(f)).collect()),
            leaf => leaf.clone(),
        }
    }

    /// Binds unification variable `id` to `value` everywhere.
    pub fn bind_uvar(&self, id: u32, value: &Term) -> Term {
        self.replace_leaves(&|t| match t {
            Term::UVar(u, _) if *u == id => Some(value.clone()),
            _ => None,
        })
    }

    /// Adds `offset` to every unification variable id.
    pub fn shift_uvars(&self, offset: u32) -> Term {
        self.replace_leaves(&|t| match t {
            Term::UVar(u, ty) => Some(Term::UVar(u + offset, ty.clone())),
            _ => None,
        })
    }

    /// Number of nodes in the term.
    pub fn size(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_| n += 1);
        n
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Var(name, _) | Term::Const(name, _) => f.write_str(name),
            Term::App(fun, arg) => write!(f, "({} {})", fun, arg),
            Term::Lam(x, ty, body) => write!(f, "(lambda {}:{}. {})", x, ty, body),
            Term::Quant(q, x, ty, body) => write!(f, "({} {}:{}. {})", q.keyword(), x, ty, body),
            Term::Conn(c, args) => {
                write!(f, "({}", c.keyword())?;
                for a in args {
                    write!(f, " {}", a)?;
                }
                f.write_str(")")
            }
            Term::Eq(a, b) => write!(f, "(= {} {})", a, b),
            Term::UVar(id, ty) => write!(f, "?{}:{}", id, ty),
            Term::Placeholder(i) => write!(f, "d{}", i),
        }
    }
}
