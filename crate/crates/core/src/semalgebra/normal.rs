//! Canonical normal forms.
//!
//! Terms are converted to a nameless representation, fully beta-reduced,
//! eta-reduced, and converted back with binders named after their nesting
//! depth (`_1`, `_2`, ...). Arguments of `and`/`or` are flattened and sorted
//! by their serialization; a single remaining argument replaces the
//! connective.

use super::{Connective, Quantifier, SemType, Term};

#[derive(Clone, Debug, PartialEq)]
enum Nl {
    Bound(usize, SemType),
    Free(String, SemType),
    Const(String, SemType),
    UVar(u32, SemType),
    Hole(u8),
    App(Box<Nl>, Box<Nl>),
    Lam(SemType, Box<Nl>),
    Quant(Quantifier, SemType, Box<Nl>),
    Conn(Connective, Vec<Nl>),
    Eq(Box<Nl>, Box<Nl>),
}

fn to_nameless(t: &Term, scope: &mut Vec<String>) -> Nl {
    match t {
        Term::Var(name, ty) => match scope.iter().rev().position(|n| n == name) {
            Some(i) => Nl::Bound(i, ty.clone()),
            None => Nl::Free(name.clone(), ty.clone()),
        },
        Term::Const(name, ty) => Nl::Const(name.clone(), ty.clone()),
        Term::UVar(id, ty) => Nl::UVar(*id, ty.clone()),
        Term::Placeholder(i) => Nl::Hole(*i),
        Term::App(f, a) => Nl::App(Box::new(to_nameless(f, scope)), Box::new(to_nameless(a, scope))),
        Term::Eq(a, b) => Nl::Eq(Box::new(to_nameless(a, scope)), Box::new(to_nameless(b, scope))),
        Term::Lam(x, ty, body) => {
            scope.push(x.clone());
            let b = to_nameless(body, scope);
            scope.pop();
            Nl::Lam(ty.clone(), Box::new(b))
        }
        Term::Quant(q, x, ty, body) => {
            scope.push(x.clone());
            let b = to_nameless(body, scope);
            scope.pop();
            Nl::Quant(*q, ty.clone(), Box::new(b))
        }
        Term::Conn(c, args) => Nl::Conn(*c, args.iter().map(|a| to_nameless(a, scope)).collect()),
    }
}

/// Adds `by` to every bound index at or above `cutoff`.
fn shift(t: &Nl, by: isize, cutoff: usize) -> Nl {
    match t {
        Nl::Bound(i, ty) if *i >= cutoff => Nl::Bound((*i as isize + by) as usize, ty.clone()),
        Nl::App(f, a) => Nl::App(Box::new(shift(f, by, cutoff)), Box::new(shift(a, by, cutoff))),
        Nl::Eq(a, b) => Nl::Eq(Box::new(shift(a, by, cutoff)), Box::new(shift(b, by, cutoff))),
        Nl::Lam(ty, b) => Nl::Lam(ty.clone(), Box::new(shift(b, by, cutoff + 1))),
        Nl::Quant(q, ty, b) => Nl::Quant(*q, ty.clone(), Box::new(shift(b, by, cutoff + 1))),
        Nl::Conn(c, args) => Nl::Conn(*c, args.iter().map(|a| shift(a, by, cutoff)).collect()),
        other => other.clone(),
    }
}

/// Substitutes `value` for the variable bound at `depth` levels above and
/// removes that binder.
fn subst(t: &Nl, depth: usize, value: &Nl) -> Nl {
    match t {
        Nl::Bound(i, ty) => {
            if *i == depth {
                shift(value, depth as isize, 0)
            } else if *i > depth {
                Nl::Bound(i - 1, ty.clone())
            } else {
                t.clone()
            }
        }
        Nl::App(f, a) => Nl::App(Box::new(subst(f, depth, value)), Box::new(subst(a, depth, value))),
        Nl::Eq(a, b) => Nl::Eq(Box::new(subst(a, depth, value)), Box::new(subst(b, depth, value))),
        Nl::Lam(ty, b) => Nl::Lam(ty.clone(), Box::new(subst(b, depth + 1, value))),
        Nl::Quant(q, ty, b) => Nl::Quant(*q, ty.clone(), Box::new(subst(b, depth + 1, value))),
        Nl::Conn(c, args) => Nl::Conn(*c, args.iter().map(|a| subst(a, depth, value)).collect()),
        other => other.clone(),
    }
}

fn beta(t: &Nl) -> Nl {
    match t {
        Nl::App(f, a) => {
            let f = beta(f);
            let a = beta(a);
            match f {
                Nl::Lam(_, body) => beta(&subst(&body, 0, &a)),
                f => Nl::App(Box::new(f), Box::new(a)),
            }
        }
        Nl::Eq(a, b) => Nl::Eq(Box::new(beta(a)), Box::new(beta(b))),
        Nl::Lam(ty, b) => Nl::Lam(ty.clone(), Box::new(beta(b))),
        Nl::Quant(q, ty, b) => Nl::Quant(*q, ty.clone(), Box::new(beta(b))),
        Nl::Conn(c, args) => Nl::Conn(*c, args.iter().map(beta).collect()),
        other => other.clone(),
    }
}

fn mentions(t: &Nl, idx: usize) -> bool {
    match t {
        Nl::Bound(i, _) => *i == idx,
        Nl::App(a, b) | Nl::Eq(a, b) => mentions(a, idx) || mentions(b, idx),
        Nl::Lam(_, b) | Nl::Quant(_, _, b) => mentions(b, idx + 1),
        Nl::Conn(_, args) => args.iter().any(|a| mentions(a, idx)),
        _ => false,
    }
}

/// Bottom-up eta reduction and flattening of `and`/`or`.
fn tidy(t: &Nl) -> Nl {
    match t {
        Nl::Lam(ty, b) => {
            let b = tidy(b);
            if let Nl::App(f, a) = &b {
                if matches!(**a, Nl::Bound(0, _)) && !mentions(f, 0) {
                    return shift(f, -1, 0);
                }
            }
            Nl::Lam(ty.clone(), Box::new(b))
        }
        Nl::App(f, a) => Nl::App(Box::new(tidy(f)), Box::new(tidy(a))),
        Nl::Eq(a, b) => Nl::Eq(Box::new(tidy(a)), Box::new(tidy(b))),
        Nl::Quant(q, ty, b) => Nl::Quant(*q, ty.clone(), Box::new(tidy(b))),
        Nl::Conn(c, args) => {
            let mut flat = Vec::with_capacity(args.len());
            for a in args {
                match tidy(a) {
                    Nl::Conn(inner, sub) if c.is_commutative() && inner == *c => flat.extend(sub),
                    other => flat.push(other),
                }
            }
            if c.is_commutative() && flat.len() == 1 {
                flat.pop().unwrap()
            } else {
                Nl::Conn(*c, flat)
            }
        }
        other => other.clone(),
    }
}

fn level_name(level: usize) -> String {
    format!("_{}", level)
}

/// Converts back to named form; `depth` is the number of enclosing binders.
fn to_named(t: &Nl, depth: usize) -> Term {
    match t {
        Nl::Bound(i, ty) => Term::Var(level_name(depth - i), ty.clone()),
        Nl::Free(n, ty) => Term::Var(n.clone(), ty.clone()),
        Nl::Const(n, ty) => Term::Const(n.clone(), ty.clone()),
        Nl::UVar(id, ty) => Term::UVar(*id, ty.clone()),
        Nl::Hole(i) => Term::Placeholder(*i),
        Nl::App(f, a) => Term::app(to_named(f, depth), to_named(a, depth)),
        Nl::Eq(a, b) => Term::eq(to_named(a, depth), to_named(b, depth)),
        Nl::Lam(ty, b) => Term::lam(level_name(depth + 1), ty.clone(), to_named(b, depth + 1)),
        Nl::Quant(q, ty, b) => Term::quant(*q, level_name(depth + 1), ty.clone(), to_named(b, depth + 1)),
        Nl::Conn(c, args) => {
            let mut named: Vec<Term> = args.iter().map(|a| to_named(a, depth)).collect();
            if c.is_commutative() {
                named.sort_by_cached_key(|a| a.to_string());
            }
            Term::Conn(*c, named)
        }
    }
}

/// Canonical normal form of a well-typed term.
pub fn normalize(t: &Term) -> Term {
    let nl = to_nameless(t, &mut Vec::new());
    to_named(&tidy(&beta(&nl)), 0)
}

/// Identity of canonical normal forms. Sound but incomplete: `(not (not p))`
/// and `p` are not identified.
pub fn equivalent(a: &Term, b: &Term) -> bool {
    normalize(a) == normalize(b)
}
