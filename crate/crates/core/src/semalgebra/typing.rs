//! Type checking and inference.
//!
//! Closed terms are checked directly. Schemas are checked by inference: each
//! placeholder gets a type metavariable (or the daughter's known type), and
//! the template's constraints are solved by first-order unification.

use std::fmt;

use super::{SemError, SemType, Term};

#[derive(Clone, Debug)]
enum Ty {
    E,
    T,
    Fun(Box<Ty>, Box<Ty>),
    Meta(usize),
}

impl Ty {
    fn fun(a: Ty, b: Ty) -> Ty {
        Ty::Fun(Box::new(a), Box::new(b))
    }

    fn from_sem(t: &SemType) -> Ty {
        match t {
            SemType::E => Ty::E,
            SemType::T => Ty::T,
            SemType::Func(d, c) => Ty::fun(Ty::from_sem(d), Ty::from_sem(c)),
        }
    }
}

#[derive(Default)]
struct Unifier {
    metas: Vec<Option<Ty>>,
}

impl Unifier {
    fn fresh(&mut self) -> Ty {
        self.metas.push(None);
        Ty::Meta(self.metas.len() - 1)
    }

    fn resolve(&self, ty: &Ty) -> Ty {
        match ty {
            Ty::Meta(m) => match &self.metas[*m] {
                Some(bound) => self.resolve(bound),
                None => ty.clone(),
            },
            Ty::Fun(a, b) => Ty::fun(self.resolve(a), self.resolve(b)),
            other => other.clone(),
        }
    }

    fn occurs(&self, m: usize, ty: &Ty) -> bool {
        match self.resolve(ty) {
            Ty::Meta(n) => n == m,
            Ty::Fun(a, b) => self.occurs(m, &a) || self.occurs(m, &b),
            _ => false,
        }
    }

    fn unify(&mut self, a: &Ty, b: &Ty) -> bool {
        let (a, b) = (self.resolve(a), self.resolve(b));
        match (&a, &b) {
            (Ty::E, Ty::E) | (Ty::T, Ty::T) => true,
            (Ty::Meta(m), Ty::Meta(n)) if m == n => true,
            (Ty::Meta(m), other) | (other, Ty::Meta(m)) => {
                if self.occurs(*m, other) {
                    return false;
                }
                self.metas[*m] = Some(other.clone());
                true
            }
            (Ty::Fun(a1, b1), Ty::Fun(a2, b2)) => self.unify(a1, a2) && self.unify(b1, b2),
            _ => false,
        }
    }

    fn to_sem(&self, ty: &Ty) -> Option<SemType> {
        match self.resolve(ty) {
            Ty::E => Some(SemType::E),
            Ty::T => Some(SemType::T),
            Ty::Fun(a, b) => Some(SemType::func(self.to_sem(&a)?, self.to_sem(&b)?)),
            Ty::Meta(_) => None,
        }
    }

    fn show(&self, ty: &Ty) -> String {
        Shown(self.resolve(ty)).to_string()
    }
}

struct Shown(Ty);

impl fmt::Display for Shown {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.0 {
            Ty::E => f.write_str("e"),
            Ty::T => f.write_str("t"),
            Ty::Fun(a, b) => write!(f, "<{},{}>", Shown((**a).clone()), Shown((**b).clone())),
            Ty::Meta(m) => write!(f, "?{}", m),
        }
    }
}

struct Checker<'a> {
    u: Unifier,
    holes: Option<Vec<Ty>>,
    scope: Vec<(&'a str, &'a SemType)>,
}

impl<'a> Checker<'a> {
    fn mismatch(&self, term: &Term, expected: &Ty, actual: &Ty) -> SemError {
        SemError::TypeMismatch {
            term: term.to_string(),
            expected: self.u.show(expected),
            actual: self.u.show(actual),
        }
    }

    fn expect(&mut self, term: &'a Term, want: &Ty) -> Result<(), SemError> {
        let got = self.infer(term)?;
        if self.u.unify(&got, want) {
            Ok(())
        } else {
            Err(self.mismatch(term, want, &got))
        }
    }

    fn infer(&mut self, term: &'a Term) -> Result<Ty, SemError> {
        match term {
            Term::Var(name, ty) => {
                if let Some((_, bound)) = self.scope.iter().rev().find(|(n, _)| n == name) {
                    if *bound != ty {
                        return Err(SemError::IllTyped {
                            term: term.to_string(),
                            reason: format!("variable annotated {} but bound at type {}", ty, bound),
                        });
                    }
                }
                Ok(Ty::from_sem(ty))
            }
            Term::Const(_, ty) | Term::UVar(_, ty) => Ok(Ty::from_sem(ty)),
            Term::Placeholder(i) => match &self.holes {
                Some(holes) => Ok(holes[*i as usize - 1].clone()),
                None => Err(SemError::IllTyped {
                    term: term.to_string(),
                    reason: "placeholder outside a schema".into(),
                }),
            },
            Term::App(fun, arg) => {
                let tf = self.infer(fun)?;
                let ta = self.infer(arg)?;
                let result = self.u.fresh();
                let want = Ty::fun(ta.clone(), result.clone());
                if self.u.unify(&tf, &want) {
                    return Ok(result);
                }
                match self.u.resolve(&tf) {
                    Ty::Fun(dom, _) => Err(self.mismatch(arg, &dom, &ta)),
                    _ => Err(SemError::TypeMismatch {
                        term: fun.to_string(),
                        expected: format!("<{},_>", self.u.show(&ta)),
                        actual: self.u.show(&tf),
                    }),
                }
            }
            Term::Lam(x, ty, body) => {
                self.scope.push((x, ty));
                let tb = self.infer(body);
                self.scope.pop();
                Ok(Ty::fun(Ty::from_sem(ty), tb?))
            }
            Term::Quant(_, x, ty, body) => {
                self.scope.push((x, ty));
                let r = self.expect(body, &Ty::T);
                self.scope.pop();
                r.map(|_| Ty::T)
            }
            Term::Conn(_, args) => {
                for a in args {
                    self.expect(a, &Ty::T)?;
                }
                Ok(Ty::T)
            }
            Term::Eq(a, b) => {
                let ta = self.infer(a)?;
                self.expect(b, &ta)?;
                Ok(Ty::T)
            }
        }
    }
}

/// Type of a term without placeholders.
pub fn type_of(term: &Term) -> Result<SemType, SemError> {
    let mut c = Checker {
        u: Unifier::default(),
        holes: None,
        scope: Vec::new(),
    };
    let ty = c.infer(term)?;
    c.u.to_sem(&ty).ok_or_else(|| SemError::IllTyped {
        term: term.to_string(),
        reason: "type is not determined".into(),
    })
}

/// Infers the result type of a schema template given what is known about the
/// daughters' types. Placeholders past the end of `daughters`, or mapped to
/// `None`, are unconstrained. Returns `Ok(None)` when the result type depends
/// on an unknown daughter type.
pub fn infer_schema_type(template: &Term, daughters: &[Option<SemType>]) -> Result<Option<SemType>, SemError> {
    let mut u = Unifier::default();
    let holes = (0..9)
        .map(|i| match daughters.get(i) {
            Some(Some(ty)) => Ty::from_sem(ty),
            _ => u.fresh(),
        })
        .collect();
    let mut c = Checker {
        u,
        holes: Some(holes),
        scope: Vec::new(),
    };
    let ty = c.infer(template)?;
    Ok(c.u.to_sem(&ty))
}
