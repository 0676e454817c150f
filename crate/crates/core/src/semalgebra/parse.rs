use super::types::parse_type_at;
use super::{Connective, Quantifier, Schema, SemError, SemType, Signature, Term};

const KEYWORDS: &[&str] = &["lambda", "λ", "exists", "forall", "and", "or", "not", "implies"];

/// Parses a formula or daughter schema in prefix notation and type-checks it
/// against `sig`.
pub fn parse_formula(text: &str, sig: &Signature) -> Result<Schema, SemError> {
    let term = parse_term_str(text, sig)?;
    Schema::new(term)
}

/// Parses without the schema-level type inference; mostly useful for tests
/// that want to build ill-typed terms.
pub fn parse_term_str(text: &str, sig: &Signature) -> Result<Term, SemError> {
    let mut p = Parser {
        src: text,
        pos: 0,
        sig,
        scope: Vec::new(),
    };
    let term = p.term()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return Err(p.error("unexpected trailing input"));
    }
    Ok(term)
}

pub(crate) fn is_placeholder_name(s: &str) -> Option<u8> {
    let b = s.as_bytes();
    if b.len() == 2 && b[0] == b'd' && (b'1'..=b'9').contains(&b[1]) {
        Some(b[1] - b'0')
    } else {
        None
    }
}

fn is_ident_char(c: char) -> bool {
    !c.is_whitespace() && !"().:<>,?={}\"@".contains(c)
}

/// True for names usable as constants in a signature.
pub fn is_valid_constant_name(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_alphabetic())
        && s.chars().all(is_ident_char)
        && !KEYWORDS.contains(&s)
        && is_placeholder_name(s).is_none()
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
    sig: &'a Signature,
    scope: Vec<(String, SemType)>,
}

impl<'a> Parser<'a> {
    fn error(&self, message: &str) -> SemError {
        SemError::Syntax {
            pos: self.pos,
            message: message.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
    }

    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn eat(&mut self, want: char) -> Result<(), SemError> {
        self.skip_ws();
        if self.peek() == Some(want) {
            self.pos += want.len_utf8();
            Ok(())
        } else {
            Err(self.error(&format!("expected `{}`", want)))
        }
    }

    fn ident(&mut self) -> Result<String, SemError> {
        self.skip_ws();
        let start = self.pos;
        while let Some(c) = self.peek() {
            if is_ident_char(c) {
                self.pos += c.len_utf8();
            } else {
                break;
            }
        }
        if start == self.pos {
            return Err(self.error("expected an identifier"));
        }
        Ok(self.src[start..self.pos].to_string())
    }

    fn peek_ident(&self) -> Option<&'a str> {
        let rest = &self.src[self.pos..];
        let len: usize = rest.chars().take_while(|c| is_ident_char(*c)).map(char::len_utf8).sum();
        (len > 0).then(|| &rest[..len])
    }

    fn sem_type(&mut self) -> Result<SemType, SemError> {
        let (ty, end) = parse_type_at(self.src, self.pos)?;
        self.pos = end;
        Ok(ty)
    }

    fn term(&mut self) -> Result<Term, SemError> {
        self.skip_ws();
        match self.peek() {
            None => Err(self.error("unexpected end of input")),
            Some('(') => {
                self.pos += 1;
                self.paren()
            }
            Some('?') => {
                self.pos += 1;
                let start = self.pos;
                while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                    self.pos += 1;
                }
                let id: u32 = self.src[start..self.pos]
                    .parse()
                    .map_err(|_| self.error("expected unification variable number"))?;
                self.eat(':')?;
                let ty = self.sem_type()?;
                Ok(Term::UVar(id, ty))
            }
            Some(_) => {
                let start = self.pos;
                let name = self.ident()?;
                match name.as_str() {
                    "lambda" | "λ" => self.binder(None),
                    "exists" => self.binder(Some(Quantifier::Exists)),
                    "forall" => self.binder(Some(Quantifier::Forall)),
                    "and" | "or" | "not" | "implies" => {
                        self.pos = start;
                        Err(self.error("connective must appear in head position of a parenthesized form"))
                    }
                    _ => self.atom(name, start),
                }
            }
        }
    }

    fn atom(&mut self, name: String, start: usize) -> Result<Term, SemError> {
        if let Some((_, ty)) = self.scope.iter().rev().find(|(n, _)| *n == name) {
            return Ok(Term::Var(name, ty.clone()));
        }
        if let Some(i) = is_placeholder_name(&name) {
            return Ok(Term::Placeholder(i));
        }
        match self.sig.get(&name) {
            Some(ty) => Ok(Term::Const(name, ty.clone())),
            None => {
                self.pos = start;
                Err(SemError::UnknownConstant(name))
            }
        }
    }

    /// Parses `var:type. body` after a binder keyword.
    fn binder(&mut self, quant: Option<Quantifier>) -> Result<Term, SemError> {
        let var = self.ident()?;
        if KEYWORDS.contains(&var.as_str()) || is_placeholder_name(&var).is_some() {
            return Err(self.error("reserved name used as bound variable"));
        }
        self.eat(':')?;
        let ty = self.sem_type()?;
        self.eat('.')?;
        self.scope.push((var.clone(), ty.clone()));
        let body = self.term();
        self.scope.pop();
        let body = body?;
        Ok(match quant {
            None => Term::lam(var, ty, body),
            Some(q) => Term::quant(q, var, ty, body),
        })
    }

    /// Parses the rest of a form after its opening parenthesis.
    fn paren(&mut self) -> Result<Term, SemError> {
        self.skip_ws();
        if self.peek() == Some('=') {
            self.pos += 1;
            let lhs = self.term()?;
            let rhs = self.term()?;
            self.eat(')')?;
            return Ok(Term::eq(lhs, rhs));
        }
        if let Some(head) = self.peek_ident() {
            let conn = match head {
                "and" => Some(Connective::And),
                "or" => Some(Connective::Or),
                "not" => Some(Connective::Not),
                "implies" => Some(Connective::Implies),
                _ => None,
            };
            if let Some(conn) = conn {
                self.pos += head.len();
                let args = self.terms_until_close()?;
                let ok = match conn {
                    Connective::And | Connective::Or => !args.is_empty(),
                    Connective::Not => args.len() == 1,
                    Connective::Implies => args.len() == 2,
                };
                if !ok {
                    return Err(self.error(&format!("wrong number of arguments to `{}`", head)));
                }
                return Ok(Term::Conn(conn, args));
            }
            let quant = match head {
                "lambda" | "λ" => Some(None),
                "exists" => Some(Some(Quantifier::Exists)),
                "forall" => Some(Some(Quantifier::Forall)),
                _ => None,
            };
            if let Some(q) = quant {
                self.pos += head.len();
                let t = self.binder(q)?;
                self.eat(')')?;
                return Ok(t);
            }
        }
        let items = self.terms_until_close()?;
        let mut iter = items.into_iter();
        let first = iter.next().ok_or_else(|| self.error("empty parentheses"))?;
        Ok(iter.fold(first, Term::app))
    }

    fn terms_until_close(&mut self) -> Result<Vec<Term>, SemError> {
        let mut out = Vec::new();
        loop {
            self.skip_ws();
            match self.peek() {
                Some(')') => {
                    self.pos += 1;
                    return Ok(out);
                }
                None => return Err(self.error("unclosed parenthesis")),
                _ => out.push(self.term()?),
            }
        }
    }
}
