use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::SemError;

/// Semantic types of the extensional type theory: entities, truth values and
/// functions between them.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SemType {
    E,
    T,
    Func(Box<SemType>, Box<SemType>),
}

impl SemType {
    pub fn func(domain: SemType, codomain: SemType) -> SemType {
        SemType::Func(Box::new(domain), Box::new(codomain))
    }

    /// `<e,t>`, the type of one-place predicates.
    pub fn pred() -> SemType {
        SemType::func(SemType::E, SemType::T)
    }

    /// `<<e,t>,t>`, the type of generalized quantifiers.
    pub fn quantifier() -> SemType {
        SemType::func(SemType::pred(), SemType::T)
    }

    pub fn domain(&self) -> Option<&SemType> {
        match self {
            SemType::Func(d, _) => Some(d),
            _ => None,
        }
    }

    pub fn codomain(&self) -> Option<&SemType> {
        match self {
            SemType::Func(_, c) => Some(c),
            _ => None,
        }
    }
}

impl fmt::Display for SemType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SemType::E => f.write_str("e"),
            SemType::T => f.write_str("t"),
            SemType::Func(d, c) => write!(f, "<{},{}>", d, c),
        }
    }
}

/// Parses the type grammar `e | t | <type,type>` starting at `pos`; returns
/// the type and the offset just past it.
pub(crate) fn parse_type_at(src: &str, mut pos: usize) -> Result<(SemType, usize), SemError> {
    let bytes = src.as_bytes();
    while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
        pos += 1;
    }
    match bytes.get(pos) {
        Some(b'e') => Ok((SemType::E, pos + 1)),
        Some(b't') => Ok((SemType::T, pos + 1)),
        Some(b'<') => {
            let (dom, next) = parse_type_at(src, pos + 1)?;
            let next = expect_byte(src, next, b',')?;
            let (cod, next) = parse_type_at(src, next)?;
            let next = expect_byte(src, next, b'>')?;
            Ok((SemType::func(dom, cod), next))
        }
        _ => Err(SemError::Syntax {
            pos,
            message: "expected a type (`e`, `t` or `<a,b>`)".into(),
        }),
    }
}

fn expect_byte(src: &str, mut pos: usize, want: u8) -> Result<usize, SemError> {
    let bytes = src.as_bytes();
    while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
        pos += 1;
    }
    if bytes.get(pos) == Some(&want) {
        Ok(pos + 1)
    } else {
        Err(SemError::Syntax {
            pos,
            message: format!("expected `{}` in type", want as char),
        })
    }
}

impl FromStr for SemType {
    type Err = SemError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (ty, end) = parse_type_at(s, 0)?;
        if !s[end..].trim().is_empty() {
            return Err(SemError::Syntax {
                pos: end,
                message: "trailing input after type".into(),
            });
        }
        Ok(ty)
    }
}

impl Serialize for SemType {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SemType {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
