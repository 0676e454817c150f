//! Data-oriented parsing with compositional semantics.

pub mod disambiguate;
pub mod evalharness;
pub mod fragments;
pub mod parser;
pub mod semalgebra;
pub mod suggest;
pub mod treebank;
