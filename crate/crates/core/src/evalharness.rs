//! Train/test splitting under a vocabulary constraint, and end-to-end
//! scoring of parser output against gold trees.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::disambiguate::{
    most_probable_derivation, most_probable_interpretation, most_probable_parse, Mode, SampleConfig,
};
use crate::fragments::FragmentBank;
use crate::parser::{build_forest, Analysis, ParseError};
use crate::semalgebra::{equivalent, Term};
use crate::treebank::{expand_semantics, AnnotatedTree, NodePath};

pub const MAX_SPLIT_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EvalError {
    #[error("test size {test_size} must be smaller than the corpus ({corpus_size} trees)")]
    TestSizeTooLarge { test_size: usize, corpus_size: usize },
    #[error("no split satisfies the vocabulary constraint after {attempts} attempts; blocking words: {}", words.join(", "))]
    ConstraintUnsatisfiable { words: Vec<String>, attempts: usize },
}

fn sentence_frequencies(corpus: &[AnnotatedTree]) -> BTreeMap<&str, usize> {
    let mut freq = BTreeMap::new();
    for t in corpus {
        let distinct: BTreeSet<&str> = t.sentence.iter().map(String::as_str).collect();
        for w in distinct {
            *freq.entry(w).or_insert(0) += 1;
        }
    }
    freq
}

/// Words of `test` that do not occur in `train`.
pub fn unseen_words(train: &[AnnotatedTree], test: &[AnnotatedTree]) -> BTreeSet<String> {
    let vocab: BTreeSet<&str> = train
        .iter()
        .flat_map(|t| t.sentence.iter().map(String::as_str))
        .collect();
    test.iter()
        .flat_map(|t| t.sentence.iter())
        .filter(|w| !vocab.contains(w.as_str()))
        .cloned()
        .collect()
}

/// Random split with every test word attested in train. Sentences holding a
/// word that occurs in no other sentence can never be tested, so candidates
/// are drawn from the remaining ones; each draw is rejected if the
/// constraint fails. Both halves keep corpus order.
pub fn split(
    corpus: &[AnnotatedTree],
    test_size: usize,
    seed: u64,
) -> Result<(Vec<AnnotatedTree>, Vec<AnnotatedTree>), EvalError> {
    if test_size == 0 {
        return Ok((corpus.to_vec(), Vec::new()));
    }
    if test_size >= corpus.len() {
        return Err(EvalError::TestSizeTooLarge {
            test_size,
            corpus_size: corpus.len(),
        });
    }
    let freq = sentence_frequencies(corpus);
    let hapax: BTreeSet<&str> = freq.iter().filter(|(_, &c)| c == 1).map(|(w, _)| *w).collect();
    let eligible: Vec<usize> = (0..corpus.len())
        .filter(|&i| corpus[i].sentence.iter().all(|w| !hapax.contains(w.as_str())))
        .collect();
    if eligible.len() < test_size {
        return Err(EvalError::ConstraintUnsatisfiable {
            words: hapax.iter().map(|w| w.to_string()).collect(),
            attempts: 0,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut blocking = BTreeSet::new();
    for _ in 0..MAX_SPLIT_ATTEMPTS {
        let mut picked: Vec<usize> = rand::seq::index::sample(&mut rng, eligible.len(), test_size)
            .into_iter()
            .map(|k| eligible[k])
            .collect();
        picked.sort_unstable();
        let in_test: BTreeSet<usize> = picked.iter().copied().collect();
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (i, t) in corpus.iter().enumerate() {
            if in_test.contains(&i) {
                test.push(t.clone());
            } else {
                train.push(t.clone());
            }
        }
        let unseen = unseen_words(&train, &test);
        if unseen.is_empty() {
            return Ok((train, test));
        }
        blocking.extend(unseen);
    }
    Err(EvalError::ConstraintUnsatisfiable {
        words: blocking.into_iter().collect(),
        attempts: MAX_SPLIT_ATTEMPTS,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SentenceOutcome {
    pub id: String,
    pub parsed: bool,
    pub exact_match: bool,
    pub syntax_match: bool,
    pub semantics_match: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CategoryCounts {
    pub exact_match: usize,
    pub syntax_only: usize,
    pub semantics_only: usize,
    pub both_wrong: usize,
    pub unparsed: usize,
}

impl CategoryCounts {
    pub fn total(&self) -> usize {
        self.exact_match + self.syntax_only + self.semantics_only + self.both_wrong + self.unparsed
    }

    fn add(&mut self, o: &SentenceOutcome) {
        match (o.parsed, o.syntax_match, o.semantics_match) {
            (false, _, _) => self.unparsed += 1,
            (true, true, true) => self.exact_match += 1,
            (true, true, false) => self.syntax_only += 1,
            (true, false, true) => self.semantics_only += 1,
            (true, false, false) => self.both_wrong += 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EvalOptions<'a> {
    pub mode: Mode,
    pub sampling: SampleConfig,
    /// When set, wall-clock parse times with this semantics-free bank are
    /// reported alongside the main bank's.
    pub syntactic_bank: Option<&'a FragmentBank>,
    pub timings: bool,
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub mode: Mode,
    pub seed: u64,
    pub n_samples: usize,
    pub counts: CategoryCounts,
    pub sentences: Vec<SentenceOutcome>,
    pub timings: Option<Value>,
}

impl EvalReport {
    pub fn n_test(&self) -> usize {
        self.sentences.len()
    }

    pub fn to_json(&self) -> Value {
        let syntax_correct = self.sentences.iter().filter(|s| s.syntax_match).count();
        let semantics_correct = self.sentences.iter().filter(|s| s.semantics_match).count();
        let mut v = json!({
            "nTest": self.n_test(),
            "exactMatch": self.counts.exact_match,
            "syntaxOnly": self.counts.syntax_only,
            "semanticsOnly": self.counts.semantics_only,
            "bothWrong": self.counts.both_wrong,
            "unparsed": self.counts.unparsed,
            "syntaxCorrect": syntax_correct,
            "semanticsCorrect": semantics_correct,
            "seed": self.seed,
            "nSamples": self.n_samples,
            "mode": self.mode,
            "sentences": self.sentences,
            "reference": reference_footer(),
        });
        if let Some(t) = &self.timings {
            v["timings"] = t.clone();
        }
        v
    }
}

/// Results of the original ATIS experiment, which cannot be rerun here.
/// The syntax and semantics figures there are cumulative (they include the
/// exact matches).
pub fn reference_footer() -> Value {
    json!({
        "label": "reference only, unverifiable: original ATIS corpus unavailable",
        "nTest": 50,
        "exactMatch": 28,
        "syntaxCorrect": 31,
        "semanticsCorrect": 44,
        "bothWrong": 5,
        "unparsed": 1,
        "speedupWithSemantics": 6,
    })
}

/// Gold meaning of the top node, if the gold tree is fully annotated.
pub fn gold_top_semantics(gold: &AnnotatedTree) -> Option<Term> {
    expand_semantics(gold).ok()?.remove(&NodePath::root())
}

/// The analysis the harness scores for one sentence.
pub fn output_analysis(
    bank: &FragmentBank,
    sentence: &[String],
    mode: Mode,
    cfg: &SampleConfig,
) -> Result<Analysis, ParseError> {
    let forest = build_forest(bank, sentence)?;
    Ok(match mode {
        Mode::Mpd => most_probable_derivation(&forest)?.1,
        Mode::Mpp => most_probable_parse(&forest, cfg)?.analysis,
        Mode::Mpi => {
            let dist = most_probable_interpretation(&forest, cfg)?;
            dist.entries.into_iter().next().expect("nonempty forest").best_analysis
        }
    })
}

pub fn score_sentence(bank: &FragmentBank, gold: &AnnotatedTree, mode: Mode, cfg: &SampleConfig) -> SentenceOutcome {
    match output_analysis(bank, &gold.sentence, mode, cfg) {
        Err(e) => SentenceOutcome {
            id: gold.id.clone(),
            parsed: false,
            exact_match: false,
            syntax_match: false,
            semantics_match: false,
            error: Some(e.to_string()),
        },
        Ok(a) => {
            let syntax_match = a.tree.bracketing() == gold.root.bracketing();
            let semantics_match = match (&a.top_sem, gold_top_semantics(gold)) {
                (Some(out), Some(g)) => equivalent(out, &g),
                _ => false,
            };
            SentenceOutcome {
                id: gold.id.clone(),
                parsed: true,
                exact_match: syntax_match && semantics_match,
                syntax_match,
                semantics_match,
                error: None,
            }
        }
    }
}

fn time_parses(bank: &FragmentBank, test: &[AnnotatedTree]) -> f64 {
    let start = Instant::now();
    for t in test {
        let _ = build_forest(bank, &t.sentence);
    }
    start.elapsed().as_secs_f64() * 1000.0
}

/// Scores every test sentence independently; outcomes keep test order.
pub fn evaluate(bank: &FragmentBank, test: &[AnnotatedTree], opts: &EvalOptions<'_>) -> EvalReport {
    let sentences: Vec<SentenceOutcome> = test
        .par_iter()
        .map(|g| score_sentence(bank, g, opts.mode, &opts.sampling))
        .collect();
    let mut counts = CategoryCounts::default();
    for s in &sentences {
        counts.add(s);
    }
    let timings = opts.timings.then(|| {
        let mut t = json!({ "semanticParseMs": time_parses(bank, test) });
        if let Some(syn) = opts.syntactic_bank {
            t["syntacticParseMs"] = json!(time_parses(syn, test));
        }
        t
    });
    EvalReport {
        mode: opts.mode,
        seed: opts.sampling.seed,
        n_samples: opts.sampling.n_samples,
        counts,
        sentences,
        timings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semalgebra::Signature;
    use crate::treebank::corpus_from_str;

    fn corpus(sentences: &[&str]) -> Vec<AnnotatedTree> {
        let sig = Signature::from_pairs([("p", "t")]).unwrap();
        let text: Vec<String> = sentences
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let words: Vec<&str> = s.split(' ').collect();
                let kids: Vec<String> = words
                    .iter()
                    .map(|w| format!(r#"{{"cat":"W","sem":"p","word":"{}"}}"#, w))
                    .collect();
                format!(
                    r#"{{"id":"{}","sentence":{},"root":{{"cat":"S","sem":"d1","children":[{}]}}}}"#,
                    i,
                    serde_json::to_string(&words).unwrap(),
                    kids.join(",")
                )
            })
            .collect();
        corpus_from_str(&text.join("\n"), sig).unwrap().trees
    }

    #[test]
    fn split_respects_vocabulary() {
        let c = corpus(&["a b", "b a", "a", "b", "c a"]);
        for seed in 0..20 {
            let (train, test) = split(&c, 2, seed).unwrap();
            assert_eq!(train.len() + test.len(), c.len());
            assert!(unseen_words(&train, &test).is_empty());
            assert!(test.iter().all(|t| t.id != "4"));
            assert_eq!(split(&c, 2, seed).unwrap().1, test);
        }
        let (train, test) = split(&c, 0, 1).unwrap();
        assert_eq!((train.len(), test.len()), (5, 0));
        assert!(matches!(split(&c, 5, 1), Err(EvalError::TestSizeTooLarge { .. })));
    }

    #[test]
    fn hapax_everywhere_is_unsatisfiable() {
        let c = corpus(&["a", "b", "c"]);
        match split(&c, 1, 3) {
            Err(EvalError::ConstraintUnsatisfiable { words, .. }) => assert_eq!(words, ["a", "b", "c"]),
            other => panic!("{:?}", other),
        }
    }

    #[test]
    fn categories_partition() {
        let mut c = CategoryCounts::default();
        let mk = |parsed, syn, sem| SentenceOutcome {
            id: String::new(),
            parsed,
            exact_match: syn && sem,
            syntax_match: syn,
            semantics_match: sem,
            error: None,
        };
        for o in [
            mk(true, true, true),
            mk(true, true, false),
            mk(true, false, true),
            mk(true, false, false),
            mk(false, false, false),
        ] {
            c.add(&o);
        }
        assert_eq!(
            c,
            CategoryCounts {
                exact_match: 1,
                syntax_only: 1,
                semantics_only: 1,
                both_wrong: 1,
                unparsed: 1
            }
        );
        assert_eq!(c.total(), 5);
    }
}
