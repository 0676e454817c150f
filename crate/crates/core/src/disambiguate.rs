//! Choosing outputs from a derivation forest: the most probable derivation
//! (exact), and the most probable parse and interpretation (exact
//! enumeration on small forests, Monte Carlo otherwise).
//!
//! Sampling with `jobs` workers: worker `w` draws from a ChaCha8 generator
//! seeded with the master seed on stream `w`, and handles a contiguous block
//! of the sample indices (the first `n % jobs` workers take one extra). The
//! merged sample is the concatenation of the blocks in worker order, so
//! results depend only on the seed and the worker count.

use std::collections::{BTreeMap, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::fragments::FragmentBank;
use crate::parser::{log_sum_exp, match_fragment, scores_tie, Analysis, Derivation, Forest, ParseError};
use crate::semalgebra::{normalize, SemType, Term};
use crate::treebank::Node;

pub const DEFAULT_SAMPLES: usize = 10_000;

/// Forests with at most this many derivations are handled exactly under
/// `Estimator::Auto`.
pub const EXACT_LIMIT: u128 = 100_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Auto,
    Exact,
    Sample,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Mpd,
    Mpp,
    Mpi,
}

#[derive(Clone, Copy, Debug)]
pub struct SampleConfig {
    pub n_samples: usize,
    pub seed: u64,
    pub jobs: usize,
    pub estimator: Estimator,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig {
            n_samples: DEFAULT_SAMPLES,
            seed: 0,
            jobs: 1,
            estimator: Estimator::Auto,
        }
    }
}

impl SampleConfig {
    fn use_exact(&self, forest: &Forest<'_>) -> bool {
        match self.estimator {
            Estimator::Exact => true,
            Estimator::Sample => false,
            Estimator::Auto => forest.derivation_count() <= EXACT_LIMIT,
        }
    }
}

/// Most probable derivation with its analysis and log-probability.
pub fn most_probable_derivation(forest: &Forest<'_>) -> Result<(Derivation, Analysis, f64), ParseError> {
    let (d, lp) = forest.viterbi();
    let a = d.analysis(forest.bank())?;
    Ok((d, a, lp))
}

/// One draw from P(derivation | sentence).
pub fn sample_derivation<R: rand::Rng + ?Sized>(forest: &Forest<'_>, rng: &mut R) -> Derivation {
    forest.sample(rng)
}

/// `n` samples split across `jobs` workers as described in the module docs.
pub fn sample_many(forest: &Forest<'_>, n: usize, seed: u64, jobs: usize) -> Vec<Derivation> {
    let jobs = jobs.max(1);
    let blocks: Vec<Vec<Derivation>> = (0..jobs)
        .into_par_iter()
        .map(|w| {
            let size = n / jobs + usize::from(w < n % jobs);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(w as u64);
            (0..size).map(|_| forest.sample(&mut rng)).collect()
        })
        .collect();
    blocks.into_iter().flatten().collect()
}

/// Exact joint probability of a parse tree: the sum over all bank
/// derivations that yield exactly this tree (schemas included).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TreeProbability {
    pub log_prob: f64,
    pub n_derivations: u128,
}

pub fn tree_probability(bank: &FragmentBank, tree: &Node) -> TreeProbability {
    let mut by_cat: HashMap<&str, Vec<usize>> = HashMap::new();
    for (id, e) in bank.entries().iter().enumerate() {
        by_cat.entry(e.fragment.cat()).or_default().push(id);
    }
    let mut memo = HashMap::new();
    let (log_prob, n_derivations) = node_probability(bank, &by_cat, tree, &None, &mut memo);
    TreeProbability {
        log_prob,
        n_derivations,
    }
}

fn node_probability(
    bank: &FragmentBank,
    by_cat: &HashMap<&str, Vec<usize>>,
    node: &Node,
    gate: &Option<SemType>,
    memo: &mut HashMap<(*const Node, Option<SemType>), (f64, u128)>,
) -> (f64, u128) {
    let key = (node as *const Node, gate.clone());
    if let Some(v) = memo.get(&key) {
        return *v;
    }
    let mut terms = Vec::new();
    let mut count: u128 = 0;
    for &id in by_cat.get(node.cat.as_str()).map(Vec::as_slice).unwrap_or_default() {
        if gate.is_some() && bank.sem_type(id) != gate.as_ref() {
            continue;
        }
        let f = bank.fragment(id);
        let Some(subs) = match_fragment(f, node) else {
            continue;
        };
        let mut lp = bank.log_prob(id);
        let mut c: u128 = 1;
        for (site, sub) in f.sites.iter().zip(subs) {
            let (slp, sc) = node_probability(bank, by_cat, sub, &site.ty, memo);
            lp += slp;
            c = c.saturating_mul(sc);
        }
        if c > 0 {
            terms.push(lp);
            count = count.saturating_add(c);
        }
    }
    let v = (log_sum_exp(terms), count);
    memo.insert(key, v);
    v
}

/// A parse tree with its estimated conditional probability.
#[derive(Clone, Debug)]
pub struct ParseEntry {
    pub analysis: Analysis,
    pub key: String,
    pub estimate: f64,
    pub stderr: f64,
    /// Samples that produced this tree (0 in exact mode).
    pub hits: usize,
}

#[derive(Clone, Debug)]
pub struct ParseDistribution {
    pub entries: Vec<ParseEntry>,
    pub exact: bool,
    pub n_samples: usize,
}

/// Sorts by decreasing estimate; estimates equal up to the tie tolerance
/// are ordered by key.
fn rank<T>(v: &mut [T], estimate: impl Fn(&T) -> f64, key: impl Fn(&T) -> &str) {
    v.sort_by(|a, b| estimate(b).total_cmp(&estimate(a)).then_with(|| key(a).cmp(key(b))));
    let mut start = 0;
    while start < v.len() {
        let head = estimate(&v[start]);
        let mut end = start + 1;
        while end < v.len() && scores_tie(head, estimate(&v[end])) {
            end += 1;
        }
        v[start..end].sort_by(|a, b| key(a).cmp(key(b)));
        start = end;
    }
}

fn tree_key(n: &Node) -> String {
    n.to_json().to_string()
}

fn stderr_of(p: f64, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        (p * (1.0 - p) / n as f64).sqrt()
    }
}

/// Conditional parse-tree distribution, sorted by decreasing estimate (ties
/// by tree serialization).
pub fn parse_distribution(forest: &Forest<'_>, cfg: &SampleConfig) -> Result<ParseDistribution, ParseError> {
    let bank = forest.bank();
    let mut grouped: BTreeMap<String, (Derivation, f64, usize)> = BTreeMap::new();
    let exact = cfg.use_exact(forest);
    let n_samples = if exact {
        let total = forest.inside_log();
        for (d, lp) in forest.enumerate(usize::MAX) {
            let key = tree_key(&d.tree(bank)?);
            let p = (lp - total).exp();
            grouped.entry(key).and_modify(|e| e.1 += p).or_insert((d, p, 0));
        }
        0
    } else {
        let n = cfg.n_samples.max(1);
        for d in sample_many(forest, n, cfg.seed, cfg.jobs) {
            let key = tree_key(&d.tree(bank)?);
            grouped.entry(key).and_modify(|e| e.2 += 1).or_insert((d, 0.0, 1));
        }
        n
    };
    let mut entries = Vec::with_capacity(grouped.len());
    for (key, (d, p, hits)) in grouped {
        let estimate = if exact { p } else { hits as f64 / n_samples as f64 };
        entries.push(ParseEntry {
            analysis: d.analysis(bank)?,
            key,
            estimate,
            stderr: if exact { 0.0 } else { stderr_of(estimate, n_samples) },
            hits,
        });
    }
    rank(&mut entries, |e| e.estimate, |e| e.key.as_str());
    Ok(ParseDistribution {
        entries,
        exact,
        n_samples,
    })
}

/// The modal parse tree with its estimate and standard error.
pub fn most_probable_parse(forest: &Forest<'_>, cfg: &SampleConfig) -> Result<ParseEntry, ParseError> {
    let dist = parse_distribution(forest, cfg)?;
    Ok(dist.entries.into_iter().next().expect("a forest has at least one tree"))
}

#[derive(Clone, Debug)]
pub struct InterpretationEntry {
    /// Canonical normal form; `None` for analyses without top semantics.
    pub formula: Option<Term>,
    pub estimate: f64,
    pub stderr: f64,
    /// Distinct analyses in the class.
    pub support: usize,
    /// Most probable analysis within the class.
    pub best_analysis: Analysis,
}

#[derive(Clone, Debug)]
pub struct InterpretationDistribution {
    pub entries: Vec<InterpretationEntry>,
    pub exact: bool,
    pub n_samples: usize,
    pub seed: u64,
}

/// Interpretation classes with aggregated probability, sorted by decreasing
/// estimate (ties by canonical serialization).
pub fn most_probable_interpretation(
    forest: &Forest<'_>,
    cfg: &SampleConfig,
) -> Result<InterpretationDistribution, ParseError> {
    let parses = parse_distribution(forest, cfg)?;
    let mut classes: BTreeMap<String, InterpretationEntry> = BTreeMap::new();
    for p in parses.entries {
        let formula = p.analysis.top_sem.as_ref().map(normalize);
        let key = formula.as_ref().map_or(String::new(), |f| f.to_string());
        match classes.get_mut(&key) {
            Some(e) => {
                e.estimate += p.estimate;
                e.support += 1;
            }
            None => {
                classes.insert(
                    key,
                    InterpretationEntry {
                        formula,
                        estimate: p.estimate,
                        stderr: 0.0,
                        support: 1,
                        best_analysis: p.analysis,
                    },
                );
            }
        }
    }
    let mut entries: Vec<(String, InterpretationEntry)> = classes.into_iter().collect();
    for (_, e) in &mut entries {
        e.stderr = if parses.exact {
            0.0
        } else {
            stderr_of(e.estimate, parses.n_samples)
        };
    }
    rank(&mut entries, |e| e.1.estimate, |e| e.0.as_str());
    Ok(InterpretationDistribution {
        entries: entries.into_iter().map(|(_, e)| e).collect(),
        exact: parses.exact,
        n_samples: parses.n_samples,
        seed: cfg.seed,
    })
}

fn analysis_json(bank: &FragmentBank, forest: &Forest<'_>, a: &Analysis) -> Value {
    let tp = tree_probability(bank, &a.tree);
    json!({
        "tree": a.tree.to_json(),
        "topSem": a.top_sem.as_ref().map(|t| normalize(t).to_string()),
        "logProb": tp.log_prob,
        "conditional": (tp.log_prob - forest.inside_log()).exp(),
        "nDerivations": tp.n_derivations.to_string(),
    })
}

/// Report for one sentence in the given mode.
pub fn report(forest: &Forest<'_>, mode: Mode, cfg: &SampleConfig) -> Result<Value, ParseError> {
    let bank = forest.bank();
    let mut out = json!({
        "sentence": forest.sentence(),
        "mode": mode,
        "forest": {
            "items": forest.items().len(),
            "derivations": forest.derivation_count().to_string(),
            "insideLogProb": forest.inside_log(),
            "rejectedLinks": forest.rejected_links(),
        },
    });
    match mode {
        Mode::Mpd => {
            let (d, a, lp) = most_probable_derivation(forest)?;
            let mut entry = analysis_json(bank, forest, &a);
            entry["derivation"] = json!({ "fragments": d.keys(bank), "logProb": lp });
            out["analyses"] = json!([entry]);
        }
        Mode::Mpp => {
            let dist = parse_distribution(forest, cfg)?;
            out["estimator"] = json!(if dist.exact { "exact" } else { "sample" });
            out["nSamples"] = json!(cfg.n_samples);
            out["seed"] = json!(cfg.seed);
            out["jobs"] = json!(cfg.jobs);
            out["analyses"] = dist
                .entries
                .iter()
                .map(|e| {
                    let mut v = analysis_json(bank, forest, &e.analysis);
                    v["estimate"] = json!(e.estimate);
                    v["stderr"] = json!(e.stderr);
                    v
                })
                .collect();
            out["stderr"] = json!(dist.entries[0].stderr);
        }
        Mode::Mpi => {
            let dist = most_probable_interpretation(forest, cfg)?;
            out["estimator"] = json!(if dist.exact { "exact" } else { "sample" });
            out["nSamples"] = json!(cfg.n_samples);
            out["seed"] = json!(cfg.seed);
            out["jobs"] = json!(cfg.jobs);
            out["interpretations"] = dist
                .entries
                .iter()
                .map(|e| {
                    json!({
                        "formula": e.formula.as_ref().map(|f| f.to_string()),
                        "estimate": e.estimate,
                        "stderr": e.stderr,
                        "support": e.support,
                    })
                })
                .collect();
            let top = &dist.entries[0];
            out["analyses"] = json!([analysis_json(bank, forest, &top.best_analysis)]);
            out["stderr"] = json!(top.stderr);
        }
    }
    Ok(out)
}
