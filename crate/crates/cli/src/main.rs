//! `dop`: command-line front end for the semantic DOP pipeline.
//!
//! Every subcommand writes one JSON document to standard output (or the
//! `--out` file) and echoes its effective configuration under `config`.
//! Exit status is 0 on success, 1 on a domain failure and 2 on a usage or
//! format error; failures are reported as a JSON error object.

use std::collections::HashSet;
use std::fmt::Display;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use dop_annoserve::{Session, SessionConfig, SessionError};
use dop_core::disambiguate::{report, Estimator, Mode, SampleConfig, DEFAULT_SAMPLES};
use dop_core::evalharness::{evaluate, split, EvalError, EvalOptions};
use dop_core::fragments::{extract, extract_syntactic, FragmentBank, FragmentError};
use dop_core::parser::{build_forest, ParseError};
use dop_core::suggest::{coverage_report, ModelFormatError, SuggestionModel};
use dop_core::treebank::{
    load_corpus, parse_corpus_text, read_signature, validate_tree, AnnotatedTree, Corpus, NodePath, Strictness,
    TreebankError, Violation, ViolationKind,
};

const DEFAULT_MAX_DEPTH: usize = 10;

#[derive(Parser, Debug)]
#[command(
    name = "dop",
    version,
    about = "Semantic data-oriented parsing",
    max_term_width = 100
)]
struct Cli {
    /// Write the result here instead of standard output.
    #[arg(long, global = true, value_name = "PATH", default_value = "-")]
    out: PathBuf,
    /// Worker threads for sampling and evaluation.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    jobs: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a corpus against its signature.
    Validate {
        #[command(flatten)]
        input: CorpusArgs,
        /// Allow nodes without semantics [default: off].
        #[arg(long, action = clap::ArgAction::SetTrue)]
        lenient: bool,
    },
    /// Build a fragment bank from a corpus.
    Extract {
        #[command(flatten)]
        input: CorpusArgs,
        #[arg(long, default_value_t = DEFAULT_MAX_DEPTH)]
        max_depth: usize,
        /// Drop semantics and keep unannotated trees [default: off].
        #[arg(long, action = clap::ArgAction::SetTrue)]
        syntactic: bool,
    },
    /// Parse a sentence and report the selected analyses.
    Parse {
        #[command(flatten)]
        target: SentenceArgs,
        #[arg(long, value_enum, default_value_t = ModeArg::Mpp)]
        mode: ModeArg,
        #[command(flatten)]
        sampling: SamplingArgs,
    },
    /// Most probable interpretation of a sentence (parse with --mode mpi).
    Interpret {
        #[command(flatten)]
        target: SentenceArgs,
        #[command(flatten)]
        sampling: SamplingArgs,
    },
    /// Split a corpus, train on one part and score the other.
    Eval {
        #[command(flatten)]
        input: CorpusArgs,
        /// Number of held-out test sentences.
        #[arg(long)]
        test_size: usize,
        #[arg(long, value_enum, default_value_t = ModeArg::Mpp)]
        mode: ModeArg,
        #[arg(long, default_value_t = DEFAULT_MAX_DEPTH)]
        max_depth: usize,
        #[command(flatten)]
        sampling: SamplingArgs,
        /// Also time parsing with a semantics-free bank [default: off].
        #[arg(long, action = clap::ArgAction::SetTrue)]
        timings: bool,
    },
    /// Propose semantic schemas for unannotated nodes.
    Suggest {
        #[command(flatten)]
        input: CorpusArgs,
        /// Only this tree (default: every tree with unannotated nodes).
        #[arg(long, value_name = "ID")]
        tree: Option<String>,
        /// Score proposals against this fully annotated corpus instead
        /// [default: none].
        #[arg(long, value_name = "PATH")]
        held_out: Option<PathBuf>,
        /// Start from a saved model instead of training on the corpus
        /// [default: none].
        #[arg(long, value_name = "PATH")]
        model: Option<PathBuf>,
        /// Write the model used to this file [default: none].
        #[arg(long, value_name = "PATH")]
        save_model: Option<PathBuf>,
    },
    /// Run the annotation service.
    Serve {
        #[command(flatten)]
        input: CorpusArgs,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Journal file (default: <corpus>.journal.jsonl).
        #[arg(long, value_name = "PATH")]
        journal: Option<PathBuf>,
        /// Stamp journal entries with their position instead of the time
        /// [default: off].
        #[arg(long, action = clap::ArgAction::SetTrue)]
        logical_clock: bool,
    },
}

#[derive(Args, Debug)]
struct CorpusArgs {
    /// Treebank, one JSON tree per line.
    #[arg(long, value_name = "PATH")]
    corpus: PathBuf,
    /// Constant signature.
    #[arg(long, value_name = "PATH")]
    sig: PathBuf,
}

#[derive(Args, Debug)]
struct SentenceArgs {
    /// Fragment bank written by `extract`.
    #[arg(long, value_name = "PATH")]
    bank: PathBuf,
    /// Whitespace-tokenized sentence.
    #[arg(long)]
    sentence: String,
}

#[derive(Args, Debug, Clone, Copy)]
struct SamplingArgs {
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// exact enumerates derivations; auto does so for small forests.
    #[arg(long, value_enum, default_value_t = EstimatorArg::Auto)]
    estimator: EstimatorArg,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum ModeArg {
    Mpd,
    Mpp,
    Mpi,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Mpd => Mode::Mpd,
            ModeArg::Mpp => Mode::Mpp,
            ModeArg::Mpi => Mode::Mpi,
        }
    }
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum EstimatorArg {
    Auto,
    Exact,
    Sample,
}

impl From<EstimatorArg> for Estimator {
    fn from(e: EstimatorArg) -> Estimator {
        match e {
            EstimatorArg::Auto => Estimator::Auto,
            EstimatorArg::Exact => Estimator::Exact,
            EstimatorArg::Sample => Estimator::Sample,
        }
    }
}

impl SamplingArgs {
    fn config(self, jobs: usize) -> SampleConfig {
        SampleConfig {
            n_samples: self.samples,
            seed: self.seed,
            jobs,
            estimator: self.estimator.into(),
        }
    }

    fn to_json(self) -> Value {
        json!({
            "samples": self.samples,
            "seed": self.seed,
            "estimator": Estimator::from(self.estimator),
        })
    }
}

struct Failure {
    exit: u8,
    code: &'static str,
    message: String,
    details: Value,
}

impl Failure {
    fn domain(code: &'static str, message: impl Display) -> Failure {
        Failure {
            exit: 1,
            code,
            message: message.to_string(),
            details: json!({}),
        }
    }

    fn usage(code: &'static str, message: impl Display) -> Failure {
        Failure {
            exit: 2,
            ..Failure::domain(code, message)
        }
    }

    fn with(mut self, key: &str, value: Value) -> Failure {
        self.details[key] = value;
        self
    }
}

fn violation_rows(vs: &[(String, Violation)]) -> Value {
    vs.iter()
        .map(|(tree, v)| json!({ "treeId": tree, "path": v.path, "kind": v.kind, "message": v.message }))
        .collect()
}

impl From<TreebankError> for Failure {
    fn from(e: TreebankError) -> Failure {
        match &e {
            TreebankError::Io { path, .. } => Failure::usage("IoError", &e).with("path", json!(path)),
            TreebankError::Format { line, .. } => Failure::usage("FormatError", &e).with("line", json!(line)),
            TreebankError::Signature(_) => Failure::usage("SignatureError", &e),
            TreebankError::Validation(vs) => {
                Failure::domain("ValidationError", &e).with("violations", violation_rows(vs))
            }
            TreebankError::MissingSemantics(p) => Failure::domain("MissingSemantics", &e).with("path", json!(p)),
            TreebankError::InvalidPath(p) => Failure::usage("InvalidPath", &e).with("path", json!(p)),
        }
    }
}

impl From<FragmentError> for Failure {
    fn from(e: FragmentError) -> Failure {
        match &e {
            FragmentError::UnaryCycle(cats) => Failure::domain("UnaryCycle", &e).with("categories", json!(cats)),
            FragmentError::BadDepth => Failure::usage("BadDepth", &e),
            FragmentError::KeySyntax { .. } | FragmentError::BankFormat(_) => Failure::usage("BankFormat", &e),
            _ => Failure::domain("FragmentError", &e),
        }
    }
}

impl From<ParseError> for Failure {
    fn from(e: ParseError) -> Failure {
        match &e {
            ParseError::UnknownWord(ws) => Failure::domain("UnknownWord", &e).with("words", json!(ws)),
            ParseError::NoParse => Failure::domain("NoParse", &e),
            ParseError::EmptySentence => Failure::usage("EmptySentence", &e),
            _ => Failure::domain("ParseError", &e),
        }
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Failure {
        match &e {
            EvalError::TestSizeTooLarge { .. } => Failure::usage("TestSizeTooLarge", &e),
            EvalError::ConstraintUnsatisfiable { words, attempts } => Failure::domain("ConstraintUnsatisfiable", &e)
                .with("words", json!(words))
                .with("attempts", json!(attempts)),
        }
    }
}

impl From<ModelFormatError> for Failure {
    fn from(e: ModelFormatError) -> Failure {
        Failure::usage("ModelFormat", e)
    }
}

impl From<SessionError> for Failure {
    fn from(e: SessionError) -> Failure {
        match e {
            SessionError::Treebank(t) => t.into(),
            SessionError::Corpus {
                ref tree,
                ref violation,
                ..
            } => {
                let rows = violation_rows(&[(tree.clone(), violation.clone())]);
                Failure::domain("ValidationError", &e).with("violations", rows)
            }
            SessionError::DuplicateId { .. } => Failure::domain("ValidationError", e),
            SessionError::Format { line, .. } => Failure::usage("FormatError", &e).with("line", json!(line)),
            SessionError::Journal { line, .. } => Failure::usage("JournalError", &e).with("line", json!(line)),
            SessionError::Io { .. } => Failure::usage("IoError", e),
        }
    }
}

type Outcome = Result<Value, Failure>;

fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| {
        Failure::usage("IoError", format!("cannot read {}: {e}", path.display())).with("path", json!(path))
    })
}

fn read_json(path: &Path, code: &'static str) -> Result<Value, Failure> {
    serde_json::from_str(&read_text(path)?)
        .map_err(|e| Failure::usage(code, format!("{}: {e}", path.display())).with("path", json!(path)))
}

fn write_json(path: &Path, v: &Value) -> Result<(), Failure> {
    std::fs::write(path, render(v)).map_err(|e| {
        Failure::usage("IoError", format!("cannot write {}: {e}", path.display())).with("path", json!(path))
    })
}

fn render(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("JSON values serialize") + "\n"
}

fn corpus_config(input: &CorpusArgs) -> Value {
    json!({ "corpus": input.corpus, "sig": input.sig })
}

fn tokens(sentence: &str) -> Vec<String> {
    sentence.split_whitespace().map(str::to_string).collect()
}

fn validate(input: &CorpusArgs, lenient: bool) -> Outcome {
    let sig = read_signature(&input.sig)?;
    let (trees, mut violations) = parse_corpus_text(&read_text(&input.corpus)?, &sig)?;
    let strictness = if lenient {
        Strictness::Lenient
    } else {
        Strictness::Strict
    };
    let mut seen = HashSet::new();
    for t in &trees {
        if !seen.insert(t.id.as_str()) {
            let v = Violation {
                path: NodePath::root(),
                kind: ViolationKind::Structure,
                message: format!("duplicate tree id `{}`", t.id),
            };
            violations.push((t.id.clone(), v));
        }
        violations.extend(
            validate_tree(t, &sig, strictness)
                .into_iter()
                .map(|v| (t.id.clone(), v)),
        );
    }
    if !violations.is_empty() {
        let message = format!("{} violation(s) in {} tree(s)", violations.len(), trees.len());
        return Err(Failure::domain("ValidationError", message).with("violations", violation_rows(&violations)));
    }
    Ok(json!({
        "ok": true,
        "trees": trees.len(),
        "unannotatedNodes": trees.iter().map(|t| t.unannotated_paths().len()).sum::<usize>(),
    }))
}

fn extract_bank(input: &CorpusArgs, max_depth: usize, syntactic: bool) -> Outcome {
    let bank = if syntactic {
        let sig = read_signature(&input.sig)?;
        let (trees, violations) = parse_corpus_text(&read_text(&input.corpus)?, &sig)?;
        if !violations.is_empty() {
            return Err(TreebankError::Validation(violations).into());
        }
        extract_syntactic(&Corpus { signature: sig, trees }, max_depth)?
    } else {
        extract(&load_corpus(&input.corpus, &input.sig)?, max_depth)?
    };
    let mut bank = bank;
    bank.set_signature_ref(Some(input.sig.display().to_string()));
    Ok(bank.to_json())
}

fn load_bank(path: &Path) -> Result<FragmentBank, Failure> {
    Ok(FragmentBank::from_json(&read_json(path, "BankFormat")?)?)
}

fn parse_sentence(target: &SentenceArgs, mode: Mode, cfg: &SampleConfig) -> Outcome {
    let bank = load_bank(&target.bank)?;
    let forest = build_forest(&bank, &tokens(&target.sentence))?;
    Ok(report(&forest, mode, cfg)?)
}

fn run_eval(
    input: &CorpusArgs,
    test_size: usize,
    mode: Mode,
    max_depth: usize,
    cfg: SampleConfig,
    timings: bool,
) -> Outcome {
    let corpus = load_corpus(&input.corpus, &input.sig)?;
    let (train, test) = split(&corpus.trees, test_size, cfg.seed)?;
    let train = Corpus {
        signature: corpus.signature.clone(),
        trees: train,
    };
    let bank = extract(&train, max_depth)?;
    let syntactic = if timings {
        Some(extract_syntactic(&train.without_semantics(), max_depth)?)
    } else {
        None
    };
    let opts = EvalOptions {
        mode,
        sampling: cfg,
        syntactic_bank: syntactic.as_ref(),
        timings,
    };
    let mut v = evaluate(&bank, &test, &opts).to_json();
    v["nTrain"] = json!(train.trees.len());
    v["testIds"] = test.iter().map(|t| json!(t.id)).collect();
    Ok(v)
}

fn lenient_trees(input: &CorpusArgs) -> Result<(dop_core::semalgebra::Signature, Vec<AnnotatedTree>), Failure> {
    let sig = read_signature(&input.sig)?;
    let (trees, mut violations) = parse_corpus_text(&read_text(&input.corpus)?, &sig)?;
    for t in &trees {
        violations.extend(
            validate_tree(t, &sig, Strictness::Lenient)
                .into_iter()
                .map(|v| (t.id.clone(), v)),
        );
    }
    if !violations.is_empty() {
        return Err(TreebankError::Validation(violations).into());
    }
    Ok((sig, trees))
}

fn suggest(
    input: &CorpusArgs,
    tree: Option<&str>,
    held_out: Option<&Path>,
    model_path: Option<&Path>,
    save_model: Option<&Path>,
) -> Outcome {
    let (sig, trees) = lenient_trees(input)?;
    let model = match model_path {
        Some(p) => SuggestionModel::from_json(&read_json(p, "ModelFormat")?)?,
        None => SuggestionModel::train(sig.clone(), &trees),
    };
    if let Some(p) = save_model {
        write_json(p, &model.to_json())?;
    }
    if let Some(p) = held_out {
        let gold = load_corpus(p, &input.sig)?;
        return Ok(json!({ "coverage": coverage_report(&model, &gold.trees).to_json() }));
    }
    let selected: Vec<&AnnotatedTree> = match tree {
        Some(id) => vec![trees
            .iter()
            .find(|t| t.id == id)
            .ok_or_else(|| Failure::usage("NotFound", format!("no tree with id `{id}`")).with("treeId", json!(id)))?],
        None => trees.iter().filter(|t| !t.is_fully_annotated()).collect(),
    };
    let rows: Vec<Value> = selected
        .into_iter()
        .map(|t| json!({ "treeId": t.id, "suggestions": model.suggestions_for(t) }))
        .collect();
    Ok(json!({ "trees": rows }))
}

fn serve(
    input: &CorpusArgs,
    host: &str,
    port: u16,
    journal: Option<PathBuf>,
    logical_clock: bool,
    config: Value,
) -> Outcome {
    let session = Session::open(&SessionConfig {
        corpus: input.corpus.clone(),
        signature: input.sig.clone(),
        journal,
        logical_clock,
    })?;
    let journal_path = session.journal_path().to_path_buf();
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Failure::usage("IoError", e))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind((host, port))
            .await
            .map_err(|e| Failure::usage("BindError", format!("cannot listen on {host}:{port}: {e}")))?;
        let addr = listener.local_addr().map_err(|e| Failure::usage("BindError", e))?;
        let mut ready = config;
        ready["listening"] = json!(addr.to_string());
        ready["journal"] = json!(journal_path);
        print!(
            "{}",
            serde_json::to_string(&ready).expect("JSON values serialize") + "\n"
        );
        std::io::stdout().flush().ok();
        dop_annoserve::serve_on(session, listener)
            .await
            .map_err(|e| Failure::usage("IoError", e))?;
        Ok(json!({ "stopped": true }))
    })
}

fn run(cli: &Cli) -> (Value, Outcome) {
    let jobs = cli.jobs as usize;
    let mut config = json!({ "jobs": jobs, "out": cli.out });
    let merge = |config: &mut Value, extra: Value| {
        if let (Some(c), Some(e)) = (config.as_object_mut(), extra.as_object()) {
            c.extend(e.iter().map(|(k, v)| (k.clone(), v.clone())));
        }
    };
    let outcome = match &cli.command {
        Command::Validate { input, lenient } => {
            merge(&mut config, json!({ "command": "validate", "lenient": lenient }));
            merge(&mut config, corpus_config(input));
            validate(input, *lenient)
        }
        Command::Extract {
            input,
            max_depth,
            syntactic,
        } => {
            merge(
                &mut config,
                json!({ "command": "extract", "maxDepth": max_depth, "syntactic": syntactic }),
            );
            merge(&mut config, corpus_config(input));
            extract_bank(input, *max_depth, *syntactic)
        }
        Command::Parse { target, mode, sampling } => {
            let mode = Mode::from(*mode);
            merge(
                &mut config,
                json!({ "command": "parse", "bank": target.bank, "mode": mode }),
            );
            merge(&mut config, sampling.to_json());
            parse_sentence(target, mode, &sampling.config(jobs))
        }
        Command::Interpret { target, sampling } => {
            merge(
                &mut config,
                json!({ "command": "interpret", "bank": target.bank, "mode": Mode::Mpi }),
            );
            merge(&mut config, sampling.to_json());
            parse_sentence(target, Mode::Mpi, &sampling.config(jobs))
        }
        Command::Eval {
            input,
            test_size,
            mode,
            max_depth,
            sampling,
            timings,
        } => {
            let mode = Mode::from(*mode);
            merge(
                &mut config,
                json!({
                    "command": "eval",
                    "testSize": test_size,
                    "mode": mode,
                    "maxDepth": max_depth,
                    "timings": timings,
                }),
            );
            merge(&mut config, corpus_config(input));
            merge(&mut config, sampling.to_json());
            run_eval(input, *test_size, mode, *max_depth, sampling.config(jobs), *timings)
        }
        Command::Suggest {
            input,
            tree,
            held_out,
            model,
            save_model,
        } => {
            merge(
                &mut config,
                json!({
                    "command": "suggest",
                    "tree": tree,
                    "heldOut": held_out,
                    "model": model,
                    "saveModel": save_model,
                }),
            );
            merge(&mut config, corpus_config(input));
            suggest(
                input,
                tree.as_deref(),
                held_out.as_deref(),
                model.as_deref(),
                save_model.as_deref(),
            )
        }
        Command::Serve {
            input,
            host,
            port,
            journal,
            logical_clock,
        } => {
            merge(
                &mut config,
                json!({
                    "command": "serve",
                    "host": host,
                    "port": port,
                    "journal": journal,
                    "logicalClock": logical_clock,
                }),
            );
            merge(&mut config, corpus_config(input));
            serve(
                input,
                host,
                *port,
                journal.clone(),
                *logical_clock,
                json!({ "config": config.clone() }),
            )
        }
    };
    (config, outcome)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DOP_LOG", "warn")).init();
    let cli = Cli::parse();
    if let Err(e) = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs as usize)
        .build_global()
    {
        log::warn!("thread pool: {e}");
    }
    let (config, outcome) = run(&cli);
    match outcome {
        Ok(mut v) => {
            v["config"] = config;
            let text = render(&v);
            if cli.out == Path::new("-") {
                print!("{text}");
            } else if let Err(e) = std::fs::write(&cli.out, text) {
                eprintln!("dop: cannot write {}: {e}", cli.out.display());
                return ExitCode::from(2);
            }
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("dop: {}", f.message);
            let mut v = json!({ "error": { "code": f.code, "message": f.message }, "config": config });
            if let Some(extra) = f.details.as_object() {
                for (k, x) in extra {
                    v["error"][k] = x.clone();
                }
            }
            print!("{}", render(&v));
            ExitCode::from(f.exit)
        }
    }
}
