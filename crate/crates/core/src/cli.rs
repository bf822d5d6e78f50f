//! Command-line pipeline: train, translate, evaluate, crossval and
//! gen-synthetic.
//!
//! Settings come from built-in defaults, then an optional JSON config file,
//! then flags. `MATHML_ENRICH_SEED` overrides the seed from either source.
//! Every artifact is written to a temporary sibling and renamed into place.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::alignment::{align_corpus, AlignmentError};
use crate::corpus::{generate_synthetic_corpus, load_corpus, Corpus, CorpusError, SyntheticSpec};
use crate::decoder::{
    translate_corpus, translations_from_jsonl, translations_to_jsonl, OutputFormatError,
};
use crate::disambig::{
    accuracy, build_instances_from, count_readings, cross_validate, labeled_occurrences, train,
    AmbiguityTable, CrossValConfig, DisambigError, DisambigModel, LabeledOccurrence, MostFrequent,
    SvmConfig, Vocabulary,
};
use crate::eval::{evaluate_corpus, EvalError};
use crate::rules::{extract_rules, RuleError, RuleSet};

pub const SEED_ENV: &str = "MATHML_ENRICH_SEED";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Alignment(#[from] AlignmentError),
    #[error(transparent)]
    Rules(#[from] RuleError),
    #[error(transparent)]
    Disambig(#[from] DisambigError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    OutputFormat(#[from] OutputFormatError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("file not found: {0}")]
    MissingInput(PathBuf),
    #[error("missing setting: {0}")]
    MissingSetting(&'static str),
    #[error("config: {0}")]
    Config(String),
}

impl CliError {
    /// Name of the underlying error variant, e.g. `NotFound`.
    pub fn name(&self) -> String {
        let debug = match self {
            CliError::Corpus(e) => format!("{e:?}"),
            CliError::Alignment(e) => format!("{e:?}"),
            CliError::Rules(e) => format!("{e:?}"),
            CliError::Disambig(DisambigError::Corpus(e)) => format!("{e:?}"),
            CliError::Disambig(DisambigError::Alignment(e)) => format!("{e:?}"),
            CliError::Disambig(e) => format!("{e:?}"),
            CliError::Eval(e) => format!("{e:?}"),
            CliError::OutputFormat(_) => "OutputFormat".into(),
            other => format!("{other:?}"),
        };
        debug
            .split(|c: char| !c.is_alphanumeric() && c != '_')
            .next()
            .unwrap_or_default()
            .to_string()
    }
}

/// Effective settings of one run. Serialized into every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: Option<PathBuf>,
    pub rules: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub translations: Option<PathBuf>,
    pub table: Option<PathBuf>,
    pub synthetic_spec: Option<PathBuf>,
    pub iterations: usize,
    pub svm_c: f64,
    pub epochs: usize,
    pub seed: u64,
    pub folds: usize,
    pub with_text: bool,
    pub disambig: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: None,
            rules: None,
            model: None,
            out: None,
            report: None,
            translations: None,
            table: None,
            synthetic_spec: None,
            iterations: 10,
            svm_c: 1.0,
            epochs: 20,
            seed: 0,
            folds: 10,
            with_text: true,
            disambig: true,
        }
    }
}

impl RunConfig {
    pub fn svm(&self) -> SvmConfig {
        SvmConfig {
            c: self.svm_c,
            epochs: self.epochs,
            seed: self.seed,
        }
    }

    fn path(&self, p: &Option<PathBuf>, name: &'static str) -> Result<PathBuf, CliError> {
        p.clone().ok_or(CliError::MissingSetting(name))
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "mathml-enrich",
    version,
    about = "Presentation to Content MathML translation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Align a corpus, extract rules and train the disambiguation model.
    Train(Flags),
    /// Translate the presentation side of a corpus.
    Translate(Flags),
    /// Score translations against the corpus content trees.
    Evaluate(Flags),
    /// k-fold comparison of the disambiguation systems.
    Crossval(Flags),
    /// Write a seeded synthetic corpus.
    GenSynthetic(Flags),
}

#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// JSON file with any RunConfig fields; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// JSON-lines parallel corpus.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Rule file (JSON lines).
    #[arg(long)]
    pub rules: Option<PathBuf>,
    /// Disambiguation model (JSON).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Output file of translate or gen-synthetic.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON report with the run settings.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Decoder output to evaluate.
    #[arg(long)]
    pub translations: Option<PathBuf>,
    /// Where train writes the word translation table.
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Identifier inventory for gen-synthetic; the bundled one if absent.
    #[arg(long)]
    pub synthetic_spec: Option<PathBuf>,
    /// Number of cross-validation folds [default: 10].
    #[arg(long)]
    pub folds: Option<usize>,
    /// Seed for shuffles and generation [default: 0]; MATHML_ENRICH_SEED overrides it.
    #[arg(long)]
    pub seed: Option<u64>,
    /// EM iterations [default: 10].
    #[arg(long)]
    pub iterations: Option<usize>,
    /// SVM regularization constant C [default: 1.0].
    #[arg(long)]
    pub svm_c: Option<f64>,
    /// SVM epochs [default: 20].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Train without the description and category features.
    #[arg(long)]
    pub no_text_features: bool,
    /// Translate with rules only.
    #[arg(long)]
    pub no_disambig: bool,
}

impl Flags {
    /// Defaults, then the config file, then flags, then the seed variable.
    pub fn resolve(&self, seed_env: Option<&str>) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = read(path)?;
                serde_json::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?
            }
            None => RunConfig::default(),
        };
        macro_rules! take {
            ($($field:ident),*) => {$(
                if let Some(v) = &self.$field {
                    cfg.$field = v.clone().into();
                }
            )*};
        }
        take!(
            corpus,
            rules,
            model,
            out,
            report,
            translations,
            table,
            synthetic_spec
        );
        take!(folds, seed, iterations, svm_c, epochs);
        if self.no_text_features {
            cfg.with_text = false;
        }
        if self.no_disambig {
            cfg.disambig = false;
        }
        if let Some(raw) = seed_env {
            cfg.seed = raw
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("{SEED_ENV}={raw:?} is not a u64")))?;
        }
        Ok(cfg)
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            CliError::MissingInput(path.to_path_buf())
        } else {
            CliError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    })
}

/// Writes `contents` to a temporary file next to `path`, then renames it.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let io = |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(contents.as_bytes()).map_err(io)?;
    f.sync_all().map_err(io)?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        io(e)
    })
}

fn load_corpus_from(cfg: &RunConfig) -> Result<Corpus, CliError> {
    let path = cfg.path(&cfg.corpus, "--corpus")?;
    Ok(load_corpus(&path)?)
}

fn load_rules(cfg: &RunConfig) -> Result<RuleSet, CliError> {
    let path = cfg.path(&cfg.rules, "--rules")?;
    Ok(RuleSet::from_jsonl(&read(&path)?)?)
}

fn load_model(path: &Path) -> Result<DisambigModel, CliError> {
    Ok(DisambigModel::from_json(&read(path)?)?)
}

fn pretty(value: &serde_json::Value) -> String {
    serde_json::to_string_pretty(value).expect("json value serializes") + "\n"
}

/// Occurrences whose name the table lists as ambiguous.
fn ambiguous_only(
    labeled: Vec<LabeledOccurrence>,
    table: &AmbiguityTable,
) -> Vec<LabeledOccurrence> {
    labeled
        .into_iter()
        .filter(|l| table.contains(&l.occurrence.name))
        .collect()
}

pub fn cmd_train(cfg: &RunConfig) -> Result<String, CliError> {
    let corpus = load_corpus_from(cfg)?;
    let rules_path = cfg.path(&cfg.rules, "--rules")?;
    let model_path = cfg.path(&cfg.model, "--model")?;
    let (table, alignments) = align_corpus(&corpus, cfg.iterations)?;
    let rules = extract_rules(&corpus, &alignments)?;
    let labeled = labeled_occurrences(&corpus, &alignments);
    let ambiguities = AmbiguityTable::from_counts(&count_readings(&labeled));
    let svm = cfg.svm();
    let model = if ambiguities.is_empty() {
        DisambigModel::empty(&svm, cfg.with_text)
    } else {
        let mut vocab = Vocabulary::new();
        let instances = build_instances_from(&labeled, &ambiguities, &mut vocab)?;
        train(&instances, vocab, ambiguities.clone(), &svm, cfg.with_text)?
    };
    let held = ambiguous_only(labeled, &ambiguities);
    let training_accuracy = accuracy(&model, &held).ok();
    let most_frequent_accuracy = accuracy(&MostFrequent(model.most_frequent.clone()), &held).ok();

    write_atomic(&rules_path, &rules.to_jsonl())?;
    write_atomic(&model_path, &model.to_json())?;
    if let Some(p) = &cfg.table {
        write_atomic(p, &table.save())?;
    }
    let summary = json!({
        "command": "train",
        "seed": cfg.seed,
        "config": cfg,
        "examples": corpus.len(),
        "translation_rules": rules.translation_rules().len(),
        "segmentation_rules": rules.segmentation_rules().len(),
        "ambiguous_identifiers": ambiguities.names().collect::<Vec<_>>(),
        "training_occurrences": held.len(),
        "training_accuracy": training_accuracy,
        "most_frequent_accuracy": most_frequent_accuracy,
    });
    if let Some(p) = &cfg.report {
        write_atomic(p, &pretty(&summary))?;
    }
    let acc = training_accuracy.map_or("n/a".to_string(), |a| format!("{:.4}", a));
    Ok(format!(
        "translation rules: {}\nsegmentation rules: {}\nambiguous identifiers: {}\ntraining accuracy: {acc}\n",
        rules.translation_rules().len(),
        rules.segmentation_rules().len(),
        ambiguities.len(),
    ))
}

pub fn cmd_translate(cfg: &RunConfig) -> Result<String, CliError> {
    let corpus = load_corpus_from(cfg)?;
    let rules = load_rules(cfg)?;
    let out = cfg.path(&cfg.out, "--out")?;
    let model = match (&cfg.model, cfg.disambig) {
        (Some(p), true) => Some(load_model(p)?),
        _ => None,
    };
    let translations = translate_corpus(&corpus, &rules, model.as_ref());
    write_atomic(&out, &translations_to_jsonl(&translations))?;
    let failed = translations.iter().filter(|t| t.failed).count();
    Ok(format!(
        "translated: {}\nfailed: {failed}\n",
        translations.len() - failed
    ))
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<String, CliError> {
    let references = load_corpus_from(cfg)?;
    let path = cfg.path(&cfg.translations, "--translations")?;
    let outputs = translations_from_jsonl(&read(&path)?)?;
    let report = evaluate_corpus(&outputs, &references)?;
    let mut text = format!(
        "n: {}\nfailures: {}\nmean TEDR: {:.6}\n",
        report.n, report.failures, report.mean_tedr
    );
    let mut value = serde_json::to_value(&report).expect("report serializes");
    if let Some(model_path) = &cfg.model {
        let model = load_model(model_path)?;
        let (_, alignments) = align_corpus(&references, cfg.iterations)?;
        let held = ambiguous_only(
            labeled_occurrences(&references, &alignments),
            &model.ambiguity_table,
        );
        let acc = accuracy(&model, &held).ok();
        value["disambiguation"] = json!({ "occurrences": held.len(), "accuracy": acc });
        if let Some(a) = acc {
            text.push_str(&format!("disambiguation accuracy: {a:.4}\n"));
        }
    }
    value["seed"] = json!(cfg.seed);
    value["config"] = json!(cfg);
    if let Some(p) = &cfg.report {
        write_atomic(p, &pretty(&value))?;
    }
    Ok(text)
}

pub fn cmd_crossval(cfg: &RunConfig) -> Result<String, CliError> {
    let corpus = load_corpus_from(cfg)?;
    let config = CrossValConfig {
        em_iterations: cfg.iterations,
        svm: cfg.svm(),
    };
    let report = cross_validate(&corpus, cfg.folds, cfg.seed, &config)?;
    if let Some(p) = &cfg.report {
        let mut value = serde_json::to_value(&report).expect("report serializes");
        value["config"] = json!(cfg);
        write_atomic(p, &pretty(&value))?;
    }
    Ok(report.table())
}

pub fn cmd_gen_synthetic(cfg: &RunConfig) -> Result<String, CliError> {
    let spec = match &cfg.synthetic_spec {
        Some(p) => SyntheticSpec::from_json(&read(p)?)?,
        None => SyntheticSpec::bundled(),
    };
    let out = cfg.path(&cfg.out, "--out")?;
    let corpus = generate_synthetic_corpus(&spec, cfg.seed)?;
    write_atomic(&out, &corpus.to_jsonl())?;
    Ok(format!("examples: {}\n", corpus.len()))
}

/// Checks that every input the command reads exists before doing work.
fn check_inputs(command: &Command, cfg: &RunConfig) -> Result<(), CliError> {
    let inputs: Vec<&Option<PathBuf>> = match command {
        Command::Train(_) | Command::Crossval(_) => vec![&cfg.corpus],
        Command::Translate(_) if cfg.disambig => vec![&cfg.corpus, &cfg.rules, &cfg.model],
        Command::Translate(_) => vec![&cfg.corpus, &cfg.rules],
        Command::Evaluate(_) => vec![&cfg.corpus, &cfg.translations, &cfg.model],
        Command::GenSynthetic(_) => vec![&cfg.synthetic_spec],
    };
    for p in inputs.into_iter().flatten() {
        if !p.exists() {
            if Some(p) == cfg.corpus.as_ref() {
                return Err(CorpusError::NotFound(p.clone()).into());
            }
            return Err(CliError::MissingInput(p.clone()));
        }
    }
    Ok(())
}

pub fn execute(command: &Command, seed_env: Option<&str>) -> Result<String, CliError> {
    let flags = match command {
        Command::Train(f)
        | Command::Translate(f)
        | Command::Evaluate(f)
        | Command::Crossval(f)
        | Command::GenSynthetic(f) => f,
    };
    let cfg = flags.resolve(seed_env)?;
    check_inputs(command, &cfg)?;
    match command {
        Command::Train(_) => cmd_train(&cfg),
        Command::Translate(_) => cmd_translate(&cfg),
        Command::Evaluate(_) => cmd_evaluate(&cfg),
        Command::Crossval(_) => cmd_crossval(&cfg),
        Command::GenSynthetic(_) => cmd_gen_synthetic(&cfg),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let seed_env = std::env::var(SEED_ENV).ok();
    match execute(&cli.command, seed_env.as_deref()) {
        Ok(summary) => {
            print!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {}: {e}", e.name());
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config_and_env_overrides_seed() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("cfg.json");
        fs::write(&cfg_path, r#"{"folds": 5, "seed": 3, "svm_c": 2.0}"#).unwrap();
        let flags = Flags {
            config: Some(cfg_path),
            folds: Some(7),
            ..Flags::default()
        };
        let cfg = flags.resolve(None).unwrap();
        assert_eq!((cfg.folds, cfg.seed, cfg.svm_c), (7, 3, 2.0));
        assert_eq!(flags.resolve(Some("11")).unwrap().seed, 11);
        assert!(flags.resolve(Some("x")).is_err());
    }

    #[test]
    fn unknown_config_field_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg_path = dir.path().join("cfg.json");
        fs::write(&cfg_path, r#"{"fold": 5}"#).unwrap();
        let flags = Flags {
            config: Some(cfg_path),
            ..Flags::default()
        };
        assert!(matches!(flags.resolve(None), Err(CliError::Config(_))));
    }

    #[test]
    fn missing_corpus_is_named() {
        let cmd = Command::Train(Flags {
            corpus: Some("/nonexistent/corpus.jsonl".into()),
            ..Flags::default()
        });
        let err = execute(&cmd, None).unwrap_err();
        assert_eq!(err.name(), "NotFound");
        assert!(err.to_string().contains("corpus not found"));
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        write_atomic(&p, "one").unwrap();
        write_atomic(&p, "two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
