//! Command-line front end. Every subcommand writes only under `--out`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::adversarial::{probe_accuracy, ProbeConfig};
use crate::corpus::{
    parse_conll, parse_pairs, synth_corpus, write_conll, write_conll_with_predictions, write_pairs, Sentence,
    SynthSpec, TaggedCorpus,
};
use crate::error::{read_to_string, Error, Result};
use crate::harness::config::{apply_override, SourceType};
use crate::harness::metrics::SpanCounts;
use crate::harness::permtest::{paired_permutation_test, paired_permutation_test_counts, DEFAULT_PERMUTATIONS};
use crate::harness::report::{attention_report, export_space, space_points, write_space_csv, BucketBy};
use crate::harness::train::{
    checkpoint_meta, last_column, load_corpora, load_input, load_sources, predict_pairs, predict_tags, score_nli,
    score_tagging, train_from_config, Dataset, Model, Trained, Units,
};
use crate::harness::{RunConfig, Task};
use crate::models::{load_checkpoint, save_checkpoint};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_DIVERGENCE: i32 = 3;

const CHECKPOINT_FILE: &str = "model.ckpt";

#[derive(Debug, Parser)]
#[command(name = "featmeta", version, about = "Feature-based meta-embeddings: train, evaluate and inspect")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model; writes model.ckpt, metrics.json and config.json.
    Train(TrainArgs),
    /// Score predictions against gold labels; writes metrics.json and units.tsv.
    Evaluate(EvaluateArgs),
    /// Tag a CoNLL file; writes predictions.conll.
    Tag(PredictArgs),
    /// Label sentence pairs; writes predictions.tsv.
    Nli(PredictArgs),
    /// Mean attention weight per source and bucket; writes attention.csv.
    InspectAttention(AttentionArgs),
    /// 2-D PCA of the projected embedding space; writes space.csv.
    ExportSpace(SpaceArgs),
    /// Linear probe predicting the source of projected vectors; writes probe.json.
    Probe(ProbeArgs),
    /// Paired permutation test between two per-unit score files; writes permtest.json.
    Permtest(PermtestArgs),
    /// Generate a synthetic tagged corpus; writes synth.conll.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct OutArg {
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Override a config field by dotted path, e.g. `optimizer.lr=0.05`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Random seed (overrides the config).
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Trained model directory (or checkpoint file); scores it on --data.
    #[arg(long, requires = "data", conflicts_with_all = ["gold", "pred"])]
    pub model: Option<PathBuf>,
    /// Labelled data to score the model on.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Gold file (CoNLL, tags in the last column; TSV pairs for nli).
    #[arg(long, requires_all = ["pred", "task"])]
    pub gold: Option<PathBuf>,
    /// Predicted file in the same format as --gold.
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Task deciding the metric when scoring files: ner, pos or nli.
    #[arg(long)]
    pub task: Option<Task>,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Trained model directory (or checkpoint file).
    #[arg(long)]
    pub model: PathBuf,
    /// Input file; gold labels, if present, are kept in the output.
    #[arg(long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct AttentionArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Data whose tokens are bucketed.
    #[arg(long)]
    pub data: PathBuf,
    /// frequency_bin, length, gold_label or shape_flags.
    #[arg(long, default_value = "frequency_bin")]
    pub bucket_by: BucketBy,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct SpaceArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Distinct tokens to include, in order of first occurrence.
    #[arg(long, default_value_t = 500)]
    pub max_tokens: usize,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 500)]
    pub max_tokens: usize,
    /// Seed of the probe's train/test split.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct PermtestArgs {
    /// Per-unit scores of system A, one per line.
    #[arg(long)]
    pub a: PathBuf,
    /// Per-unit scores of system B, paired line by line with --a.
    #[arg(long)]
    pub b: PathBuf,
    /// Lines hold `correct predicted gold` span counts; the statistic is corpus F1.
    #[arg(long)]
    pub counts: bool,
    #[arg(long, default_value_t = DEFAULT_PERMUTATIONS)]
    pub permutations: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutArg,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON generator spec; defaults are used for missing fields.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Override a spec field, e.g. `scheme=biose`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long, default_value_t = 100)]
    pub sentences: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub out: OutArg,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Divergence { .. } => EXIT_DIVERGENCE,
        Error::Config(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code. Messages go to stderr, JSON results to stdout.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train(a) => cmd_train(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Tag(a) => cmd_tag(a),
        Command::Nli(a) => cmd_nli(a),
        Command::InspectAttention(a) => cmd_attention(a),
        Command::ExportSpace(a) => cmd_space(a),
        Command::Probe(a) => cmd_probe(a),
        Command::Permtest(a) => cmd_permtest(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn out_file(out: &OutArg, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(&out.out).map_err(|e| Error::io(&out.out, e))?;
    Ok(out.out.join(name))
}

fn write(out: &OutArg, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
    let path = out_file(out, name)?;
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut overrides = a.overrides.clone();
    if let Some(seed) = a.seed {
        overrides.push(format!("seed={seed}"));
    }
    let cfg = RunConfig::load(&a.config, &overrides)?;
    let (trained, report) = train_from_config(&cfg)?;
    write(&a.out, "config.json", json(&cfg)?)?;
    save_checkpoint(&out_file(&a.out, CHECKPOINT_FILE)?, &trained.checkpoint()?)?;
    let metrics = write(&a.out, "metrics.json", json(&report)?)?;
    eprintln!(
        "selected epoch {} of {}; metrics in {}",
        report.selected_epoch,
        report.epochs.len(),
        metrics.display()
    );
    Ok(())
}

/// Rebuilds a trained model from its directory or checkpoint file.
pub fn load_model(path: &Path) -> Result<Trained> {
    let file = if path.is_dir() { path.join(CHECKPOINT_FILE) } else { path.to_path_buf() };
    let ckpt = load_checkpoint(&file)?;
    let (cfg, _) = checkpoint_meta(&ckpt)?;
    let corpora = if cfg.sources.iter().any(|s| s.kind == SourceType::Contextual) {
        Some(load_corpora(&cfg)?)
    } else {
        None
    };
    let sources = load_sources(&cfg, corpora.as_ref())?;
    Trained::from_checkpoint(&ckpt, &sources)
}

fn units_tsv(units: &Units) -> String {
    let mut out = String::new();
    match units {
        Units::Spans(v) => v
            .iter()
            .for_each(|c| out.push_str(&format!("{}\t{}\t{}\n", c.correct, c.predicted, c.gold))),
        _ => units.scores().iter().for_each(|s| out.push_str(&format!("{s}\n"))),
    }
    out
}

fn read_labelled_conll(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = read_to_string(path)?;
    let name = path.display().to_string();
    let col = last_column(&text)
        .filter(|&c| c > 0)
        .ok_or_else(|| Error::parse(&name, 1, "expected a token column and a tag column"))?;
    let corpus = parse_conll(&text, &name, 0, Some(col))?;
    Ok(corpus.sentences.into_iter().map(|s| s.labels.expect("labelled")).collect())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let result = match (&a.model, &a.gold, &a.pred) {
        (Some(model), _, _) => {
            let trained = load_model(model)?;
            let path = a.data.as_deref().expect("clap requires --data");
            let data = load_input(&trained.config, path)?;
            crate::harness::train::evaluate(&trained, &data).map_err(|e| in_file(path, e))?
        }
        (None, Some(gold), Some(pred)) => {
            let task = a.task.expect("clap requires --task");
            if task == Task::Nli {
                let g = parse_pairs(&read_to_string(gold)?, &gold.display().to_string())?;
                let p = parse_pairs(&read_to_string(pred)?, &pred.display().to_string())?;
                let labels = |c: &crate::corpus::PairCorpus, path: &Path| -> Result<Vec<_>> {
                    c.items
                        .iter()
                        .enumerate()
                        .map(|(i, it)| it.label.ok_or_else(|| Error::parse(path.display().to_string(), i + 1, "missing label")))
                        .collect()
                };
                score_nli(&labels(&g, gold)?, &labels(&p, pred)?)?
            } else {
                let g = read_labelled_conll(gold)?;
                let p = read_labelled_conll(pred)?;
                score_tagging(task, &g, &p).map_err(|e| in_file(pred, e))?
            }
        }
        _ => return Err(Error::Config("evaluate needs --model with --data, or --gold, --pred and --task".into())),
    };
    let text = json(&result)?;
    write(&a.out, "metrics.json", &text)?;
    write(&a.out, "units.tsv", units_tsv(&result.units))?;
    print!("{text}");
    Ok(())
}

fn in_file(path: &Path, e: Error) -> Error {
    match e {
        Error::InvalidArgument(m) => Error::InvalidArgument(format!("{}: {m}", path.display())),
        other => other,
    }
}

fn cmd_tag(a: PredictArgs) -> Result<()> {
    let trained = load_model(&a.model)?;
    let Model::Tagger(tagger) = &trained.model else {
        return Err(Error::Config(format!("{} is not a tagging model; use `nli`", a.model.display())));
    };
    let data = load_input(&trained.config, &a.input)?;
    let corpus = data.tagged()?;
    let pred = predict_tags(tagger, &trained.store, corpus)?;
    write(&a.out, "predictions.conll", write_conll_with_predictions(corpus, &pred)?)?;
    Ok(())
}

fn cmd_nli(a: PredictArgs) -> Result<()> {
    let trained = load_model(&a.model)?;
    let Model::Nli(model) = &trained.model else {
        return Err(Error::Config(format!("{} is not an NLI model; use `tag`", a.model.display())));
    };
    let pairs = parse_pairs(&read_to_string(&a.input)?, &a.input.display().to_string())?;
    let pred = predict_pairs(model, &trained.store, &pairs)?;
    write(&a.out, "predictions.tsv", write_pairs(&pairs, Some(&pred)))?;
    Ok(())
}

/// Inspection input as sentences; pairs contribute both sides, unlabelled.
fn inspection_corpus(trained: &Trained, path: &Path) -> Result<TaggedCorpus> {
    Ok(match load_input(&trained.config, path)? {
        Dataset::Tagged(c) => c,
        Dataset::Pairs(p) => TaggedCorpus::new(
            p.token_lists()
                .map(|t| Sentence::unlabeled(t.to_vec()))
                .collect::<Result<Vec<_>>>()?,
        ),
    })
}

fn cmd_attention(a: AttentionArgs) -> Result<()> {
    let trained = load_model(&a.model)?;
    let corpus = inspection_corpus(&trained, &a.data)?;
    let table = attention_report(trained.model.frontend(), &trained.store, &corpus, a.bucket_by)
        .map_err(|e| in_file(&a.data, e))?;
    let path = out_file(&a.out, "attention.csv")?;
    let f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    table.write_csv(f)
}

fn projected_points(trained: &Trained, data: &Path, max_tokens: usize) -> Result<Vec<crate::harness::SpacePoint>> {
    let corpus = inspection_corpus(trained, data)?;
    let sentences: Vec<&[String]> = corpus.token_lists().collect();
    space_points(trained.model.frontend(), &trained.store, &sentences, Some(max_tokens))
}

fn cmd_space(a: SpaceArgs) -> Result<()> {
    let trained = load_model(&a.model)?;
    let points = projected_points(&trained, &a.data, a.max_tokens)?;
    let rows = export_space(&points, &trained.model.frontend().sources.names())?;
    let path = out_file(&a.out, "space.csv")?;
    let f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    write_space_csv(&rows, f)
}

#[derive(Serialize)]
struct ProbeReport {
    accuracy: f64,
    samples: usize,
    sources: Vec<String>,
}

fn cmd_probe(a: ProbeArgs) -> Result<()> {
    let trained = load_model(&a.model)?;
    let points = projected_points(&trained, &a.data, a.max_tokens)?;
    let samples: Vec<Vec<f64>> = points.iter().map(|p| p.vector.clone()).collect();
    let labels: Vec<usize> = points.iter().map(|p| p.source).collect();
    let cfg = ProbeConfig {
        seed: a.seed,
        ..ProbeConfig::default()
    };
    let report = ProbeReport {
        accuracy: probe_accuracy(&samples, &labels, &cfg)?,
        samples: samples.len(),
        sources: trained.model.frontend().sources.names().into_iter().map(str::to_string).collect(),
    };
    let text = json(&report)?;
    write(&a.out, "probe.json", &text)?;
    print!("{text}");
    Ok(())
}

fn read_scores(path: &Path) -> Result<Vec<f64>> {
    let name = path.display().to_string();
    read_to_string(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse::<f64>()
                .map_err(|e| Error::parse(&name, i + 1, format!("expected one number: {e}")))
        })
        .collect()
}

fn read_counts(path: &Path) -> Result<Vec<SpanCounts>> {
    let name = path.display().to_string();
    read_to_string(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let v: Vec<u64> = l
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(&name, i + 1, format!("expected three counts: {e}")))?;
            match v[..] {
                [correct, predicted, gold] if correct <= predicted && correct <= gold => Ok(SpanCounts {
                    correct,
                    predicted,
                    gold,
                }),
                _ => Err(Error::parse(&name, i + 1, "expected `correct predicted gold` with correct <= both")),
            }
        })
        .collect()
}

fn cmd_permtest(a: PermtestArgs) -> Result<()> {
    let result = if a.counts {
        paired_permutation_test_counts(&read_counts(&a.a)?, &read_counts(&a.b)?, a.permutations, a.seed)?
    } else {
        paired_permutation_test(&read_scores(&a.a)?, &read_scores(&a.b)?, a.permutations, a.seed)?
    };
    let text = json(&result)?;
    write(&a.out, "permtest.json", &text)?;
    print!("{text}");
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let mut value = match &a.spec {
        Some(p) => serde_json::from_str(&read_to_string(p)?)
            .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
        None => serde_json::to_value(SynthSpec::default())?,
    };
    for o in &a.overrides {
        apply_override(&mut value, o)?;
    }
    let spec: SynthSpec = serde_json::from_value(value).map_err(|e| Error::Config(format!("synth spec: {e}")))?;
    let corpus = synth_corpus(a.seed, a.sentences, &spec)?;
    write(&a.out, "synth.conll", write_conll(&corpus))?;
    Ok(())
}
