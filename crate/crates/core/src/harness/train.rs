use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::{RunConfig, Selection, SourceType, Task};
use super::metrics::{eval_accuracy, eval_span_f1, eval_token_accuracy, SpanCounts};
use crate::adversarial::{adversarial_step, Discriminator};
use crate::autodiff::{Optimizer, ParamStore, Tape, Var};
use crate::corpus::{parse_conll, parse_pairs, NliLabel, PairCorpus, TaggedCorpus, Vocabulary};
use crate::embeddings::{
    load_table, CharEmbedder, CharVocab, ContextualTable, EmbeddingSet, EmbeddingSource, ShapeSourceEmbedder,
    SourceKind, StaticTable,
};
use crate::error::{read_to_string, Error, Result};
use crate::features::ShapeVocab;
use crate::meta::MetaEmbedder;
use crate::models::{Checkpoint, Frontend, NliModel, Tagger};
use crate::{seeded_rng, RunRng};

/// XORed into the run seed for the discriminator's initialisation, so that
/// enabling it leaves the main generator's draws untouched.
const DISC_SEED_SALT: u64 = 0x5eed_d15c_0000_0001;

#[derive(Clone, Debug)]
pub enum Dataset {
    Tagged(TaggedCorpus),
    Pairs(PairCorpus),
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::Tagged(c) => c.len(),
            Dataset::Pairs(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every sentence (premises and hypotheses for pairs).
    pub fn sentences(&self) -> Vec<&[String]> {
        match self {
            Dataset::Tagged(c) => c.token_lists().collect(),
            Dataset::Pairs(p) => p.token_lists().collect(),
        }
    }

    pub fn tagged(&self) -> Result<&TaggedCorpus> {
        match self {
            Dataset::Tagged(c) => Ok(c),
            Dataset::Pairs(_) => Err(Error::InvalidArgument("expected a tagged corpus".into())),
        }
    }

    pub fn pairs(&self) -> Result<&PairCorpus> {
        match self {
            Dataset::Pairs(p) => Ok(p),
            Dataset::Tagged(_) => Err(Error::InvalidArgument("expected a sentence-pair corpus".into())),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Corpora {
    pub train: Dataset,
    pub dev: Option<Dataset>,
    pub test: Option<Dataset>,
    /// Malformed BIO prefixes repaired while converting to BIOSE.
    pub repairs: usize,
}

/// Zero-based index of the last column on the first data line.
pub fn last_column(text: &str) -> Option<usize> {
    text.lines()
        .map(str::trim)
        .find(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.split_whitespace().count() - 1)
}

/// Reads one data file in the format the task expects. CoNLL files take
/// their tags from `data.tag_col`, or the last column when unset.
pub fn load_dataset(cfg: &RunConfig, path: &Path) -> Result<Dataset> {
    let text = read_to_string(path)?;
    let name = path.display().to_string();
    Ok(match cfg.task {
        Task::Nli => Dataset::Pairs(parse_pairs(&text, &name)?),
        _ => {
            let tag_col = match cfg.data.tag_col {
                Some(c) => c,
                None => match last_column(&text) {
                    Some(c) if c > cfg.data.token_col => c,
                    _ => return Err(Error::parse(name, 1, "no tag column after the token column")),
                },
            };
            Dataset::Tagged(parse_conll(&text, &name, cfg.data.token_col, Some(tag_col))?)
        }
    })
}

/// Reads prediction input: labelled when the file has a column beyond the
/// token column, unlabelled otherwise.
pub fn load_input(cfg: &RunConfig, path: &Path) -> Result<Dataset> {
    let text = read_to_string(path)?;
    let name = path.display().to_string();
    Ok(match cfg.task {
        Task::Nli => Dataset::Pairs(parse_pairs(&text, &name)?),
        _ => {
            let tag_col = cfg
                .data
                .tag_col
                .or_else(|| last_column(&text))
                .filter(|&c| c > cfg.data.token_col);
            Dataset::Tagged(parse_conll(&text, &name, cfg.data.token_col, tag_col)?)
        }
    })
}

pub fn load_corpora(cfg: &RunConfig) -> Result<Corpora> {
    let train = load_dataset(cfg, &cfg.data.train)?;
    let dev = cfg.data.dev.as_deref().map(|p| load_dataset(cfg, p)).transpose()?;
    let test = cfg.data.test.as_deref().map(|p| load_dataset(cfg, p)).transpose()?;
    Ok(prepare_corpora(cfg.task, train, dev, test))
}

/// Converts NER labels to BIOSE and counts the repairs.
pub fn prepare_corpora(task: Task, mut train: Dataset, mut dev: Option<Dataset>, mut test: Option<Dataset>) -> Corpora {
    let mut repairs = 0;
    if task == Task::Ner {
        for d in std::iter::once(&mut train).chain(dev.iter_mut()).chain(test.iter_mut()) {
            if let Dataset::Tagged(c) = d {
                repairs += c.to_biose();
            }
        }
    }
    Corpora {
        train,
        dev,
        test,
        repairs,
    }
}

/// Everything besides the parameters that a model needs to be rebuilt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelData {
    pub tags: Vec<String>,
    /// Tokens by frequency rank.
    pub vocab: Vec<String>,
    pub chars: Vec<char>,
    pub shapes: Vec<String>,
}

impl ModelData {
    pub fn from_training(train: &Dataset, ranks: Option<&Vocabulary>) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::InvalidArgument("training set is empty".into()));
        }
        let sentences = train.sentences();
        let tags = match train {
            Dataset::Tagged(c) => c.tagset.iter().cloned().collect(),
            Dataset::Pairs(_) => Vec::new(),
        };
        let vocab = match ranks {
            Some(v) => v.tokens().to_vec(),
            None => Vocabulary::build(sentences.iter().copied())?.tokens().to_vec(),
        };
        let words = || sentences.iter().flat_map(|s| s.iter().map(String::as_str));
        Ok(ModelData {
            tags,
            vocab,
            chars: CharVocab::build(words()).chars().to_vec(),
            shapes: ShapeVocab::build(words()).shapes().to_vec(),
        })
    }

    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary::from_parts(self.vocab.clone(), None)
    }
}

/// Pre-loaded data behind one configured source.
#[derive(Clone, Debug)]
pub enum SourceData {
    Static(Arc<StaticTable>),
    Contextual(Arc<ContextualTable>),
    Char,
    Shape,
}

#[derive(Clone, Debug)]
pub struct NamedSource {
    pub name: String,
    pub data: SourceData,
}

/// Loads embedding tables and contextual dumps named in the config.
/// Dumps are aligned with the matching split of `corpora`, which is only
/// needed when a contextual source is configured.
pub fn load_sources(cfg: &RunConfig, corpora: Option<&Corpora>) -> Result<Vec<NamedSource>> {
    cfg.sources
        .iter()
        .map(|s| {
            let data = match s.kind {
                SourceType::Static => {
                    let path = s.path.as_deref().expect("validated");
                    SourceData::Static(Arc::new(load_table(path, s.dim)?))
                }
                SourceType::Contextual => {
                    let corpora = corpora.ok_or_else(|| {
                        Error::InvalidArgument(format!("source {}: contextual dumps need the corpora they were computed on", s.name))
                    })?;
                    let mut table = ContextualTable::new(s.dim.expect("validated"));
                    for (split, path) in &s.dumps {
                        let corpus = match split.as_str() {
                            "train" => Some(&corpora.train),
                            "dev" => corpora.dev.as_ref(),
                            _ => corpora.test.as_ref(),
                        };
                        let Some(corpus) = corpus else {
                            return Err(Error::Config(format!("source {}: no {split} split to align a dump with", s.name)));
                        };
                        table.add_dump(&read_to_string(path)?, &path.display().to_string(), corpus.tagged()?)?;
                    }
                    SourceData::Contextual(Arc::new(table))
                }
                SourceType::Char => SourceData::Char,
                SourceType::Shape => SourceData::Shape,
            };
            Ok(NamedSource {
                name: s.name.clone(),
                data,
            })
        })
        .collect()
}

#[derive(Clone, Debug)]
pub enum Model {
    Tagger(Tagger),
    Nli(NliModel),
}

impl Model {
    pub fn frontend(&self) -> &Frontend {
        match self {
            Model::Tagger(t) => &t.frontend,
            Model::Nli(m) => &m.frontend,
        }
    }
}

/// A model with its parameters.
#[derive(Clone, Debug)]
pub struct Trained {
    pub config: RunConfig,
    pub data: ModelData,
    pub store: ParamStore,
    pub model: Model,
    pub discriminator: Option<Discriminator>,
}

impl Trained {
    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let meta = serde_json::json!({
            "config": serde_json::to_value(&self.config)?,
            "data": serde_json::to_value(&self.data)?,
        });
        Ok(Checkpoint::from_store(&self.store, meta))
    }

    /// Rebuilds the model described by a checkpoint and loads its weights.
    pub fn from_checkpoint(ckpt: &Checkpoint, sources: &[NamedSource]) -> Result<Self> {
        let (config, data) = checkpoint_meta(ckpt)?;
        let mut t = build_model(&config, &data, sources)?;
        ckpt.restore(&mut t.store)?;
        Ok(t)
    }
}

pub fn checkpoint_meta(ckpt: &Checkpoint) -> Result<(RunConfig, ModelData)> {
    let config: RunConfig = serde_json::from_value(ckpt.meta["config"].clone())
        .map_err(|e| Error::Config(format!("checkpoint config: {e}")))?;
    let data: ModelData = serde_json::from_value(ckpt.meta["data"].clone())
        .map_err(|e| Error::Config(format!("checkpoint data: {e}")))?;
    Ok((config, data))
}

/// Initialises a model from the run seed. Returns the generator positioned
/// after initialisation; training continues drawing from it.
fn build_with_rng(cfg: &RunConfig, data: &ModelData, sources: &[NamedSource]) -> Result<(Trained, RunRng)> {
    if sources.len() != cfg.sources.len() {
        return Err(Error::Config(format!(
            "{} sources configured but {} loaded",
            cfg.sources.len(),
            sources.len()
        )));
    }
    let mut rng = seeded_rng(cfg.seed);
    let mut store = ParamStore::new();
    let shapes = ShapeVocab::from_shapes(data.shapes.clone());
    let chars = CharVocab::from_chars(data.chars.clone());
    let mut built = Vec::with_capacity(sources.len());
    for s in sources {
        let kind = match &s.data {
            SourceData::Static(t) => SourceKind::Static(t.clone()),
            SourceData::Contextual(t) => SourceKind::Contextual(t.clone()),
            SourceData::Char => SourceKind::Char(CharEmbedder::new(&mut store, &format!("src.{}", s.name), chars.clone(), &mut rng)),
            SourceData::Shape => {
                SourceKind::Shape(ShapeSourceEmbedder::new(&mut store, &format!("src.{}", s.name), shapes.clone(), &mut rng))
            }
        };
        built.push(EmbeddingSource {
            name: s.name.clone(),
            kind,
        });
    }
    let set = EmbeddingSet::new(built)?;
    let meta = MetaEmbedder::new(
        &mut store,
        cfg.combiner,
        &set.dims(),
        cfg.common_dim,
        cfg.attention_hidden,
        shapes,
        &mut rng,
    )?;
    let frontend = Frontend {
        sources: set,
        meta,
        vocab: data.vocabulary(),
    };
    let model = match cfg.task {
        Task::Nli => Model::Nli(NliModel::new(
            &mut store,
            frontend,
            cfg.encoder_hidden,
            cfg.nli_hidden,
            cfg.dropout(),
            &mut rng,
        )?),
        _ => Model::Tagger(Tagger::new(
            &mut store,
            frontend,
            data.tags.clone(),
            cfg.encoder_hidden,
            cfg.dropout(),
            &mut rng,
        )?),
    };
    let discriminator = if cfg.adversarial.enabled {
        let fe = model.frontend();
        let e = fe.meta.common_dim().expect("validated: combiner projects");
        let mut disc_rng = seeded_rng(cfg.seed ^ DISC_SEED_SALT);
        Some(Discriminator::new(
            &mut store,
            e,
            cfg.adversarial.disc_hidden,
            fe.sources.len(),
            &mut disc_rng,
        ))
    } else {
        None
    };
    Ok((
        Trained {
            config: cfg.clone(),
            data: data.clone(),
            store,
            model,
            discriminator,
        },
        rng,
    ))
}

pub fn build_model(cfg: &RunConfig, data: &ModelData, sources: &[NamedSource]) -> Result<Trained> {
    Ok(build_with_rng(cfg, data, sources)?.0)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Units {
    Spans(Vec<SpanCounts>),
    /// `(correct, total)` tokens per sentence.
    Tokens(Vec<(u64, u64)>),
    /// 1 for a correct item, 0 otherwise.
    Items(Vec<u8>),
}

impl Units {
    /// One score per unit for the plain permutation test.
    pub fn scores(&self) -> Vec<f64> {
        match self {
            Units::Spans(v) => v.iter().map(|c| c.scores().f1).collect(),
            Units::Tokens(v) => v.iter().map(|&(c, n)| c as f64 / n.max(1) as f64).collect(),
            Units::Items(v) => v.iter().map(|&c| c as f64).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalResult {
    /// Span F1 in percent for NER, accuracy in [0, 1] otherwise.
    pub score: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub recall: Option<f64>,
    pub units: Units,
}

pub fn score_tagging(task: Task, gold: &[Vec<String>], pred: &[Vec<String>]) -> Result<EvalResult> {
    if task == Task::Ner {
        let (s, units) = eval_span_f1(gold, pred)?;
        Ok(EvalResult {
            score: s.f1,
            precision: Some(s.precision),
            recall: Some(s.recall),
            units: Units::Spans(units),
        })
    } else {
        let (acc, units) = eval_token_accuracy(gold, pred)?;
        Ok(EvalResult {
            score: acc,
            precision: None,
            recall: None,
            units: Units::Tokens(units),
        })
    }
}

pub fn score_nli(gold: &[NliLabel], pred: &[NliLabel]) -> Result<EvalResult> {
    let acc = eval_accuracy(gold, pred)?;
    Ok(EvalResult {
        score: acc,
        precision: None,
        recall: None,
        units: Units::Items(gold.iter().zip(pred).map(|(g, p)| u8::from(g == p)).collect()),
    })
}

fn gold_labels(corpus: &TaggedCorpus) -> Result<Vec<Vec<String>>> {
    corpus
        .sentences
        .iter()
        .enumerate()
        .map(|(i, s)| {
            s.labels
                .clone()
                .ok_or_else(|| Error::InvalidArgument(format!("sentence {} has no gold labels", i + 1)))
        })
        .collect()
}

fn gold_pair_labels(pairs: &PairCorpus) -> Result<Vec<NliLabel>> {
    pairs
        .items
        .iter()
        .enumerate()
        .map(|(i, p)| p.label.ok_or_else(|| Error::InvalidArgument(format!("pair {} has no gold label", i + 1))))
        .collect()
}

pub fn predict_tags(tagger: &Tagger, store: &ParamStore, corpus: &TaggedCorpus) -> Result<Vec<Vec<String>>> {
    corpus
        .sentences
        .iter()
        .map(|s| tagger.predict(store, &s.tokens))
        .collect()
}

pub fn predict_pairs(model: &NliModel, store: &ParamStore, pairs: &PairCorpus) -> Result<Vec<NliLabel>> {
    pairs
        .items
        .iter()
        .map(|p| model.predict(store, &p.premise.tokens, &p.hypothesis.tokens))
        .collect()
}

/// Scores a model against a labelled dataset.
pub fn evaluate(trained: &Trained, data: &Dataset) -> Result<EvalResult> {
    match (&trained.model, data) {
        (Model::Tagger(t), Dataset::Tagged(c)) => {
            let pred = predict_tags(t, &trained.store, c)?;
            score_tagging(trained.config.task, &gold_labels(c)?, &pred)
        }
        (Model::Nli(m), Dataset::Pairs(p)) => {
            let pred = predict_pairs(m, &trained.store, p)?;
            score_nli(&gold_pair_labels(p)?, &pred)
        }
        _ => Err(Error::InvalidArgument("dataset does not match the model's task".into())),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dev: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    MinLearningRate,
}

/// Everything a training run reports. Contains no timing or configuration,
/// so identical runs serialise to identical bytes.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricReport {
    pub task: Task,
    pub metric: &'static str,
    pub epochs: Vec<EpochRecord>,
    pub selected_epoch: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_dev: Option<f64>,
    pub stop: StopReason,
    pub label_repairs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test: Option<EvalResult>,
}

pub fn metric_name(task: Task) -> &'static str {
    match task {
        Task::Ner => "span_f1",
        Task::Pos => "token_accuracy",
        Task::Nli => "accuracy",
    }
}

enum Examples<'a> {
    Tagged(Vec<(&'a [String], Vec<usize>)>),
    Pairs(Vec<(&'a [String], &'a [String], NliLabel)>),
}

impl Examples<'_> {
    fn len(&self) -> usize {
        match self {
            Examples::Tagged(v) => v.len(),
            Examples::Pairs(v) => v.len(),
        }
    }
}

fn examples<'a>(model: &Model, train: &'a Dataset) -> Result<Examples<'a>> {
    match (model, train) {
        (Model::Tagger(t), Dataset::Tagged(c)) => c
            .sentences
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let labels = s
                    .labels
                    .as_ref()
                    .ok_or_else(|| Error::InvalidArgument(format!("training sentence {} has no labels", i + 1)))?;
                let ids = labels
                    .iter()
                    .map(|l| {
                        t.tag_index(l)
                            .ok_or_else(|| Error::InvalidArgument(format!("training sentence {}: unknown tag {l:?}", i + 1)))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((s.tokens.as_slice(), ids))
            })
            .collect::<Result<Vec<_>>>()
            .map(Examples::Tagged),
        (Model::Nli(_), Dataset::Pairs(p)) => p
            .items
            .iter()
            .enumerate()
            .map(|(i, it)| {
                let label = it
                    .label
                    .ok_or_else(|| Error::InvalidArgument(format!("training pair {} has no label", i + 1)))?;
                Ok((it.premise.tokens.as_slice(), it.hypothesis.tokens.as_slice(), label))
            })
            .collect::<Result<Vec<_>>>()
            .map(Examples::Pairs),
        _ => Err(Error::InvalidArgument("training data does not match the task".into())),
    }
}

fn divergence(epoch: usize, batch: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(what) => Error::Divergence { epoch, batch, what },
        other => other,
    }
}

/// Loads the data and sources a config names, then trains.
pub fn train_from_config(cfg: &RunConfig) -> Result<(Trained, MetricReport)> {
    let corpora = load_corpora(cfg)?;
    let ranks = match &cfg.data.rank_file {
        Some(p) => Some(Vocabulary::from_rank_file(&read_to_string(p)?, &p.display().to_string())?),
        None => None,
    };
    let data = ModelData::from_training(&corpora.train, ranks.as_ref())?;
    let sources = load_sources(cfg, Some(&corpora))?;
    train(cfg, &corpora, &data, &sources)
}

/// Trains from scratch and returns the selected model with its report.
pub fn train(cfg: &RunConfig, corpora: &Corpora, data: &ModelData, sources: &[NamedSource]) -> Result<(Trained, MetricReport)> {
    cfg.validate()?;
    let (mut trained, mut rng) = build_with_rng(cfg, data, sources)?;
    let ex = examples(&trained.model, &corpora.train)?;
    if ex.len() == 0 {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if cfg.selection == Selection::Dev && corpora.dev.is_none() {
        return Err(Error::Config("selection \"dev\" needs a development set".into()));
    }
    let oc = cfg.optimizer();
    let mut opt = Optimizer::new(oc.kind, oc.lr)?;
    let mut adv_opt = Optimizer::new(oc.kind, oc.lr)?;
    let mut order: Vec<usize> = (0..ex.len()).collect();
    let mut epochs = Vec::new();
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let mut since_best = 0;
    let mut global_batch = 0usize;
    let mut stop = StopReason::MaxEpochs;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch_no = b + 1;
            let mut tape = Tape::new();
            let mut losses: Vec<Var> = Vec::with_capacity(chunk.len());
            let mut batch_sentences: Vec<&[String]> = Vec::new();
            for &i in chunk {
                let l = match (&trained.model, &ex) {
                    (Model::Tagger(t), Examples::Tagged(v)) => {
                        batch_sentences.push(v[i].0);
                        t.loss(&mut tape, &trained.store, v[i].0, &v[i].1, &mut rng)?
                    }
                    (Model::Nli(m), Examples::Pairs(v)) => {
                        batch_sentences.push(v[i].0);
                        batch_sentences.push(v[i].1);
                        m.loss(&mut tape, &trained.store, v[i].0, v[i].1, v[i].2, Some(&mut rng))?
                    }
                    _ => unreachable!("examples match the model"),
                };
                losses.push(l);
            }
            let mut total = losses[0];
            for &l in &losses[1..] {
                total = tape.add(total, l)?;
            }
            let mean = tape.scale(total, 1.0 / losses.len() as f64);
            let value = tape.value(mean).item();
            if !value.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: batch_no,
                    what: format!("training loss is {value}"),
                });
            }
            loss_sum += value * chunk.len() as f64;
            tape.backward(mean)?;
            opt.step(&mut trained.store, &tape.param_grads())
                .map_err(|e| divergence(epoch, batch_no, e))?;
            global_batch += 1;
            if let Some(disc) = &trained.discriminator {
                if global_batch % cfg.adversarial.period == 0 {
                    adv_opt.learning_rate = opt.learning_rate;
                    adversarial_step(
                        &mut trained.store,
                        &mut adv_opt,
                        trained.model.frontend(),
                        disc,
                        cfg.adversarial.lambda,
                        &batch_sentences,
                    )
                    .map_err(|e| divergence(epoch, batch_no, e))?;
                }
            }
        }
        let train_loss = loss_sum / ex.len() as f64;
        let dev = match &corpora.dev {
            Some(d) => Some(evaluate(&trained, d)?.score),
            None => None,
        };
        epochs.push(EpochRecord {
            epoch,
            learning_rate: opt.learning_rate,
            train_loss,
            dev,
        });
        // Higher is better: dev metric, or negated training loss.
        let key = match cfg.selection {
            Selection::Dev => dev.expect("checked above"),
            Selection::TrainLoss => -train_loss,
        };
        let improved = best.as_ref().is_none_or(|(k, _, _)| key > *k);
        if improved {
            best = Some((key, epoch, trained.store.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= oc.patience {
                opt.learning_rate *= oc.anneal_factor;
                since_best = 0;
                if opt.learning_rate < oc.min_lr {
                    stop = StopReason::MinLearningRate;
                    break;
                }
            }
        }
    }

    let (_, selected_epoch, best_store) = best.expect("at least one epoch ran");
    trained.store = best_store;
    let best_dev = epochs[selected_epoch - 1].dev;
    let test = match &corpora.test {
        Some(t) => Some(evaluate(&trained, t)?),
        None => None,
    };
    let report = MetricReport {
        task: cfg.task,
        metric: metric_name(cfg.task),
        epochs,
        selected_epoch,
        best_dev,
        stop,
        label_repairs: corpora.repairs,
        test,
    };
    Ok((trained, report))
}
