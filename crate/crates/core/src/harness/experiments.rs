//! Small synthetic experiments with a known expected direction of effect.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use std::sync::Arc;

use rand::Rng;

use super::config::{RunConfig, Task};
use super::report::{attention_report, AttentionTable, BucketBy};
use super::train::{prepare_corpora, train, Dataset, ModelData, NamedSource, SourceData};
use crate::adversarial::{adversarial_update, probe_accuracy, Discriminator, ProbeConfig};
use crate::autodiff::{Optimizer, OptimizerKind, ParamStore, Tape, Tensor};
use crate::corpus::{synth_corpus, Sentence, SynthSpec, TaggedCorpus, Vocabulary};
use crate::embeddings::StaticTable;
use crate::error::{Error, Result};
use crate::meta::{CombinerKind, ProjectionSet};
use crate::seeded_rng;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlignmentSetup {
    /// Raw dimension of each source.
    pub dims: Vec<usize>,
    /// Per-source mean offset; source `i` has every coordinate centred at
    /// `offsets[i]`.
    pub offsets: Vec<f64>,
    pub noise: f64,
    pub samples_per_source: usize,
    pub common_dim: usize,
    pub disc_hidden: usize,
    pub lambda: f64,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    /// Learning rate reached at the last step by geometric decay.
    pub final_learning_rate: f64,
    pub batch: usize,
    pub steps: usize,
    /// Probe every this many steps and record the accuracy (0 disables).
    pub trace_every: usize,
}

impl Default for AlignmentSetup {
    fn default() -> Self {
        AlignmentSetup {
            dims: vec![8, 6],
            offsets: vec![1.0, -1.0],
            noise: 1.0,
            samples_per_source: 400,
            common_dim: 8,
            disc_hidden: 128,
            lambda: 1.0,
            // Under Adam the discriminator outpaces the projections and the
            // reversed gradient vanishes; decaying SGD settles instead.
            optimizer: OptimizerKind::Sgd,
            learning_rate: 0.2,
            final_learning_rate: 0.002,
            batch: 32,
            steps: 2000,
            trace_every: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AlignmentOutcome {
    pub probe_before: f64,
    pub probe_after: f64,
    pub steps: usize,
    pub final_disc_loss: f64,
    /// `(step, probe accuracy, discriminator loss)`.
    pub trace: Vec<(usize, f64, f64)>,
}

fn project_all(set: &ProjectionSet, store: &ParamStore, raw: &[Vec<Vec<f64>>]) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    let mut samples = Vec::new();
    let mut labels = Vec::new();
    let mut tape = Tape::new();
    for (i, rows) in raw.iter().enumerate() {
        let e = tape.constant(Tensor::from_rows(rows)?);
        let x = set.project(&mut tape, store, e, i)?;
        let v = tape.value(x);
        for r in 0..v.rows() {
            samples.push(v.row(r).to_vec());
            labels.push(i);
        }
    }
    Ok((samples, labels))
}

/// Projects Gaussian sources with separated means into a common space and
/// trains the projections against a source discriminator through gradient
/// reversal. Reports linear-probe accuracy on the projected vectors before
/// and after.
pub fn alignment_experiment(setup: &AlignmentSetup, seed: u64) -> Result<AlignmentOutcome> {
    let mut rng = seeded_rng(seed);
    let normal = Normal::new(0.0, setup.noise).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let raw: Vec<Vec<Vec<f64>>> = setup
        .dims
        .iter()
        .zip(&setup.offsets)
        .map(|(&d, &m)| {
            (0..setup.samples_per_source)
                .map(|_| (0..d).map(|_| m + normal.sample(&mut rng)).collect())
                .collect()
        })
        .collect();
    let mut store = ParamStore::new();
    let set = ProjectionSet::new(&mut store, &setup.dims, setup.common_dim, &mut rng)?;
    let disc = Discriminator::new(&mut store, setup.common_dim, setup.disc_hidden, setup.dims.len(), &mut rng);
    let probe = ProbeConfig {
        seed,
        ..ProbeConfig::default()
    };
    let (s, l) = project_all(&set, &store, &raw)?;
    let probe_before = probe_accuracy(&s, &l, &probe)?;

    let mut opt = Optimizer::new(setup.optimizer, setup.learning_rate)?;
    let mut trace = Vec::new();
    let mut final_disc_loss = f64::NAN;
    let mut idx: Vec<usize> = (0..setup.samples_per_source).collect();
    let decay = (setup.final_learning_rate / setup.learning_rate).powf(1.0 / setup.steps.max(1) as f64);
    for step in 1..=setup.steps {
        opt.learning_rate = setup.learning_rate * decay.powi(step as i32 - 1);
        idx.shuffle(&mut rng);
        let pick = &idx[..setup.batch.min(idx.len())];
        final_disc_loss = adversarial_update(&mut store, &mut opt, &disc, setup.lambda, |tape, store| {
            raw.iter()
                .enumerate()
                .map(|(i, rows)| {
                    let batch: Vec<Vec<f64>> = pick.iter().map(|&j| rows[j].clone()).collect();
                    let e = tape.constant(Tensor::from_rows(&batch)?);
                    set.project(tape, store, e, i)
                })
                .collect()
        })?;
        if setup.trace_every > 0 && step % setup.trace_every == 0 {
            let (s, l) = project_all(&set, &store, &raw)?;
            trace.push((step, probe_accuracy(&s, &l, &probe)?, final_disc_loss));
        }
    }
    let (s, l) = project_all(&set, &store, &raw)?;
    let probe_after = probe_accuracy(&s, &l, &probe)?;
    Ok(AlignmentOutcome {
        probe_before,
        probe_after,
        steps: setup.steps,
        final_disc_loss,
        trace,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InformedSetup {
    pub tags: usize,
    pub frequent_words: usize,
    /// Rare word types in each of the train and dev pools (disjoint).
    pub rare_words: usize,
    pub dim: usize,
    pub noise: f64,
    pub frequent_prob: f64,
    pub train_sentences: usize,
    pub dev_sentences: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub common_dim: usize,
    pub encoder_hidden: usize,
    pub epochs: usize,
    pub batch: usize,
    pub learning_rate: f64,
}

impl Default for InformedSetup {
    fn default() -> Self {
        InformedSetup {
            tags: 4,
            frequent_words: 16,
            rare_words: 400,
            dim: 8,
            noise: 0.1,
            frequent_prob: 0.5,
            train_sentences: 200,
            dev_sentences: 100,
            min_len: 4,
            max_len: 8,
            common_dim: 8,
            encoder_hidden: 16,
            epochs: 40,
            batch: 16,
            learning_rate: 0.2,
        }
    }
}

/// A tagging task whose two embedding sources are each reliable on one
/// frequency band and misleading on the other.
#[derive(Clone, Debug)]
pub struct InformedTask {
    pub train: TaggedCorpus,
    /// Frequent words plus rare words never seen in training.
    pub dev: TaggedCorpus,
    /// Correct for rare words, misleading for frequent ones.
    pub source_a: Arc<StaticTable>,
    /// Correct for frequent words, misleading for rare ones.
    pub source_b: Arc<StaticTable>,
    /// Frequency ranks over every word type, frequent words first.
    pub ranks: Vocabulary,
}

fn rare_surface(i: usize) -> String {
    let mut s = String::from("K");
    let mut n = i;
    for _ in 0..7 {
        s.push((b'a' + (n % 26) as u8) as char);
        n /= 26;
    }
    s
}

pub fn informed_task(setup: &InformedSetup, seed: u64) -> Result<InformedTask> {
    let mut rng = seeded_rng(seed);
    let k = setup.tags;
    if k < 2 || setup.frequent_words == 0 || setup.rare_words == 0 || setup.min_len == 0 || setup.min_len > setup.max_len {
        return Err(Error::InvalidArgument("degenerate informed-attention setup".into()));
    }
    let normal = Normal::new(0.0, 1.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let unit = |rng: &mut crate::RunRng| -> Vec<f64> {
        let v: Vec<f64> = (0..setup.dim).map(|_| normal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
        v.into_iter().map(|x| x / n).collect()
    };
    let protos_a: Vec<Vec<f64>> = (0..k).map(|_| unit(&mut rng)).collect();
    let protos_b: Vec<Vec<f64>> = (0..k).map(|_| unit(&mut rng)).collect();

    // (surface, tag, is_rare)
    let mut words: Vec<(String, usize, bool)> = (0..setup.frequent_words)
        .map(|i| (format!("w{}{}", (b'a' + (i / 26 % 26) as u8) as char, (b'a' + (i % 26) as u8) as char), i % k, false))
        .collect();
    for i in 0..2 * setup.rare_words {
        words.push((rare_surface(i), rng.random_range(0..k), true));
    }
    let mut rows_a = Vec::new();
    let mut rows_b = Vec::new();
    for (w, tag, rare) in &words {
        let wrong = (tag + rng.random_range(1..k)) % k;
        let (ta, tb) = if *rare { (*tag, wrong) } else { (wrong, *tag) };
        let jitter = |p: &[f64], rng: &mut crate::RunRng| -> Vec<f64> {
            p.iter().map(|x| x + setup.noise * normal.sample(rng)).collect()
        };
        rows_a.push((w.clone(), jitter(&protos_a[ta], &mut rng)));
        rows_b.push((w.clone(), jitter(&protos_b[tb], &mut rng)));
    }
    let tag_names: Vec<String> = (0..k).map(|t| format!("T{t}")).collect();
    let frequent = &words[..setup.frequent_words];
    let train_rare = &words[setup.frequent_words..setup.frequent_words + setup.rare_words];
    let dev_rare = &words[setup.frequent_words + setup.rare_words..];
    let sample = |n: usize, rare: &[(String, usize, bool)], rng: &mut crate::RunRng| -> Result<TaggedCorpus> {
        let mut sentences = Vec::with_capacity(n);
        for _ in 0..n {
            let len = rng.random_range(setup.min_len..=setup.max_len);
            let (mut toks, mut labels) = (Vec::with_capacity(len), Vec::with_capacity(len));
            for _ in 0..len {
                let (w, t, _) = if rng.random_bool(setup.frequent_prob) {
                    &frequent[rng.random_range(0..frequent.len())]
                } else {
                    &rare[rng.random_range(0..rare.len())]
                };
                toks.push(w.clone());
                labels.push(tag_names[*t].clone());
            }
            sentences.push(Sentence::new(toks, Some(labels))?);
        }
        Ok(TaggedCorpus::new(sentences))
    };
    let train = sample(setup.train_sentences, train_rare, &mut rng)?;
    let dev = sample(setup.dev_sentences, dev_rare, &mut rng)?;
    // Rare ranks interleave the two pools so unseen dev words fall in the
    // same frequency bins as rare training words.
    let mut ranked: Vec<String> = frequent.iter().map(|w| w.0.clone()).collect();
    for i in 0..setup.rare_words {
        ranked.push(train_rare[i].0.clone());
        ranked.push(dev_rare[i].0.clone());
    }
    Ok(InformedTask {
        train,
        dev,
        source_a: Arc::new(StaticTable::from_rows(rows_a)?),
        source_b: Arc::new(StaticTable::from_rows(rows_b)?),
        ranks: Vocabulary::from_parts(ranked, None),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InformedOutcome {
    pub combiner: CombinerKind,
    pub dev_accuracy: f64,
    /// Mean attention per frequency bin on the dev set; source A first.
    pub by_frequency: AttentionTable,
}

impl InformedOutcome {
    /// Mean weight of source A in the most frequent and rarest bins present.
    pub fn source_a_extremes(&self) -> (f64, f64) {
        let rows = &self.by_frequency.rows;
        (rows[0].means[0], rows[rows.len() - 1].means[0])
    }
}

/// Trains a tagger on [`informed_task`] with the given attention combiner.
pub fn informed_attention_run(setup: &InformedSetup, combiner: CombinerKind, seed: u64) -> Result<InformedOutcome> {
    let task = informed_task(setup, seed)?;
    let cfg = RunConfig::from_value(serde_json::json!({
        "task": "pos",
        "data": {"train": "<memory>", "dev": "<memory>"},
        "sources": [
            {"name": "a", "kind": "static", "path": "<memory>"},
            {"name": "b", "kind": "static", "path": "<memory>"}
        ],
        "combiner": combiner,
        "common_dim": setup.common_dim,
        "encoder_hidden": setup.encoder_hidden,
        "max_epochs": setup.epochs,
        "batch_size": setup.batch,
        "optimizer": {"kind": "sgd", "lr": setup.learning_rate},
        "seed": seed
    }))?;
    let corpora = prepare_corpora(
        Task::Pos,
        Dataset::Tagged(task.train.clone()),
        Some(Dataset::Tagged(task.dev.clone())),
        None,
    );
    let data = ModelData::from_training(&corpora.train, Some(&task.ranks))?;
    let sources = [
        NamedSource {
            name: "a".into(),
            data: SourceData::Static(task.source_a.clone()),
        },
        NamedSource {
            name: "b".into(),
            data: SourceData::Static(task.source_b.clone()),
        },
    ];
    let (trained, report) = train(&cfg, &corpora, &data, &sources)?;
    let by_frequency = attention_report(trained.model.frontend(), &trained.store, &task.dev, BucketBy::FrequencyBin)?;
    Ok(InformedOutcome {
        combiner,
        dev_accuracy: report.best_dev.expect("dev set given"),
        by_frequency,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OverfitSetup {
    pub sentences: usize,
    pub word_dim: usize,
    pub common_dim: usize,
    pub encoder_hidden: usize,
    pub max_epochs: usize,
    pub batch: usize,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub dropout: f64,
    pub lambda: f64,
}

impl Default for OverfitSetup {
    fn default() -> Self {
        OverfitSetup {
            sentences: 50,
            word_dim: 16,
            common_dim: 16,
            encoder_hidden: 32,
            max_epochs: 100,
            batch: 8,
            optimizer: OptimizerKind::Adam,
            learning_rate: 0.01,
            dropout: 0.1,
            lambda: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OverfitOutcome {
    pub train_loss: Vec<f64>,
    /// Training-set span F1 after each epoch.
    pub train_f1: Vec<f64>,
    /// First epoch reaching 100 F1.
    pub reached_at: Option<usize>,
}

/// Fits a small synthetic NER corpus with feature attention over a random
/// word table and a character model, plus adversarial alignment, scoring
/// the training set itself after every epoch.
pub fn overfit_experiment(setup: &OverfitSetup, seed: u64) -> Result<OverfitOutcome> {
    let corpus = synth_corpus(seed, setup.sentences, &SynthSpec::default())?;
    let mut rng = seeded_rng(seed ^ 0x7ab1e);
    let normal = Normal::new(0.0, 1.0).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut words: Vec<&String> = corpus.token_lists().flatten().collect();
    words.sort();
    words.dedup();
    let rows = words
        .into_iter()
        .map(|w| (w.clone(), (0..setup.word_dim).map(|_| normal.sample(&mut rng)).collect()))
        .collect();
    let table = Arc::new(StaticTable::from_rows(rows)?);
    let cfg = RunConfig::from_value(serde_json::json!({
        "task": "ner",
        "data": {"train": "<memory>", "dev": "<memory>"},
        "sources": [
            {"name": "words", "kind": "static", "path": "<memory>"},
            {"name": "chars", "kind": "char"}
        ],
        "combiner": "att_feat",
        "common_dim": setup.common_dim,
        "encoder_hidden": setup.encoder_hidden,
        "max_epochs": setup.max_epochs,
        "batch_size": setup.batch,
        "optimizer": {"kind": setup.optimizer, "lr": setup.learning_rate},
        "dropout": setup.dropout,
        "adversarial": {"enabled": true, "lambda": setup.lambda},
        "selection": "train_loss",
        "seed": seed
    }))?;
    let corpora = prepare_corpora(
        Task::Ner,
        Dataset::Tagged(corpus.clone()),
        Some(Dataset::Tagged(corpus)),
        None,
    );
    let data = ModelData::from_training(&corpora.train, None)?;
    let sources = [
        NamedSource {
            name: "words".into(),
            data: SourceData::Static(table),
        },
        NamedSource {
            name: "chars".into(),
            data: SourceData::Char,
        },
    ];
    let (_, report) = train(&cfg, &corpora, &data, &sources)?;
    let train_f1: Vec<f64> = report.epochs.iter().map(|e| e.dev.expect("dev given")).collect();
    let reached_at = train_f1.iter().position(|&f| f >= 100.0).map(|i| i + 1);
    Ok(OverfitOutcome {
        train_loss: report.epochs.iter().map(|e| e.train_loss).collect(),
        train_f1,
        reached_at,
    })
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}
