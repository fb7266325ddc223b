use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::pca::pca_export;
use crate::autodiff::{ParamStore, Tape};
use crate::corpus::TaggedCorpus;
use crate::error::{Error, Result};
use crate::features::{frequency_bin, length_index, shape_flags};
use crate::models::Frontend;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum BucketBy {
    FrequencyBin,
    Length,
    GoldLabel,
    ShapeFlags,
}

impl BucketBy {
    pub const ALL: [BucketBy; 4] = [BucketBy::FrequencyBin, BucketBy::Length, BucketBy::GoldLabel, BucketBy::ShapeFlags];

    pub fn as_str(self) -> &'static str {
        match self {
            BucketBy::FrequencyBin => "frequency_bin",
            BucketBy::Length => "length",
            BucketBy::GoldLabel => "gold_label",
            BucketBy::ShapeFlags => "shape_flags",
        }
    }
}

impl fmt::Display for BucketBy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BucketBy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BucketBy::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown bucket {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttentionRow {
    pub bucket: String,
    pub tokens: usize,
    /// Mean attention weight per source, in source order.
    pub means: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttentionTable {
    pub bucket_by: BucketBy,
    pub sources: Vec<String>,
    pub rows: Vec<AttentionRow>,
}

impl AttentionTable {
    pub fn row(&self, bucket: &str) -> Option<&AttentionRow> {
        self.rows.iter().find(|r| r.bucket == bucket)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["bucket".to_string(), "tokens".to_string()];
        header.extend(self.sources.iter().cloned());
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![r.bucket.clone(), r.tokens.to_string()];
            rec.extend(r.means.iter().map(|m| m.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

// Numeric buckets sort numerically, text buckets lexicographically.
type BucketKey = (usize, String);

fn bucket_key(by: BucketBy, token: &str, rank: crate::corpus::Rank, label: Option<&str>) -> Result<BucketKey> {
    Ok(match by {
        BucketBy::FrequencyBin => (frequency_bin(rank), String::new()),
        BucketBy::Length => (length_index(token) + 1, String::new()),
        BucketBy::GoldLabel => (
            0,
            label
                .ok_or_else(|| Error::InvalidArgument("gold_label buckets need a labelled corpus".into()))?
                .to_string(),
        ),
        BucketBy::ShapeFlags => (0, shape_flags(token).iter().map(|&b| if b > 0.0 { '1' } else { '0' }).collect()),
    })
}

/// Mean attention weight per source over all tokens in each bucket.
pub fn attention_report(
    frontend: &Frontend,
    store: &ParamStore,
    corpus: &TaggedCorpus,
    by: BucketBy,
) -> Result<AttentionTable> {
    if !frontend.meta.kind.uses_attention() {
        return Err(Error::InvalidArgument(format!(
            "combiner {} has no attention weights",
            frontend.meta.kind
        )));
    }
    let n = frontend.sources.len();
    let mut acc: BTreeMap<BucketKey, (usize, Vec<f64>)> = BTreeMap::new();
    for (si, s) in corpus.sentences.iter().enumerate() {
        let alphas = frontend
            .attention(store, &s.tokens)?
            .expect("attention combiner yields weights");
        let ranks = frontend.ranks(&s.tokens);
        for (t, tok) in s.tokens.iter().enumerate() {
            let label = s.labels.as_ref().map(|l| l[t].as_str());
            let key = bucket_key(by, tok, ranks[t], label).map_err(|e| match e {
                Error::InvalidArgument(m) => Error::InvalidArgument(format!("sentence {}: {m}", si + 1)),
                other => other,
            })?;
            let entry = acc.entry(key).or_insert_with(|| (0, vec![0.0; n]));
            entry.0 += 1;
            for (k, m) in entry.1.iter_mut().enumerate() {
                *m += alphas.at(t, k);
            }
        }
    }
    let rows = acc
        .into_iter()
        .map(|((num, text), (count, sums))| AttentionRow {
            bucket: if by == BucketBy::GoldLabel || by == BucketBy::ShapeFlags {
                text
            } else {
                num.to_string()
            },
            tokens: count,
            means: sums.into_iter().map(|s| s / count as f64).collect(),
        })
        .collect();
    Ok(AttentionTable {
        bucket_by: by,
        sources: frontend.sources.names().into_iter().map(str::to_string).collect(),
        rows,
    })
}

/// One projected vector in the common space.
#[derive(Clone, Debug, PartialEq)]
pub struct SpacePoint {
    pub source: usize,
    pub token: String,
    pub vector: Vec<f64>,
}

/// Projected vectors of every source for each distinct token, taken at the
/// token's first occurrence. Stops after `max_tokens` distinct tokens.
pub fn space_points(
    frontend: &Frontend,
    store: &ParamStore,
    sentences: &[&[String]],
    max_tokens: Option<usize>,
) -> Result<Vec<SpacePoint>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    'outer: for s in sentences {
        if s.is_empty() {
            continue;
        }
        let mut tape = Tape::new();
        let xs = frontend.project(&mut tape, store, s)?;
        for (t, tok) in s.iter().enumerate() {
            if max_tokens.is_some_and(|m| seen.len() >= m) {
                break 'outer;
            }
            if !seen.insert(tok.clone()) {
                continue;
            }
            for (i, &x) in xs.iter().enumerate() {
                out.push(SpacePoint {
                    source: i,
                    token: tok.clone(),
                    vector: tape.value(x).row(t).to_vec(),
                });
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpaceRow {
    pub x: f64,
    pub y: f64,
    pub source_name: String,
    pub token: String,
}

/// Two-dimensional PCA view of labelled points.
pub fn export_space(points: &[SpacePoint], source_names: &[&str]) -> Result<Vec<SpaceRow>> {
    let vectors: Vec<Vec<f64>> = points.iter().map(|p| p.vector.clone()).collect();
    let pca = pca_export(&vectors)?;
    Ok(points
        .iter()
        .zip(&pca.coords)
        .map(|(p, c)| SpaceRow {
            x: c[0],
            y: c[1],
            source_name: source_names[p.source].to_string(),
            token: p.token.clone(),
        })
        .collect())
}

pub fn write_space_csv<W: Write>(rows: &[SpaceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(["x", "y", "source_name", "token"])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
