use serde::{Deserialize, Serialize};

use crate::corpus::spans_from_labels;
use crate::error::{Error, Result};

/// Exact-match span counts for one sentence (or a whole corpus).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpanCounts {
    pub correct: u64,
    pub predicted: u64,
    pub gold: u64,
}

impl SpanCounts {
    pub fn add(&mut self, other: SpanCounts) {
        self.correct += other.correct;
        self.predicted += other.predicted;
        self.gold += other.gold;
    }

    /// Precision, recall and F1 in percent; a ratio with a zero
    /// denominator is 0.
    pub fn scores(&self) -> SpanScores {
        let pct = |a: u64, b: u64| if b == 0 { 0.0 } else { 100.0 * a as f64 / b as f64 };
        let precision = pct(self.correct, self.predicted);
        let recall = pct(self.correct, self.gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        SpanScores { precision, recall, f1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpanScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn sentence_span_counts(gold: &[String], pred: &[String]) -> Result<SpanCounts> {
    if gold.len() != pred.len() {
        return Err(Error::InvalidArgument(format!(
            "sentence has {} gold labels but {} predictions",
            gold.len(),
            pred.len()
        )));
    }
    let g = spans_from_labels(gold);
    let p = spans_from_labels(pred);
    Ok(SpanCounts {
        correct: g.intersection(&p).count() as u64,
        predicted: p.len() as u64,
        gold: g.len() as u64,
    })
}

/// Corpus span F1 plus the per-sentence counts it was built from.
pub fn eval_span_f1(gold: &[Vec<String>], pred: &[Vec<String>]) -> Result<(SpanScores, Vec<SpanCounts>)> {
    if gold.len() != pred.len() {
        return Err(Error::InvalidArgument(format!(
            "{} gold sentences but {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    let mut total = SpanCounts::default();
    let mut units = Vec::with_capacity(gold.len());
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        let c = sentence_span_counts(g, p).map_err(|e| Error::InvalidArgument(format!("sentence {}: {e}", i + 1)))?;
        total.add(c);
        units.push(c);
    }
    Ok((total.scores(), units))
}

/// Fraction of positions where `pred` equals `gold`.
pub fn eval_accuracy<T: PartialEq>(gold: &[T], pred: &[T]) -> Result<f64> {
    if gold.len() != pred.len() {
        return Err(Error::InvalidArgument(format!(
            "{} gold items but {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    if gold.is_empty() {
        return Err(Error::InvalidArgument("nothing to score".into()));
    }
    let correct = gold.iter().zip(pred).filter(|(g, p)| g == p).count();
    Ok(correct as f64 / gold.len() as f64)
}

/// Token accuracy over sentences, with per-sentence `(correct, total)`.
pub fn eval_token_accuracy(gold: &[Vec<String>], pred: &[Vec<String>]) -> Result<(f64, Vec<(u64, u64)>)> {
    if gold.len() != pred.len() {
        return Err(Error::InvalidArgument(format!(
            "{} gold sentences but {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    let mut units = Vec::with_capacity(gold.len());
    let (mut c, mut n) = (0u64, 0u64);
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(Error::InvalidArgument(format!(
                "sentence {}: {} gold labels but {} predictions",
                i + 1,
                g.len(),
                p.len()
            )));
        }
        let k = g.iter().zip(p).filter(|(a, b)| a == b).count() as u64;
        units.push((k, g.len() as u64));
        c += k;
        n += g.len() as u64;
    }
    if n == 0 {
        return Err(Error::InvalidArgument("nothing to score".into()));
    }
    Ok((c as f64 / n as f64, units))
}
