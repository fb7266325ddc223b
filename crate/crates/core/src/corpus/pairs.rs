use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::Sentence;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NliLabel {
    Entailment,
    Contradiction,
    Neutral,
}

impl NliLabel {
    pub const ALL: [NliLabel; 3] = [
        NliLabel::Entailment,
        NliLabel::Contradiction,
        NliLabel::Neutral,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NliLabel::Entailment => "entailment",
            NliLabel::Contradiction => "contradiction",
            NliLabel::Neutral => "neutral",
        }
    }
}

impl fmt::Display for NliLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NliLabel {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "entailment" => Ok(NliLabel::Entailment),
            "contradiction" => Ok(NliLabel::Contradiction),
            "neutral" => Ok(NliLabel::Neutral),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairItem {
    pub premise: Sentence,
    pub hypothesis: Sentence,
    pub label: Option<NliLabel>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PairCorpus {
    pub items: Vec<PairItem>,
}

impl PairCorpus {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn token_lists(&self) -> impl Iterator<Item = &[String]> {
        self.items
            .iter()
            .flat_map(|it| [it.premise.tokens.as_slice(), it.hypothesis.tokens.as_slice()])
    }
}

fn side(text: &str, what: &str, source_name: &str, line: usize) -> Result<Sentence> {
    let tokens: Vec<String> = text.split_whitespace().map(str::to_string).collect();
    if tokens.is_empty() {
        return Err(Error::parse(source_name, line, format!("empty {what}")));
    }
    Sentence::unlabeled(tokens)
}

/// `label TAB premise TAB hypothesis`, premise and hypothesis pre-tokenized
/// by spaces. Blank lines are skipped. A label of `-` or `?` marks an
/// unlabeled item (prediction input).
pub fn parse_pairs(text: &str, source_name: &str) -> Result<PairCorpus> {
    let mut items = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(Error::parse(
                source_name,
                line_no,
                format!("expected 3 tab-separated columns, found {}", cols.len()),
            ));
        }
        let label = match cols[0].trim() {
            "-" | "?" => None,
            l => Some(
                l.parse::<NliLabel>()
                    .map_err(|e| Error::parse(source_name, line_no, e))?,
            ),
        };
        items.push(PairItem {
            premise: side(cols[1], "premise", source_name, line_no)?,
            hypothesis: side(cols[2], "hypothesis", source_name, line_no)?,
            label,
        });
    }
    Ok(PairCorpus { items })
}

/// Writes `label TAB premise TAB hypothesis`, with `labels` overriding the
/// stored gold labels when given.
pub fn write_pairs(corpus: &PairCorpus, labels: Option<&[NliLabel]>) -> String {
    let mut out = String::new();
    for (i, it) in corpus.items.iter().enumerate() {
        let label = labels
            .map(|l| l[i].as_str())
            .or(it.label.map(NliLabel::as_str))
            .unwrap_or("-");
        out.push_str(label);
        out.push('\t');
        out.push_str(&it.premise.tokens.join(" "));
        out.push('\t');
        out.push_str(&it.hypothesis.tokens.join(" "));
        out.push('\n');
    }
    out
}
