use std::fmt::Write;

use super::{Sentence, TaggedCorpus};
use crate::error::{Error, Result};

/// Parses whitespace-separated columns, one token per line, sentences
/// separated by blank lines. Lines starting with `#` are comments.
///
/// With `tag_col = None` the corpus is unlabeled.
pub fn parse_conll(
    text: &str,
    source_name: &str,
    token_col: usize,
    tag_col: Option<usize>,
) -> Result<TaggedCorpus> {
    let needed = token_col.max(tag_col.unwrap_or(0)) + 1;
    let mut sentences = Vec::new();
    let mut tokens = Vec::new();
    let mut labels = Vec::new();

    let mut flush = |tokens: &mut Vec<String>, labels: &mut Vec<String>| -> Result<()> {
        if tokens.is_empty() {
            return Ok(());
        }
        let l = tag_col.map(|_| std::mem::take(labels));
        sentences.push(Sentence::new(std::mem::take(tokens), l)?);
        Ok(())
    };

    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            flush(&mut tokens, &mut labels)?;
            continue;
        }
        if trimmed.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = trimmed.split_whitespace().collect();
        if cols.len() < needed {
            return Err(Error::parse(
                source_name,
                line_no,
                format!("expected at least {needed} columns, found {}", cols.len()),
            ));
        }
        tokens.push(cols[token_col].to_string());
        if let Some(c) = tag_col {
            labels.push(cols[c].to_string());
        }
    }
    flush(&mut tokens, &mut labels)?;
    Ok(TaggedCorpus::new(sentences))
}

/// Canonical two-column writer (`token tag`), inverse of [`parse_conll`]
/// with columns 0 and 1.
pub fn write_conll(corpus: &TaggedCorpus) -> String {
    let mut out = String::new();
    for s in &corpus.sentences {
        for (i, tok) in s.tokens.iter().enumerate() {
            match &s.labels {
                Some(l) => writeln!(out, "{tok} {}", l[i]).unwrap(),
                None => writeln!(out, "{tok}").unwrap(),
            }
        }
        out.push('\n');
    }
    out
}

/// Writes the corpus with an extra predicted-tag column appended.
pub fn write_conll_with_predictions(corpus: &TaggedCorpus, predictions: &[Vec<String>]) -> Result<String> {
    if predictions.len() != corpus.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predicted sentences for {} input sentences",
            predictions.len(),
            corpus.len()
        )));
    }
    let mut out = String::new();
    for (s, pred) in corpus.sentences.iter().zip(predictions) {
        if pred.len() != s.len() {
            return Err(Error::InvalidArgument("prediction length mismatch".into()));
        }
        for (i, tok) in s.tokens.iter().enumerate() {
            match &s.labels {
                Some(l) => writeln!(out, "{tok} {} {}", l[i], pred[i]).unwrap(),
                None => writeln!(out, "{tok} {}", pred[i]).unwrap(),
            }
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_token() {
        let c = parse_conll("John B-PER\n\n", "t", 0, Some(1)).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.sentences[0].tokens, vec!["John"]);
        assert_eq!(c.sentences[0].labels.as_ref().unwrap(), &vec!["B-PER".to_string()]);
    }

    #[test]
    fn two_blocks_and_comments() {
        let text = "# doc\nJohn B-PER\nran O\n\n\n# x\nHi O\n";
        let c = parse_conll(text, "t", 0, Some(1)).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c.tagset.len(), 2);
    }

    #[test]
    fn ragged_row_names_line() {
        let err = parse_conll("John\n", "data.conll", 0, Some(1)).unwrap_err();
        assert!(err.to_string().starts_with("data.conll:1:"), "{err}");
        let err = parse_conll("a B\nb\n", "f", 0, Some(1)).unwrap_err();
        assert!(err.to_string().contains(":2:"));
    }

    #[test]
    fn other_columns() {
        let c = parse_conll("EU NNP B-NP B-ORG\n", "t", 0, Some(3)).unwrap();
        assert_eq!(c.sentences[0].labels.as_ref().unwrap()[0], "B-ORG");
    }

    fn sentence_strategy() -> impl Strategy<Value = Sentence> {
        prop::collection::vec(("[a-zA-Z0-9.,]{1,6}", "[A-Z]{1,3}"), 1..6).prop_map(|pairs| {
            let (t, l): (Vec<String>, Vec<String>) = pairs.into_iter().unzip();
            Sentence::new(t, Some(l)).unwrap()
        })
    }

    proptest! {
        #[test]
        fn writer_roundtrip(sents in prop::collection::vec(sentence_strategy(), 0..5)) {
            let corpus = TaggedCorpus::new(sents);
            let text = write_conll(&corpus);
            let back = parse_conll(&text, "rt", 0, Some(1)).unwrap();
            prop_assert_eq!(back, corpus);
        }
    }
}
