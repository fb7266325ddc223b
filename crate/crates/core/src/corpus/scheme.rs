use std::collections::BTreeSet;

/// Entity span, inclusive on both ends.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub kind: String,
}

impl Span {
    pub fn new(start: usize, end: usize, kind: impl Into<String>) -> Self {
        Span {
            start,
            end,
            kind: kind.into(),
        }
    }
}

enum Tag<'a> {
    Outside,
    Begin(&'a str),
    Inside(&'a str),
    End(&'a str),
    Single(&'a str),
}

fn parse_tag(label: &str) -> Tag<'_> {
    if label == "O" {
        return Tag::Outside;
    }
    match label.split_once('-') {
        Some(("B", k)) => Tag::Begin(k),
        Some(("I", k)) => Tag::Inside(k),
        Some(("E", k)) => Tag::End(k),
        Some(("S", k)) => Tag::Single(k),
        // Labels without a scheme prefix (e.g. POS tags) are singletons.
        _ => Tag::Single(label),
    }
}

/// Span extraction over BIO or BIOSE labels with repair: an `I-X` that does
/// not continue an open `X` span starts one, and a stray `E-X` is a
/// singleton. Also returns how many repairs were made.
fn extract(labels: &[String]) -> (Vec<Span>, usize) {
    let mut spans = Vec::new();
    let mut repairs = 0;
    let mut open: Option<(usize, &str)> = None;
    for (i, label) in labels.iter().enumerate() {
        match parse_tag(label) {
            Tag::Outside => {
                if let Some((s, k)) = open.take() {
                    spans.push(Span::new(s, i - 1, k));
                }
            }
            Tag::Begin(k) => {
                if let Some((s, pk)) = open.take() {
                    spans.push(Span::new(s, i - 1, pk));
                }
                open = Some((i, k));
            }
            Tag::Inside(k) => match open {
                Some((_, pk)) if pk == k => {}
                _ => {
                    if let Some((s, pk)) = open.take() {
                        spans.push(Span::new(s, i - 1, pk));
                    }
                    repairs += 1;
                    open = Some((i, k));
                }
            },
            Tag::End(k) => match open.take() {
                Some((s, pk)) if pk == k => spans.push(Span::new(s, i, k)),
                prev => {
                    if let Some((s, pk)) = prev {
                        spans.push(Span::new(s, i - 1, pk));
                    }
                    repairs += 1;
                    spans.push(Span::new(i, i, k));
                }
            },
            Tag::Single(k) => {
                if let Some((s, pk)) = open.take() {
                    spans.push(Span::new(s, i - 1, pk));
                }
                spans.push(Span::new(i, i, k));
            }
        }
    }
    if let Some((s, k)) = open {
        spans.push(Span::new(s, labels.len() - 1, k));
    }
    (spans, repairs)
}

/// Maximal spans of a BIO or BIOSE sequence (scheme auto-detected).
pub fn spans_from_labels(labels: &[String]) -> BTreeSet<Span> {
    extract(labels).0.into_iter().collect()
}

/// BIO → BIOSE. Returns the converted labels and the number of repaired
/// stray `I-X` tags. Labels without a scheme prefix pass through unchanged.
pub fn to_biose(labels: &[String]) -> (Vec<String>, usize) {
    let (spans, repairs) = extract(labels);
    let mut out: Vec<String> = labels
        .iter()
        .map(|l| match parse_tag(l) {
            Tag::Single(k) if k == l => l.clone(),
            _ => "O".to_string(),
        })
        .collect();
    for sp in spans {
        if out[sp.start] == sp.kind && sp.start == sp.end && labels[sp.start] == sp.kind {
            continue;
        }
        if sp.start == sp.end {
            out[sp.start] = format!("S-{}", sp.kind);
        } else {
            out[sp.start] = format!("B-{}", sp.kind);
            for l in &mut out[sp.start + 1..sp.end] {
                *l = format!("I-{}", sp.kind);
            }
            out[sp.end] = format!("E-{}", sp.kind);
        }
    }
    (out, repairs)
}
