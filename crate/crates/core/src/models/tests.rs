use std::sync::Arc;

use super::*;
use crate::autodiff::{check_param_gradients, sigmoid};
use crate::corpus::Sentence;
use crate::embeddings::{EmbeddingSource, SourceKind, StaticTable};
use crate::features::ShapeVocab;
use crate::meta::CombinerKind;
use crate::nn::Lstm;
use crate::seeded_rng;

fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn frontend(store: &mut ParamStore, kind: CombinerKind, seed: u64) -> Frontend {
    let words = ["the", "cat", "sat", "Paris", "on", "mat"];
    let mut rng = seeded_rng(seed);
    let mk = |dim: usize, rng: &mut crate::RunRng| {
        let rows = words
            .iter()
            .map(|w| (w.to_string(), Tensor::uniform(&[dim], 1.0, rng).into_data()))
            .collect();
        Arc::new(StaticTable::from_rows(rows).unwrap())
    };
    let a = mk(3, &mut rng);
    let b = mk(4, &mut rng);
    let sources = EmbeddingSet::new(vec![
        EmbeddingSource {
            name: "a".into(),
            kind: SourceKind::Static(a),
        },
        EmbeddingSource {
            name: "b".into(),
            kind: SourceKind::Static(b),
        },
    ])
    .unwrap();
    let sentence = Sentence::unlabeled(words.iter().map(|w| w.to_string()).collect()).unwrap();
    let vocab = Vocabulary::build([sentence.tokens.as_slice()]).unwrap();
    let meta = MetaEmbedder::new(store, kind, &sources.dims(), Some(3), 2, ShapeVocab::build(words), &mut rng).unwrap();
    Frontend { sources, meta, vocab }
}

#[test]
fn encoder_single_position_and_empty() {
    let mut store = ParamStore::new();
    let enc = BiLstmEncoder::new(&mut store, "e", 2, 3, &mut seeded_rng(1));
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::matrix(1, 2, vec![0.5, -0.5]).unwrap());
    let y = enc.encode(&mut tape, &store, x).unwrap();
    assert_eq!(tape.value(y).shape(), &[1, 6]);
    let empty = tape.constant(Tensor::vector(vec![0.5]));
    assert!(enc.encode(&mut tape, &store, empty).is_err());
}

#[test]
fn reversed_input_swaps_directions_with_tied_weights() {
    let mut store = ParamStore::new();
    let lstm = Lstm::new(&mut store, "l", ParamGroup::Classifier, 2, 3, &mut seeded_rng(2));
    let bi = BiLstm {
        forward: lstm.clone(),
        backward: lstm,
    };
    let x = Tensor::from_rows(&[vec![0.1, 0.9], vec![-0.4, 0.3]]).unwrap();
    let xr = Tensor::from_rows(&[vec![-0.4, 0.3], vec![0.1, 0.9]]).unwrap();
    let mut tape = Tape::new();
    let a = tape.constant(x);
    let b = tape.constant(xr);
    let ya = bi.forward(&mut tape, &store, a).unwrap().states;
    let yb = bi.forward(&mut tape, &store, b).unwrap().states;
    let (ya, yb) = (tape.value(ya), tape.value(yb));
    for t in 0..2 {
        assert_eq!(&ya.row(t)[..3], &yb.row(1 - t)[3..]);
        assert_eq!(&ya.row(t)[3..], &yb.row(1 - t)[..3]);
    }
}

#[test]
fn zero_weights_single_step_by_hand() {
    let mut store = ParamStore::new();
    let lstm = Lstm::new(&mut store, "l", ParamGroup::Classifier, 2, 1, &mut seeded_rng(3));
    store.value_mut(lstm.w_input).data_mut().fill(0.0);
    store.value_mut(lstm.w_hidden).data_mut().fill(0.0);
    let b = store.value(lstm.bias).data().to_vec();
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::matrix(1, 2, vec![3.0, -7.0]).unwrap());
    let h = lstm.run(&mut tape, &store, x, &[0]).unwrap()[0];
    let c = sigmoid(b[0]) * b[2].tanh();
    let want = sigmoid(b[3]) * c.tanh();
    assert!((tape.value(h).data()[0] - want).abs() < 1e-15);

    store.value_mut(lstm.bias).data_mut().fill(0.0);
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::matrix(1, 2, vec![3.0, -7.0]).unwrap());
    let h = lstm.run(&mut tape, &store, x, &[0]).unwrap()[0];
    assert_eq!(tape.value(h).data(), &[0.0]);
}

#[test]
fn identical_sentences_give_zero_difference_block() {
    let mut tape = Tape::new();
    let u = tape.constant(Tensor::vector(vec![0.3, -0.2]));
    let z = NliHead::features(&mut tape, u, u).unwrap();
    assert_eq!(&tape.value(z).data()[6..], &[0.0, 0.0]);
    assert_eq!(&tape.value(z).data()[4..6], &[0.3 * 0.3, 0.2 * 0.2]);
}

#[test]
fn max_pool_ignores_state_order() {
    let rows = vec![vec![0.1, 0.5], vec![0.7, -0.3], vec![-0.2, 0.4]];
    let mut rev = rows.clone();
    rev.reverse();
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::from_rows(&rows).unwrap());
    let b = tape.constant(Tensor::from_rows(&rev).unwrap());
    let pa = tape.max_over_time(a).unwrap();
    let pb = tape.max_over_time(b).unwrap();
    assert_eq!(tape.value(pa), tape.value(pb));
    assert_eq!(tape.value(pa).data(), &[0.7, 0.5]);
}

#[test]
fn nli_output_is_distribution() {
    let mut store = ParamStore::new();
    let fe = frontend(&mut store, CombinerKind::Att, 4);
    let model = NliModel::new(&mut store, fe, 3, 5, 0.2, &mut seeded_rng(5)).unwrap();
    let p = model.probabilities(&store, &toks("the cat sat"), &toks("on the mat")).unwrap();
    assert_eq!(p.len(), 3);
    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    model.predict(&store, &toks("the cat"), &toks("unknown words")).unwrap();
}

#[test]
fn tagger_predicts_valid_tags() {
    let mut store = ParamStore::new();
    let fe = frontend(&mut store, CombinerKind::AttFeat, 6);
    let tags = vec!["O".to_string(), "S-LOC".to_string()];
    let tagger = Tagger::new(&mut store, fe, tags, 3, 0.1, &mut seeded_rng(7)).unwrap();
    let out = tagger.predict(&store, &toks("the cat sat on Paris")).unwrap();
    assert_eq!(out.len(), 5);
    assert!(out.iter().all(|t| tagger.tag_index(t).is_some()));
    assert!(CrfLayer::new(&mut ParamStore::new(), 4, 0, &mut seeded_rng(7)).is_err());
}

#[test]
fn tagger_loss_gradients_check() {
    for kind in [CombinerKind::Concat, CombinerKind::AttFeat] {
        let mut store = ParamStore::new();
        let fe = frontend(&mut store, kind, 8);
        let tags = vec!["O".to_string(), "B-X".to_string(), "E-X".to_string()];
        let tagger = Tagger::new(&mut store, fe, tags, 2, 0.0, &mut seeded_rng(9)).unwrap();
        let tokens = toks("the Paris cat");
        let err = check_param_gradients(&store, |tape, s| tagger.eval_loss(tape, s, &tokens, &[1, 2, 0]), 1e-5).unwrap();
        assert!(err < 1e-4, "{kind}: {err}");
    }
}

#[test]
fn nli_loss_gradients_check() {
    let mut store = ParamStore::new();
    let fe = frontend(&mut store, CombinerKind::Sum, 10);
    let model = NliModel::new(&mut store, fe, 2, 4, 0.0, &mut seeded_rng(11)).unwrap();
    let (p, h) = (toks("the cat sat"), toks("Paris mat"));
    let err = check_param_gradients(
        &store,
        |tape, s| model.loss::<crate::RunRng>(tape, s, &p, &h, NliLabel::Neutral, None),
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-4, "{err}");
}
