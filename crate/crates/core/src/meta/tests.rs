use proptest::prelude::*;

use super::*;
use crate::autodiff::check_param_gradients;
use crate::seeded_rng;

fn tanh_vec(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.tanh()).collect()
}

// Plain-loop reference: W x (+ U f), tanh, dot with V, softmax over sources.
fn oracle_alpha(store: &ParamStore, att: &AttentionParams, xs: &[Vec<f64>], f: Option<&[f64]>) -> Vec<f64> {
    let w = store.value(att.w);
    let v = store.value(att.v);
    let mut scores = Vec::new();
    for x in xs {
        let mut s = 0.0;
        for h in 0..att.hidden {
            let mut pre: f64 = (0..x.len()).map(|e| w.at(h, e) * x[e]).sum();
            if let (Some(u), Some(f)) = (att.u, f) {
                let u = store.value(u);
                pre += (0..f.len()).map(|k| u.at(h, k) * f[k]).sum::<f64>();
            }
            s += v.data()[h] * pre.tanh();
        }
        scores.push(s);
    }
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
    scores.iter().map(|s| (s - m).exp() / z).collect()
}

fn setup(feat: bool, seed: u64) -> (ParamStore, AttentionParams) {
    let mut store = ParamStore::new();
    let mut rng = seeded_rng(seed);
    let att = AttentionParams::new(&mut store, 4, 3, feat, &mut rng).unwrap();
    (store, att)
}

#[test]
fn attention_matches_direct_loop() {
    let (store, att) = setup(false, 1);
    let xs = vec![vec![0.1, -0.4, 0.9, 0.2], vec![-0.7, 0.3, 0.0, 0.5], vec![0.4, 0.4, -0.2, -0.9]];
    let got = att.weights_for(&store, &xs, None).unwrap();
    let want = oracle_alpha(&store, &att, &xs, None);
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w).abs() < 1e-12);
    }
    assert!((got.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn feature_attention_matches_direct_loop() {
    let (store, att) = setup(true, 2);
    let xs = vec![vec![0.1, -0.4, 0.9, 0.2], vec![-0.7, 0.3, 0.0, 0.5]];
    let f: Vec<f64> = (0..FEATURE_DIM).map(|k| ((k * 7) % 11) as f64 / 11.0 - 0.5).collect();
    let got = att.weights_for(&store, &xs, Some(&f)).unwrap();
    let want = oracle_alpha(&store, &att, &xs, Some(&f));
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w).abs() < 1e-12);
    }
}

#[test]
fn zero_scorer_gives_uniform_weights() {
    let (mut store, att) = setup(false, 3);
    store.value_mut(att.v).data_mut().iter_mut().for_each(|x| *x = 0.0);
    let xs = vec![vec![1.0, 2.0, 3.0, 4.0], vec![-1.0, 0.0, 0.5, 0.2], vec![0.0; 4]];
    let got = att.weights_for(&store, &xs, None).unwrap();
    for a in got {
        assert!((a - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn feature_mode_without_features_is_rejected() {
    let (store, att) = setup(true, 4);
    assert!(att.weights_for(&store, &[vec![0.0; 4]], None).is_err());
    let (store, att) = setup(false, 4);
    assert!(att.weights_for(&store, &[vec![0.0; 4]], Some(&[0.0; FEATURE_DIM])).is_err());
}

#[test]
fn zero_feature_matrix_reproduces_plain_attention_bitwise() {
    let (mut store, att) = setup(true, 5);
    let u = att.u.unwrap();
    store.value_mut(u).data_mut().iter_mut().for_each(|x| *x = 0.0);
    let plain = AttentionParams { u: None, ..att.clone() };
    let xs = vec![vec![0.3, -0.1, 0.7, 0.2], vec![-0.5, 0.8, 0.1, -0.3]];
    let f: Vec<f64> = (0..FEATURE_DIM).map(|k| (k as f64).sin()).collect();
    let a = att.weights_for(&store, &xs, Some(&f)).unwrap();
    let b = plain.weights_for(&store, &xs, None).unwrap();
    assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
}

#[test]
fn combiners_on_hand_values() {
    let a = vec![3.0, 4.0];
    let b = vec![0.0, 2.0];
    assert_eq!(combine_concat(&[a.clone(), vec![9.0]]).unwrap(), vec![3.0, 4.0, 9.0]);
    assert_eq!(combine_sum(&[a.clone(), b.clone()]).unwrap(), vec![3.0, 6.0]);
    let n = combine_norm_sum(&[a.clone(), b.clone()]).unwrap();
    assert!((n[0] - 0.6).abs() < 1e-15 && (n[1] - 1.8).abs() < 1e-15);
    let z = combine_norm_sum(&[vec![0.0, 0.0], b.clone()]).unwrap();
    assert_eq!(z, vec![0.0, 1.0]);
    let w = combine_weighted(&[a, b], &[0.25, 0.75]).unwrap();
    assert_eq!(w, vec![0.75, 2.5]);
    assert!(combine_sum(&[]).is_err());
}

#[test]
fn projection_is_tanh_affine() {
    let mut store = ParamStore::new();
    let mut rng = seeded_rng(6);
    let p = ProjectionSet::new(&mut store, &[3, 2], 4, &mut rng).unwrap();
    let e = vec![0.5, -1.0, 2.0];
    let mut tape = Tape::new();
    let ev = tape.constant(Tensor::new(vec![1, 3], e.clone()).unwrap());
    let x = p.project(&mut tape, &store, ev, 0).unwrap();
    let q = store.value(p.weights[0]);
    let b = store.value(p.biases[0]);
    let want: Vec<f64> = (0..4).map(|r| (0..3).map(|c| q.at(r, c) * e[c]).sum::<f64>() + b.data()[r]).collect();
    for (g, w) in tape.value(x).data().iter().zip(tanh_vec(&want)) {
        assert!((g - w).abs() < 1e-14);
    }
    assert!(p.project(&mut tape, &store, ev, 1).is_err());
}

#[test]
fn scaled_copy_norm_sum_and_single_source() {
    let x = vec![1.0, -2.0, 2.0];
    let five: Vec<f64> = x.iter().map(|v| 5.0 * v).collect();
    let got = combine_norm_sum(&[x.clone(), five]).unwrap();
    for (g, v) in got.iter().zip(&x) {
        assert!((g - 2.0 * v / 3.0).abs() < 1e-15);
    }
    let (store, att) = setup(false, 9);
    let only = vec![vec![0.2, -0.3, 0.4, 0.1]];
    let a = att.weights_for(&store, &only, None).unwrap();
    assert_eq!(a, vec![1.0]);
    assert_eq!(combine_weighted(&only, &a).unwrap(), only[0]);
}

#[test]
fn uniform_weights_equal_scaled_sum() {
    let xs = vec![vec![0.5, 0.1], vec![-0.2, 0.9], vec![0.3, 0.3]];
    let s = combine_sum(&xs).unwrap();
    let w = combine_weighted(&xs, &[1.0 / 3.0; 3]).unwrap();
    for (a, b) in s.iter().zip(&w) {
        assert!((a / 3.0 - b).abs() < 1e-15);
    }
    let xs = vec![vec![0.5, 0.1]; 3];
    let mut store2 = ParamStore::new();
    let att2 = AttentionParams::new(&mut store2, 2, 3, false, &mut seeded_rng(1)).unwrap();
    for a in att2.weights_for(&store2, &xs, None).unwrap() {
        assert!((a - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn zero_features_reproduce_plain_attention() {
    let (store, att) = setup(true, 11);
    let plain = AttentionParams { u: None, ..att.clone() };
    let xs = vec![vec![0.3, -0.1, 0.7, 0.2], vec![-0.5, 0.8, 0.1, -0.3]];
    let a = att.weights_for(&store, &xs, Some(&[0.0; FEATURE_DIM])).unwrap();
    let b = plain.weights_for(&store, &xs, None).unwrap();
    assert_eq!(a, b);
}

fn embedder(kind: CombinerKind, seed: u64) -> (ParamStore, MetaEmbedder) {
    let mut store = ParamStore::new();
    let mut rng = seeded_rng(seed);
    let shapes = ShapeVocab::build(["Ab", "ab", "12"]);
    let m = MetaEmbedder::new(&mut store, kind, &[3, 5], Some(4), 3, shapes, &mut rng).unwrap();
    (store, m)
}

fn sentence() -> (Vec<String>, Vec<Rank>, Vec<Tensor>) {
    let tokens = vec!["The".to_string(), "cat".to_string(), "9".to_string()];
    let ranks = vec![Rank::Known(1), Rank::Known(500), Rank::Oov];
    let e0 = Tensor::new(vec![3, 3], (0..9).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
    let e1 = Tensor::new(vec![3, 5], (0..15).map(|i| (i as f64 * 0.23).cos()).collect()).unwrap();
    (tokens, ranks, vec![e0, e1])
}

#[test]
fn output_dims_per_kind() {
    for (kind, dim) in [
        (CombinerKind::Concat, 8),
        (CombinerKind::Sum, 4),
        (CombinerKind::NormSum, 4),
        (CombinerKind::Att, 4),
        (CombinerKind::AttFeat, 4),
    ] {
        let (store, m) = embedder(kind, 7);
        assert_eq!(m.output_dim(), dim);
        let (tokens, ranks, es) = sentence();
        let mut tape = Tape::new();
        let vars: Vec<Var> = es.into_iter().map(|t| tape.constant(t)).collect();
        let out = m.forward(&mut tape, &store, &vars, &tokens, &ranks).unwrap();
        assert_eq!(tape.value(out.combined).shape(), &[3, dim]);
        assert_eq!(out.alphas.is_some(), kind.uses_attention());
    }
}

#[test]
fn combiner_names_round_trip() {
    for k in [
        CombinerKind::Concat,
        CombinerKind::Sum,
        CombinerKind::NormSum,
        CombinerKind::Att,
        CombinerKind::AttFeat,
    ] {
        assert_eq!(k.as_str().parse::<CombinerKind>().unwrap(), k);
    }
    assert!("mean".parse::<CombinerKind>().is_err());
}

#[test]
fn meta_gradients_check() {
    for kind in [CombinerKind::NormSum, CombinerKind::Att, CombinerKind::AttFeat] {
        let (store, m) = embedder(kind, 8);
        let (tokens, ranks, es) = sentence();
        let err = check_param_gradients(
            &store,
            |tape, store| {
                let vars: Vec<Var> = es.iter().map(|t| tape.constant(t.clone())).collect();
                let out = m.forward(tape, store, &vars, &tokens, &ranks)?;
                let sq = tape.mul(out.combined, out.combined)?;
                Ok(tape.sum(sq))
            },
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "{kind}: {err}");
    }
}

fn vecs(n: usize, d: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-3.0f64..3.0, d), n)
}

proptest! {
    #[test]
    fn weights_lie_on_simplex(xs in vecs(4, 4), seed in 0u64..1000) {
        let (store, att) = setup(false, seed);
        let a = att.weights_for(&store, &xs, None).unwrap();
        prop_assert!(a.iter().all(|&w| w > 0.0 && w < 1.0 + 1e-15));
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn attention_is_permutation_equivariant(xs in vecs(3, 4), seed in 0u64..1000) {
        let (store, att) = setup(false, seed);
        let a = att.weights_for(&store, &xs, None).unwrap();
        let perm = [2usize, 0, 1];
        let permuted: Vec<Vec<f64>> = perm.iter().map(|&i| xs[i].clone()).collect();
        let b = att.weights_for(&store, &permuted, None).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            prop_assert!((b[j] - a[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_shift_in_scores_leaves_weights(xs in vecs(3, 4), shift in -50.0f64..50.0) {
        let scores: Vec<f64> = xs.iter().map(|x| x.iter().sum()).collect();
        let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
        let a = crate::autodiff::softmax(&scores);
        let b = crate::autodiff::softmax(&shifted);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn weighted_sum_stays_in_box(xs in vecs(3, 4), seed in 0u64..1000) {
        let (store, att) = setup(false, seed);
        let a = att.weights_for(&store, &xs, None).unwrap();
        let c = combine_weighted(&xs, &a).unwrap();
        for (k, v) in c.iter().enumerate() {
            let lo = xs.iter().map(|x| x[k]).fold(f64::INFINITY, f64::min);
            let hi = xs.iter().map(|x| x[k]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
        }
    }

    #[test]
    fn attention_output_norm_is_bounded(xs in vecs(3, 4), seed in 0u64..1000) {
        let (store, att) = setup(false, seed);
        let a = att.weights_for(&store, &xs, None).unwrap();
        let c = combine_weighted(&xs, &a).unwrap();
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let max = xs.iter().map(|x| norm(x)).fold(0.0, f64::max);
        prop_assert!(norm(&c) <= max + 1e-12);
    }

    #[test]
    fn norm_sum_norm_is_bounded(xs in vecs(3, 4)) {
        let c = combine_norm_sum(&xs).unwrap();
        let n: f64 = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(n <= 3.0 + 1e-12);
    }
}
