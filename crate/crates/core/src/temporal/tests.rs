use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::sequence::{SequenceLabels, SequenceTensor};

fn small(_kind: ModelKind) -> TemporalConfig {
    TemporalConfig {
        hidden_size: 4,
        d_model: 8,
        n_heads: 2,
        n_layers: 2,
        ff_width: 6,
        epochs: 0,
        batch_size: 4,
        learning_rate: 1e-2,
        seed: 7,
        ..TemporalConfig::default()
    }
}

/// Random tensor with lengths in `1..=t`, positive deltas and labels.
fn random_tensor(rng: &mut ChaCha8Rng, n: usize, t: usize, f: usize, temporal: bool) -> SequenceTensor {
    let lengths: Vec<usize> = (0..n).map(|_| rng.gen_range(1..=t)).collect();
    build_tensor(rng, lengths, t, f, temporal)
}

fn build_tensor(rng: &mut ChaCha8Rng, lengths: Vec<usize>, t: usize, f: usize, temporal: bool) -> SequenceTensor {
    let n = lengths.len();
    let mut values = vec![0.0; n * t * f];
    let mut mask = vec![false; n * t];
    let mut deltas = vec![0.0; n * t];
    let mut labels = vec![0; n * t];
    for s in 0..n {
        for step in 0..lengths[s] {
            mask[s * t + step] = true;
            if step > 0 {
                deltas[s * t + step] = rng.gen_range(0.1..3.0);
            }
            labels[s * t + step] = rng.gen_range(0..2);
            for k in 0..f {
                values[(s * t + step) * f + k] = rng.gen_range(-1.5..1.5);
            }
        }
    }
    SequenceTensor {
        max_len: t,
        values,
        mask,
        lengths,
        deltas,
        entities: (0..n).map(|i| format!("e{i}")).collect(),
        feature_names: (0..f).map(|i| format!("f{i}")).collect(),
        labels: if temporal {
            SequenceLabels::Temporal(labels)
        } else {
            SequenceLabels::Static((0..n).map(|i| i % 2).collect())
        },
        class_names: vec!["0".into(), "1".into()],
    }
}

fn model(kind: ModelKind, f: usize, head: Head) -> TemporalModel {
    TemporalModel::new(kind, small(kind), f, 2, head).unwrap()
}

#[test]
fn zero_network_is_uniform() {
    let mut m = model(ModelKind::Lstm, 2, Head::Static);
    m.params.fill(0.0);
    let logits = m.forward_logits(&[1.0, 2.0, 3.0, 4.0], &[0.0, 1.0], &[true, true]);
    assert_eq!(logits, vec![vec![0.0, 0.0]]);
}

#[test]
fn padding_is_skipped() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for kind in [ModelKind::Lstm, ModelKind::Tlstm, ModelKind::Transformer] {
        let m = model(kind, 2, Head::Static);
        let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let d = [0.0, 1.0, 2.5];
        let short = m.forward_logits(&x, &d, &[true; 3]);
        let mut padded_x = x.clone();
        padded_x.extend([9.0, -9.0, 4.0, 4.0]);
        let long = m.forward_logits(&padded_x, &[0.0, 1.0, 2.5, 7.0, 7.0], &[true, true, true, false, false]);
        assert_eq!(short, long, "{kind:?}");
    }
}

/// Step-by-step recurrence written against the documented layout: weight
/// grid rows are `[x; h]`, columns are the gates `i, f, g, o`.
fn lstm_oracle(p: &[f64], x: &[Vec<f64>], f: usize, h: usize, c: usize) -> Vec<f64> {
    let cols = 4 * h;
    let w = |row: usize, col: usize| p[row * cols + col];
    let b = &p[(f + h) * cols..(f + h) * cols + cols];
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let (mut hs, mut cs) = (vec![0.0; h], vec![0.0; h]);
    for xt in x {
        let mut pre = b.to_vec();
        for (col, v) in pre.iter_mut().enumerate() {
            for (j, xv) in xt.iter().enumerate() {
                *v += xv * w(j, col);
            }
            for (j, hv) in hs.iter().enumerate() {
                *v += hv * w(f + j, col);
            }
        }
        let mut next = vec![0.0; h];
        for k in 0..h {
            let (i, fg, g, o) = (sig(pre[k]), sig(pre[h + k]), pre[2 * h + k].tanh(), sig(pre[3 * h + k]));
            cs[k] = fg * cs[k] + i * g;
            next[k] = o * cs[k].tanh();
        }
        hs = next;
    }
    let ro = (f + h) * cols + cols;
    (0..c)
        .map(|k| p[ro + h * c + k] + (0..h).map(|j| hs[j] * p[ro + j * c + k]).sum::<f64>())
        .collect()
}

#[test]
fn lstm_matches_recurrence_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut m = model(ModelKind::Lstm, 2, Head::Static);
    m.params.iter_mut().for_each(|p| *p = rng.gen_range(-1.0..1.0));
    let x: Vec<Vec<f64>> = (0..3).map(|_| vec![rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]).collect();
    let flat: Vec<f64> = x.iter().flatten().copied().collect();
    let got = m.forward_logits(&flat, &[0.0; 3], &[true; 3]);
    let want = lstm_oracle(&m.params, &x, 2, 4, 2);
    for (a, b) in got[0].iter().zip(&want) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn tlstm_reductions() {
    assert_eq!(Decay::InverseLog.apply(0.0), 1.0);
    let e = std::f64::consts::E;
    assert!((Decay::InverseLog.apply(e * e - e) - 0.5).abs() < 1e-15);

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut t = model(ModelKind::Tlstm, 3, Head::Static);
    t.params.iter_mut().for_each(|p| *p = rng.gen_range(-1.0..1.0));
    let mut l = model(ModelKind::Lstm, 3, Head::Static);
    let decay = t.decay_parameters().unwrap();
    l.params = t.params[..decay.start].iter().chain(&t.params[decay.end..]).copied().collect();
    let x: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mask = [true; 4];
    // zero elapsed time: g = 1
    assert_eq!(t.forward_logits(&x, &[0.0; 4], &mask), l.forward_logits(&x, &[0.0; 4], &mask));
    let deltas = [0.0, 2.0, 0.5, 4.0];
    assert_ne!(t.forward_logits(&x, &deltas, &mask), l.forward_logits(&x, &deltas, &mask));
    t.params[decay].fill(0.0);
    assert_eq!(t.forward_logits(&x, &deltas, &mask), l.forward_logits(&x, &deltas, &mask));
}

#[test]
fn transformer_causality() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let m = model(ModelKind::Transformer, 2, Head::Temporal);
    let x: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mask = [true; 8];
    let base = m.forward_logits(&x, &[0.0; 8], &mask);
    let mut poked = x.clone();
    poked[10] += 0.5;
    let after = m.forward_logits(&poked, &[0.0; 8], &mask);
    assert_eq!(base[..5], after[..5]);
    assert_ne!(base[5], after[5]);

    let mut bidir = m.clone();
    bidir.config.causal = false;
    let b0 = bidir.forward_logits(&x, &[0.0; 8], &mask);
    let b1 = bidir.forward_logits(&poked, &[0.0; 8], &mask);
    assert_ne!(b0[0], b1[0]);
}

#[test]
fn transformer_padded_steps_inert() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let m = model(ModelKind::Transformer, 2, Head::Temporal);
    let mut x: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mask = [true, true, true, false, false];
    let before = m.forward_logits(&x, &[0.0; 5], &mask);
    x[7] = 100.0;
    let after = m.forward_logits(&x, &[0.0; 5], &mask);
    assert_eq!(before, after);
    assert_eq!(after[4], vec![0.0, 0.0]);
}

#[test]
fn gradients_match_finite_differences() {
    for (kind, temporal) in [
        (ModelKind::Lstm, false),
        (ModelKind::Tlstm, false),
        (ModelKind::Transformer, true),
        (ModelKind::Lstm, true),
        (ModelKind::Transformer, false),
    ] {
        // full-length sequences keep every gradient well above the
        // finite-difference noise floor
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let t = build_tensor(&mut rng, vec![4; 3], 4, 3, temporal);
        let head = if temporal { Head::Temporal } else { Head::Static };
        let mut m = model(kind, 3, head);
        m.params.iter_mut().for_each(|p| *p += rng.gen_range(-0.3..0.3));
        let err = gradient_check(&m, &t, &[0, 1, 2], 200, 1e-5, 1).unwrap();
        assert!(err < 1e-4, "{kind:?} temporal={temporal}: {err}");
    }
}

#[test]
fn mean_pooling_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let t = build_tensor(&mut rng, vec![4, 3, 4], 4, 2, false);
    let mut m = model(ModelKind::Lstm, 2, Head::Static);
    m.config.pooling = Pooling::Mean;
    assert!(gradient_check(&m, &t, &[0, 1, 2], 500, 1e-5, 2).unwrap() < 1e-4);
}

#[test]
fn zero_model_bias_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let t = random_tensor(&mut rng, 4, 3, 2, false);
    let mut m = model(ModelKind::Lstm, 2, Head::Static);
    m.params.fill(0.0);
    let (_, grad, _) = m.objective(&t, &[0, 1, 2, 3], Reduction::Mean).unwrap();
    let n = grad.len();
    // labels alternate 0/1: mean one-hot is (0.5, 0.5), prediction uniform
    assert_eq!(&grad[n - 2..], &[0.0, 0.0]);
    let (_, grad, _) = m.objective(&t, &[1, 3], Reduction::Mean).unwrap();
    assert_eq!(&grad[n - 2..], &[0.5, -0.5]);
}

#[test]
fn zero_epochs_keep_initialization() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let t = random_tensor(&mut rng, 4, 3, 2, false);
    let mut m = model(ModelKind::Lstm, 2, Head::Static);
    let init = m.params.clone();
    let log = m.fit(&t).unwrap();
    assert!(log.epoch_loss.is_empty());
    assert_eq!(m.params, init);
}

fn separable(n: usize) -> SequenceTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut t = random_tensor(&mut rng, n, 4, 2, false);
    let labels: Vec<usize> = (0..n).map(|i| i % 2).collect();
    for (s, &y) in labels.iter().enumerate() {
        t.values[s * 4 * 2] = if y == 1 { 2.0 } else { -2.0 };
    }
    t.labels = SequenceLabels::Static(labels);
    t
}

#[test]
fn learns_separable_toy_set() {
    let t = separable(16);
    for kind in [ModelKind::Lstm, ModelKind::Tlstm, ModelKind::Transformer] {
        let mut config = small(kind);
        config.epochs = 200;
        config.learning_rate = 0.02;
        let mut m = TemporalModel::new(kind, config, 2, 2, Head::Static).unwrap();
        let log = m.fit(&t).unwrap();
        assert_eq!(log.epoch_loss.len(), 200);
        assert!(log.epoch_loss[199] < log.epoch_loss[0]);
        let proba = m.predict_proba(&t).unwrap();
        let correct = proba
            .iter()
            .enumerate()
            .filter(|(i, p)| usize::from(p[0][1] >= 0.5) == t.static_label(*i).unwrap())
            .count();
        assert_eq!(correct, 16, "{kind:?}");
    }
}

#[test]
fn training_is_deterministic() {
    let t = separable(10);
    let mut config = small(ModelKind::Transformer);
    config.epochs = 5;
    let run = || {
        let mut m = TemporalModel::new(ModelKind::Transformer, config.clone(), 2, 2, Head::Static).unwrap();
        let log = m.fit(&t).unwrap();
        (m.params, log)
    };
    assert_eq!(run(), run());
}

#[test]
fn rejects_bad_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut t = random_tensor(&mut rng, 2, 3, 2, false);
    let m = model(ModelKind::Tlstm, 2, Head::Static);
    t.deltas[1] = -1.0;
    assert!(matches!(m.predict_proba(&t), Err(TemporalError::NegativeDelta { step: 1, .. })));
    t.deltas[1] = 1.0;
    t.values[0] = f64::NAN;
    assert!(matches!(m.predict_proba(&t), Err(TemporalError::UncleanInput(_))));
    assert!(matches!(
        TemporalModel::new(ModelKind::Transformer, TemporalConfig { d_model: 6, n_heads: 4, ..Default::default() }, 2, 2, Head::Static),
        Err(TemporalError::InvalidConfig { .. })
    ));
}

#[test]
fn persistence_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let t = random_tensor(&mut rng, 3, 4, 2, true);
    let m = model(ModelKind::Transformer, 2, Head::Temporal);
    let text = serde_json::to_string(&m.to_json()).unwrap();
    let back = TemporalModel::from_json(&serde_json::from_str(&text).unwrap()).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.predict_proba(&t).unwrap(), m.predict_proba(&t).unwrap());
}

#[test]
fn train_log_csv() {
    let log = TrainLog {
        epoch_loss: vec![0.5, 0.25],
        epochs: 2,
        seed: 1,
    };
    let mut buf = Vec::new();
    log.write_csv(&mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap(), "epoch,loss\n1,0.5\n2,0.25\n");
}
