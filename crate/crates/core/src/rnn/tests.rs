use super::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_config(bidirectional: bool) -> ModelConfig {
    ModelConfig {
        vocab_size: 7,
        embed_dim: 3,
        hidden_dim: 4,
        num_classes: 3,
        bidirectional,
        seq_len: 5,
    }
}

fn random_tokens(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..cfg.seq_len).map(|_| rng.random_range(0..cfg.vocab_size)).collect()
}

/// Perturbs every weight a bit further from the small init so gradients are
/// not dominated by the near-linear regime.
fn spread(params: &mut ModelParams, rng: &mut ChaCha8Rng) {
    for t in params.tensors_mut() {
        for x in t.iter_mut() {
            *x += rng.random_range(-0.5..0.5);
        }
    }
    params.embedding.row_mut(0).fill(0.0);
}

fn example_loss(params: &ModelParams, cfg: &ModelConfig, tokens: &[usize], label: usize) -> f64 {
    let (probs, _) = forward(params, cfg, tokens).unwrap();
    loss(&probs, label).unwrap()
}

/// Central finite differences over every trainable entry (the frozen
/// padding row excluded). Returns the largest relative error.
fn max_fd_error(params: &ModelParams, cfg: &ModelConfig, tokens: &[usize], label: usize) -> f64 {
    let (_, cache) = forward(params, cfg, tokens).unwrap();
    let analytic = backward(params, cfg, &cache, label).unwrap();
    let step = 1e-5;
    let mut worst: f64 = 0.0;
    let n_tensors = params.tensors().len();
    for ti in 0..n_tensors {
        let len = params.tensors()[ti].len();
        for k in 0..len {
            if ti == 0 && k < cfg.embed_dim {
                assert_eq!(analytic.tensors()[0][k], 0.0);
                continue;
            }
            let mut plus = params.clone();
            plus.tensors_mut()[ti][k] += step;
            let mut minus = params.clone();
            minus.tensors_mut()[ti][k] -= step;
            let numeric = (example_loss(&plus, cfg, tokens, label) - example_loss(&minus, cfg, tokens, label))
                / (2.0 * step);
            let a = analytic.tensors()[ti][k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
    }
    worst
}

#[test]
fn gradients_match_finite_differences() {
    for bidirectional in [false, true] {
        let cfg = tiny_config(bidirectional);
        for seed in 0..3 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut params = ModelParams::init(&cfg, &mut rng);
            spread(&mut params, &mut rng);
            let mut tokens = random_tokens(&cfg, &mut rng);
            tokens[0] = 0;
            let label = rng.random_range(0..cfg.num_classes);
            let err = max_fd_error(&params, &cfg, &tokens, label);
            assert!(err < 1e-4, "bidirectional={bidirectional} seed={seed} err={err}");
        }
    }
}

// Hand-set weights shared with the numpy oracle that produced the frozen
// probabilities below.
fn handset(bidirectional: bool) -> (ModelConfig, ModelParams) {
    let cfg = ModelConfig {
        vocab_size: 3,
        embed_dim: 2,
        hidden_dim: 2,
        num_classes: 2,
        bidirectional,
        seq_len: 2,
    };
    let mut p = ModelParams::zeros(&cfg);
    for v in 1..3 {
        for e in 0..2 {
            p.embedding.row_mut(v)[e] = 0.1 * (v as f64 + 1.0) * (e as f64 + 1.0) - 0.15;
        }
    }
    let fill = |lp: &mut LstmParams, flip: bool| {
        for r in 0..8 {
            for c in 0..2 {
                let wr = if flip { 7 - r } else { r };
                lp.w.row_mut(r)[c] = (((wr * 2 + c) % 5) as f64 - 2.0) * 0.1;
                let u = (((r + 3 * c) % 7) as f64 - 3.0) * 0.05;
                lp.u.row_mut(r)[c] = if flip { -u } else { u };
            }
            lp.b[r] = 0.01 * r as f64 + if (2..4).contains(&r) { 1.0 } else { 0.0 };
        }
    };
    fill(&mut p.forward, false);
    if let Some(bw) = &mut p.backward {
        fill(bw, true);
    }
    let f = cfg.feature_dim();
    for k in 0..2 {
        for j in 0..f {
            p.dense_w.row_mut(k)[j] = (((k + j) % 3) as f64 - 1.0) * 0.5;
        }
    }
    p.dense_b = vec![0.1, -0.1];
    (cfg, p)
}

/// Scalar-loop LSTM, written gate by gate without the shared matrix helpers.
fn scalar_oracle(p: &ModelParams, cfg: &ModelConfig, tokens: &[usize]) -> Vec<f64> {
    let h_dim = cfg.hidden_dim;
    let run = |lp: &LstmParams, seq: Vec<usize>| -> Vec<f64> {
        let mut h = vec![0.0; h_dim];
        let mut c = vec![0.0; h_dim];
        for tok in seq {
            let x = p.embedding.row(tok);
            let pre = |gate: usize, k: usize, h: &[f64]| {
                let r = gate * h_dim + k;
                let mut s = lp.b[r];
                for e in 0..cfg.embed_dim {
                    s += lp.w.row(r)[e] * x[e];
                }
                for j in 0..h_dim {
                    s += lp.u.row(r)[j] * h[j];
                }
                s
            };
            let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
            let mut new_h = vec![0.0; h_dim];
            for k in 0..h_dim {
                let i = sig(pre(0, k, &h));
                let f = sig(pre(1, k, &h));
                let g = pre(2, k, &h).tanh();
                let o = sig(pre(3, k, &h));
                c[k] = f * c[k] + i * g;
                new_h[k] = o * c[k].tanh();
            }
            h = new_h;
        }
        h
    };
    let mut feat = run(&p.forward, tokens.to_vec());
    if let Some(bw) = &p.backward {
        feat.extend(run(bw, tokens.iter().rev().copied().collect()));
    }
    let logits: Vec<f64> = (0..cfg.num_classes)
        .map(|k| p.dense_b[k] + (0..feat.len()).map(|j| p.dense_w.row(k)[j] * feat[j]).sum::<f64>())
        .collect();
    let z: f64 = logits.iter().map(|l| l.exp()).sum();
    logits.iter().map(|l| l.exp() / z).collect()
}

#[test]
fn forward_matches_scalar_oracle_and_frozen_values() {
    let frozen = [
        (false, [0.5435082586155986, 0.45649174138440146]),
        (true, [0.54676893083356, 0.45323106916643996]),
    ];
    for (bi, expected) in frozen {
        let (cfg, p) = handset(bi);
        let (probs, _) = forward(&p, &cfg, &[1, 2]).unwrap();
        let oracle = scalar_oracle(&p, &cfg, &[1, 2]);
        for k in 0..2 {
            assert!((probs[k] - oracle[k]).abs() < 1e-12, "bi={bi}");
            assert!((probs[k] - expected[k]).abs() < 1e-12, "bi={bi}: {probs:?}");
        }
    }
}

#[test]
fn forward_matches_scalar_oracle_on_random_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for bi in [false, true] {
        let cfg = ModelConfig {
            vocab_size: 11,
            embed_dim: 5,
            hidden_dim: 6,
            num_classes: 4,
            bidirectional: bi,
            seq_len: 9,
        };
        let mut p = ModelParams::init(&cfg, &mut rng);
        spread(&mut p, &mut rng);
        let tokens = random_tokens(&cfg, &mut rng);
        let (probs, _) = forward(&p, &cfg, &tokens).unwrap();
        let oracle = scalar_oracle(&p, &cfg, &tokens);
        for (a, b) in probs.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_weights_give_uniform_probs() {
    let cfg = tiny_config(true);
    let p = ModelParams::zeros(&cfg);
    let (probs, _) = forward(&p, &cfg, &[1, 2, 3, 4, 5]).unwrap();
    for x in probs {
        assert!((x - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn forward_rejects_bad_inputs() {
    let cfg = tiny_config(false);
    let p = ModelParams::zeros(&cfg);
    assert!(matches!(forward(&p, &cfg, &[1, 2]), Err(RnnError::ShapeMismatch(_))));
    assert!(matches!(
        forward(&p, &cfg, &[1, 2, 3, 4, 7]),
        Err(RnnError::IndexOutOfVocab { id: 7, .. })
    ));
    let other = ModelParams::zeros(&tiny_config(true));
    assert!(matches!(forward(&other, &cfg, &[1; 5]), Err(RnnError::ShapeMismatch(_))));
}

#[test]
fn forward_is_deterministic_and_bounded() {
    let cfg = tiny_config(true);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut p = ModelParams::init(&cfg, &mut rng);
    spread(&mut p, &mut rng);
    for _ in 0..50 {
        let tokens = random_tokens(&cfg, &mut rng);
        let (a, cache) = forward(&p, &cfg, &tokens).unwrap();
        let (b, _) = forward(&p, &cfg, &tokens).unwrap();
        assert_eq!(a.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(cache.forward.hidden.iter().all(|h| h.abs() <= 1.0));
        assert!(cache.backward.unwrap().hidden.iter().all(|h| h.abs() <= 1.0));
    }
}

#[test]
fn bidirectional_with_silent_backward_equals_unidirectional() {
    let uni_cfg = tiny_config(false);
    let bi_cfg = tiny_config(true);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut uni = ModelParams::init(&uni_cfg, &mut rng);
    spread(&mut uni, &mut rng);
    let mut bi = ModelParams::zeros(&bi_cfg);
    bi.embedding = uni.embedding.clone();
    bi.forward = uni.forward.clone();
    bi.dense_b = uni.dense_b.clone();
    for k in 0..bi_cfg.num_classes {
        let h = uni_cfg.hidden_dim;
        bi.dense_w.row_mut(k)[..h].copy_from_slice(uni.dense_w.row(k));
    }
    for _ in 0..20 {
        let tokens = random_tokens(&uni_cfg, &mut rng);
        let (a, _) = forward(&uni, &uni_cfg, &tokens).unwrap();
        let (b, _) = forward(&bi, &bi_cfg, &tokens).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn loss_examples() {
    assert_eq!(loss(&[0.0, 1.0], 1).unwrap(), 0.0);
    assert!((loss(&[0.25; 4], 2).unwrap() - 4f64.ln()).abs() < 1e-12);
    assert!((loss(&[1.0, 0.0], 1).unwrap() - 27.631021115928547).abs() < 1e-9);
    assert!(matches!(loss(&[0.5, 0.5], 2), Err(RnnError::LabelOutOfRange { .. })));
}

#[test]
fn one_hot_probs_give_zero_dense_gradient() {
    let cfg = tiny_config(false);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let p = ModelParams::init(&cfg, &mut rng);
    let (_, mut cache) = forward(&p, &cfg, &[1, 2, 3, 4, 5]).unwrap();
    cache.probs = vec![0.0, 1.0, 0.0];
    let g = backward(&p, &cfg, &cache, 1).unwrap();
    assert!(g.dense_w.as_slice().iter().all(|x| *x == 0.0));
    assert!(g.dense_b.iter().all(|x| *x == 0.0));
}

#[test]
fn unused_vocabulary_rows_have_zero_gradient() {
    let cfg = tiny_config(true);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let p = ModelParams::init(&cfg, &mut rng);
    let tokens = [0, 2, 2, 4, 0];
    let (_, cache) = forward(&p, &cfg, &tokens).unwrap();
    let g = backward(&p, &cfg, &cache, 0).unwrap();
    for row in [0, 1, 3, 5, 6] {
        assert!(g.embedding.row(row).iter().all(|x| *x == 0.0), "row {row}");
    }
    assert!(g.embedding.row(2).iter().any(|x| *x != 0.0));
}

#[test]
fn backward_rejects_foreign_cache() {
    let cfg = tiny_config(false);
    let p = ModelParams::zeros(&cfg);
    let (_, cache) = forward(&p, &cfg, &[1; 5]).unwrap();
    let bi = tiny_config(true);
    assert!(matches!(
        backward(&ModelParams::zeros(&bi), &bi, &cache, 0),
        Err(RnnError::CacheMismatch)
    ));
    assert!(matches!(backward(&p, &cfg, &cache, 3), Err(RnnError::LabelOutOfRange { .. })));
}

#[test]
fn clipping_examples() {
    let cfg = tiny_config(false);
    let mut g = ModelParams::zeros(&cfg);
    g.dense_b = vec![2.0, 0.0, 0.0];
    let norm = clip_gradients(&mut g, 1.0);
    assert_eq!(norm, 2.0);
    assert_eq!(g.dense_b, vec![1.0, 0.0, 0.0]);

    let mut g = ModelParams::zeros(&cfg);
    g.dense_b = vec![0.3, 0.4, 0.0];
    let before = g.clone();
    clip_gradients(&mut g, 1.0);
    assert_eq!(g, before);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let mut g = ModelParams::init(&cfg, &mut rng);
        let scale: f64 = rng.random_range(0.01..10.0);
        g.scale(scale);
        let norm = global_norm(&g);
        clip_gradients(&mut g, 1.0);
        assert!((global_norm(&g) - norm.min(1.0)).abs() < 1e-9);
    }
}

#[test]
fn adam_single_scalar_step() {
    let cfg = tiny_config(false);
    let mut params = ModelParams::zeros(&cfg);
    let mut grads = ModelParams::zeros(&cfg);
    grads.dense_b[0] = 1.0;
    let mut state = AdamState::new(&params);
    adam_step(&mut params, &grads, &mut state, 0.01).unwrap();
    // m̂ = 1, v̂ = 1 after bias correction.
    let expected = -0.01 / (1.0 + 1e-8);
    assert!((params.dense_b[0] - expected).abs() < 1e-15);
    assert_eq!(state.t, 1);
    assert!(params.dense_b[1..].iter().all(|x| *x == 0.0));
}

#[test]
fn adam_zero_gradient_and_purity() {
    let cfg = tiny_config(true);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let params = ModelParams::init(&cfg, &mut rng);
    let zero = ModelParams::zeros(&cfg);
    let mut p = params.clone();
    let mut state = AdamState::new(&p);
    adam_step(&mut p, &zero, &mut state, 0.01).unwrap();
    assert_eq!(p, params);
    assert_eq!(state.t, 1);

    let grads = ModelParams::init(&cfg, &mut rng);
    let (mut p1, mut s1) = (params.clone(), AdamState::new(&params));
    let (mut p2, mut s2) = (params.clone(), AdamState::new(&params));
    adam_step(&mut p1, &grads, &mut s1, 0.01).unwrap();
    adam_step(&mut p2, &grads, &mut s2, 0.01).unwrap();
    assert_eq!(p1, p2);
    assert_eq!(s1, s2);
}

#[test]
fn adam_rejects_non_finite() {
    let cfg = tiny_config(false);
    let mut params = ModelParams::zeros(&cfg);
    let mut grads = ModelParams::zeros(&cfg);
    grads.forward.b[0] = f64::NAN;
    let mut state = AdamState::new(&params);
    assert_eq!(
        adam_step(&mut params, &grads, &mut state, 0.01),
        Err(RnnError::NonFiniteGradient)
    );
    assert_eq!(state.t, 0);
}

#[test]
fn adam_step_decreases_batch_loss() {
    for bi in [false, true] {
        let cfg = tiny_config(bi);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut params = ModelParams::init(&cfg, &mut rng);
        let batch: Vec<(Vec<usize>, usize)> = (0..6)
            .map(|_| (random_tokens(&cfg, &mut rng), rng.random_range(0..cfg.num_classes)))
            .collect();
        let batch_loss = |p: &ModelParams| -> f64 {
            batch.iter().map(|(t, y)| example_loss(p, &cfg, t, *y)).sum::<f64>() / batch.len() as f64
        };
        let mut grads = ModelParams::zeros(&cfg);
        for (t, y) in &batch {
            let (_, cache) = forward(&params, &cfg, t).unwrap();
            backward_into(&params, &cfg, &cache, *y, &mut grads).unwrap();
        }
        grads.scale(1.0 / batch.len() as f64);
        let before = batch_loss(&params);
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, 1e-3).unwrap();
        assert!(batch_loss(&params) < before);
    }
}

#[test]
fn init_follows_recorded_scheme() {
    let cfg = ModelConfig::new(20, 4, true);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let p = ModelParams::init(&cfg, &mut rng);
    assert!(p.embedding.row(0).iter().all(|x| *x == 0.0));
    assert!(p.embedding.as_slice().iter().all(|x| x.abs() <= 0.05));
    for lp in [&p.forward, p.backward.as_ref().unwrap()] {
        let h = cfg.hidden_dim;
        assert!(lp.b[h..2 * h].iter().all(|x| *x == 1.0));
        assert!(lp.b[..h].iter().chain(&lp.b[2 * h..]).all(|x| *x == 0.0));
        assert!(lp.w.as_slice().iter().chain(lp.u.as_slice()).all(|x| x.abs() <= 0.08));
    }
    assert_eq!(p.dense_w.shape(), (4, 600));
    p.check_shapes(&cfg).unwrap();
}
