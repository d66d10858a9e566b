use super::lstm::{run_backward, run_forward, DirectionCache};
use super::{Gradients, ModelConfig, ModelParams, Result, RnnError};
use crate::vocab::PAD_INDEX;

/// Lower bound applied to the target probability inside the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// Everything `backward` needs from a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    pub token_ids: Vec<usize>,
    pub forward: DirectionCache,
    /// Backward direction, fed the reversed sequence.
    pub backward: Option<DirectionCache>,
    /// `[h_fwd_last ‖ h_bwd_last]`, or `h_last` for one direction.
    pub features: Vec<f64>,
    pub probs: Vec<f64>,
}

fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in logits.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in logits.iter_mut() {
        *x /= sum;
    }
}

pub fn forward(params: &ModelParams, cfg: &ModelConfig, token_ids: &[usize]) -> Result<(Vec<f64>, ForwardCache)> {
    if token_ids.len() != cfg.seq_len {
        return Err(RnnError::ShapeMismatch(format!(
            "sequence of {} tokens, model expects {}",
            token_ids.len(),
            cfg.seq_len
        )));
    }
    if let Some(&id) = token_ids.iter().find(|&&id| id >= cfg.vocab_size) {
        return Err(RnnError::IndexOutOfVocab {
            id,
            vocab_size: cfg.vocab_size,
        });
    }
    params.check_shapes(cfg)?;

    let hd = cfg.hidden_dim;
    let fwd = run_forward(&params.forward, &params.embedding, token_ids.iter().copied());
    let bwd = params
        .backward
        .as_ref()
        .map(|p| run_forward(p, &params.embedding, token_ids.iter().rev().copied()));

    let mut features = fwd.last_hidden(hd).to_vec();
    if let Some(b) = &bwd {
        features.extend_from_slice(b.last_hidden(hd));
    }
    let mut probs = params.dense_b.clone();
    params.dense_w.matvec_acc(&features, &mut probs);
    softmax_in_place(&mut probs);

    let cache = ForwardCache {
        token_ids: token_ids.to_vec(),
        forward: fwd,
        backward: bwd,
        features,
        probs: probs.clone(),
    };
    Ok((probs, cache))
}

/// Cross-entropy `-ln(max(probs[label], 1e-12))`.
pub fn loss(probs: &[f64], label_id: usize) -> Result<f64> {
    let p = probs.get(label_id).ok_or(RnnError::LabelOutOfRange {
        label: label_id,
        num_classes: probs.len(),
    })?;
    Ok(-p.max(PROB_FLOOR).ln())
}

/// Gradients of the cross-entropy loss for one example.
pub fn backward(params: &ModelParams, cfg: &ModelConfig, cache: &ForwardCache, label_id: usize) -> Result<Gradients> {
    let mut grads = ModelParams::zeros(cfg);
    backward_into(params, cfg, cache, label_id, &mut grads)?;
    Ok(grads)
}

/// Same as [`backward`] but adds into an existing gradient buffer.
pub fn backward_into(
    params: &ModelParams,
    cfg: &ModelConfig,
    cache: &ForwardCache,
    label_id: usize,
    grads: &mut Gradients,
) -> Result<()> {
    if label_id >= cfg.num_classes {
        return Err(RnnError::LabelOutOfRange {
            label: label_id,
            num_classes: cfg.num_classes,
        });
    }
    let hd = cfg.hidden_dim;
    if cache.token_ids.len() != cfg.seq_len
        || cache.features.len() != cfg.feature_dim()
        || cache.probs.len() != cfg.num_classes
        || cache.backward.is_some() != cfg.bidirectional
        || cache.forward.hidden.len() != (cfg.seq_len + 1) * hd
    {
        return Err(RnnError::CacheMismatch);
    }
    grads.check_shapes(cfg).map_err(|_| RnnError::CacheMismatch)?;

    // d loss / d logits = softmax - onehot
    let mut d_logits = cache.probs.clone();
    d_logits[label_id] -= 1.0;
    for (gb, d) in grads.dense_b.iter_mut().zip(&d_logits) {
        *gb += d;
    }
    grads.dense_w.outer_acc(&d_logits, &cache.features);
    let mut d_features = vec![0.0; cfg.feature_dim()];
    params.dense_w.matvec_t_acc(&d_logits, &mut d_features);

    run_backward(
        &params.forward,
        &params.embedding,
        &cache.forward,
        &d_features[..hd],
        &mut grads.forward,
        &mut grads.embedding,
    );
    if let (Some(p), Some(c), Some(g)) = (&params.backward, &cache.backward, &mut grads.backward) {
        run_backward(p, &params.embedding, c, &d_features[hd..], g, &mut grads.embedding);
    }
    // The padding row is frozen at zero.
    grads.embedding.row_mut(PAD_INDEX).fill(0.0);
    Ok(())
}
