use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::model::{nll_terms, CaptionModel};
use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, Adam};
use crate::prompting::PromptSequence;
use crate::rng::{stream, Rng, Stream};
use crate::tensor::Matrix;
use crate::vocab::{is_special, TokenId, UNK_ID};

/// Replaces each non-special token with UNK with probability `p`.
/// Special tokens are never touched, and `p == 0` draws nothing from `rng`.
pub fn token_dropout(tokens: &[TokenId], p: f64, rng: &mut Rng) -> Vec<TokenId> {
    if p <= 0.0 {
        return tokens.to_vec();
    }
    tokens
        .iter()
        .map(|&t| {
            if is_special(t) {
                t
            } else if rng.random::<f64>() < p {
                UNK_ID
            } else {
                t
            }
        })
        .collect()
}

/// One supervised pair. `caption` is framed as `[BOS, w.., EOS]`; the
/// decoder reads `caption[..n-1]` and predicts `caption[1..]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub features: Matrix,
    pub prompt: PromptSequence,
    pub caption: Vec<TokenId>,
}

/// Mean batch loss over all non-PAD target positions, and its gradient.
///
/// When `dropout` is given, token dropout is applied to each decoder input
/// (never to the prompt or the targets). Examples are processed one at a
/// time, which is equivalent to padding the batch to a common length since
/// PAD targets carry no loss and attention is causal.
pub fn loss_and_grads(
    model: &CaptionModel,
    batch: &[TrainExample],
    mut dropout: Option<(f64, &mut Rng)>,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut grads = alloc::vec![0.0; model.param_count()];
    let mut total = 0.0;
    let mut count = 0usize;
    for ex in batch {
        if ex.caption.len() < 2 {
            return Err(Error::NoSupervisedPositions);
        }
        let n = ex.caption.len();
        let input = match dropout.as_mut() {
            Some((p, rng)) => token_dropout(&ex.caption[..n - 1], *p, rng),
            None => ex.caption[..n - 1].to_vec(),
        };
        let (logits, cache) = model.forward_cached(&input, &ex.features, ex.prompt.tokens())?;
        let (sum, c, dlogits) = nll_terms(&logits, &ex.caption[1..])?;
        total += sum;
        count += c;
        model.backward(&cache, &dlogits, &mut grads);
    }
    if count == 0 {
        return Err(Error::NoSupervisedPositions);
    }
    let scale = 1.0 / count as f64;
    for g in grads.iter_mut() {
        *g *= scale;
    }
    Ok((total * scale, grads))
}

/// Everything besides model weights that a resumed run needs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub step: u64,
    pub optimizer: Adam,
    pub dropout_rng: Rng,
    pub dropout_p: f64,
    pub grad_clip: f64,
    /// Exponential moving average of the batch loss.
    pub running_loss: Option<f64>,
}

impl TrainState {
    pub fn new(model: &CaptionModel, learning_rate: f64, dropout_p: f64, grad_clip: f64, seed: u64) -> Self {
        Self {
            step: 0,
            optimizer: Adam::new(model.param_count(), learning_rate),
            dropout_rng: stream(seed, Stream::TokenDropout),
            dropout_p,
            grad_clip,
            running_loss: None,
        }
    }
}

/// One Adam update on `batch`. Returns the pre-update batch loss.
pub fn train_step(model: &mut CaptionModel, state: &mut TrainState, batch: &[TrainExample]) -> Result<f64> {
    let (loss, mut grads) = loss_and_grads(model, batch, Some((state.dropout_p, &mut state.dropout_rng)))?;
    let norm = clip_grad_norm(&mut grads, state.grad_clip);
    if !loss.is_finite() || !norm.is_finite() {
        let bad = grads.iter().filter(|g| !g.is_finite()).count();
        return Err(Error::NonFiniteLoss {
            step: state.step,
            diagnostics: format!("loss={loss} grad_norm={norm} non_finite_grads={bad}"),
        });
    }
    state.optimizer.step(model.params_mut(), &grads);
    state.step += 1;
    state.running_loss = Some(match state.running_loss {
        Some(r) => 0.98 * r + 0.02 * loss,
        None => loss,
    });
    log::debug!("step {} loss {loss:.5} grad_norm {norm:.4}", state.step);
    Ok(loss)
}

/// Dataset indices for training step `step`. Examples are visited in a
/// fresh seeded permutation each epoch, so the batch depends only on
/// `(n, batch_size, step, seed)` and a resumed run sees the same order.
/// The batch holds `min(batch_size, n)` indices.
pub fn batch_indices(n: usize, batch_size: usize, step: u64, seed: u64) -> Vec<usize> {
    if n == 0 || batch_size == 0 {
        return Vec::new();
    }
    let bs = batch_size.min(n) as u64;
    let start = step * bs;
    let mut out = Vec::with_capacity(bs as usize);
    let mut epoch = u64::MAX;
    let mut perm: Vec<usize> = Vec::new();
    for pos in start..start + bs {
        let e = pos / n as u64;
        if e != epoch {
            epoch = e;
            perm = (0..n).collect();
            let mut rng = stream(seed.wrapping_add(e.wrapping_mul(0x9E37_79B9_7F4A_7C15)), Stream::DataOrder);
            perm.shuffle(&mut rng);
        }
        out.push(perm[(pos % n as u64) as usize]);
    }
    out
}
