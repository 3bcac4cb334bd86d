use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use super::model::CaptionModel;
use crate::error::Result;
use crate::math;
use crate::prompting::FusedContext;
use crate::vocab::{TokenId, ATTR_ID, BOS_ID, EOS_ID, OBJ_ID, PAD_ID};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecodeStrategy {
    Greedy,
    /// Beam search with the given width; `Beam(1)` behaves like greedy.
    Beam(usize),
}

/// Next-token log-probabilities given the tokens emitted so far.
pub trait StepScorer {
    fn eos(&self) -> TokenId;

    /// `prefix` holds emitted tokens only, without BOS.
    fn log_probs(&self, prefix: &[TokenId]) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone)]
struct Hyp {
    tokens: Vec<TokenId>,
    score: f64,
    finished: bool,
}

impl Hyp {
    fn eos_position(&self) -> usize {
        if self.finished {
            self.tokens.len()
        } else {
            usize::MAX
        }
    }
}

/// Best first: higher score, then earlier EOS, then smaller token ids.
fn rank(a: &Hyp, b: &Hyp) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then(a.eos_position().cmp(&b.eos_position()))
        .then_with(|| a.tokens.cmp(&b.tokens))
}

/// Picks the highest-probability token each step, preferring EOS and then
/// the lowest id on ties. At most `max_len` steps are taken.
pub fn greedy_search<S: StepScorer + ?Sized>(scorer: &S, max_len: usize) -> Result<Vec<TokenId>> {
    let eos = scorer.eos();
    let mut out = Vec::new();
    for _ in 0..max_len {
        let lp = scorer.log_probs(&out)?;
        let mut best = eos as usize;
        for (i, &v) in lp.iter().enumerate() {
            let b = lp[best];
            if v > b || (v == b && best != eos as usize && i < best) {
                best = i;
            }
        }
        if best == eos as usize {
            break;
        }
        out.push(best as TokenId);
    }
    Ok(out)
}

/// Beam search over summed log-probabilities, no length normalization.
///
/// Each round the pool is the finished hypotheses plus every one-token
/// extension of the unfinished ones; the best `width` survive. Search ends
/// once every survivor has emitted EOS or after `max_len` rounds.
pub fn beam_search<S: StepScorer + ?Sized>(scorer: &S, width: usize, max_len: usize) -> Result<Vec<TokenId>> {
    let width = width.max(1);
    let eos = scorer.eos();
    let mut beams = vec![Hyp {
        tokens: Vec::new(),
        score: 0.0,
        finished: false,
    }];
    for _ in 0..max_len {
        if beams.iter().all(|h| h.finished) {
            break;
        }
        let mut pool = Vec::new();
        for h in beams {
            if h.finished {
                pool.push(h);
                continue;
            }
            let lp = scorer.log_probs(&h.tokens)?;
            for (tok, &l) in lp.iter().enumerate() {
                if l == f64::NEG_INFINITY {
                    continue;
                }
                let mut tokens = h.tokens.clone();
                let finished = tok as TokenId == eos;
                if !finished {
                    tokens.push(tok as TokenId);
                }
                pool.push(Hyp {
                    tokens,
                    score: h.score + l,
                    finished,
                });
            }
        }
        pool.sort_by(rank);
        pool.truncate(width);
        beams = pool;
    }
    beams.sort_by(rank);
    Ok(beams.into_iter().next().map(|h| h.tokens).unwrap_or_default())
}

struct ModelScorer<'a> {
    model: &'a CaptionModel,
    ctx: &'a FusedContext,
}

impl StepScorer for ModelScorer<'_> {
    fn eos(&self) -> TokenId {
        EOS_ID
    }

    fn log_probs(&self, prefix: &[TokenId]) -> Result<Vec<f64>> {
        let mut input = Vec::with_capacity(prefix.len() + 1);
        input.push(BOS_ID);
        input.extend_from_slice(prefix);
        let logits = self.model.forward(&input, self.ctx)?;
        let mut lp = vec![0.0; logits.cols()];
        math::log_softmax(logits.row(input.len() - 1), &mut lp);
        for id in [PAD_ID, BOS_ID, OBJ_ID, ATTR_ID] {
            lp[id as usize] = f64::NEG_INFINITY;
        }
        Ok(lp)
    }
}

/// Decodes a caption (without BOS/EOS) conditioned on `ctx`. Structural
/// tokens (PAD, BOS, OBJ, ATTR) are never emitted. The caption holds at
/// most `min(max_len, model max_len)` tokens.
pub fn generate(model: &CaptionModel, ctx: &FusedContext, strategy: DecodeStrategy, max_len: usize) -> Result<Vec<TokenId>> {
    let scorer = ModelScorer { model, ctx };
    let max_len = max_len.min(model.config().max_len);
    match strategy {
        DecodeStrategy::Greedy => greedy_search(&scorer, max_len),
        DecodeStrategy::Beam(w) => beam_search(&scorer, w, max_len),
    }
}
