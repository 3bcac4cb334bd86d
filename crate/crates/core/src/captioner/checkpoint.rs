use alloc::format;

use rand::SeedableRng;

use super::model::{CaptionModel, DecoderConfig};
use super::train::TrainState;
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::nn::Adam;
use crate::rng::Rng;

const MAGIC: &[u8; 8] = b"OPCAPCKP";
const VERSION: u32 = 1;

/// Serializes model weights and training state, with the decoder
/// configuration as a header.
pub fn save_checkpoint(model: &CaptionModel, state: &TrainState) -> alloc::vec::Vec<u8> {
    let c = model.config();
    let mut w = Writer::new(MAGIC, VERSION);
    for v in [c.vocab_size, c.d_model, c.n_layers, c.n_heads, c.ffn_dim, c.max_len, c.feature_dim, c.image_rows] {
        w.u64(v as u64);
    }
    w.f64s(model.params());
    w.u64(state.step);
    let opt = &state.optimizer;
    for v in [opt.lr, opt.beta1, opt.beta2, opt.eps] {
        w.f64(v);
    }
    w.u64(opt.t);
    w.f64s(&opt.m);
    w.f64s(&opt.v);
    w.bytes(&state.dropout_rng.get_seed());
    w.u64(state.dropout_rng.get_stream());
    w.u128(state.dropout_rng.get_word_pos());
    w.f64(state.dropout_p);
    w.f64(state.grad_clip);
    match state.running_loss {
        Some(r) => {
            w.u32(1);
            w.f64(r);
        }
        None => w.u32(0),
    }
    w.finish()
}

/// Inverse of [`save_checkpoint`]. When `expected` is given, the stored
/// configuration must match it exactly.
pub fn load_checkpoint(bytes: &[u8], expected: Option<&DecoderConfig>) -> Result<(CaptionModel, TrainState)> {
    let (mut r, version) = Reader::open(bytes, MAGIC)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let mut dims = [0usize; 8];
    for d in dims.iter_mut() {
        *d = r.u64()? as usize;
    }
    let [vocab_size, d_model, n_layers, n_heads, ffn_dim, max_len, feature_dim, image_rows] = dims;
    let config = DecoderConfig {
        vocab_size,
        d_model,
        n_layers,
        n_heads,
        ffn_dim,
        max_len,
        feature_dim,
        image_rows,
    };
    if let Some(e) = expected {
        if *e != config {
            return Err(Error::Checkpoint(format!(
                "checkpoint was written for {config:?}, expected {e:?}"
            )));
        }
    }
    let model = CaptionModel::from_parts(config, r.f64s()?)?;
    let step = r.u64()?;
    let (lr, beta1, beta2, eps) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
    let t = r.u64()?;
    let m = r.f64s()?;
    let v = r.f64s()?;
    if m.len() != model.param_count() || v.len() != model.param_count() {
        return Err(Error::Checkpoint("optimizer moments do not match parameter count".into()));
    }
    let seed: [u8; 32] = r
        .bytes()?
        .try_into()
        .map_err(|_| Error::Checkpoint("bad rng seed length".into()))?;
    let mut rng = Rng::from_seed(seed);
    rng.set_stream(r.u64()?);
    rng.set_word_pos(r.u128()?);
    let dropout_p = r.f64()?;
    let grad_clip = r.f64()?;
    let running_loss = match r.u32()? {
        0 => None,
        1 => Some(r.f64()?),
        other => return Err(Error::Checkpoint(format!("bad running-loss tag {other}"))),
    };
    r.finish()?;
    let state = TrainState {
        step,
        optimizer: Adam {
            lr,
            beta1,
            beta2,
            eps,
            t,
            m,
            v,
        },
        dropout_rng: rng,
        dropout_p,
        grad_clip,
        running_loss,
    };
    Ok((model, state))
}
