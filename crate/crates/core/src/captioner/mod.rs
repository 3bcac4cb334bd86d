//! Caption decoder: frozen image encoder adapters, the transformer decoder
//! that cross-attends over the fused context, caption-token dropout, the
//! language-model loss, training and autoregressive generation.

mod checkpoint;
mod encoder;
mod generate;
mod model;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use encoder::{encode_image, ImageEncoderAdapter, ToyPatchEncoder};
pub use generate::{beam_search, generate, greedy_search, DecodeStrategy, StepScorer};
pub use model::{lm_loss, CaptionModel, DecoderConfig};
pub use train::{batch_indices, loss_and_grads, token_dropout, train_step, TrainExample, TrainState};
