//! Multi-label attribute prediction for cropped object regions: a frozen
//! region encoder feeds a trainable one-hidden-layer head, each attribute
//! gets an independent sigmoid, and the `k` most probable are kept.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::math;
use crate::nn::{gelu, gelu_grad, Adam, Linear, ParamStore};
use crate::rng::{stream, Stream};
use crate::tensor::Matrix;

/// Sixteen attributes spanning color, size, shape and state. Small enough
/// to train in tests; real attribute vocabularies load from file.
pub const TOY_ATTRIBUTES: [&str; 16] = [
    "black", "white", "gray", "red", "green", "blue", "yellow", "brown", "small", "large",
    "rounded", "square", "striped", "spotted", "standing", "swinging",
];

const PROB_LOGIT_LIMIT: f64 = 36.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeSpace {
    names: Vec<String>,
}

impl AttributeSpace {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        for (i, n) in names.iter().enumerate() {
            if n.trim().is_empty() {
                return Err(Error::InvalidConfig(format!("attribute {i} is empty")));
            }
            if names[..i].contains(n) {
                return Err(Error::InvalidConfig(format!("duplicate attribute `{n}`")));
            }
        }
        Ok(Self { names })
    }

    pub fn toy() -> Self {
        Self::new(TOY_ATTRIBUTES).expect("toy attributes are unique")
    }

    /// One attribute name per line; blank lines are ignored.
    pub fn from_lines(text: &str) -> Result<Self> {
        Self::new(text.lines().map(str::trim).filter(|l| !l.is_empty()))
    }

    pub fn to_lines(&self) -> String {
        let mut out = String::new();
        for n in &self.names {
            out.push_str(n);
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Frozen feature extractor for object crops.
pub trait RegionEncoder {
    fn dim(&self) -> usize;

    fn encode(&self, region: &Image) -> Vec<f64>;
}

/// Per-cell RGB mean and standard deviation over a `grid x grid` split of
/// the region, scaled to `[0, 1]`.
#[derive(Debug, Clone, Copy)]
pub struct PatchStatsEncoder {
    pub grid: usize,
}

impl Default for PatchStatsEncoder {
    fn default() -> Self {
        Self { grid: 2 }
    }
}

/// Bounds of cell `c` when `len` pixels are split into `cells` parts. Every
/// cell gets at least one pixel as long as `len >= 1`.
pub(crate) fn cell_bounds(c: usize, cells: usize, len: usize) -> (usize, usize) {
    let start = c * len / cells;
    let end = ((c + 1) * len / cells).max(start + 1).min(len.max(1));
    (start.min(len.saturating_sub(1)), end)
}

impl RegionEncoder for PatchStatsEncoder {
    fn dim(&self) -> usize {
        self.grid * self.grid * 6
    }

    fn encode(&self, region: &Image) -> Vec<f64> {
        if region.is_empty() {
            return alloc::vec![0.0; self.dim()];
        }
        let mut out = Vec::with_capacity(self.dim());
        for gy in 0..self.grid {
            let (y0, y1) = cell_bounds(gy, self.grid, region.height());
            for gx in 0..self.grid {
                let (x0, x1) = cell_bounds(gx, self.grid, region.width());
                let n = ((y1 - y0) * (x1 - x0)).max(1) as f64;
                let mut mean = [0.0f64; 3];
                for y in y0..y1 {
                    for x in x0..x1 {
                        let px = region.pixel(x, y);
                        for ch in 0..3 {
                            mean[ch] += px[ch] as f64 / 255.0;
                        }
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n);
                let mut var = [0.0f64; 3];
                for y in y0..y1 {
                    for x in x0..x1 {
                        let px = region.pixel(x, y);
                        for ch in 0..3 {
                            let d = px[ch] as f64 / 255.0 - mean[ch];
                            var[ch] += d * d;
                        }
                    }
                }
                out.extend_from_slice(&mean);
                out.extend(var.iter().map(|v| math::sqrt(v / n)));
            }
        }
        out
    }
}

/// Trainable classifier: `Linear -> GELU -> Linear`, one logit per attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeHead {
    store: ParamStore,
    hidden: Linear,
    output: Linear,
}

impl AttributeHead {
    pub fn new(input: usize, hidden: usize, attributes: usize, seed: u64) -> Self {
        let mut rng = stream(seed, Stream::AttributeInit);
        let mut store = ParamStore::new();
        let h = Linear::new(&mut store, "attr.hidden", input, hidden, &mut rng);
        let o = Linear::new(&mut store, "attr.output", hidden, attributes, &mut rng);
        Self {
            store,
            hidden: h,
            output: o,
        }
    }

    /// A head whose every parameter is zero, so all logits are zero.
    pub fn zeros(input: usize, hidden: usize, attributes: usize) -> Self {
        let mut head = Self::new(input, hidden, attributes, 0);
        head.store.values_mut().iter_mut().for_each(|v| *v = 0.0);
        head
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.input_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden.output_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.output.output_dim()
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Sets the output bias of one attribute. Handy for hand-built heads.
    pub fn set_output_bias(&mut self, attribute: usize, value: f64) {
        self.store.get_mut(self.output.bias)[attribute] = value;
    }

    pub fn logits(&self, embedding: &[f64]) -> Result<Vec<f64>> {
        if embedding.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                context: "attribute head input",
                expected: self.input_dim(),
                actual: embedding.len(),
            });
        }
        let mut h = self.hidden.forward_vec(&self.store, embedding);
        h.iter_mut().for_each(|v| *v = gelu(*v));
        Ok(self.output.forward_vec(&self.store, &h))
    }

    /// Sigmoid of each logit. Logits are clamped to +-36 first so that
    /// every probability stays strictly inside (0, 1) in `f64`.
    pub fn probs(&self, embedding: &[f64]) -> Result<Vec<f64>> {
        Ok(self
            .logits(embedding)?
            .into_iter()
            .map(|z| math::sigmoid(z.clamp(-PROB_LOGIT_LIMIT, PROB_LOGIT_LIMIT)))
            .collect())
    }

    /// Mean binary cross-entropy over every (sample, attribute) pair and
    /// its gradient with respect to all head parameters.
    pub fn loss_and_grads(&self, batch: &[AttributeExample]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n_in = self.input_dim();
        let n_out = self.output_dim();
        let mut x = Matrix::zeros(batch.len(), n_in);
        for (r, ex) in batch.iter().enumerate() {
            if ex.embedding.len() != n_in {
                return Err(Error::DimensionMismatch {
                    context: "attribute example embedding",
                    expected: n_in,
                    actual: ex.embedding.len(),
                });
            }
            if ex.targets.len() != n_out {
                return Err(Error::DimensionMismatch {
                    context: "attribute example targets",
                    expected: n_out,
                    actual: ex.targets.len(),
                });
            }
            x.row_mut(r).copy_from_slice(&ex.embedding);
        }
        let pre = self.hidden.forward(&self.store, &x);
        let mut act = pre.clone();
        act.as_mut_slice().iter_mut().for_each(|v| *v = gelu(*v));
        let logits = self.output.forward(&self.store, &act);

        let denom = (batch.len() * n_out) as f64;
        let mut loss = 0.0;
        let mut dlogits = Matrix::zeros(batch.len(), n_out);
        for (r, ex) in batch.iter().enumerate() {
            for a in 0..n_out {
                let z = logits.get(r, a);
                let y = if ex.targets[a] { 1.0 } else { 0.0 };
                loss += math::softplus(z) - y * z;
                dlogits.set(r, a, (math::sigmoid(z) - y) / denom);
            }
        }
        let mut grads = self.store.zero_grads();
        let dact = self.output.backward(&self.store, &act, &dlogits, &mut grads);
        let mut dpre = dact;
        for (d, &p) in dpre.as_mut_slice().iter_mut().zip(pre.as_slice()) {
            *d *= gelu_grad(p);
        }
        self.hidden.backward(&self.store, &x, &dpre, &mut grads);
        Ok((loss / denom, grads))
    }

    const MAGIC: [u8; 8] = *b"OPCAPATH";
    const VERSION: u32 = 1;

    /// Versioned binary checkpoint with a shape header.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new(&Self::MAGIC, Self::VERSION);
        w.u32(self.input_dim() as u32);
        w.u32(self.hidden_dim() as u32);
        w.u32(self.output_dim() as u32);
        w.f64s(self.store.values());
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (mut r, version) = Reader::open(bytes, &Self::MAGIC)?;
        if version != Self::VERSION {
            return Err(Error::Checkpoint(format!("unsupported attribute head version {version}")));
        }
        let input = r.u32()? as usize;
        let hidden = r.u32()? as usize;
        let output = r.u32()? as usize;
        let values = r.f64s()?;
        r.finish()?;
        let mut head = Self::new(input, hidden, output, 0);
        if values.len() != head.store.len() {
            return Err(Error::Checkpoint(format!(
                "shape header {input}x{hidden}x{output} implies {} parameters, file has {}",
                head.store.len(),
                values.len()
            )));
        }
        head.store.values_mut().copy_from_slice(&values);
        Ok(head)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributeExample {
    pub embedding: Vec<f64>,
    pub targets: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributePrediction {
    pub probs: Vec<f64>,
    /// At most `k` names, most probable first.
    pub selected: Vec<String>,
}

/// Indices of the `k` largest probabilities that are at least `min_prob`,
/// most probable first, ties broken by lower index.
pub fn top_k_indices(probs: &[f64], k: usize, min_prob: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..probs.len()).filter(|&i| probs[i] >= min_prob).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

pub fn select_top_k(probs: &[f64], k: usize, min_prob: f64, space: &AttributeSpace) -> Result<Vec<String>> {
    if probs.len() != space.len() {
        return Err(Error::DimensionMismatch {
            context: "attribute probabilities",
            expected: space.len(),
            actual: probs.len(),
        });
    }
    Ok(top_k_indices(probs, k, min_prob)
        .into_iter()
        .map(|i| space.names()[i].clone())
        .collect())
}

pub fn predict_attributes(
    region: &Image,
    encoder: &dyn RegionEncoder,
    head: &AttributeHead,
    space: &AttributeSpace,
    k: usize,
    min_prob: f64,
) -> Result<AttributePrediction> {
    if head.input_dim() != encoder.dim() {
        return Err(Error::InvalidConfig(format!(
            "attribute head expects {}-d embeddings but the region encoder produces {}",
            head.input_dim(),
            encoder.dim()
        )));
    }
    if head.output_dim() != space.len() {
        return Err(Error::InvalidConfig(format!(
            "attribute head has {} outputs for an attribute space of {}",
            head.output_dim(),
            space.len()
        )));
    }
    let probs = head.probs(&encoder.encode(region))?;
    let selected = select_top_k(&probs, k, min_prob, space)?;
    Ok(AttributePrediction { probs, selected })
}

#[derive(Debug, Clone, Copy)]
pub struct AttributeTrainOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for AttributeTrainOptions {
    fn default() -> Self {
        Self {
            epochs: 200,
            learning_rate: 1e-2,
            hidden: 128,
            seed: 0,
        }
    }
}

/// Full-batch Adam on the mean binary cross-entropy. Returns the trained
/// head and the loss measured at the start of every epoch.
pub fn train_attribute_head(
    dataset: &[AttributeExample],
    options: &AttributeTrainOptions,
) -> Result<(AttributeHead, Vec<f64>)> {
    let first = dataset.first().ok_or(Error::EmptyDataset)?;
    let mut head = AttributeHead::new(first.embedding.len(), options.hidden, first.targets.len(), options.seed);
    let mut opt = Adam::new(head.store.len(), options.learning_rate);
    let mut history = Vec::with_capacity(options.epochs);
    for _ in 0..options.epochs {
        let (loss, grads) = head.loss_and_grads(dataset)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: history.len() as u64,
                diagnostics: "attribute head".to_string(),
            });
        }
        history.push(loss);
        opt.step(head.store.values_mut(), &grads);
    }
    Ok((head, history))
}
