use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::math;
use crate::nn::{gelu_backward, gelu_matrix, Attention, AttentionCache, Init, LayerNorm, LayerNormCache, Linear, Param, ParamStore};
use crate::prompting::{fuse, FusedContext, PromptSequence};
use crate::rng::{stream, Stream};
use crate::tensor::Matrix;
use crate::vocab::{TokenId, PAD_ID};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DecoderConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    /// Positions available to the decoder input, BOS included.
    pub max_len: usize,
    pub feature_dim: usize,
    /// Number of image feature rows in the context.
    pub image_rows: usize,
}

impl DecoderConfig {
    pub fn from_pipeline(cfg: &PipelineConfig, vocab_size: usize) -> Self {
        Self {
            vocab_size,
            d_model: cfg.d_model,
            n_layers: cfg.n_layers,
            n_heads: cfg.n_heads,
            ffn_dim: cfg.ffn_dim,
            max_len: cfg.max_caption_len,
            feature_dim: cfg.feature_dim,
            image_rows: cfg.m,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("ffn_dim", self.ffn_dim),
            ("max_len", self.max_len),
            ("feature_dim", self.feature_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("decoder {name} must be positive")));
            }
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::InvalidConfig(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Block {
    ln_self: LayerNorm,
    self_attn: Attention,
    ln_cross: LayerNorm,
    cross_attn: Attention,
    ln_ffn: LayerNorm,
    ffn_in: Linear,
    ffn_out: Linear,
}

struct BlockCache {
    a: Matrix,
    ln_self: LayerNormCache,
    self_attn: AttentionCache,
    b: Matrix,
    ln_cross: LayerNormCache,
    cross_attn: AttentionCache,
    f: Matrix,
    ln_ffn: LayerNormCache,
    u: Matrix,
    g: Matrix,
}

pub(crate) struct ForwardCache {
    features: Matrix,
    prompt: Vec<TokenId>,
    input: Vec<TokenId>,
    z: Matrix,
    blocks: Vec<BlockCache>,
    ln_final: LayerNormCache,
    hf: Matrix,
    uh: Matrix,
    gh: Matrix,
}

/// Pre-norm transformer decoder. Each block runs causal self-attention,
/// cross-attention over the fused context and a GELU feed-forward layer,
/// all with residual connections; a two-layer MLP head produces logits.
///
/// The token embedding table is shared between caption tokens and prompt
/// tokens. Image features pass through a learned projection plus a learned
/// per-row position embedding before entering the context.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptionModel {
    config: DecoderConfig,
    store: ParamStore,
    embed: Param,
    pos: Param,
    image_proj: Linear,
    image_pos: Param,
    blocks: Vec<Block>,
    ln_final: LayerNorm,
    head_hidden: Linear,
    head_out: Linear,
}

impl CaptionModel {
    pub fn new(config: DecoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let mut rng = stream(seed, Stream::DecoderInit);
        let mut store = ParamStore::new();
        let embed = store.add("embed", config.vocab_size, d, Init::Uniform(0.1), &mut rng);
        let pos = store.add("pos", config.max_len, d, Init::Uniform(0.1), &mut rng);
        let image_proj = Linear::new(&mut store, "image_proj", config.feature_dim, d, &mut rng);
        let image_pos = store.add("image_pos", config.image_rows, d, Init::Uniform(0.1), &mut rng);
        let blocks = (0..config.n_layers)
            .map(|i| Block {
                ln_self: LayerNorm::new(&mut store, &format!("block{i}.ln_self"), d, &mut rng),
                self_attn: Attention::new(&mut store, &format!("block{i}.self_attn"), d, config.n_heads, &mut rng),
                ln_cross: LayerNorm::new(&mut store, &format!("block{i}.ln_cross"), d, &mut rng),
                cross_attn: Attention::new(&mut store, &format!("block{i}.cross_attn"), d, config.n_heads, &mut rng),
                ln_ffn: LayerNorm::new(&mut store, &format!("block{i}.ln_ffn"), d, &mut rng),
                ffn_in: Linear::new(&mut store, &format!("block{i}.ffn_in"), d, config.ffn_dim, &mut rng),
                ffn_out: Linear::new(&mut store, &format!("block{i}.ffn_out"), config.ffn_dim, d, &mut rng),
            })
            .collect();
        let ln_final = LayerNorm::new(&mut store, "ln_final", d, &mut rng);
        let head_hidden = Linear::new(&mut store, "head_hidden", d, d, &mut rng);
        let head_out = Linear::new(&mut store, "head_out", d, config.vocab_size, &mut rng);
        Ok(Self {
            config,
            store,
            embed,
            pos,
            image_proj,
            image_pos,
            blocks,
            ln_final,
            head_hidden,
            head_out,
        })
    }

    pub fn config(&self) -> &DecoderConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        self.store.values()
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.store.values_mut()
    }

    pub fn param_count(&self) -> usize {
        self.store.len()
    }

    /// Looks up a named parameter block, e.g. `"head_out.bias"`.
    pub fn param(&self, name: &str) -> Option<Param> {
        self.store.entries().iter().find(|e| e.name == name).map(|e| e.param)
    }

    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.store.entries().iter().map(|e| e.name.as_str())
    }

    pub fn param_values(&self, p: Param) -> &[f64] {
        self.store.get(p)
    }

    pub fn param_values_mut(&mut self, p: Param) -> &mut [f64] {
        self.store.get_mut(p)
    }

    /// Copy of the shared `vocab_size x d_model` embedding table.
    pub fn embedding_table(&self) -> Matrix {
        Matrix::from_vec(self.config.vocab_size, self.config.d_model, self.store.get(self.embed).to_vec())
            .expect("embedding shape")
    }

    fn check_features(&self, features: &Matrix) -> Result<()> {
        if features.cols() != self.config.feature_dim {
            return Err(Error::DimensionMismatch {
                context: "image feature width",
                expected: self.config.feature_dim,
                actual: features.cols(),
            });
        }
        if features.rows() != self.config.image_rows {
            return Err(Error::DimensionMismatch {
                context: "image feature rows",
                expected: self.config.image_rows,
                actual: features.rows(),
            });
        }
        Ok(())
    }

    fn check_ids(&self, ids: &[TokenId]) -> Result<()> {
        match ids.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            Some(&id) => Err(Error::IdOutOfRange {
                id,
                size: self.config.vocab_size,
            }),
            None => Ok(()),
        }
    }

    fn project_image(&self, features: &Matrix) -> Matrix {
        let mut img = self.image_proj.forward(&self.store, features);
        let ip = self.store.get(self.image_pos);
        let d = self.config.d_model;
        for r in 0..img.rows() {
            for (v, &p) in img.row_mut(r).iter_mut().zip(&ip[r * d..(r + 1) * d]) {
                *v += p;
            }
        }
        img
    }

    fn lookup(&self, ids: &[TokenId]) -> Matrix {
        let d = self.config.d_model;
        let table = self.store.get(self.embed);
        let mut out = Matrix::zeros(ids.len(), d);
        for (r, &t) in ids.iter().enumerate() {
            let t = t as usize;
            out.row_mut(r).copy_from_slice(&table[t * d..(t + 1) * d]);
        }
        out
    }

    /// Builds `Z = [image_proj(features) + image_pos ; E[prompt]]`.
    pub fn context(&self, features: &Matrix, prompt: &PromptSequence) -> Result<FusedContext> {
        self.check_features(features)?;
        self.check_ids(prompt.tokens())?;
        fuse(&self.project_image(features), &self.lookup(prompt.tokens()))
    }

    /// Next-token logits for every input position, `len(input) x vocab`.
    pub fn forward(&self, input: &[TokenId], ctx: &FusedContext) -> Result<Matrix> {
        if ctx.width() != self.config.d_model {
            return Err(Error::DimensionMismatch {
                context: "context width",
                expected: self.config.d_model,
                actual: ctx.width(),
            });
        }
        self.check_input(input)?;
        let (logits, _) = self.decode(input, ctx.matrix().clone());
        Ok(logits)
    }

    fn check_input(&self, input: &[TokenId]) -> Result<()> {
        if input.len() > self.config.max_len {
            return Err(Error::LengthOverflow {
                len: input.len(),
                max: self.config.max_len,
            });
        }
        self.check_ids(input)
    }

    pub(crate) fn forward_cached(
        &self,
        input: &[TokenId],
        features: &Matrix,
        prompt: &[TokenId],
    ) -> Result<(Matrix, ForwardCache)> {
        self.check_features(features)?;
        self.check_ids(prompt)?;
        self.check_input(input)?;
        let z = self.project_image(features).vstack(&self.lookup(prompt))?;
        let (logits, (blocks, ln_final, hf, uh, gh, z)) = self.decode(input, z);
        Ok((
            logits,
            ForwardCache {
                features: features.clone(),
                prompt: prompt.to_vec(),
                input: input.to_vec(),
                z,
                blocks,
                ln_final,
                hf,
                uh,
                gh,
            },
        ))
    }

    #[allow(clippy::type_complexity)]
    fn decode(
        &self,
        input: &[TokenId],
        z: Matrix,
    ) -> (Matrix, (Vec<BlockCache>, LayerNormCache, Matrix, Matrix, Matrix, Matrix)) {
        let s = &self.store;
        let d = self.config.d_model;
        let mut x = self.lookup(input);
        let pos = s.get(self.pos);
        for t in 0..input.len() {
            for (v, &p) in x.row_mut(t).iter_mut().zip(&pos[t * d..(t + 1) * d]) {
                *v += p;
            }
        }
        let mut caches = Vec::with_capacity(self.blocks.len());
        for blk in &self.blocks {
            let (a, ln_self) = blk.ln_self.forward(s, &x);
            let (sa, self_attn) = blk.self_attn.forward(s, &a, &a, true);
            let mut x1 = x;
            x1.add_assign(&sa);
            let (b, ln_cross) = blk.ln_cross.forward(s, &x1);
            let (ca, cross_attn) = blk.cross_attn.forward(s, &b, &z, false);
            let mut x2 = x1;
            x2.add_assign(&ca);
            let (f, ln_ffn) = blk.ln_ffn.forward(s, &x2);
            let u = blk.ffn_in.forward(s, &f);
            let g = gelu_matrix(&u);
            let mut x3 = x2;
            x3.add_assign(&blk.ffn_out.forward(s, &g));
            caches.push(BlockCache {
                a,
                ln_self,
                self_attn,
                b,
                ln_cross,
                cross_attn,
                f,
                ln_ffn,
                u,
                g,
            });
            x = x3;
        }
        let (hf, ln_final) = self.ln_final.forward(s, &x);
        let uh = self.head_hidden.forward(s, &hf);
        let gh = gelu_matrix(&uh);
        let logits = self.head_out.forward(s, &gh);
        (logits, (caches, ln_final, hf, uh, gh, z))
    }

    /// Accumulates parameter gradients for `dlogits` into `grads`.
    pub(crate) fn backward(&self, cache: &ForwardCache, dlogits: &Matrix, grads: &mut [f64]) {
        let s = &self.store;
        let d = self.config.d_model;
        let dgh = self.head_out.backward(s, &cache.gh, dlogits, grads);
        let duh = gelu_backward(&cache.uh, &dgh);
        let dhf = self.head_hidden.backward(s, &cache.hf, &duh, grads);
        let mut dx = self.ln_final.backward(s, &cache.ln_final, &dhf, grads);
        let mut dz = Matrix::zeros(cache.z.rows(), d);
        for (blk, c) in self.blocks.iter().zip(&cache.blocks).rev() {
            // x3 = x2 + ffn_out(gelu(ffn_in(ln_ffn(x2))))
            let dg = blk.ffn_out.backward(s, &c.g, &dx, grads);
            let du = gelu_backward(&c.u, &dg);
            let df = blk.ffn_in.backward(s, &c.f, &du, grads);
            dx.add_assign(&blk.ln_ffn.backward(s, &c.ln_ffn, &df, grads));
            // x2 = x1 + cross(ln_cross(x1), z)
            let (db, dzc) = blk.cross_attn.backward(s, &c.b, &cache.z, &c.cross_attn, &dx, grads);
            dz.add_assign(&dzc);
            dx.add_assign(&blk.ln_cross.backward(s, &c.ln_cross, &db, grads));
            // x1 = x0 + self(ln_self(x0))
            let (daq, dakv) = blk.self_attn.backward(s, &c.a, &c.a, &c.self_attn, &dx, grads);
            let mut da = daq;
            da.add_assign(&dakv);
            dx.add_assign(&blk.ln_self.backward(s, &c.ln_self, &da, grads));
        }
        {
            let ge = self.embed.offset();
            for (t, &id) in cache.input.iter().enumerate() {
                let row = &mut grads[ge + id as usize * d..ge + (id as usize + 1) * d];
                for (g, &v) in row.iter_mut().zip(dx.row(t)) {
                    *g += v;
                }
            }
            let gp = self.pos.offset();
            for t in 0..cache.input.len() {
                for (g, &v) in grads[gp + t * d..gp + (t + 1) * d].iter_mut().zip(dx.row(t)) {
                    *g += v;
                }
            }
            let m = cache.features.rows();
            for (r, &id) in cache.prompt.iter().enumerate() {
                let row = &mut grads[ge + id as usize * d..ge + (id as usize + 1) * d];
                for (g, &v) in row.iter_mut().zip(dz.row(m + r)) {
                    *g += v;
                }
            }
        }
        let dimg = dz.slice_rows(0, cache.features.rows());
        let gi = self.image_pos.offset();
        for r in 0..dimg.rows() {
            for (g, &v) in grads[gi + r * d..gi + (r + 1) * d].iter_mut().zip(dimg.row(r)) {
                *g += v;
            }
        }
        self.image_proj.backward(s, &cache.features, &dimg, grads);
    }

    pub(crate) fn from_parts(config: DecoderConfig, values: Vec<f64>) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        if values.len() != model.store.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters, found {}",
                model.store.len(),
                values.len()
            )));
        }
        model.store.values_mut().copy_from_slice(&values);
        Ok(model)
    }
}

/// Sum of target negative log-likelihoods over non-PAD positions, the
/// number of such positions, and `softmax - onehot` per row (zero rows at
/// PAD targets).
pub(crate) fn nll_terms(logits: &Matrix, targets: &[TokenId]) -> Result<(f64, usize, Matrix)> {
    if logits.rows() != targets.len() {
        return Err(Error::DimensionMismatch {
            context: "targets per logit row",
            expected: logits.rows(),
            actual: targets.len(),
        });
    }
    let v = logits.cols();
    let mut dlogits = Matrix::zeros(logits.rows(), v);
    let mut sum = 0.0;
    let mut count = 0;
    let mut lp = vec![0.0; v];
    for (t, &y) in targets.iter().enumerate() {
        if y == PAD_ID {
            continue;
        }
        if y as usize >= v {
            return Err(Error::IdOutOfRange { id: y, size: v });
        }
        math::log_softmax(logits.row(t), &mut lp);
        sum -= lp[y as usize];
        count += 1;
        let row = dlogits.row_mut(t);
        for (g, &l) in row.iter_mut().zip(&lp) {
            *g = math::exp(l);
        }
        row[y as usize] -= 1.0;
    }
    Ok((sum, count, dlogits))
}

/// Mean next-token cross-entropy over positions whose target is not PAD.
pub fn lm_loss(logits: &Matrix, targets: &[TokenId]) -> Result<f64> {
    let (sum, count, _) = nll_terms(logits, targets)?;
    if count == 0 {
        return Err(Error::NoSupervisedPositions);
    }
    Ok(sum / count as f64)
}
