//! Minimal neural-network toolkit: a flat parameter store, layers with
//! hand-written backward passes, and Adam.
//!
//! Parameters of a model live in one contiguous `Vec<f64>`; layers hold
//! [`Param`] handles into it and gradients use the same layout. That makes
//! optimizer updates, checkpoints and finite-difference checks trivial.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::rng::{uniform_symmetric, Rng};
use crate::tensor::{dot, row_times_matrix, Matrix};

/// Handle to a `rows x cols` block inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Param {
    offset: usize,
    rows: usize,
    cols: usize,
}

impl Param {
    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn range(&self) -> core::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub param: Param,
}

pub enum Init {
    Zeros,
    Ones,
    Uniform(f64),
    /// Glorot/Xavier uniform bound computed from the block shape.
    Xavier,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    values: Vec<f64>,
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, rows: usize, cols: usize, init: Init, rng: &mut Rng) -> Param {
        let param = Param {
            offset: self.values.len(),
            rows,
            cols,
        };
        let bound = match init {
            Init::Zeros => None,
            Init::Ones => {
                self.values.extend(core::iter::repeat_n(1.0, rows * cols));
                self.entries.push(ParamEntry { name: name.into(), param });
                return param;
            }
            Init::Uniform(b) => Some(b),
            Init::Xavier => Some(math::sqrt(6.0 / (rows + cols) as f64)),
        };
        match bound {
            None => self.values.extend(core::iter::repeat_n(0.0, rows * cols)),
            Some(b) => {
                for _ in 0..rows * cols {
                    self.values.push(uniform_symmetric(rng, b));
                }
            }
        }
        self.entries.push(ParamEntry {
            name: name.into(),
            param,
        });
        param
    }

    #[inline]
    pub fn get(&self, p: Param) -> &[f64] {
        &self.values[p.range()]
    }

    #[inline]
    pub fn get_mut(&mut self, p: Param) -> &mut [f64] {
        &mut self.values[p.range()]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_grads(&self) -> Vec<f64> {
        vec![0.0; self.values.len()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut Rng) -> Self {
        let weight = store.add(alloc::format!("{name}.weight"), input, output, Init::Xavier, rng);
        let bias = store.add(alloc::format!("{name}.bias"), 1, output, Init::Zeros, rng);
        Self { weight, bias }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols
    }

    pub fn forward(&self, store: &ParamStore, x: &Matrix) -> Matrix {
        debug_assert_eq!(x.cols(), self.input_dim());
        let n = self.output_dim();
        let w = store.get(self.weight);
        let b = store.get(self.bias);
        let mut y = Matrix::zeros(x.rows(), n);
        for r in 0..x.rows() {
            let out = y.row_mut(r);
            out.copy_from_slice(b);
            row_times_matrix(x.row(r), w, n, out);
        }
        y
    }

    pub fn forward_vec(&self, store: &ParamStore, x: &[f64]) -> Vec<f64> {
        let mut out = store.get(self.bias).to_vec();
        row_times_matrix(x, store.get(self.weight), self.output_dim(), &mut out);
        out
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    pub fn backward(&self, store: &ParamStore, x: &Matrix, dy: &Matrix, grads: &mut [f64]) -> Matrix {
        let n = self.output_dim();
        let k = self.input_dim();
        {
            let gw = &mut grads[self.weight.range()];
            for r in 0..x.rows() {
                let dyr = dy.row(r);
                for (p, &xv) in x.row(r).iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    for (g, &d) in gw[p * n..(p + 1) * n].iter_mut().zip(dyr) {
                        *g += xv * d;
                    }
                }
            }
        }
        {
            let gb = &mut grads[self.bias.range()];
            for r in 0..dy.rows() {
                for (g, &d) in gb.iter_mut().zip(dy.row(r)) {
                    *g += d;
                }
            }
        }
        let w = store.get(self.weight);
        let mut dx = Matrix::zeros(x.rows(), k);
        for r in 0..x.rows() {
            let dyr = dy.row(r);
            let dxr = dx.row_mut(r);
            for (p, v) in dxr.iter_mut().enumerate() {
                *v = dot(dyr, &w[p * n..(p + 1) * n]);
            }
        }
        dx
    }
}

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerNorm {
    pub gain: Param,
    pub bias: Param,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache {
    xhat: Matrix,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, rng: &mut Rng) -> Self {
        let gain = store.add(alloc::format!("{name}.gain"), 1, dim, Init::Ones, rng);
        let bias = store.add(alloc::format!("{name}.bias"), 1, dim, Init::Zeros, rng);
        Self { gain, bias }
    }

    pub fn forward(&self, store: &ParamStore, x: &Matrix) -> (Matrix, LayerNormCache) {
        let d = x.cols();
        let g = store.get(self.gain);
        let b = store.get(self.bias);
        let mut y = Matrix::zeros(x.rows(), d);
        let mut xhat = Matrix::zeros(x.rows(), d);
        let mut inv_std = Vec::with_capacity(x.rows());
        for r in 0..x.rows() {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / math::sqrt(var + LN_EPS);
            inv_std.push(inv);
            let xh = xhat.row_mut(r);
            for (o, &v) in xh.iter_mut().zip(row) {
                *o = (v - mean) * inv;
            }
            let yr = y.row_mut(r);
            for i in 0..d {
                yr[i] = g[i] * xh[i] + b[i];
            }
        }
        (y, LayerNormCache { xhat, inv_std })
    }

    pub fn backward(&self, store: &ParamStore, cache: &LayerNormCache, dy: &Matrix, grads: &mut [f64]) -> Matrix {
        let d = dy.cols();
        let g = store.get(self.gain);
        let mut dx = Matrix::zeros(dy.rows(), d);
        let mut dxhat = vec![0.0; d];
        for r in 0..dy.rows() {
            let dyr = dy.row(r);
            let xh = cache.xhat.row(r);
            {
                let gg = &mut grads[self.gain.range()];
                for i in 0..d {
                    gg[i] += dyr[i] * xh[i];
                }
            }
            {
                let gb = &mut grads[self.bias.range()];
                for i in 0..d {
                    gb[i] += dyr[i];
                }
            }
            for i in 0..d {
                dxhat[i] = dyr[i] * g[i];
            }
            let sum_dxhat: f64 = dxhat.iter().sum();
            let sum_dxhat_xhat = dot(&dxhat, xh);
            let inv = cache.inv_std[r];
            let dxr = dx.row_mut(r);
            for i in 0..d {
                dxr[i] = inv / d as f64 * (d as f64 * dxhat[i] - sum_dxhat - xh[i] * sum_dxhat_xhat);
            }
        }
        dx
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + math::tanh(GELU_C * (x + GELU_A * x * x * x)))
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let t = math::tanh(GELU_C * (x + GELU_A * x * x * x));
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub fn gelu_matrix(x: &Matrix) -> Matrix {
    let mut y = x.clone();
    for v in y.as_mut_slice() {
        *v = gelu(*v);
    }
    y
}

pub fn gelu_backward(x: &Matrix, dy: &Matrix) -> Matrix {
    let mut dx = dy.clone();
    for (d, &v) in dx.as_mut_slice().iter_mut().zip(x.as_slice()) {
        *d *= gelu_grad(v);
    }
    dx
}

/// Multi-head scaled dot-product attention with separate query and
/// key/value inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Attention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    q: Matrix,
    k: Matrix,
    v: Matrix,
    /// Per head, `Tq x Tk` attention weights (zero where masked).
    probs: Vec<Matrix>,
    mixed: Matrix,
}

impl Attention {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, heads: usize, rng: &mut Rng) -> Self {
        debug_assert!(dim.is_multiple_of(heads));
        Self {
            query: Linear::new(store, &alloc::format!("{name}.query"), dim, dim, rng),
            key: Linear::new(store, &alloc::format!("{name}.key"), dim, dim, rng),
            value: Linear::new(store, &alloc::format!("{name}.value"), dim, dim, rng),
            output: Linear::new(store, &alloc::format!("{name}.output"), dim, dim, rng),
            heads,
        }
    }

    /// With `causal`, query row `i` only sees key rows `0..=i`.
    pub fn forward(&self, store: &ParamStore, xq: &Matrix, xkv: &Matrix, causal: bool) -> (Matrix, AttentionCache) {
        let q = self.query.forward(store, xq);
        let k = self.key.forward(store, xkv);
        let v = self.value.forward(store, xkv);
        let (tq, tk) = (q.rows(), k.rows());
        let dim = q.cols();
        let dh = dim / self.heads;
        let scale = 1.0 / math::sqrt(dh as f64);
        let mut mixed = Matrix::zeros(tq, dim);
        let mut probs = Vec::with_capacity(self.heads);
        let mut scores = vec![0.0; tk];
        for h in 0..self.heads {
            let cols = h * dh..(h + 1) * dh;
            let mut p = Matrix::zeros(tq, tk);
            for i in 0..tq {
                let visible = if causal { (i + 1).min(tk) } else { tk };
                if visible == 0 {
                    continue;
                }
                let qi = &q.row(i)[cols.clone()];
                let mut max = f64::NEG_INFINITY;
                for (j, slot) in scores[..visible].iter_mut().enumerate() {
                    let s = dot(qi, &k.row(j)[cols.clone()]) * scale;
                    *slot = s;
                    max = max.max(s);
                }
                let mut sum = 0.0;
                for s in scores[..visible].iter_mut() {
                    *s = math::exp(*s - max);
                    sum += *s;
                }
                let prow = p.row_mut(i);
                for j in 0..visible {
                    prow[j] = scores[j] / sum;
                }
                let out = &mut mixed.row_mut(i)[cols.clone()];
                for j in 0..visible {
                    let w = p.get(i, j);
                    for (o, &vv) in out.iter_mut().zip(&v.row(j)[cols.clone()]) {
                        *o += w * vv;
                    }
                }
            }
            probs.push(p);
        }
        let out = self.output.forward(store, &mixed);
        (out, AttentionCache { q, k, v, probs, mixed })
    }

    /// Returns gradients for the query input and the key/value input.
    pub fn backward(
        &self,
        store: &ParamStore,
        xq: &Matrix,
        xkv: &Matrix,
        cache: &AttentionCache,
        dout: &Matrix,
        grads: &mut [f64],
    ) -> (Matrix, Matrix) {
        let dmixed = self.output.backward(store, &cache.mixed, dout, grads);
        let (tq, tk) = (cache.q.rows(), cache.k.rows());
        let dim = cache.q.cols();
        let dh = dim / self.heads;
        let scale = 1.0 / math::sqrt(dh as f64);
        let mut dq = Matrix::zeros(tq, dim);
        let mut dk = Matrix::zeros(tk, dim);
        let mut dv = Matrix::zeros(tk, dim);
        let mut dp = vec![0.0; tk];
        for h in 0..self.heads {
            let cols = h * dh..(h + 1) * dh;
            let p = &cache.probs[h];
            for i in 0..tq {
                let dmi = &dmixed.row(i)[cols.clone()];
                let prow = p.row(i);
                let mut weighted = 0.0;
                for j in 0..tk {
                    if prow[j] == 0.0 {
                        dp[j] = 0.0;
                        continue;
                    }
                    dp[j] = dot(dmi, &cache.v.row(j)[cols.clone()]);
                    weighted += prow[j] * dp[j];
                    let dvj = &mut dv.row_mut(j)[cols.clone()];
                    for (o, &g) in dvj.iter_mut().zip(dmi) {
                        *o += prow[j] * g;
                    }
                }
                for j in 0..tk {
                    if prow[j] == 0.0 {
                        continue;
                    }
                    let ds = prow[j] * (dp[j] - weighted) * scale;
                    {
                        let dqi = &mut dq.row_mut(i)[cols.clone()];
                        for (o, &kv) in dqi.iter_mut().zip(&cache.k.row(j)[cols.clone()]) {
                            *o += ds * kv;
                        }
                    }
                    let dkj = &mut dk.row_mut(j)[cols.clone()];
                    for (o, &qv) in dkj.iter_mut().zip(&cache.q.row(i)[cols.clone()]) {
                        *o += ds * qv;
                    }
                }
            }
        }
        let dxq = self.query.backward(store, xq, &dq, grads);
        let mut dxkv = self.key.backward(store, xkv, &dk, grads);
        dxkv.add_assign(&self.value.backward(store, xkv, &dv, grads));
        (dxq, dxkv)
    }
}

/// Scales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping. `max_norm == 0` disables clipping.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = math::sqrt(grads.iter().map(|g| g * g).sum::<f64>());
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            *g *= s;
        }
    }
    norm
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - libm::pow(self.beta1, self.t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, self.t as f64);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= self.lr * mhat / (math::sqrt(vhat) + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn rand_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
        let data = (0..rows * cols).map(|_| uniform_symmetric(rng, 1.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    /// Scalar objective `sum(out * probe)` so every output contributes.
    fn weighted_sum(out: &Matrix, probe: &Matrix) -> f64 {
        out.as_slice().iter().zip(probe.as_slice()).map(|(a, b)| a * b).sum()
    }

    fn check_param_grads(store: &mut ParamStore, grads: &[f64], f: &dyn Fn(&ParamStore) -> f64) {
        let h = 1e-5;
        for i in (0..store.len()).step_by(7) {
            let orig = store.values()[i];
            store.values_mut()[i] = orig + h;
            let up = f(store);
            store.values_mut()[i] = orig - h;
            let down = f(store);
            store.values_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let err = (numeric - grads[i]).abs() / numeric.abs().max(grads[i].abs()).max(1e-8);
            assert!(err < 1e-6 || (numeric - grads[i]).abs() < 1e-9, "param {i}: numeric {numeric} analytic {}", grads[i]);
        }
    }

    #[test]
    fn linear_gradients() {
        let mut rng = stream(1, Stream::DecoderInit);
        let mut store = ParamStore::new();
        let lin = Linear::new(&mut store, "l", 5, 3, &mut rng);
        for v in store.values_mut() {
            *v = uniform_symmetric(&mut rng, 1.0);
        }
        let x = rand_matrix(&mut rng, 4, 5);
        let probe = rand_matrix(&mut rng, 4, 3);
        let mut grads = store.zero_grads();
        let dx = lin.backward(&store, &x, &probe, &mut grads);
        check_param_grads(&mut store, &grads, &|s| weighted_sum(&lin.forward(s, &x), &probe));
        // input gradient
        let h = 1e-6;
        for i in 0..x.as_slice().len() {
            let mut xp = x.clone();
            xp.as_mut_slice()[i] += h;
            let mut xm = x.clone();
            xm.as_mut_slice()[i] -= h;
            let num = (weighted_sum(&lin.forward(&store, &xp), &probe) - weighted_sum(&lin.forward(&store, &xm), &probe)) / (2.0 * h);
            assert!((num - dx.as_slice()[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn layer_norm_gradients() {
        let mut rng = stream(2, Stream::DecoderInit);
        let mut store = ParamStore::new();
        let ln = LayerNorm::new(&mut store, "ln", 6, &mut rng);
        for v in store.values_mut() {
            *v = uniform_symmetric(&mut rng, 1.0);
        }
        let x = rand_matrix(&mut rng, 3, 6);
        let probe = rand_matrix(&mut rng, 3, 6);
        let (_, cache) = ln.forward(&store, &x);
        let mut grads = store.zero_grads();
        let dx = ln.backward(&store, &cache, &probe, &mut grads);
        check_param_grads(&mut store, &grads, &|s| weighted_sum(&ln.forward(s, &x).0, &probe));
        let h = 1e-6;
        for i in 0..x.as_slice().len() {
            let mut xp = x.clone();
            xp.as_mut_slice()[i] += h;
            let mut xm = x.clone();
            xm.as_mut_slice()[i] -= h;
            let num = (weighted_sum(&ln.forward(&store, &xp).0, &probe) - weighted_sum(&ln.forward(&store, &xm).0, &probe)) / (2.0 * h);
            assert!((num - dx.as_slice()[i]).abs() < 1e-6, "{num} vs {}", dx.as_slice()[i]);
        }
    }

    #[test]
    fn attention_gradients_causal_and_cross() {
        for causal in [true, false] {
            let mut rng = stream(3, Stream::DecoderInit);
            let mut store = ParamStore::new();
            let attn = Attention::new(&mut store, "a", 8, 2, &mut rng);
            for v in store.values_mut() {
                *v = uniform_symmetric(&mut rng, 0.7);
            }
            let xq = rand_matrix(&mut rng, 4, 8);
            let xkv = if causal { xq.clone() } else { rand_matrix(&mut rng, 5, 8) };
            let probe = rand_matrix(&mut rng, 4, 8);
            let (_, cache) = attn.forward(&store, &xq, &xkv, causal);
            let mut grads = store.zero_grads();
            let (dxq, dxkv) = attn.backward(&store, &xq, &xkv, &cache, &probe, &mut grads);
            check_param_grads(&mut store, &grads, &|s| weighted_sum(&attn.forward(s, &xq, &xkv, causal).0, &probe));
            if !causal {
                let h = 1e-6;
                for (input, analytic, is_q) in [(&xq, &dxq, true), (&xkv, &dxkv, false)] {
                    for i in 0..input.as_slice().len() {
                        let mut p = input.clone();
                        p.as_mut_slice()[i] += h;
                        let mut m = input.clone();
                        m.as_mut_slice()[i] -= h;
                        let f = |x: &Matrix| {
                            let out = if is_q { attn.forward(&store, x, &xkv, false).0 } else { attn.forward(&store, &xq, x, false).0 };
                            weighted_sum(&out, &probe)
                        };
                        let num = (f(&p) - f(&m)) / (2.0 * h);
                        assert!((num - analytic.as_slice()[i]).abs() < 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn gelu_derivative_matches_finite_difference() {
        for i in -40..40 {
            let x = i as f64 * 0.13;
            let num = (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6;
            assert!((num - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn clip_scales_to_max_norm() {
        let mut g = [3.0, 4.0];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0] - 0.6).abs() < 1e-12 && (g[1] - 0.8).abs() < 1e-12);
        let mut g = [3.0, 4.0];
        clip_grad_norm(&mut g, 0.0);
        assert_eq!(g, [3.0, 4.0]);
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut x = [5.0, -3.0];
        let mut opt = Adam::new(2, 0.1);
        for _ in 0..500 {
            let g = [2.0 * x[0], 2.0 * x[1]];
            opt.step(&mut x, &g);
        }
        assert!(x[0].abs() < 1e-2 && x[1].abs() < 1e-2);
    }
}
