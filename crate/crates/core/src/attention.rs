//! Scaled dot-product and multi-head attention with padding and causal
//! masks — the shared mechanism of every encoder, decoder and fusion block.
//!
//! Parameter containers are generic over their leaf type: `Params<Tensor>`
//! holds the learnable values, `Params<TensorId>` the same structure bound
//! onto a tape for one forward pass.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::math;
use crate::tensor::{Tape, Tensor, TensorId};

/// Layer-norm variance floor.
pub const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionConfig {
    pub d_model: usize,
    pub n_heads: usize,
}

impl AttentionConfig {
    pub fn new(d_model: usize, n_heads: usize) -> Result<Self> {
        let cfg = AttentionConfig { d_model, n_heads };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || self.d_model == 0 {
            return Err(CoreError::Config(format!(
                "d_model {} and n_heads {} must be positive",
                self.d_model, self.n_heads
            )));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(CoreError::Config(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Boolean attention mask, `true` = attend allowed, row-major `[q_len, k_len]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    q_len: usize,
    k_len: usize,
    allow: Vec<bool>,
}

impl Mask {
    /// Allows keys `0..valid_len` for every query.
    pub fn padding(valid_len: usize, q_len: usize, k_len: usize) -> Result<Self> {
        if valid_len > k_len {
            return Err(CoreError::dim(
                "mask.padding",
                format!("valid {valid_len} exceeds keys {k_len}"),
            ));
        }
        let mut allow = vec![false; q_len * k_len];
        for q in 0..q_len {
            for k in 0..valid_len {
                allow[q * k_len + k] = true;
            }
        }
        Ok(Mask {
            q_len,
            k_len,
            allow,
        })
    }

    /// Lower-triangular square mask: query `i` may attend keys `j <= i`.
    pub fn causal(t: usize) -> Self {
        let mut allow = vec![false; t * t];
        for i in 0..t {
            for j in 0..=i {
                allow[i * t + j] = true;
            }
        }
        Mask {
            q_len: t,
            k_len: t,
            allow,
        }
    }

    /// Elementwise AND of two same-shape masks.
    pub fn and(&self, other: &Mask) -> Result<Mask> {
        if self.q_len != other.q_len || self.k_len != other.k_len {
            return Err(CoreError::dim(
                "mask.and",
                format!(
                    "{}x{} vs {}x{}",
                    self.q_len, self.k_len, other.q_len, other.k_len
                ),
            ));
        }
        let allow = self
            .allow
            .iter()
            .zip(&other.allow)
            .map(|(a, b)| *a && *b)
            .collect();
        Ok(Mask {
            q_len: self.q_len,
            k_len: self.k_len,
            allow,
        })
    }

    pub fn allows(&self, q: usize, k: usize) -> bool {
        self.allow[q * self.k_len + k]
    }

    pub fn q_len(&self) -> usize {
        self.q_len
    }

    pub fn k_len(&self) -> usize {
        self.k_len
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.allow
    }
}

/// One square self-attention padding mask per sequence length.
pub fn make_padding_mask(lengths: &[usize], max_len: usize) -> Result<Vec<Mask>> {
    lengths
        .iter()
        .map(|&len| Mask::padding(len, max_len, max_len))
        .collect()
}

pub fn make_causal_mask(t: usize) -> Result<Mask> {
    if t == 0 {
        return Err(CoreError::dim("make_causal_mask", "t must be >= 1"));
    }
    Ok(Mask::causal(t))
}

// ── parameter containers ─────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct LinearParams<T = Tensor> {
    pub w: T,
    pub b: T,
}

impl LinearParams<Tensor> {
    pub fn init(d_in: usize, d_out: usize, rng: &mut ChaCha8Rng) -> Self {
        LinearParams {
            w: Tensor::xavier(d_in, d_out, rng),
            b: Tensor::zeros(&[d_out]),
        }
    }
}

impl<T> LinearParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> LinearParams<U> {
        LinearParams {
            w: f(&self.w),
            b: f(&self.b),
        }
    }

    pub fn visit<'a>(&'a self, path: &str, f: &mut impl FnMut(String, &'a T)) {
        f(format!("{path}.w"), &self.w);
        f(format!("{path}.b"), &self.b);
    }

    pub fn visit_mut<'a>(&'a mut self, path: &str, f: &mut impl FnMut(String, &'a mut T)) {
        f(format!("{path}.w"), &mut self.w);
        f(format!("{path}.b"), &mut self.b);
    }
}

#[derive(Clone, Debug)]
pub struct NormParams<T = Tensor> {
    pub gain: T,
    pub bias: T,
}

impl NormParams<Tensor> {
    pub fn init(d: usize) -> Self {
        NormParams {
            gain: Tensor::full(&[d], 1.0),
            bias: Tensor::zeros(&[d]),
        }
    }
}

impl<T> NormParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> NormParams<U> {
        NormParams {
            gain: f(&self.gain),
            bias: f(&self.bias),
        }
    }

    pub fn visit<'a>(&'a self, path: &str, f: &mut impl FnMut(String, &'a T)) {
        f(format!("{path}.gain"), &self.gain);
        f(format!("{path}.bias"), &self.bias);
    }

    pub fn visit_mut<'a>(&'a mut self, path: &str, f: &mut impl FnMut(String, &'a mut T)) {
        f(format!("{path}.gain"), &mut self.gain);
        f(format!("{path}.bias"), &mut self.bias);
    }
}

/// Q/K/V projections plus the output projection: 4·d² + 4·d parameters.
#[derive(Clone, Debug)]
pub struct MhaParams<T = Tensor> {
    pub wq: LinearParams<T>,
    pub wk: LinearParams<T>,
    pub wv: LinearParams<T>,
    pub wo: LinearParams<T>,
}

impl MhaParams<Tensor> {
    pub fn init(d_model: usize, rng: &mut ChaCha8Rng) -> Self {
        MhaParams {
            wq: LinearParams::init(d_model, d_model, rng),
            wk: LinearParams::init(d_model, d_model, rng),
            wv: LinearParams::init(d_model, d_model, rng),
            wo: LinearParams::init(d_model, d_model, rng),
        }
    }
}

impl<T> MhaParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> MhaParams<U> {
        MhaParams {
            wq: self.wq.map(f),
            wk: self.wk.map(f),
            wv: self.wv.map(f),
            wo: self.wo.map(f),
        }
    }

    pub fn visit<'a>(&'a self, path: &str, f: &mut impl FnMut(String, &'a T)) {
        self.wq.visit(&format!("{path}.wq"), f);
        self.wk.visit(&format!("{path}.wk"), f);
        self.wv.visit(&format!("{path}.wv"), f);
        self.wo.visit(&format!("{path}.wo"), f);
    }

    pub fn visit_mut<'a>(&'a mut self, path: &str, f: &mut impl FnMut(String, &'a mut T)) {
        self.wq.visit_mut(&format!("{path}.wq"), f);
        self.wk.visit_mut(&format!("{path}.wk"), f);
        self.wv.visit_mut(&format!("{path}.wv"), f);
        self.wo.visit_mut(&format!("{path}.wo"), f);
    }
}

#[derive(Clone, Debug)]
pub struct FfnParams<T = Tensor> {
    pub lin1: LinearParams<T>,
    pub lin2: LinearParams<T>,
}

impl FfnParams<Tensor> {
    pub fn init(d_model: usize, d_ff: usize, rng: &mut ChaCha8Rng) -> Self {
        FfnParams {
            lin1: LinearParams::init(d_model, d_ff, rng),
            lin2: LinearParams::init(d_ff, d_model, rng),
        }
    }
}

impl<T> FfnParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> FfnParams<U> {
        FfnParams {
            lin1: self.lin1.map(f),
            lin2: self.lin2.map(f),
        }
    }

    pub fn visit<'a>(&'a self, path: &str, f: &mut impl FnMut(String, &'a T)) {
        self.lin1.visit(&format!("{path}.lin1"), f);
        self.lin2.visit(&format!("{path}.lin2"), f);
    }

    pub fn visit_mut<'a>(&'a mut self, path: &str, f: &mut impl FnMut(String, &'a mut T)) {
        self.lin1.visit_mut(&format!("{path}.lin1"), f);
        self.lin2.visit_mut(&format!("{path}.lin2"), f);
    }
}

/// Post-norm transformer encoder block: self-MHA + FFN with residuals.
#[derive(Clone, Debug)]
pub struct EncoderBlockParams<T = Tensor> {
    pub mha: MhaParams<T>,
    pub ln1: NormParams<T>,
    pub ffn: FfnParams<T>,
    pub ln2: NormParams<T>,
}

impl EncoderBlockParams<Tensor> {
    pub fn init(d_model: usize, d_ff: usize, rng: &mut ChaCha8Rng) -> Self {
        EncoderBlockParams {
            mha: MhaParams::init(d_model, rng),
            ln1: NormParams::init(d_model),
            ffn: FfnParams::init(d_model, d_ff, rng),
            ln2: NormParams::init(d_model),
        }
    }
}

impl<T> EncoderBlockParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> EncoderBlockParams<U> {
        EncoderBlockParams {
            mha: self.mha.map(f),
            ln1: self.ln1.map(f),
            ffn: self.ffn.map(f),
            ln2: self.ln2.map(f),
        }
    }

    pub fn visit<'a>(&'a self, path: &str, f: &mut impl FnMut(String, &'a T)) {
        self.mha.visit(&format!("{path}.mha"), f);
        self.ln1.visit(&format!("{path}.ln1"), f);
        self.ffn.visit(&format!("{path}.ffn"), f);
        self.ln2.visit(&format!("{path}.ln2"), f);
    }

    pub fn visit_mut<'a>(&'a mut self, path: &str, f: &mut impl FnMut(String, &'a mut T)) {
        self.mha.visit_mut(&format!("{path}.mha"), f);
        self.ln1.visit_mut(&format!("{path}.ln1"), f);
        self.ffn.visit_mut(&format!("{path}.ffn"), f);
        self.ln2.visit_mut(&format!("{path}.ln2"), f);
    }
}

// ── forward passes ───────────────────────────────────────────────────

/// Dropout settings for one forward pass. Eval mode is a pure identity.
#[allow(clippy::large_enum_variant)] // Train carries its ChaCha state inline
pub enum ForwardMode {
    Eval,
    Train { dropout_p: f64, rng: ChaCha8Rng },
}

impl ForwardMode {
    pub fn train(dropout_p: f64, rng: ChaCha8Rng) -> Self {
        ForwardMode::Train { dropout_p, rng }
    }

    pub fn is_training(&self) -> bool {
        matches!(self, ForwardMode::Train { .. })
    }

    pub fn apply_dropout(&mut self, tape: &mut Tape, x: TensorId) -> Result<TensorId> {
        match self {
            ForwardMode::Eval => Ok(x),
            ForwardMode::Train { dropout_p, rng } => tape.dropout(x, *dropout_p, true, rng),
        }
    }
}

/// `softmax(Q·Kᵀ/√d)·V` with masked positions at exactly zero weight.
/// Returns `(output, attention_weights)`.
pub fn scaled_dot_attention(
    tape: &mut Tape,
    q: TensorId,
    k: TensorId,
    v: TensorId,
    mask: Option<&Mask>,
) -> Result<(TensorId, TensorId)> {
    let (t_q, d) = {
        let s = tape.shape(q);
        (s[0], s[1])
    };
    let (t_k, d_k) = {
        let s = tape.shape(k);
        (s[0], s[1])
    };
    if d != d_k {
        return Err(CoreError::dim(
            "scaled_dot_attention",
            format!("query dim {d} vs key dim {d_k}"),
        ));
    }
    if tape.shape(v)[0] != t_k {
        return Err(CoreError::dim(
            "scaled_dot_attention",
            format!("key count {t_k} vs value count {}", tape.shape(v)[0]),
        ));
    }
    let allow: Vec<bool> = match mask {
        Some(m) => {
            if m.q_len() != t_q || m.k_len() != t_k {
                return Err(CoreError::dim(
                    "scaled_dot_attention",
                    format!("mask {}x{} vs scores {t_q}x{t_k}", m.q_len(), m.k_len()),
                ));
            }
            m.as_slice().to_vec()
        }
        None => vec![true; t_q * t_k],
    };
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scaled = tape.scale(scores, 1.0 / math::sqrt(d as f64))?;
    let weights = tape.masked_softmax(scaled, &allow)?;
    let out = tape.matmul(weights, v)?;
    Ok((out, weights))
}

/// Multi-head attention: per-head scaled dot attention on sliced
/// projections, concatenated and projected back to `d_model`.
/// Self-attention is the `x_q == x_kv` case.
pub fn multi_head_attention(
    tape: &mut Tape,
    x_q: TensorId,
    x_kv: TensorId,
    params: &MhaParams<TensorId>,
    cfg: &AttentionConfig,
    mask: Option<&Mask>,
) -> Result<TensorId> {
    cfg.validate()?;
    let d = cfg.d_model;
    if tape.shape(x_q)[1] != d || tape.shape(x_kv)[1] != d {
        return Err(CoreError::dim(
            "multi_head_attention",
            format!(
                "inputs {:?}/{:?} vs d_model {d}",
                tape.shape(x_q),
                tape.shape(x_kv)
            ),
        ));
    }
    let q = tape.linear(x_q, params.wq.w, params.wq.b)?;
    let k = tape.linear(x_kv, params.wk.w, params.wk.b)?;
    let v = tape.linear(x_kv, params.wv.w, params.wv.b)?;
    let dh = cfg.d_head();
    let mut heads = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let qh = tape.slice_last(q, h * dh, dh)?;
        let kh = tape.slice_last(k, h * dh, dh)?;
        let vh = tape.slice_last(v, h * dh, dh)?;
        let (oh, _) = scaled_dot_attention(tape, qh, kh, vh, mask)?;
        heads.push(oh);
    }
    let cat = tape.concat_last(&heads)?;
    tape.linear(cat, params.wo.w, params.wo.b)
}

/// Post-norm residual encoder block:
/// `x -> LN(x + drop(MHA(x))) -> LN(· + drop(FFN(·)))`.
#[allow(clippy::too_many_arguments)]
pub fn encoder_block(
    tape: &mut Tape,
    x: TensorId,
    params: &EncoderBlockParams<TensorId>,
    cfg: &AttentionConfig,
    pad_mask: Option<&Mask>,
    mode: &mut ForwardMode,
) -> Result<TensorId> {
    let attn = multi_head_attention(tape, x, x, &params.mha, cfg, pad_mask)?;
    let attn = mode.apply_dropout(tape, attn)?;
    let res1 = tape.add(x, attn)?;
    let x1 = tape.layer_norm(res1, params.ln1.gain, params.ln1.bias, LN_EPS)?;
    let h = tape.linear(x1, params.ffn.lin1.w, params.ffn.lin1.b)?;
    let h = tape.relu(h)?;
    let ff = tape.linear(h, params.ffn.lin2.w, params.ffn.lin2.b)?;
    let ff = mode.apply_dropout(tape, ff)?;
    let res2 = tape.add(x1, ff)?;
    tape.layer_norm(res2, params.ln2.gain, params.ln2.bias, LN_EPS)
}

/// Fixed sinusoidal positional encodings, `[t, d]`.
pub fn positional_encoding(t: usize, d: usize) -> Tensor {
    let mut pe = Tensor::zeros(&[t, d]);
    for pos in 0..t {
        let mut i = 0;
        while i < d {
            let angle = pos as f64 / math::powf(10000.0, i as f64 / d as f64);
            pe.data_mut()[pos * d + i] = math::sin(angle);
            if i + 1 < d {
                pe.data_mut()[pos * d + i + 1] = math::cos(angle);
            }
            i += 2;
        }
    }
    pe
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;

    fn const_2d(tape: &mut Tape, rows: &[&[f64]]) -> TensorId {
        tape.constant(Tensor::from_rows(rows).unwrap())
    }

    #[test]
    fn padding_mask_allows_only_valid_keys() {
        let masks = make_padding_mask(&[2], 3).unwrap();
        let m = &masks[0];
        for q in 0..3 {
            assert!(m.allows(q, 0));
            assert!(m.allows(q, 1));
            assert!(!m.allows(q, 2));
        }
    }

    #[test]
    fn causal_mask_is_lower_triangular() {
        let m = make_causal_mask(3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m.allows(i, j), j <= i, "({i},{j})");
            }
        }
    }

    #[test]
    fn causal_and_padding_compose_as_elementwise_and() {
        let causal = make_causal_mask(4).unwrap();
        let pad = Mask::padding(2, 4, 4).unwrap();
        let both = causal.and(&pad).unwrap();
        for q in 0..4 {
            for k in 0..4 {
                assert_eq!(both.allows(q, k), causal.allows(q, k) && pad.allows(q, k));
            }
        }
    }

    #[test]
    fn padding_mask_rejects_length_overflow() {
        assert!(make_padding_mask(&[4], 3).is_err());
    }

    #[test]
    fn identical_keys_give_uniform_weights_and_mean_value() {
        let mut tape = Tape::new();
        let q = const_2d(&mut tape, &[&[0.3, -0.2]]);
        let k = const_2d(&mut tape, &[&[1.0, 2.0], &[1.0, 2.0], &[1.0, 2.0]]);
        let v = const_2d(&mut tape, &[&[3.0, 0.0], &[0.0, 3.0], &[3.0, 3.0]]);
        let (out, w) = scaled_dot_attention(&mut tape, q, k, v, None).unwrap();
        for c in 0..3 {
            assert!((tape.value(w).at(0, c) - 1.0 / 3.0).abs() < 1e-12);
        }
        assert!((tape.value(out).at(0, 0) - 2.0).abs() < 1e-12);
        assert!((tape.value(out).at(0, 1) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn masked_key_weight_is_exactly_zero() {
        let mut tape = Tape::new();
        let mut rng = derive_rng(5, "attn", &[]);
        let q = tape.constant(Tensor::xavier(3, 4, &mut rng));
        let k = tape.constant(Tensor::xavier(5, 4, &mut rng));
        let v = tape.constant(Tensor::xavier(5, 4, &mut rng));
        let mask = Mask::padding(4, 3, 5).unwrap(); // key 4 forbidden
        let (_, w) = scaled_dot_attention(&mut tape, q, k, v, Some(&mask)).unwrap();
        for r in 0..3 {
            assert_eq!(tape.value(w).at(r, 4), 0.0);
            let sum: f64 = (0..5).map(|c| tape.value(w).at(r, c)).sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fully_masked_row_is_an_error() {
        let mut tape = Tape::new();
        let mut rng = derive_rng(6, "attn", &[]);
        let q = tape.constant(Tensor::xavier(2, 4, &mut rng));
        let k = tape.constant(Tensor::xavier(3, 4, &mut rng));
        let v = tape.constant(Tensor::xavier(3, 4, &mut rng));
        let mask = Mask::padding(0, 2, 3).unwrap();
        let err = scaled_dot_attention(&mut tape, q, k, v, Some(&mask)).unwrap_err();
        assert!(matches!(err, CoreError::FullyMaskedRow { row: 0 }));
    }

    /// Explicit exp-normalize loop, independent of the tape path.
    fn attention_oracle(q: &Tensor, k: &Tensor, v: &Tensor) -> Tensor {
        let (tq, d) = (q.shape()[0], q.shape()[1]);
        let (tk, dv) = (v.shape()[0], v.shape()[1]);
        let mut out = Tensor::zeros(&[tq, dv]);
        for i in 0..tq {
            let mut scores = vec![0.0; tk];
            for j in 0..tk {
                let mut s = 0.0;
                for c in 0..d {
                    s += q.at(i, c) * k.at(j, c);
                }
                scores[j] = s / crate::math::sqrt(d as f64);
            }
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| crate::math::exp(s - max)).collect();
            let z: f64 = exps.iter().sum();
            for c in 0..dv {
                let mut acc = 0.0;
                for j in 0..tk {
                    acc += exps[j] / z * v.at(j, c);
                }
                out.data_mut()[i * dv + c] = acc;
            }
        }
        out
    }

    #[test]
    fn random_attention_matches_loop_oracle() {
        let mut rng = derive_rng(7, "attn-oracle", &[]);
        let q = Tensor::xavier(3, 4, &mut rng);
        let k = Tensor::xavier(3, 4, &mut rng);
        let v = Tensor::xavier(3, 4, &mut rng);
        let expect = attention_oracle(&q, &k, &v);
        let mut tape = Tape::new();
        let (qi, ki, vi) = (tape.constant(q), tape.constant(k), tape.constant(v));
        let (out, _) = scaled_dot_attention(&mut tape, qi, ki, vi, None).unwrap();
        for (a, b) in tape.value(out).data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn single_head_mha_equals_sdpa_with_projections() {
        let cfg = AttentionConfig::new(6, 1).unwrap();
        let mut rng = derive_rng(8, "mha1", &[]);
        let params = MhaParams::init(6, &mut rng);
        let x = Tensor::xavier(4, 6, &mut rng);

        let mut tape = Tape::new();
        let bound = params.map(&mut |t: &Tensor| tape.param(t));
        let xi = tape.constant(x.clone());
        let got = multi_head_attention(&mut tape, xi, xi, &bound, &cfg, None).unwrap();

        let mut tape2 = Tape::new();
        let bound2 = params.map(&mut |t: &Tensor| tape2.param(t));
        let xi2 = tape2.constant(x);
        let q = tape2.linear(xi2, bound2.wq.w, bound2.wq.b).unwrap();
        let k = tape2.linear(xi2, bound2.wk.w, bound2.wk.b).unwrap();
        let v = tape2.linear(xi2, bound2.wv.w, bound2.wv.b).unwrap();
        let (o, _) = scaled_dot_attention(&mut tape2, q, k, v, None).unwrap();
        let expect = tape2.linear(o, bound2.wo.w, bound2.wo.b).unwrap();

        for (a, b) in tape
            .value(got)
            .data()
            .iter()
            .zip(tape2.value(expect).data())
        {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_kv_input_with_zero_biases_gives_zero_output() {
        let cfg = AttentionConfig::new(4, 2).unwrap();
        let mut rng = derive_rng(9, "mha0", &[]);
        let params = MhaParams::init(4, &mut rng); // biases init to zero
        let mut tape = Tape::new();
        let bound = params.map(&mut |t: &Tensor| tape.param(t));
        let xq = tape.constant(Tensor::xavier(3, 4, &mut rng));
        let xkv = tape.constant(Tensor::zeros(&[5, 4]));
        let out = multi_head_attention(&mut tape, xq, xkv, &bound, &cfg, None).unwrap();
        assert!(tape.value(out).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn two_head_mha_matches_per_head_loop_oracle() {
        let cfg = AttentionConfig::new(4, 2).unwrap();
        let mut rng = derive_rng(10, "mha2", &[]);
        let params = MhaParams::init(4, &mut rng);
        let x = Tensor::xavier(3, 4, &mut rng);

        let mut tape = Tape::new();
        let bound = params.map(&mut |t: &Tensor| tape.param(t));
        let xi = tape.constant(x.clone());
        let got = multi_head_attention(&mut tape, xi, xi, &bound, &cfg, None).unwrap();

        // Oracle: project with plain loops, run per-head attention_oracle,
        // concat, project out.
        let lin = |x: &Tensor, p: &LinearParams| {
            let (t, din) = (x.shape()[0], x.shape()[1]);
            let dout = p.w.shape()[1];
            let mut y = Tensor::zeros(&[t, dout]);
            for i in 0..t {
                for j in 0..dout {
                    let mut s = p.b.data()[j];
                    for c in 0..din {
                        s += x.at(i, c) * p.w.at(c, j);
                    }
                    y.data_mut()[i * dout + j] = s;
                }
            }
            y
        };
        let slice_cols = |x: &Tensor, start: usize, len: usize| {
            let t = x.shape()[0];
            let mut y = Tensor::zeros(&[t, len]);
            for i in 0..t {
                for j in 0..len {
                    y.data_mut()[i * len + j] = x.at(i, start + j);
                }
            }
            y
        };
        let q = lin(&x, &params.wq);
        let k = lin(&x, &params.wk);
        let v = lin(&x, &params.wv);
        let mut cat = Tensor::zeros(&[3, 4]);
        for h in 0..2 {
            let oh = attention_oracle(
                &slice_cols(&q, h * 2, 2),
                &slice_cols(&k, h * 2, 2),
                &slice_cols(&v, h * 2, 2),
            );
            for i in 0..3 {
                for j in 0..2 {
                    cat.data_mut()[i * 4 + h * 2 + j] = oh.at(i, j);
                }
            }
        }
        let expect = lin(&cat, &params.wo);
        for (a, b) in tape.value(got).data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mha_parameter_count_is_4d2_plus_4d() {
        let d = 12;
        let mut rng = derive_rng(11, "count", &[]);
        let params = MhaParams::init(d, &mut rng);
        let mut count = 0;
        params.visit("mha", &mut |_, t: &Tensor| count += t.numel());
        assert_eq!(count, 4 * d * d + 4 * d);
    }

    #[test]
    fn encoder_block_preserves_shape() {
        let cfg = AttentionConfig::new(8, 2).unwrap();
        let mut rng = derive_rng(12, "blk", &[]);
        let params = EncoderBlockParams::init(8, 16, &mut rng);
        for t in [1usize, 3, 7] {
            let mut tape = Tape::new();
            let bound = params.map(&mut |p: &Tensor| tape.param(p));
            let x = tape.constant(Tensor::xavier(t, 8, &mut rng));
            let y =
                encoder_block(&mut tape, x, &bound, &cfg, None, &mut ForwardMode::Eval).unwrap();
            assert_eq!(tape.shape(y), &[t, 8]);
        }
    }

    #[test]
    fn zero_weight_block_is_double_layer_norm_of_input() {
        let cfg = AttentionConfig::new(4, 2).unwrap();
        let mut rng = derive_rng(13, "blk0", &[]);
        let mut params = EncoderBlockParams::init(4, 8, &mut rng);
        // Zero every weight, keep gains at 1 / biases at 0.
        params.mha = MhaParams {
            wq: LinearParams {
                w: Tensor::zeros(&[4, 4]),
                b: Tensor::zeros(&[4]),
            },
            wk: LinearParams {
                w: Tensor::zeros(&[4, 4]),
                b: Tensor::zeros(&[4]),
            },
            wv: LinearParams {
                w: Tensor::zeros(&[4, 4]),
                b: Tensor::zeros(&[4]),
            },
            wo: LinearParams {
                w: Tensor::zeros(&[4, 4]),
                b: Tensor::zeros(&[4]),
            },
        };
        params.ffn = FfnParams {
            lin1: LinearParams {
                w: Tensor::zeros(&[4, 8]),
                b: Tensor::zeros(&[8]),
            },
            lin2: LinearParams {
                w: Tensor::zeros(&[8, 4]),
                b: Tensor::zeros(&[4]),
            },
        };
        let x = Tensor::from_rows(&[&[1.0, 2.0, 3.0, 4.0], &[-1.0, 0.5, 2.0, -3.0]]).unwrap();

        // Analytic double layer-norm (gain 1, bias 0).
        let ln = |row: &[f64]| {
            let d = row.len() as f64;
            let mean = row.iter().sum::<f64>() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let rstd = 1.0 / crate::math::sqrt(var + LN_EPS);
            row.iter().map(|v| (v - mean) * rstd).collect::<Vec<f64>>()
        };

        let mut tape = Tape::new();
        let bound = params.map(&mut |p: &Tensor| tape.param(p));
        let xi = tape.constant(x.clone());
        let y = encoder_block(&mut tape, xi, &bound, &cfg, None, &mut ForwardMode::Eval).unwrap();
        for r in 0..2 {
            let row: Vec<f64> = (0..4).map(|c| x.at(r, c)).collect();
            let expect = ln(&ln(&row));
            for c in 0..4 {
                assert!((tape.value(y).at(r, c) - expect[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn padding_invariance_of_encoder_block() {
        // Appending padded frames (with correct masks) must not change
        // outputs at the original positions.
        let cfg = AttentionConfig::new(8, 2).unwrap();
        let mut rng = derive_rng(14, "pad", &[]);
        let params = EncoderBlockParams::init(8, 16, &mut rng);
        let x_real = Tensor::xavier(4, 8, &mut rng);

        let mut tape1 = Tape::new();
        let b1 = params.map(&mut |p: &Tensor| tape1.param(p));
        let x1 = tape1.constant(x_real.clone());
        let y1 = encoder_block(&mut tape1, x1, &b1, &cfg, None, &mut ForwardMode::Eval).unwrap();

        let mut padded = Tensor::zeros(&[7, 8]);
        padded.data_mut()[..4 * 8].copy_from_slice(x_real.data());
        let mask = Mask::padding(4, 7, 7).unwrap();
        let mut tape2 = Tape::new();
        let b2 = params.map(&mut |p: &Tensor| tape2.param(p));
        let x2 = tape2.constant(padded);
        let y2 = encoder_block(
            &mut tape2,
            x2,
            &b2,
            &cfg,
            Some(&mask),
            &mut ForwardMode::Eval,
        )
        .unwrap();

        for r in 0..4 {
            for c in 0..8 {
                let diff = (tape1.value(y1).at(r, c) - tape2.value(y2).at(r, c)).abs();
                assert!(diff < 1e-6, "leak at ({r},{c}): {diff}");
            }
        }
    }

    #[test]
    fn positional_encoding_values() {
        let pe = positional_encoding(3, 4);
        assert_eq!(pe.at(0, 0), 0.0);
        assert_eq!(pe.at(0, 1), 1.0);
        assert!((pe.at(1, 0) - crate::math::sin(1.0)).abs() < 1e-15);
        assert!((pe.at(2, 2) - crate::math::sin(2.0 / 100.0)).abs() < 1e-15);
    }
}
