//! The nine model variants: {early, middle, late} fusion stage x
//! {concat, align, cross} fusion block, as encoder/decoder stacks over
//! the attention and fusion modules, plus a unimodal audio-only ablation.
//!
//! Stage depth rule: early-stage models run `n_premix_blocks` per modality
//! before the fusion block and `n_shared_blocks` on the fused stream;
//! middle/late-stage models have no shared stream, so each modality runs
//! `n_premix_blocks + ceil(n_shared_blocks / 2)` blocks, which keeps total
//! parameter counts of the three stages within a few percent of each
//! other (the shared blocks act on one stream, the per-modality ones on
//! two). Late-stage models skip the fusion concat + projection and hand
//! both streams to a dual-attention decoder.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::attention::{
    encoder_block, multi_head_attention, positional_encoding, AttentionConfig, EncoderBlockParams,
    ForwardMode, LinearParams, Mask, MhaParams, NormParams, LN_EPS,
};
use crate::corpus::{FeaturePair, EOS, PAD, SOS};
use crate::error::{CoreError, Result};
use crate::fusion::{enhance_streams, fuse, FusionBlockKind, FusionParams};
use crate::math;
use crate::rng::derive_rng;
use crate::tensor::{Tape, Tensor, TensorId};
use crate::train::label_smoothed_ce_sum;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FusionStage {
    Early,
    Middle,
    Late,
}

impl FusionStage {
    pub const ALL: [FusionStage; 3] = [FusionStage::Early, FusionStage::Middle, FusionStage::Late];

    pub fn as_str(&self) -> &'static str {
        match self {
            FusionStage::Early => "early",
            FusionStage::Middle => "middle",
            FusionStage::Late => "late",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "early" => Ok(FusionStage::Early),
            "middle" => Ok(FusionStage::Middle),
            "late" => Ok(FusionStage::Late),
            other => Err(CoreError::Config(format!(
                "unknown fusion stage {other:?}; expected one of early, middle, late"
            ))),
        }
    }
}

/// One of the nine model variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FusionSpec {
    pub stage: FusionStage,
    pub block: FusionBlockKind,
}

impl FusionSpec {
    pub fn new(stage: FusionStage, block: FusionBlockKind) -> Self {
        FusionSpec { stage, block }
    }

    /// All nine combinations, in (stage, block) order.
    pub fn all() -> Vec<FusionSpec> {
        let mut out = Vec::with_capacity(9);
        for stage in FusionStage::ALL {
            for block in FusionBlockKind::ALL {
                out.push(FusionSpec { stage, block });
            }
        }
        out
    }

    pub fn label(&self) -> String {
        format!("{}/{}", self.stage.as_str(), self.block.as_str())
    }
}

/// How the late-stage decoder combines its two cross-attention outputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DualCombine {
    /// Parallel sum before the residual add (default).
    Sum,
    /// Concatenate and project through an extra `[2d, d]` layer.
    ConcatFc,
}

impl DualCombine {
    pub fn as_str(&self) -> &'static str {
        match self {
            DualCombine::Sum => "sum",
            DualCombine::ConcatFc => "concat_fc",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(DualCombine::Sum),
            "concat_fc" => Ok(DualCombine::ConcatFc),
            other => Err(CoreError::Config(format!(
                "unknown dual_combine {other:?}; expected one of sum, concat_fc"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub attention: AttentionConfig,
    pub d_ff: usize,
    /// Per-modality encoder depth before the fusion block (early stage).
    pub n_premix_blocks: usize,
    /// Post-fusion depth on the fused stream (early stage only).
    pub n_shared_blocks: usize,
    pub n_decoder_blocks: usize,
    pub vocab_size: usize,
    pub d_audio_in: usize,
    pub d_video_in: usize,
    pub dual_combine: DualCombine,
    /// Unimodal ablation: encode only the audio stream.
    pub audio_only: bool,
    /// Late-stage ablation: decoder attends only over the enhanced audio
    /// memory (single attention), not both streams.
    pub late_audio_only: bool,
}

impl ModelConfig {
    /// Desk-scale defaults: trains in minutes while preserving the
    /// divisibility and stage-parity structure of the reference scale.
    pub fn desk_default(vocab_size: usize) -> Self {
        ModelConfig {
            attention: AttentionConfig {
                d_model: 64,
                n_heads: 4,
            },
            d_ff: 256,
            n_premix_blocks: 1,
            n_shared_blocks: 2,
            n_decoder_blocks: 2,
            vocab_size,
            d_audio_in: 320,
            d_video_in: 512,
            dual_combine: DualCombine::Sum,
            audio_only: false,
            late_audio_only: false,
        }
    }

    /// Reference scale: d_model 512, 16 heads, FFN 512-2048-512, three
    /// pre-fusion blocks per modality.
    pub fn reference_scale(vocab_size: usize) -> Self {
        ModelConfig {
            attention: AttentionConfig {
                d_model: 512,
                n_heads: 16,
            },
            d_ff: 2048,
            n_premix_blocks: 3,
            n_shared_blocks: 3,
            n_decoder_blocks: 6,
            vocab_size,
            d_audio_in: 320,
            d_video_in: 512,
            dual_combine: DualCombine::Sum,
            audio_only: false,
            late_audio_only: false,
        }
    }

    pub fn d_model(&self) -> usize {
        self.attention.d_model
    }

    pub fn validate(&self) -> Result<()> {
        self.attention.validate()?;
        if self.vocab_size < 4 {
            return Err(CoreError::Config(format!(
                "vocab_size {} too small; needs pad/sos/eos plus content",
                self.vocab_size
            )));
        }
        if self.n_decoder_blocks == 0 {
            return Err(CoreError::Config("n_decoder_blocks must be >= 1".into()));
        }
        if self.d_ff == 0 || self.d_audio_in == 0 || self.d_video_in == 0 {
            return Err(CoreError::Config(
                "d_ff and input dims must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Per-modality encoder depth for a stage.
    pub fn modality_depth(&self, stage: FusionStage) -> usize {
        match stage {
            FusionStage::Early => self.n_premix_blocks,
            FusionStage::Middle | FusionStage::Late => {
                self.n_premix_blocks + self.n_shared_blocks.div_ceil(2)
            }
        }
    }

    /// Post-fusion shared depth for a stage.
    pub fn shared_depth(&self, stage: FusionStage) -> usize {
        match stage {
            FusionStage::Early => self.n_shared_blocks,
            FusionStage::Middle | FusionStage::Late => 0,
        }
    }
}

/// Post-norm decoder block: causal self-attention, cross-attention over
/// the memory (two of them for late fusion), feed-forward.
#[derive(Clone, Debug)]
pub struct DecoderBlockParams<T = Tensor> {
    pub self_mha: MhaParams<T>,
    pub ln1: NormParams<T>,
    pub cross_a: MhaParams<T>,
    pub cross_v: Option<MhaParams<T>>,
    pub cross_fc: Option<LinearParams<T>>,
    pub ln2: NormParams<T>,
    pub ffn: crate::attention::FfnParams<T>,
    pub ln3: NormParams<T>,
}

impl DecoderBlockParams<Tensor> {
    fn init(cfg: &ModelConfig, dual: bool, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.d_model();
        DecoderBlockParams {
            self_mha: MhaParams::init(d, rng),
            ln1: NormParams::init(d),
            cross_a: MhaParams::init(d, rng),
            cross_v: dual.then(|| MhaParams::init(d, rng)),
            cross_fc: (dual && cfg.dual_combine == DualCombine::ConcatFc)
                .then(|| LinearParams::init(2 * d, d, rng)),
            ln2: NormParams::init(d),
            ffn: crate::attention::FfnParams::init(d, cfg.d_ff, rng),
            ln3: NormParams::init(d),
        }
    }
}

impl<T> DecoderBlockParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> DecoderBlockParams<U> {
        DecoderBlockParams {
            self_mha: self.self_mha.map(f),
            ln1: self.ln1.map(f),
            cross_a: self.cross_a.map(f),
            cross_v: self.cross_v.as_ref().map(|p| p.map(f)),
            cross_fc: self.cross_fc.as_ref().map(|p| p.map(f)),
            ln2: self.ln2.map(f),
            ffn: self.ffn.map(f),
            ln3: self.ln3.map(f),
        }
    }

    pub fn visit<'a>(&'a self, path: &str, f: &mut impl FnMut(String, &'a T)) {
        self.self_mha.visit(&format!("{path}.self_mha"), f);
        self.ln1.visit(&format!("{path}.ln1"), f);
        self.cross_a.visit(&format!("{path}.cross_a"), f);
        if let Some(p) = &self.cross_v {
            p.visit(&format!("{path}.cross_v"), f);
        }
        if let Some(p) = &self.cross_fc {
            p.visit(&format!("{path}.cross_fc"), f);
        }
        self.ln2.visit(&format!("{path}.ln2"), f);
        self.ffn.visit(&format!("{path}.ffn"), f);
        self.ln3.visit(&format!("{path}.ln3"), f);
    }

    pub fn visit_mut<'a>(&'a mut self, path: &str, f: &mut impl FnMut(String, &'a mut T)) {
        self.self_mha.visit_mut(&format!("{path}.self_mha"), f);
        self.ln1.visit_mut(&format!("{path}.ln1"), f);
        self.cross_a.visit_mut(&format!("{path}.cross_a"), f);
        if let Some(p) = &mut self.cross_v {
            p.visit_mut(&format!("{path}.cross_v"), f);
        }
        if let Some(p) = &mut self.cross_fc {
            p.visit_mut(&format!("{path}.cross_fc"), f);
        }
        self.ln2.visit_mut(&format!("{path}.ln2"), f);
        self.ffn.visit_mut(&format!("{path}.ffn"), f);
        self.ln3.visit_mut(&format!("{path}.ln3"), f);
    }
}

/// The complete learnable parameter set of one model variant; every tensor
/// is addressable by a unique layer path via `visit`.
#[derive(Clone, Debug)]
pub struct ModelParams<T = Tensor> {
    pub audio_proj: LinearParams<T>,
    pub video_proj: Option<LinearParams<T>>,
    pub audio_enc: Vec<EncoderBlockParams<T>>,
    pub video_enc: Vec<EncoderBlockParams<T>>,
    pub shared_enc: Vec<EncoderBlockParams<T>>,
    pub fusion: Option<FusionParams<T>>,
    pub decoder: Vec<DecoderBlockParams<T>>,
    pub embedding: T,
    pub out_proj: LinearParams<T>,
}

impl<T> ModelParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> ModelParams<U> {
        ModelParams {
            audio_proj: self.audio_proj.map(f),
            video_proj: self.video_proj.as_ref().map(|p| p.map(f)),
            audio_enc: self.audio_enc.iter().map(|b| b.map(f)).collect(),
            video_enc: self.video_enc.iter().map(|b| b.map(f)).collect(),
            shared_enc: self.shared_enc.iter().map(|b| b.map(f)).collect(),
            fusion: self.fusion.as_ref().map(|p| p.map(f)),
            decoder: self.decoder.iter().map(|b| b.map(f)).collect(),
            embedding: f(&self.embedding),
            out_proj: self.out_proj.map(f),
        }
    }

    pub fn visit<'a>(&'a self, f: &mut impl FnMut(String, &'a T)) {
        self.audio_proj.visit("audio_proj", f);
        if let Some(p) = &self.video_proj {
            p.visit("video_proj", f);
        }
        for (i, b) in self.audio_enc.iter().enumerate() {
            b.visit(&format!("audio_enc.{i}"), f);
        }
        for (i, b) in self.video_enc.iter().enumerate() {
            b.visit(&format!("video_enc.{i}"), f);
        }
        for (i, b) in self.shared_enc.iter().enumerate() {
            b.visit(&format!("shared_enc.{i}"), f);
        }
        if let Some(p) = &self.fusion {
            p.visit("fusion", f);
        }
        for (i, b) in self.decoder.iter().enumerate() {
            b.visit(&format!("dec.{i}"), f);
        }
        f(String::from("embedding"), &self.embedding);
        self.out_proj.visit("out_proj", f);
    }

    pub fn visit_mut<'a>(&'a mut self, f: &mut impl FnMut(String, &'a mut T)) {
        self.audio_proj.visit_mut("audio_proj", f);
        if let Some(p) = &mut self.video_proj {
            p.visit_mut("video_proj", f);
        }
        for (i, b) in self.audio_enc.iter_mut().enumerate() {
            b.visit_mut(&format!("audio_enc.{i}"), f);
        }
        for (i, b) in self.video_enc.iter_mut().enumerate() {
            b.visit_mut(&format!("video_enc.{i}"), f);
        }
        for (i, b) in self.shared_enc.iter_mut().enumerate() {
            b.visit_mut(&format!("shared_enc.{i}"), f);
        }
        if let Some(p) = &mut self.fusion {
            p.visit_mut("fusion", f);
        }
        for (i, b) in self.decoder.iter_mut().enumerate() {
            b.visit_mut(&format!("dec.{i}"), f);
        }
        f(String::from("embedding"), &mut self.embedding);
        self.out_proj.visit_mut("out_proj", f);
    }
}

impl ModelParams<Tensor> {
    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, t| n += t.numel());
        n
    }

    pub fn flat(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        self.visit(&mut |path, t| out.push((path, t)));
        out
    }

    pub fn flat_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        self.visit_mut(&mut |path, t| out.push((path, t)));
        out
    }
}

impl ModelParams<TensorId> {
    /// Tape ids in canonical visit order.
    pub fn flat_ids(&self) -> Vec<TensorId> {
        let mut out = Vec::new();
        self.visit(&mut |_, id| out.push(*id));
        out
    }
}

/// A model variant: its spec, configuration and parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub spec: FusionSpec,
    pub config: ModelConfig,
    pub params: ModelParams<Tensor>,
}

impl Model {
    /// Fresh Xavier-initialized parameters, deterministic in `seed`.
    pub fn init(spec: FusionSpec, config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = derive_rng(seed, "model-init", &[]);
        let d = config.d_model();
        let enc_depth = config.modality_depth(spec.stage);
        let shared_depth = config.shared_depth(spec.stage);
        let dual = spec.stage == FusionStage::Late && !config.audio_only && !config.late_audio_only;

        let params = if config.audio_only {
            // Unimodal ablation: one full-depth audio stack, no fusion.
            let depth = config.n_premix_blocks + config.n_shared_blocks;
            ModelParams {
                audio_proj: LinearParams::init(config.d_audio_in, d, &mut rng),
                video_proj: None,
                audio_enc: (0..depth)
                    .map(|_| EncoderBlockParams::init(d, config.d_ff, &mut rng))
                    .collect(),
                video_enc: Vec::new(),
                shared_enc: Vec::new(),
                fusion: None,
                decoder: (0..config.n_decoder_blocks)
                    .map(|_| DecoderBlockParams::init(&config, false, &mut rng))
                    .collect(),
                embedding: Tensor::xavier(config.vocab_size, d, &mut rng),
                out_proj: LinearParams::init(d, config.vocab_size, &mut rng),
            }
        } else {
            let with_fc = spec.stage != FusionStage::Late;
            ModelParams {
                audio_proj: LinearParams::init(config.d_audio_in, d, &mut rng),
                video_proj: Some(LinearParams::init(config.d_video_in, d, &mut rng)),
                audio_enc: (0..enc_depth)
                    .map(|_| EncoderBlockParams::init(d, config.d_ff, &mut rng))
                    .collect(),
                video_enc: (0..enc_depth)
                    .map(|_| EncoderBlockParams::init(d, config.d_ff, &mut rng))
                    .collect(),
                shared_enc: (0..shared_depth)
                    .map(|_| EncoderBlockParams::init(d, config.d_ff, &mut rng))
                    .collect(),
                fusion: Some(FusionParams::init(spec.block, d, with_fc, &mut rng)),
                decoder: (0..config.n_decoder_blocks)
                    .map(|_| DecoderBlockParams::init(&config, dual, &mut rng))
                    .collect(),
                embedding: Tensor::xavier(config.vocab_size, d, &mut rng),
                out_proj: LinearParams::init(d, config.vocab_size, &mut rng),
            }
        };
        Ok(Model {
            spec,
            config,
            params,
        })
    }

    /// Registers every parameter on the tape as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape) -> ModelParams<TensorId> {
        self.params.map(&mut |t: &Tensor| tape.param(t))
    }

    pub fn variant_label(&self) -> String {
        if self.config.audio_only {
            String::from("audio-only")
        } else {
            self.spec.label()
        }
    }
}

/// Encoder output handed to the decoder.
pub enum Memory {
    Single {
        mem: TensorId,
        valid_len: usize,
    },
    Dual {
        audio: TensorId,
        video: TensorId,
        valid_len: usize,
    },
}

impl Memory {
    pub fn valid_len(&self) -> usize {
        match self {
            Memory::Single { valid_len, .. } | Memory::Dual { valid_len, .. } => *valid_len,
        }
    }
}

/// Off-tape snapshot of a memory, reusable across decode steps.
#[derive(Clone, Debug)]
pub enum MemoryValue {
    Single {
        mem: Tensor,
        valid_len: usize,
    },
    Dual {
        audio: Tensor,
        video: Tensor,
        valid_len: usize,
    },
}

impl MemoryValue {
    pub fn from_tape(tape: &Tape, mem: &Memory) -> Self {
        match mem {
            Memory::Single { mem, valid_len } => MemoryValue::Single {
                mem: tape.value(*mem).clone(),
                valid_len: *valid_len,
            },
            Memory::Dual {
                audio,
                video,
                valid_len,
            } => MemoryValue::Dual {
                audio: tape.value(*audio).clone(),
                video: tape.value(*video).clone(),
                valid_len: *valid_len,
            },
        }
    }

    pub fn onto_tape(&self, tape: &mut Tape) -> Memory {
        match self {
            MemoryValue::Single { mem, valid_len } => Memory::Single {
                mem: tape.constant(mem.clone()),
                valid_len: *valid_len,
            },
            MemoryValue::Dual {
                audio,
                video,
                valid_len,
            } => Memory::Dual {
                audio: tape.constant(audio.clone()),
                video: tape.constant(video.clone()),
                valid_len: *valid_len,
            },
        }
    }
}

fn project_with_positions(
    tape: &mut Tape,
    feats: TensorId,
    proj: &LinearParams<TensorId>,
) -> Result<TensorId> {
    let x = tape.linear(feats, proj.w, proj.b)?;
    let (t, d) = {
        let s = tape.shape(x);
        (s[0], s[1])
    };
    let pe = tape.constant(positional_encoding(t, d));
    tape.add(x, pe)
}

fn run_blocks(
    tape: &mut Tape,
    mut x: TensorId,
    blocks: &[EncoderBlockParams<TensorId>],
    cfg: &AttentionConfig,
    mask: Option<&Mask>,
    mode: &mut ForwardMode,
) -> Result<TensorId> {
    for b in blocks {
        x = encoder_block(tape, x, b, cfg, mask, mode)?;
    }
    Ok(x)
}

/// Runs the stage-appropriate encoder over one sample's padded features.
/// `valid_len` is the number of real (non-padded) frames.
#[allow(clippy::too_many_arguments)]
pub fn encode(
    tape: &mut Tape,
    bound: &ModelParams<TensorId>,
    spec: &FusionSpec,
    config: &ModelConfig,
    audio_feats: TensorId,
    video_feats: Option<TensorId>,
    valid_len: usize,
    mode: &mut ForwardMode,
) -> Result<Memory> {
    let t = tape.shape(audio_feats)[0];
    if valid_len == 0 || valid_len > t {
        return Err(CoreError::dim(
            "encode",
            format!("valid_len {valid_len} vs {t} frames"),
        ));
    }
    let attn = &config.attention;
    let pad = Mask::padding(valid_len, t, t)?;
    let mask = Some(&pad);

    if config.audio_only {
        let a = project_with_positions(tape, audio_feats, &bound.audio_proj)?;
        let mem = run_blocks(tape, a, &bound.audio_enc, attn, mask, mode)?;
        return Ok(Memory::Single { mem, valid_len });
    }

    let video_feats =
        video_feats.ok_or_else(|| CoreError::Usage("encode needs video features".into()))?;
    if tape.shape(video_feats)[0] != t {
        return Err(CoreError::Alignment(format!(
            "audio has {t} frames, video has {}",
            tape.shape(video_feats)[0]
        )));
    }
    let video_proj = bound
        .video_proj
        .as_ref()
        .ok_or_else(|| CoreError::State("missing video_proj".into()))?;
    let fusion = bound
        .fusion
        .as_ref()
        .ok_or_else(|| CoreError::State("missing fusion params".into()))?;

    let a0 = project_with_positions(tape, audio_feats, &bound.audio_proj)?;
    let v0 = project_with_positions(tape, video_feats, video_proj)?;
    let a = run_blocks(tape, a0, &bound.audio_enc, attn, mask, mode)?;
    let v = run_blocks(tape, v0, &bound.video_enc, attn, mask, mode)?;

    match spec.stage {
        FusionStage::Early | FusionStage::Middle => {
            let fused = fuse(tape, spec.block, a, v, fusion, attn, mask)?;
            let mem = run_blocks(tape, fused, &bound.shared_enc, attn, mask, mode)?;
            Ok(Memory::Single { mem, valid_len })
        }
        FusionStage::Late => {
            let (mem_a, mem_v) = enhance_streams(tape, spec.block, a, v, fusion, attn, mask)?;
            if config.late_audio_only {
                Ok(Memory::Single {
                    mem: mem_a,
                    valid_len,
                })
            } else {
                Ok(Memory::Dual {
                    audio: mem_a,
                    video: mem_v,
                    valid_len,
                })
            }
        }
    }
}

/// Early-fusion encoder; memory is the shared post-fusion stream.
#[allow(clippy::too_many_arguments)]
pub fn encode_early(
    tape: &mut Tape,
    bound: &ModelParams<TensorId>,
    block: FusionBlockKind,
    config: &ModelConfig,
    audio_feats: TensorId,
    video_feats: TensorId,
    valid_len: usize,
    mode: &mut ForwardMode,
) -> Result<Memory> {
    let spec = FusionSpec::new(FusionStage::Early, block);
    encode(
        tape,
        bound,
        &spec,
        config,
        audio_feats,
        Some(video_feats),
        valid_len,
        mode,
    )
}

/// Middle-fusion encoder; fusion sits on top of the separate stacks.
#[allow(clippy::too_many_arguments)]
pub fn encode_middle(
    tape: &mut Tape,
    bound: &ModelParams<TensorId>,
    block: FusionBlockKind,
    config: &ModelConfig,
    audio_feats: TensorId,
    video_feats: TensorId,
    valid_len: usize,
    mode: &mut ForwardMode,
) -> Result<Memory> {
    let spec = FusionSpec::new(FusionStage::Middle, block);
    encode(
        tape,
        bound,
        &spec,
        config,
        audio_feats,
        Some(video_feats),
        valid_len,
        mode,
    )
}

/// Late-fusion encoder; returns both (possibly enhanced) memories.
#[allow(clippy::too_many_arguments)]
pub fn encode_late(
    tape: &mut Tape,
    bound: &ModelParams<TensorId>,
    block: FusionBlockKind,
    config: &ModelConfig,
    audio_feats: TensorId,
    video_feats: TensorId,
    valid_len: usize,
    mode: &mut ForwardMode,
) -> Result<Memory> {
    let spec = FusionSpec::new(FusionStage::Late, block);
    encode(
        tape,
        bound,
        &spec,
        config,
        audio_feats,
        Some(video_feats),
        valid_len,
        mode,
    )
}

pub struct DecodeOut {
    pub logits: TensorId,
    /// Token embeddings after scaling and positional encoding — the
    /// decoder stack's input, exposed for causality probes.
    pub embedded: TensorId,
}

/// Teacher-forced decoder pass over the full target prefix sequence.
/// `tokens` must begin with start-of-sequence.
pub fn decode_forward(
    tape: &mut Tape,
    bound: &ModelParams<TensorId>,
    config: &ModelConfig,
    memory: &Memory,
    tokens: &[usize],
    mode: &mut ForwardMode,
) -> Result<DecodeOut> {
    if tokens.is_empty() {
        return Err(CoreError::Usage(
            "decode_forward needs a nonempty target sequence".into(),
        ));
    }
    if tokens[0] != SOS {
        return Err(CoreError::Usage(format!(
            "target tokens must begin with start-of-sequence ({SOS}), got {}",
            tokens[0]
        )));
    }
    let attn = &config.attention;
    let d = config.d_model();
    let t_y = tokens.len();

    let emb = tape.gather(bound.embedding, tokens)?;
    let emb = tape.scale(emb, math::sqrt(d as f64))?;
    let pe = tape.constant(positional_encoding(t_y, d));
    let mut x = tape.add(emb, pe)?;
    let embedded = x;

    let causal = Mask::causal(t_y);
    for block in &bound.decoder {
        let sa = multi_head_attention(tape, x, x, &block.self_mha, attn, Some(&causal))?;
        let sa = mode.apply_dropout(tape, sa)?;
        let r1 = tape.add(x, sa)?;
        x = tape.layer_norm(r1, block.ln1.gain, block.ln1.bias, LN_EPS)?;

        let cross = match memory {
            Memory::Single { mem, valid_len } => {
                let mask = Mask::padding(*valid_len, t_y, tape.shape(*mem)[0])?;
                multi_head_attention(tape, x, *mem, &block.cross_a, attn, Some(&mask))?
            }
            Memory::Dual {
                audio,
                video,
                valid_len,
            } => {
                let mask_a = Mask::padding(*valid_len, t_y, tape.shape(*audio)[0])?;
                let mask_v = Mask::padding(*valid_len, t_y, tape.shape(*video)[0])?;
                let ca =
                    multi_head_attention(tape, x, *audio, &block.cross_a, attn, Some(&mask_a))?;
                let cross_v = block
                    .cross_v
                    .as_ref()
                    .ok_or_else(|| CoreError::State("dual memory but no cross_v params".into()))?;
                let cv = multi_head_attention(tape, x, *video, cross_v, attn, Some(&mask_v))?;
                match config.dual_combine {
                    DualCombine::Sum => tape.add(ca, cv)?,
                    DualCombine::ConcatFc => {
                        let fc = block.cross_fc.as_ref().ok_or_else(|| {
                            CoreError::State("concat_fc combine but no cross_fc params".into())
                        })?;
                        let cat = tape.concat_last_axis(ca, cv)?;
                        tape.linear(cat, fc.w, fc.b)?
                    }
                }
            }
        };
        let cross = mode.apply_dropout(tape, cross)?;
        let r2 = tape.add(x, cross)?;
        x = tape.layer_norm(r2, block.ln2.gain, block.ln2.bias, LN_EPS)?;

        let h = tape.linear(x, block.ffn.lin1.w, block.ffn.lin1.b)?;
        let h = tape.relu(h)?;
        let ff = tape.linear(h, block.ffn.lin2.w, block.ffn.lin2.b)?;
        let ff = mode.apply_dropout(tape, ff)?;
        let r3 = tape.add(x, ff)?;
        x = tape.layer_norm(r3, block.ln3.gain, block.ln3.bias, LN_EPS)?;
    }
    let logits = tape.linear(x, bound.out_proj.w, bound.out_proj.b)?;
    Ok(DecodeOut { logits, embedded })
}

pub struct BatchLoss {
    pub loss: TensorId,
    /// Total non-padded target positions across the batch.
    pub positions: usize,
}

/// Teacher-forced batch loss: mean label-smoothed cross-entropy over all
/// non-padded target positions. Samples are padded to the batch maxima;
/// masks keep the padding out of every result.
#[allow(clippy::too_many_arguments)]
pub fn forward_loss(
    tape: &mut Tape,
    bound: &ModelParams<TensorId>,
    spec: &FusionSpec,
    config: &ModelConfig,
    batch: &[&FeaturePair],
    label_smoothing: f64,
    mode: &mut ForwardMode,
) -> Result<BatchLoss> {
    if batch.is_empty() {
        return Err(CoreError::Usage(
            "forward_loss needs a nonempty batch".into(),
        ));
    }
    let t_max = batch.iter().map(|s| s.audio.shape()[0]).max().unwrap();
    let ty_max = batch.iter().map(|s| s.targets.len() + 1).max().unwrap();

    let mut total: Option<TensorId> = None;
    let mut positions = 0usize;
    for sample in batch {
        let t = sample.audio.shape()[0];
        let audio = tape.constant(pad_rows(&sample.audio, t_max));
        let video = if config.audio_only {
            None
        } else {
            Some(tape.constant(pad_rows(&sample.video, t_max)))
        };
        let memory = encode(tape, bound, spec, config, audio, video, t, mode)?;

        // Teacher forcing: input [sos, y..], target [y.., eos], padded.
        let n = sample.targets.len();
        let mut input = vec![SOS];
        input.extend_from_slice(&sample.targets);
        input.resize(ty_max, PAD);
        let mut target = sample.targets.clone();
        target.push(EOS);
        target.resize(ty_max, PAD);
        let valid = n + 1;

        let out = decode_forward(tape, bound, config, &memory, &input, mode)?;
        let (sum, _) = label_smoothed_ce_sum(tape, out.logits, &target, label_smoothing, valid)?;
        positions += valid;
        total = Some(match total {
            None => sum,
            Some(acc) => tape.add(acc, sum)?,
        });
    }
    let loss = tape.scale(total.unwrap(), 1.0 / positions as f64)?;
    Ok(BatchLoss { loss, positions })
}

/// Zero-pads a `[t, d]` tensor to `[t_max, d]`.
pub fn pad_rows(x: &Tensor, t_max: usize) -> Tensor {
    let (t, d) = (x.shape()[0], x.shape()[1]);
    if t == t_max {
        return x.clone();
    }
    let mut out = Tensor::zeros(&[t_max, d]);
    out.data_mut()[..t * d].copy_from_slice(x.data());
    out
}
