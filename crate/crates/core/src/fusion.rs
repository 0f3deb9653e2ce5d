//! Attentive audio-visual fusion blocks.
//!
//! Three ways to merge the time-aligned audio and video streams into one
//! `d_model`-wide representation:
//!
//! * `Concat` — concatenate and project; no cross-modal attention.
//! * `Align` — one-way: audio queries attend over video keys/values and
//!   the attended video is residually added to the audio before the
//!   concat + projection.
//! * `Cross` — two-way: each modality attends over the other through its
//!   own cross-attention, symmetrically, before the concat + projection.
//!
//! The block applies no internal layer norm or dropout; normalization
//! resumes in the encoder blocks that follow. For late-stage models the
//! enhanced streams are exposed without the concat + projection (see
//! [`enhance_streams`]).

use alloc::format;
use alloc::string::String;

use rand_chacha::ChaCha8Rng;

use crate::attention::{multi_head_attention, AttentionConfig, LinearParams, Mask, MhaParams};
use crate::error::{CoreError, Result};
use crate::tensor::{Tape, Tensor, TensorId};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FusionBlockKind {
    Concat,
    Align,
    Cross,
}

impl FusionBlockKind {
    pub const ALL: [FusionBlockKind; 3] = [
        FusionBlockKind::Concat,
        FusionBlockKind::Align,
        FusionBlockKind::Cross,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            FusionBlockKind::Concat => "concat",
            FusionBlockKind::Align => "align",
            FusionBlockKind::Cross => "cross",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "concat" => Ok(FusionBlockKind::Concat),
            "align" => Ok(FusionBlockKind::Align),
            "cross" => Ok(FusionBlockKind::Cross),
            other => Err(CoreError::Config(format!(
                "unknown fusion block {other:?}; expected one of concat, align, cross"
            ))),
        }
    }
}

/// Parameters of one fusion block. Which pieces are present depends on the
/// block kind and on whether the concat + projection applies (it does not
/// for late-stage models, whose decoder consumes both streams).
#[derive(Clone, Debug)]
pub struct FusionParams<T = Tensor> {
    /// Cross-MHA with audio as queries (Align, Cross).
    pub audio_mha: Option<MhaParams<T>>,
    /// Cross-MHA with video as queries (Cross only).
    pub video_mha: Option<MhaParams<T>>,
    /// Post-concat projection `[2*d_model, d_model]` + bias.
    pub fc: Option<LinearParams<T>>,
}

impl FusionParams<Tensor> {
    pub fn init(
        kind: FusionBlockKind,
        d_model: usize,
        with_fc: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let audio_mha = match kind {
            FusionBlockKind::Concat => None,
            FusionBlockKind::Align | FusionBlockKind::Cross => Some(MhaParams::init(d_model, rng)),
        };
        let video_mha = match kind {
            FusionBlockKind::Cross => Some(MhaParams::init(d_model, rng)),
            _ => None,
        };
        let fc = with_fc.then(|| LinearParams::init(2 * d_model, d_model, rng));
        FusionParams {
            audio_mha,
            video_mha,
            fc,
        }
    }
}

impl<T> FusionParams<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(&T) -> U) -> FusionParams<U> {
        FusionParams {
            audio_mha: self.audio_mha.as_ref().map(|p| p.map(f)),
            video_mha: self.video_mha.as_ref().map(|p| p.map(f)),
            fc: self.fc.as_ref().map(|p| p.map(f)),
        }
    }

    pub fn visit<'a>(&'a self, path: &str, f: &mut impl FnMut(String, &'a T)) {
        if let Some(p) = &self.audio_mha {
            p.visit(&format!("{path}.audio_mha"), f);
        }
        if let Some(p) = &self.video_mha {
            p.visit(&format!("{path}.video_mha"), f);
        }
        if let Some(p) = &self.fc {
            p.visit(&format!("{path}.fc"), f);
        }
    }

    pub fn visit_mut<'a>(&'a mut self, path: &str, f: &mut impl FnMut(String, &'a mut T)) {
        if let Some(p) = &mut self.audio_mha {
            p.visit_mut(&format!("{path}.audio_mha"), f);
        }
        if let Some(p) = &mut self.video_mha {
            p.visit_mut(&format!("{path}.video_mha"), f);
        }
        if let Some(p) = &mut self.fc {
            p.visit_mut(&format!("{path}.fc"), f);
        }
    }
}

fn check_aligned(tape: &Tape, a: TensorId, v: TensorId) -> Result<()> {
    let (sa, sv) = (tape.shape(a), tape.shape(v));
    if sa.len() != 2 || sv.len() != 2 || sa[0] != sv[0] {
        return Err(CoreError::Alignment(format!(
            "audio {sa:?} and video {sv:?} are not time-aligned"
        )));
    }
    Ok(())
}

fn missing(piece: &'static str) -> CoreError {
    CoreError::State(format!("fusion params missing {piece}"))
}

/// Concatenation fusion: `linear(concat(a, v))`, no cross-modal attention.
pub fn av_concat(
    tape: &mut Tape,
    a: TensorId,
    v: TensorId,
    params: &FusionParams<TensorId>,
) -> Result<TensorId> {
    check_aligned(tape, a, v)?;
    let fc = params.fc.as_ref().ok_or_else(|| missing("fc"))?;
    let cat = tape.concat_last_axis(a, v)?;
    tape.linear(cat, fc.w, fc.b)
}

/// One-way fusion: attended video is residually added to the audio, then
/// the enhanced audio is concatenated with the raw video and projected.
pub fn av_align(
    tape: &mut Tape,
    a: TensorId,
    v: TensorId,
    params: &FusionParams<TensorId>,
    cfg: &AttentionConfig,
    pad_mask: Option<&Mask>,
) -> Result<TensorId> {
    check_aligned(tape, a, v)?;
    let fc = params.fc.as_ref().ok_or_else(|| missing("fc"))?;
    let a_enh = align_enhance(tape, a, v, params, cfg, pad_mask)?;
    let cat = tape.concat_last_axis(a_enh, v)?;
    tape.linear(cat, fc.w, fc.b)
}

/// Two-way fusion: both streams are enhanced by attending over the other,
/// then concatenated and projected.
pub fn av_cross(
    tape: &mut Tape,
    a: TensorId,
    v: TensorId,
    params: &FusionParams<TensorId>,
    cfg: &AttentionConfig,
    pad_mask: Option<&Mask>,
) -> Result<TensorId> {
    check_aligned(tape, a, v)?;
    let fc = params.fc.as_ref().ok_or_else(|| missing("fc"))?;
    let (a_enh, v_enh) = cross_enhance(tape, a, v, params, cfg, pad_mask)?;
    let cat = tape.concat_last_axis(a_enh, v_enh)?;
    tape.linear(cat, fc.w, fc.b)
}

/// Runs the chosen block's concat + projection form.
pub fn fuse(
    tape: &mut Tape,
    kind: FusionBlockKind,
    a: TensorId,
    v: TensorId,
    params: &FusionParams<TensorId>,
    cfg: &AttentionConfig,
    pad_mask: Option<&Mask>,
) -> Result<TensorId> {
    match kind {
        FusionBlockKind::Concat => av_concat(tape, a, v, params),
        FusionBlockKind::Align => av_align(tape, a, v, params, cfg, pad_mask),
        FusionBlockKind::Cross => av_cross(tape, a, v, params, cfg, pad_mask),
    }
}

/// `a + MHA(Q<-a, K/V<-v)` — the pre-concat enhanced audio stream.
pub fn align_enhance(
    tape: &mut Tape,
    a: TensorId,
    v: TensorId,
    params: &FusionParams<TensorId>,
    cfg: &AttentionConfig,
    pad_mask: Option<&Mask>,
) -> Result<TensorId> {
    let mha = params
        .audio_mha
        .as_ref()
        .ok_or_else(|| missing("audio_mha"))?;
    let attended = multi_head_attention(tape, a, v, mha, cfg, pad_mask)?;
    tape.add(a, attended)
}

/// Both enhanced streams of the two-way block; the video side mirrors the
/// audio side (residual add, then whatever follows).
pub fn cross_enhance(
    tape: &mut Tape,
    a: TensorId,
    v: TensorId,
    params: &FusionParams<TensorId>,
    cfg: &AttentionConfig,
    pad_mask: Option<&Mask>,
) -> Result<(TensorId, TensorId)> {
    let a_mha = params
        .audio_mha
        .as_ref()
        .ok_or_else(|| missing("audio_mha"))?;
    let v_mha = params
        .video_mha
        .as_ref()
        .ok_or_else(|| missing("video_mha"))?;
    let a_att = multi_head_attention(tape, a, v, a_mha, cfg, pad_mask)?;
    let a_enh = tape.add(a, a_att)?;
    let v_att = multi_head_attention(tape, v, a, v_mha, cfg, pad_mask)?;
    let v_enh = tape.add(v, v_att)?;
    Ok((a_enh, v_enh))
}

/// The per-stream memories a late-fusion encoder exposes to its
/// dual-attention decoder: raw streams for `Concat`, enhanced streams for
/// `Align` (audio side only) and `Cross` (both sides).
pub fn enhance_streams(
    tape: &mut Tape,
    kind: FusionBlockKind,
    a: TensorId,
    v: TensorId,
    params: &FusionParams<TensorId>,
    cfg: &AttentionConfig,
    pad_mask: Option<&Mask>,
) -> Result<(TensorId, TensorId)> {
    check_aligned(tape, a, v)?;
    match kind {
        FusionBlockKind::Concat => Ok((a, v)),
        FusionBlockKind::Align => {
            let a_enh = align_enhance(tape, a, v, params, cfg, pad_mask)?;
            Ok((a_enh, v))
        }
        FusionBlockKind::Cross => cross_enhance(tape, a, v, params, cfg, pad_mask),
    }
}
