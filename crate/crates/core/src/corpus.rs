//! Synthetic paired audio-visual corpus.
//!
//! Each sample is a random token sequence rendered into two partially
//! redundant modalities: the audio is a chain of per-token signature tone
//! pairs (160 ms each, matching 4 video frames at 25 fps) with mild
//! channel noise; the video is a per-token signature embedding from a
//! fixed random codebook, repeated for the token's 4 aligned frames with
//! Gaussian jitter. Either stream alone is decodable above chance, so
//! fusion trends are observable at desk scale.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::features::{group_frames, log_mel_fbank, FbankConfig, Waveform};
use crate::math;
use crate::noise::{mix_at_snr, synth_noise, NoiseKind, DEFAULT_SAMPLE_RATE};
use crate::rng::{derive_rng, gaussian};
use crate::tensor::Tensor;

/// Reserved token ids; content tokens start at [`Vocab::FIRST_CONTENT`].
pub const PAD: usize = 0;
pub const SOS: usize = 1;
pub const EOS: usize = 2;

/// Character-level vocabulary over a configurable alphabet plus
/// {pad, sos, eos}.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    alphabet: Vec<char>,
}

impl Vocab {
    pub const FIRST_CONTENT: usize = 3;

    pub fn new(alphabet: &str) -> Result<Self> {
        let chars: Vec<char> = alphabet.chars().collect();
        if chars.len() < 2 {
            return Err(CoreError::Config(
                "alphabet needs at least 2 symbols".into(),
            ));
        }
        let mut dedup = chars.clone();
        dedup.sort_unstable();
        dedup.dedup();
        if dedup.len() != chars.len() {
            return Err(CoreError::Config(
                "alphabet contains duplicate symbols".into(),
            ));
        }
        Ok(Vocab { alphabet: chars })
    }

    /// Total logit classes: alphabet plus pad/sos/eos.
    pub fn size(&self) -> usize {
        self.alphabet.len() + Self::FIRST_CONTENT
    }

    pub fn content_size(&self) -> usize {
        self.alphabet.len()
    }

    pub fn first_content_id(&self) -> usize {
        Self::FIRST_CONTENT
    }

    pub fn alphabet(&self) -> String {
        self.alphabet.iter().collect()
    }

    pub fn id_of(&self, c: char) -> Option<usize> {
        self.alphabet
            .iter()
            .position(|x| *x == c)
            .map(|i| i + Self::FIRST_CONTENT)
    }

    pub fn char_of(&self, id: usize) -> Option<char> {
        id.checked_sub(Self::FIRST_CONTENT)
            .and_then(|i| self.alphabet.get(i))
            .copied()
    }

    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        text.chars()
            .map(|c| {
                self.id_of(c)
                    .ok_or_else(|| CoreError::Usage(format!("symbol {c:?} not in alphabet")))
            })
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter().filter_map(|&id| self.char_of(id)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusConfig {
    pub n_samples: usize,
    pub alphabet: String,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub seed: u64,
    pub d_video: usize,
    /// Per-dimension Gaussian jitter on video embeddings.
    pub video_jitter: f64,
    /// Mild channel noise mixed into the clean audio.
    pub channel_snr_db: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            n_samples: 32,
            alphabet: String::from("abcdefghij"),
            min_tokens: 2,
            max_tokens: 8,
            seed: 7,
            d_video: 512,
            video_jitter: 0.01,
            channel_snr_db: 30.0,
        }
    }
}

/// One corpus entry: clean waveform, per-frame video features, transcript
/// as content token ids.
#[derive(Clone, Debug)]
pub struct CorpusSample {
    pub id: String,
    pub audio: Waveform,
    /// `[4 * n_tokens, d_video]`, 25 fps.
    pub video: Tensor,
    pub transcript: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub vocab: Vocab,
    /// `[alphabet_len, d_video]` unit-norm signature embeddings.
    pub codebook: Tensor,
    pub samples: Vec<CorpusSample>,
}

/// Frames per token in both modalities: 160 ms of audio, 4 video frames.
pub const FRAMES_PER_TOKEN: usize = 4;
const TOKEN_SECS: f64 = 0.16;

/// Signature tone pair for a content index; pairs are distinct across the
/// alphabet and stay well inside the mel band.
pub fn token_tone_pair(content_index: usize) -> (f64, f64) {
    (
        320.0 + 130.0 * content_index as f64,
        5100.0 - 140.0 * content_index as f64,
    )
}

fn unit_norm_rows(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = Tensor::zeros(&[rows, cols]);
    for r in 0..rows {
        let row = &mut t.data_mut()[r * cols..(r + 1) * cols];
        let mut sq = 0.0;
        for v in row.iter_mut() {
            *v = gaussian(rng);
            sq += *v * *v;
        }
        let s = 1.0 / math::sqrt(sq);
        for v in row.iter_mut() {
            *v *= s;
        }
    }
    t
}

/// The deterministic signature codebook for an alphabet size.
pub fn signature_codebook(alphabet_len: usize, d_video: usize, seed: u64) -> Tensor {
    let mut rng = derive_rng(seed, "codebook", &[]);
    unit_norm_rows(alphabet_len, d_video, &mut rng)
}

/// Renders one transcript into its clean waveform.
fn render_audio(transcript: &[usize], sample_rate: u32) -> Vec<f64> {
    let per_token = (TOKEN_SECS * sample_rate as f64) as usize;
    let ramp = sample_rate as usize * 4 / 1000; // 4 ms edges against clicks
    let mut samples = vec![0.0; per_token * transcript.len()];
    for (ti, &tok) in transcript.iter().enumerate() {
        let k = tok - Vocab::FIRST_CONTENT;
        let (f1, f2) = token_tone_pair(k);
        for i in 0..per_token {
            let t = i as f64 / sample_rate as f64;
            let mut v = 0.45 * math::sin(2.0 * core::f64::consts::PI * f1 * t)
                + 0.45 * math::sin(2.0 * core::f64::consts::PI * f2 * t);
            if i < ramp {
                v *= 0.5 - 0.5 * math::cos(core::f64::consts::PI * i as f64 / ramp as f64);
            } else if i >= per_token - ramp {
                let j = per_token - 1 - i;
                v *= 0.5 - 0.5 * math::cos(core::f64::consts::PI * j as f64 / ramp as f64);
            }
            samples[ti * per_token + i] = v;
        }
    }
    samples
}

/// Generates the full corpus; bit-identical for a fixed config. Each
/// sample's randomness derives from `(seed, sample index)`, so samples can
/// be (re)generated independently.
pub fn synth_av_corpus(config: &CorpusConfig) -> Result<Corpus> {
    if config.min_tokens < 1 || config.max_tokens < config.min_tokens {
        return Err(CoreError::Config(format!(
            "token range {}..={} is invalid",
            config.min_tokens, config.max_tokens
        )));
    }
    if config.n_samples == 0 {
        return Err(CoreError::Config("n_samples must be >= 1".into()));
    }
    let vocab = Vocab::new(&config.alphabet)?;
    let codebook = signature_codebook(vocab.content_size(), config.d_video, config.seed);
    let samples = (0..config.n_samples)
        .map(|i| synth_sample(config, &vocab, &codebook, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus {
        config: config.clone(),
        vocab,
        codebook,
        samples,
    })
}

fn synth_sample(
    config: &CorpusConfig,
    vocab: &Vocab,
    codebook: &Tensor,
    index: usize,
) -> Result<CorpusSample> {
    let mut rng = derive_rng(config.seed, "sample", &[index as u64]);
    let n_tokens = rng.gen_range(config.min_tokens..=config.max_tokens);
    let transcript: Vec<usize> = (0..n_tokens)
        .map(|_| Vocab::FIRST_CONTENT + rng.gen_range(0..vocab.content_size()))
        .collect();

    let sr = DEFAULT_SAMPLE_RATE;
    let clean = Waveform::new(render_audio(&transcript, sr), sr)?;
    let channel = synth_noise(
        NoiseKind::White,
        clean.len(),
        crate::rng::derive_seed(config.seed, "channel", &[index as u64]),
    );
    let mut mix_rng = derive_rng(config.seed, "channel-mix", &[index as u64]);
    let audio = mix_at_snr(&clean, &channel, config.channel_snr_db, &mut mix_rng)?;

    let d = config.d_video;
    let mut video = Tensor::zeros(&[FRAMES_PER_TOKEN * n_tokens, d]);
    for (ti, &tok) in transcript.iter().enumerate() {
        let k = tok - Vocab::FIRST_CONTENT;
        for f in 0..FRAMES_PER_TOKEN {
            let row = (ti * FRAMES_PER_TOKEN + f) * d;
            for c in 0..d {
                video.data_mut()[row + c] =
                    codebook.at(k, c) + config.video_jitter * gaussian(&mut rng);
            }
        }
    }
    Ok(CorpusSample {
        id: format!("sample-{index:05}"),
        audio,
        video,
        transcript,
    })
}

/// One training/eval sample after feature extraction: time-aligned audio
/// and video feature sequences plus the token transcript.
#[derive(Clone, Debug)]
pub struct FeaturePair {
    pub id: String,
    /// `[t, 320]` grouped log-mel features.
    pub audio: Tensor,
    /// `[t, d_video]` video features, truncated to align with the audio.
    pub video: Tensor,
    /// Content token ids (no sos/eos).
    pub targets: Vec<usize>,
}

/// Extracts aligned features from a waveform (possibly noise-mixed) and
/// the sample's video stream. Both streams are truncated to the shorter
/// length; the rates differ by at most one frame.
pub fn featurize(
    id: &str,
    audio: &Waveform,
    video: &Tensor,
    transcript: &[usize],
    fbank: &FbankConfig,
) -> Result<FeaturePair> {
    let mel = log_mel_fbank(audio, fbank)?;
    let grouped = group_frames(&mel, FRAMES_PER_TOKEN)?;
    let t = grouped.shape()[0].min(video.shape()[0]);
    if t == 0 {
        return Err(CoreError::Length("featurized sample has no frames".into()));
    }
    Ok(FeaturePair {
        id: String::from(id),
        audio: truncate_rows(&grouped, t),
        video: truncate_rows(video, t),
        targets: transcript.to_vec(),
    })
}

fn truncate_rows(x: &Tensor, t: usize) -> Tensor {
    let d = x.shape()[1];
    Tensor::new(vec![t, d], x.data()[..t * d].to_vec()).expect("truncation preserves layout")
}

/// Fraction of video frames whose nearest codebook row is the true token.
pub fn nearest_codebook_accuracy(corpus: &Corpus) -> f64 {
    let mut correct = 0usize;
    let mut total = 0usize;
    for sample in &corpus.samples {
        let d = corpus.config.d_video;
        for (ti, &tok) in sample.transcript.iter().enumerate() {
            let k_true = tok - Vocab::FIRST_CONTENT;
            for f in 0..FRAMES_PER_TOKEN {
                let row = &sample.video.data()
                    [(ti * FRAMES_PER_TOKEN + f) * d..(ti * FRAMES_PER_TOKEN + f + 1) * d];
                let mut best = (f64::INFINITY, 0usize);
                for cand in 0..corpus.codebook.shape()[0] {
                    let mut dist = 0.0;
                    for c in 0..d {
                        let delta = row[c] - corpus.codebook.at(cand, c);
                        dist += delta * delta;
                    }
                    if dist < best.0 {
                        best = (dist, cand);
                    }
                }
                if best.1 == k_true {
                    correct += 1;
                }
                total += 1;
            }
        }
    }
    correct as f64 / total as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> CorpusConfig {
        CorpusConfig {
            n_samples: 6,
            d_video: 64,
            ..CorpusConfig::default()
        }
    }

    #[test]
    fn vocab_round_trips_and_rejects_unknown_symbols() {
        let v = Vocab::new("abc").unwrap();
        assert_eq!(v.size(), 6);
        let ids = v.encode("cab").unwrap();
        assert_eq!(ids, vec![5, 3, 4]);
        assert_eq!(v.decode(&ids), "cab");
        assert!(v.encode("xyz").is_err());
        assert!(Vocab::new("a").is_err());
        assert!(Vocab::new("aa").is_err());
    }

    #[test]
    fn audio_and_video_frames_align_after_featurization() {
        let corpus = synth_av_corpus(&small_config()).unwrap();
        let fbank = FbankConfig::default();
        for s in &corpus.samples {
            let pair = featurize(&s.id, &s.audio, &s.video, &s.transcript, &fbank).unwrap();
            assert_eq!(pair.audio.shape()[0], pair.video.shape()[0]);
            assert_eq!(pair.audio.shape()[1], 320);
            // Rates differ by at most one frame before truncation.
            let mel = log_mel_fbank(&s.audio, &fbank).unwrap();
            let grouped = group_frames(&mel, FRAMES_PER_TOKEN).unwrap();
            let diff = (grouped.shape()[0] as i64 - s.video.shape()[0] as i64).abs();
            assert!(diff <= 1, "stream length gap {diff}");
        }
    }

    #[test]
    fn video_embeddings_are_decodable_by_nearest_codebook() {
        let corpus = synth_av_corpus(&small_config()).unwrap();
        let acc = nearest_codebook_accuracy(&corpus);
        assert!(acc >= 0.99, "accuracy {acc}");
    }

    #[test]
    fn same_seed_gives_identical_corpus() {
        let a = synth_av_corpus(&small_config()).unwrap();
        let b = synth_av_corpus(&small_config()).unwrap();
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert_eq!(x.audio.samples, y.audio.samples);
            assert_eq!(x.video.data(), y.video.data());
            assert_eq!(x.transcript, y.transcript);
        }
        let mut other = small_config();
        other.seed += 1;
        let c = synth_av_corpus(&other).unwrap();
        assert_ne!(a.samples[0].transcript, c.samples[0].transcript);
    }

    #[test]
    fn tone_pairs_are_distinct_and_in_band() {
        let v = Vocab::new("abcdefghijklmnopqrstuvwxyz").unwrap();
        let mut seen = alloc::collections::BTreeSet::new();
        for k in 0..v.content_size() {
            let (f1, f2) = token_tone_pair(k);
            assert!(f1 > 0.0 && f1 < 8000.0);
            assert!(f2 > 0.0 && f2 < 8000.0);
            assert!(seen.insert((f1 as i64, f2 as i64)));
        }
    }

    #[test]
    fn transcript_lengths_respect_bounds() {
        let corpus = synth_av_corpus(&small_config()).unwrap();
        for s in &corpus.samples {
            assert!(s.transcript.len() >= 2 && s.transcript.len() <= 8);
            assert_eq!(s.video.shape()[0], FRAMES_PER_TOKEN * s.transcript.len());
            assert_eq!(s.audio.len(), 2560 * s.transcript.len());
        }
    }
}
