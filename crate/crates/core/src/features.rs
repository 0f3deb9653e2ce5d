//! Audio feature extraction: log-mel filterbanks and frame grouping.
//!
//! 80-dimensional log-mel features over 25 ms Hann windows with a 10 ms
//! hop, then non-overlapping groups of 4 consecutive frames concatenated
//! into 320-dimensional vectors so the audio rate matches 25 fps video
//! (one video frame per 40 ms of audio).

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::fft::magnitude_spectrum;
use crate::math;
use crate::tensor::Tensor;

/// Time-domain signal.
#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(CoreError::Signal("sample_rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(CoreError::Signal(
                "waveform contains non-finite samples".into(),
            ));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean squared amplitude.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s * s).sum::<f64>() / self.samples.len() as f64
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FbankConfig {
    pub n_mels: usize,
    pub win_ms: f64,
    pub hop_ms: f64,
    /// Log floor applied before taking the logarithm.
    pub floor: f64,
}

impl Default for FbankConfig {
    fn default() -> Self {
        FbankConfig {
            n_mels: 80,
            win_ms: 25.0,
            hop_ms: 10.0,
            floor: 1e-10,
        }
    }
}

impl FbankConfig {
    pub fn win_samples(&self, sample_rate: u32) -> usize {
        (self.win_ms * sample_rate as f64 / 1000.0) as usize
    }

    pub fn hop_samples(&self, sample_rate: u32) -> usize {
        (self.hop_ms * sample_rate as f64 / 1000.0) as usize
    }

    pub fn n_fft(&self, sample_rate: u32) -> usize {
        self.win_samples(sample_rate).next_power_of_two()
    }
}

/// HTK mel scale.
pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * math::log10(1.0 + f / 700.0)
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (math::powf(10.0, m / 2595.0) - 1.0)
}

/// Triangular mel filterbank `[n_mels, n_fft/2 + 1]` from 0 Hz to Nyquist.
fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: u32) -> Vec<Vec<f64>> {
    let n_bins = n_fft / 2 + 1;
    let fmax = sample_rate as f64 / 2.0;
    let mel_points: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(hz_to_mel(fmax) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz = |k: usize| k as f64 * sample_rate as f64 / n_fft as f64;
    let mut filters = vec![vec![0.0; n_bins]; n_mels];
    for m in 0..n_mels {
        let (lo, mid, hi) = (mel_points[m], mel_points[m + 1], mel_points[m + 2]);
        for k in 0..n_bins {
            let f = bin_hz(k);
            if f > lo && f < hi {
                filters[m][k] = if f <= mid {
                    (f - lo) / (mid - lo)
                } else {
                    (hi - f) / (hi - mid)
                };
            }
        }
    }
    filters
}

/// Center frequencies of the mel filters (the triangle peaks), in Hz.
pub fn mel_center_frequencies(n_mels: usize, sample_rate: u32) -> Vec<f64> {
    let fmax = sample_rate as f64 / 2.0;
    (1..=n_mels)
        .map(|i| mel_to_hz(hz_to_mel(fmax) * i as f64 / (n_mels + 1) as f64))
        .collect()
}

/// Periodic Hann window.
fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * math::cos(2.0 * core::f64::consts::PI * i as f64 / n as f64))
        .collect()
}

/// Log-mel filterbank features, `[frames, n_mels]` with
/// `frames = 1 + floor((len - win) / hop)`.
pub fn log_mel_fbank(w: &Waveform, cfg: &FbankConfig) -> Result<Tensor> {
    let win = cfg.win_samples(w.sample_rate);
    let hop = cfg.hop_samples(w.sample_rate);
    if w.len() < win {
        return Err(CoreError::Length(format!(
            "waveform has {} samples, window needs {win}",
            w.len()
        )));
    }
    let n_fft = cfg.n_fft(w.sample_rate);
    let n_frames = 1 + (w.len() - win) / hop;
    let window = hann(win);
    let filters = mel_filterbank(cfg.n_mels, n_fft, w.sample_rate);

    let mut out = Tensor::zeros(&[n_frames, cfg.n_mels]);
    let mut frame = vec![0.0; win];
    for t in 0..n_frames {
        let start = t * hop;
        for i in 0..win {
            frame[i] = w.samples[start + i] * window[i];
        }
        let mags = magnitude_spectrum(&frame, n_fft);
        for (m, filter) in filters.iter().enumerate() {
            let energy: f64 = filter.iter().zip(&mags).map(|(f, a)| f * a).sum();
            out.data_mut()[t * cfg.n_mels + m] = math::ln(energy.max(cfg.floor));
        }
    }
    Ok(out)
}

/// Concatenates non-overlapping groups of `order` consecutive frames along
/// the feature axis; trailing remainder frames are dropped.
pub fn group_frames(frames: &Tensor, order: usize) -> Result<Tensor> {
    if order == 0 {
        return Err(CoreError::Config("group order must be >= 1".into()));
    }
    let (n, d) = (frames.shape()[0], frames.shape()[1]);
    if n < order {
        return Err(CoreError::Length(format!(
            "{n} frames cannot form a group of {order}"
        )));
    }
    let groups = n / order;
    let mut out = Tensor::zeros(&[groups, order * d]);
    for g in 0..groups {
        for k in 0..order {
            let src = &frames.data()[(g * order + k) * d..(g * order + k + 1) * d];
            out.data_mut()[g * order * d + k * d..g * order * d + (k + 1) * d].copy_from_slice(src);
        }
    }
    Ok(out)
}
