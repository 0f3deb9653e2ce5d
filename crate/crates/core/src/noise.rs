//! Synthetic noise generators, exact-SNR mixing and training-condition
//! sampling.
//!
//! Four noise families stand in for recorded noise corpora: white, pink
//! (exact 1/f power slope by spectral synthesis), a babble-like chorus of
//! amplitude-modulated wandering voices, and a mains-hum-like harmonic
//! stack with narrowband noise. `HumLike` is the held-out "unseen" family:
//! training configurations never include it.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::features::Waveform;
use crate::fft::ifft;
use crate::math;
use crate::rng::{derive_rng, gaussian};

pub const DEFAULT_SAMPLE_RATE: u32 = 16000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NoiseKind {
    White,
    Pink,
    BabbleLike,
    /// Held out of training as the unseen family.
    HumLike,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 4] = [
        NoiseKind::White,
        NoiseKind::Pink,
        NoiseKind::BabbleLike,
        NoiseKind::HumLike,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            NoiseKind::White => "white",
            NoiseKind::Pink => "pink",
            NoiseKind::BabbleLike => "babble",
            NoiseKind::HumLike => "hum",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "white" => Ok(NoiseKind::White),
            "pink" => Ok(NoiseKind::Pink),
            "babble" => Ok(NoiseKind::BabbleLike),
            "hum" => Ok(NoiseKind::HumLike),
            other => Err(CoreError::Config(format!(
                "unknown noise kind {other:?}; expected one of white, pink, babble, hum"
            ))),
        }
    }
}

/// Normalizes to unit RMS in place.
fn normalize_rms(samples: &mut [f64]) {
    let p: f64 = samples.iter().map(|s| s * s).sum::<f64>() / samples.len() as f64;
    if p > 0.0 {
        let s = 1.0 / math::sqrt(p);
        for v in samples.iter_mut() {
            *v *= s;
        }
    }
}

/// Real signal with per-bin spectral amplitudes given by `amp(freq_hz)`,
/// random phases; built over the next power of two and truncated.
fn spectral_noise(
    n: usize,
    sample_rate: u32,
    rng: &mut ChaCha8Rng,
    amp: &dyn Fn(f64) -> f64,
) -> Vec<f64> {
    let n2 = n.next_power_of_two().max(16);
    let mut re = vec![0.0; n2];
    let mut im = vec![0.0; n2];
    for k in 1..n2 / 2 {
        let f = k as f64 * sample_rate as f64 / n2 as f64;
        let a = amp(f);
        let phase = rng.gen::<f64>() * 2.0 * core::f64::consts::PI;
        re[k] = a * math::cos(phase);
        im[k] = a * math::sin(phase);
        // Conjugate symmetry keeps the time signal real.
        re[n2 - k] = re[k];
        im[n2 - k] = -im[k];
    }
    ifft(&mut re, &mut im);
    re.truncate(n);
    re
}

/// Deterministic synthetic noise with unit RMS.
pub fn synth_noise(kind: NoiseKind, n_samples: usize, seed: u64) -> Waveform {
    let sr = DEFAULT_SAMPLE_RATE;
    let mut rng = derive_rng(seed, "noise", &[kind as u64]);
    let mut samples = match kind {
        NoiseKind::White => (0..n_samples).map(|_| gaussian(&mut rng)).collect(),
        NoiseKind::Pink => {
            // Power ~ 1/f, so amplitude ~ 1/sqrt(f).
            spectral_noise(n_samples, sr, &mut rng, &|f| 1.0 / math::sqrt(f))
        }
        NoiseKind::BabbleLike => babble(n_samples, sr, &mut rng),
        NoiseKind::HumLike => hum(n_samples, sr, &mut rng),
    };
    normalize_rms(&mut samples);
    Waveform {
        samples,
        sample_rate: sr,
    }
}

/// Eight amplitude-modulated voice-like tones with random-walk pitch.
fn babble(n: usize, sr: u32, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = vec![0.0; n];
    let dt = 1.0 / sr as f64;
    for _voice in 0..8 {
        let mut f0 = 120.0 + rng.gen::<f64>() * 180.0;
        let am_rate = 1.5 + rng.gen::<f64>() * 4.5;
        let am_phase = rng.gen::<f64>() * 2.0 * core::f64::consts::PI;
        let mut phase = rng.gen::<f64>() * 2.0 * core::f64::consts::PI;
        for (i, o) in out.iter_mut().enumerate() {
            // Pitch wanders a little every sample, clamped to a vocal range.
            f0 = (f0 + 0.02 * gaussian(rng)).clamp(80.0, 400.0);
            phase += 2.0 * core::f64::consts::PI * f0 * dt;
            let t = i as f64 * dt;
            let env = 0.55 + 0.45 * math::sin(2.0 * core::f64::consts::PI * am_rate * t + am_phase);
            *o += env * (math::sin(phase) + 0.5 * math::sin(2.0 * phase));
        }
    }
    out
}

/// 50 Hz harmonic stack plus narrowband noise around 300 Hz.
fn hum(n: usize, sr: u32, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let dt = 1.0 / sr as f64;
    let mut out = vec![0.0; n];
    for k in 1..=8u32 {
        let phase0 = rng.gen::<f64>() * 2.0 * core::f64::consts::PI;
        let f = 50.0 * k as f64;
        let a = 1.0 / k as f64;
        for (i, o) in out.iter_mut().enumerate() {
            *o += a * math::sin(2.0 * core::f64::consts::PI * f * i as f64 * dt + phase0);
        }
    }
    let band = spectral_noise(n, sr, rng, &|f| {
        let z = (f - 300.0) / 60.0;
        math::exp(-0.5 * z * z)
    });
    let band_rms = math::sqrt(band.iter().map(|v| v * v).sum::<f64>() / n as f64);
    if band_rms > 0.0 {
        for (o, b) in out.iter_mut().zip(&band) {
            *o += 0.5 * b / band_rms;
        }
    }
    out
}

/// `clean + alpha * noise_segment` with `alpha` chosen so the measured SNR
/// equals `snr_db` exactly. Short noise is tiled; the segment start is
/// drawn from `rng`.
pub fn mix_at_snr(
    clean: &Waveform,
    noise: &Waveform,
    snr_db: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Waveform> {
    if clean.sample_rate != noise.sample_rate {
        return Err(CoreError::Signal(format!(
            "sample rates differ: {} vs {}",
            clean.sample_rate, noise.sample_rate
        )));
    }
    if clean.is_empty() || noise.is_empty() {
        return Err(CoreError::Signal("empty waveform".into()));
    }
    let p_clean = clean.power();
    if p_clean == 0.0 {
        return Err(CoreError::Signal("clean signal has zero power".into()));
    }
    let n = clean.len();
    let start = rng.gen_range(0..noise.len());
    let segment: Vec<f64> = if noise.len() >= n && start + n <= noise.len() {
        noise.samples[start..start + n].to_vec()
    } else {
        (0..n)
            .map(|i| noise.samples[(start + i) % noise.len()])
            .collect()
    };
    let p_noise = segment.iter().map(|s| s * s).sum::<f64>() / n as f64;
    if p_noise == 0.0 {
        return Err(CoreError::Signal("noise segment has zero power".into()));
    }
    let alpha = math::sqrt(p_clean / (p_noise * math::db_to_power(snr_db)));
    let samples = clean
        .samples
        .iter()
        .zip(&segment)
        .map(|(c, s)| c + alpha * s)
        .collect();
    Ok(Waveform {
        samples,
        sample_rate: clean.sample_rate,
    })
}

/// Measured SNR in dB of `mixed = clean + scaled_noise`.
pub fn measured_snr_db(clean: &Waveform, mixed: &Waveform) -> f64 {
    let p_clean = clean.power();
    let p_noise = clean
        .samples
        .iter()
        .zip(&mixed.samples)
        .map(|(c, m)| (m - c) * (m - c))
        .sum::<f64>()
        / clean.len() as f64;
    math::power_to_db(p_clean / p_noise)
}

/// One training condition, drawn uniformly over
/// `{Clean} ∪ (noise kinds x SNR levels)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Condition {
    Clean,
    Noisy { kind: NoiseKind, snr_db: i32 },
}

pub fn sample_training_condition(
    rng: &mut ChaCha8Rng,
    snr_set: &[i32],
    noise_kinds: &[NoiseKind],
) -> Result<Condition> {
    if snr_set.is_empty() || noise_kinds.is_empty() {
        return Err(CoreError::Config(
            "snr_set and noise_kinds must be nonempty".into(),
        ));
    }
    let outcomes = 1 + noise_kinds.len() * snr_set.len();
    let pick = rng.gen_range(0..outcomes);
    if pick == 0 {
        Ok(Condition::Clean)
    } else {
        let idx = pick - 1;
        Ok(Condition::Noisy {
            kind: noise_kinds[idx / snr_set.len()],
            snr_db: snr_set[idx % snr_set.len()],
        })
    }
}
