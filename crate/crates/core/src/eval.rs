//! The SNR-grid evaluation: decode every test sample at every
//! (noise kind, SNR) cell, average WER, and render the result as CSV and
//! aligned text tables (one row per variant and noise kind, columns from
//! clean down through the SNR grid, then the mean over the noisy cells).
//!
//! Evaluation mixtures derive from `(corpus seed, kind, snr, sample id)`
//! only, so every model variant is scored against identical noisy audio.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::corpus::{featurize, Corpus, CorpusSample};
use crate::decode::decode_sample;
use crate::error::{CoreError, Result};
use crate::features::{FbankConfig, Waveform};
use crate::model::Model;
use crate::noise::{mix_at_snr, synth_noise, NoiseKind};
use crate::rng::derive_seed;
use crate::wer::wer;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SnrPoint {
    Clean,
    Db(i32),
}

impl SnrPoint {
    pub fn label(&self) -> String {
        match self {
            SnrPoint::Clean => String::from("clean"),
            SnrPoint::Db(db) => format!("{db}"),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        if s == "clean" {
            return Ok(SnrPoint::Clean);
        }
        s.parse::<i32>().map(SnrPoint::Db).map_err(|_| {
            CoreError::Config(format!("snr_db must be \"clean\" or an integer, got {s:?}"))
        })
    }

    /// Sort key: clean first, then descending SNR.
    fn rank(&self) -> i64 {
        match self {
            SnrPoint::Clean => i64::MIN,
            SnrPoint::Db(db) => -(*db as i64),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalCell {
    pub stage: String,
    pub block: String,
    pub noise: NoiseKind,
    pub snr: SnrPoint,
    pub wer: f64,
}

/// WER values indexed by (variant, noise kind, SNR level).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalMatrix {
    pub cells: Vec<EvalCell>,
}

fn stage_rank(stage: &str) -> usize {
    match stage {
        "early" => 0,
        "middle" => 1,
        "late" => 2,
        _ => 3,
    }
}

fn block_rank(block: &str) -> usize {
    match block {
        "concat" => 0,
        "align" => 1,
        "cross" => 2,
        _ => 3,
    }
}

fn kind_rank(kind: NoiseKind) -> usize {
    NoiseKind::ALL
        .iter()
        .position(|k| *k == kind)
        .unwrap_or(usize::MAX)
}

impl EvalMatrix {
    pub fn merge(&mut self, other: EvalMatrix) {
        self.cells.extend(other.cells);
    }

    /// Deterministic ordering: stage, block, noise kind, clean-then-descending SNR.
    pub fn sort_canonical(&mut self) {
        self.cells.sort_by(|a, b| {
            stage_rank(&a.stage)
                .cmp(&stage_rank(&b.stage))
                .then_with(|| a.stage.cmp(&b.stage))
                .then_with(|| block_rank(&a.block).cmp(&block_rank(&b.block)))
                .then_with(|| a.block.cmp(&b.block))
                .then_with(|| kind_rank(a.noise).cmp(&kind_rank(b.noise)))
                .then_with(|| a.snr.rank().cmp(&b.snr.rank()))
        });
    }

    pub fn get(&self, stage: &str, block: &str, noise: NoiseKind, snr: SnrPoint) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.stage == stage && c.block == block && c.noise == noise && c.snr == snr)
            .map(|c| c.wer)
    }

    /// Arithmetic mean of the noisy (non-clean) cells of one row.
    pub fn noisy_mean(&self, stage: &str, block: &str, noise: NoiseKind) -> Option<f64> {
        let vals: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| {
                c.stage == stage && c.block == block && c.noise == noise && c.snr != SnrPoint::Clean
            })
            .map(|c| c.wer)
            .collect();
        if vals.is_empty() {
            None
        } else {
            Some(vals.iter().sum::<f64>() / vals.len() as f64)
        }
    }

    /// Distinct (stage, block, noise) row keys in canonical order.
    pub fn row_keys(&self) -> Vec<(String, String, NoiseKind)> {
        let mut sorted = self.clone();
        sorted.sort_canonical();
        let mut keys: Vec<(String, String, NoiseKind)> = Vec::new();
        for c in &sorted.cells {
            let key = (c.stage.clone(), c.block.clone(), c.noise);
            if keys.last() != Some(&key) && !keys.contains(&key) {
                keys.push(key);
            }
        }
        keys
    }

    /// Distinct SNR columns in canonical order (clean first, then descending).
    pub fn snr_columns(&self) -> Vec<SnrPoint> {
        let mut cols: Vec<SnrPoint> = Vec::new();
        for c in &self.cells {
            if !cols.contains(&c.snr) {
                cols.push(c.snr);
            }
        }
        cols.sort_by_key(|s| s.rank());
        cols
    }

    /// Long-form CSV: `stage,block,noise,snr_db,wer` with full-precision
    /// WER values (round-trips exactly).
    pub fn render_csv(&self) -> String {
        let mut sorted = self.clone();
        sorted.sort_canonical();
        let mut out = String::from("stage,block,noise,snr_db,wer\n");
        for c in &sorted.cells {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                c.stage,
                c.block,
                c.noise.as_str(),
                c.snr.label(),
                c.wer
            ));
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<EvalMatrix> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| CoreError::Usage("empty csv".into()))?;
        if header.trim() != "stage,block,noise,snr_db,wer" {
            return Err(CoreError::Usage(format!(
                "unexpected csv header {header:?}"
            )));
        }
        let mut cells = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 5 {
                return Err(CoreError::Usage(format!(
                    "csv line {}: expected 5 fields",
                    lineno + 2
                )));
            }
            cells.push(EvalCell {
                stage: parts[0].to_string(),
                block: parts[1].to_string(),
                noise: NoiseKind::parse(parts[2])?,
                snr: SnrPoint::parse(parts[3])?,
                wer: parts[4]
                    .parse::<f64>()
                    .map_err(|_| CoreError::Usage(format!("csv line {}: bad wer", lineno + 2)))?,
            });
        }
        Ok(EvalMatrix { cells })
    }

    /// Aligned text table, one row per (variant, noise kind); the final
    /// column after the pipe is the mean over the noisy cells.
    pub fn render_table(&self) -> String {
        let cols = self.snr_columns();
        let mut out = String::new();
        out.push_str(&format!("{:<12} {:<8} {:<8}", "stage", "block", "noise"));
        for c in &cols {
            let label = match c {
                SnrPoint::Clean => String::from("clean"),
                SnrPoint::Db(db) => format!("{db}dB"),
            };
            out.push_str(&format!(" {label:>8}"));
        }
        out.push_str(" | mean on noisy data\n");
        for (stage, block, noise) in self.row_keys() {
            out.push_str(&format!("{stage:<12} {block:<8} {:<8}", noise.as_str()));
            for c in &cols {
                match self.get(&stage, &block, noise, *c) {
                    Some(w) => out.push_str(&format!(" {:>8}", format!("{:.2}%", 100.0 * w))),
                    None => out.push_str(&format!(" {:>8}", "-")),
                }
            }
            match self.noisy_mean(&stage, &block, noise) {
                Some(m) => out.push_str(&format!(" | {:.2}%\n", 100.0 * m)),
                None => out.push_str(" | -\n"),
            }
        }
        out
    }
}

/// WER token unit: corpus tokens play the role of words; the character
/// flag scores decoded text instead (for this corpus the two coincide,
/// one token per character).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WerUnit {
    Token,
    Char,
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub beam_width: usize,
    pub max_len: usize,
    pub length_norm: bool,
    pub noise_kinds: Vec<NoiseKind>,
    pub snr_set: Vec<i32>,
    pub wer_unit: WerUnit,
}

impl EvalOptions {
    pub fn new(noise_kinds: Vec<NoiseKind>, snr_set: Vec<i32>, max_len: usize) -> Self {
        EvalOptions {
            beam_width: 6,
            max_len,
            length_norm: false,
            noise_kinds,
            snr_set,
            wer_unit: WerUnit::Token,
        }
    }
}

/// The noisy mixture a given sample receives at a given evaluation cell.
/// Pure in `(corpus seed, kind, snr, sample id)` so every variant sees
/// identical audio.
pub fn eval_mixture(
    sample: &CorpusSample,
    kind: NoiseKind,
    snr_db: i32,
    corpus_seed: u64,
) -> Result<Waveform> {
    let cell = derive_seed(
        corpus_seed,
        "eval-cell",
        &[kind as u64, snr_db as i64 as u64],
    );
    let noise_seed = derive_seed(cell, &sample.id, &[0]);
    let noise = synth_noise(kind, sample.audio.len(), noise_seed);
    let mut offset_rng = crate::rng::rng_from_seed(derive_seed(cell, &sample.id, &[1]));
    mix_at_snr(&sample.audio, &noise, snr_db as f64, &mut offset_rng)
}

fn sample_wer(
    model: &Model,
    corpus: &Corpus,
    sample: &CorpusSample,
    wave: &Waveform,
    opts: &EvalOptions,
) -> Result<f64> {
    let fbank = FbankConfig::default();
    let pair = featurize(&sample.id, wave, &sample.video, &sample.transcript, &fbank)?;
    let hyp = decode_sample(
        model,
        &pair,
        opts.beam_width,
        opts.max_len,
        opts.length_norm,
    )?;
    match opts.wer_unit {
        WerUnit::Token => wer(&sample.transcript, &hyp.tokens),
        WerUnit::Char => {
            let as_chars = |ids: &[usize]| -> Vec<usize> {
                corpus
                    .vocab
                    .decode(ids)
                    .chars()
                    .map(|c| c as usize)
                    .collect()
            };
            wer(&as_chars(&sample.transcript), &as_chars(&hyp.tokens))
        }
    }
}

/// Mean WER over the corpus on unmixed audio.
pub fn clean_wer(model: &Model, corpus: &Corpus, opts: &EvalOptions) -> Result<f64> {
    if corpus.samples.is_empty() {
        return Err(CoreError::Usage("evaluation corpus is empty".into()));
    }
    let mut total = 0.0;
    for s in &corpus.samples {
        total += sample_wer(model, corpus, s, &s.audio, opts)?;
    }
    Ok(total / corpus.samples.len() as f64)
}

/// Mean WER over the corpus with every sample mixed at `(kind, snr_db)`.
pub fn cell_wer(
    model: &Model,
    corpus: &Corpus,
    kind: NoiseKind,
    snr_db: i32,
    opts: &EvalOptions,
) -> Result<f64> {
    if corpus.samples.is_empty() {
        return Err(CoreError::Usage("evaluation corpus is empty".into()));
    }
    let mut total = 0.0;
    for s in &corpus.samples {
        let wave = eval_mixture(s, kind, snr_db, corpus.config.seed)?;
        total += sample_wer(model, corpus, s, &wave, opts)?;
    }
    Ok(total / corpus.samples.len() as f64)
}

/// Full grid for one model: for each noise kind, a clean column (unmixed)
/// plus one cell per SNR level.
pub fn evaluate_matrix(model: &Model, corpus: &Corpus, opts: &EvalOptions) -> Result<EvalMatrix> {
    let (stage, block) = variant_columns(model);
    let clean = clean_wer(model, corpus, opts)?;
    let mut cells = Vec::new();
    for &kind in &opts.noise_kinds {
        cells.push(EvalCell {
            stage: stage.clone(),
            block: block.clone(),
            noise: kind,
            snr: SnrPoint::Clean,
            wer: clean,
        });
        for &snr in &opts.snr_set {
            let w = cell_wer(model, corpus, kind, snr, opts)?;
            cells.push(EvalCell {
                stage: stage.clone(),
                block: block.clone(),
                noise: kind,
                snr: SnrPoint::Db(snr),
                wer: w,
            });
        }
    }
    Ok(EvalMatrix { cells })
}

/// The (stage, block) labels a model contributes to tables.
pub fn variant_columns(model: &Model) -> (String, String) {
    if model.config.audio_only {
        (String::from("audio_only"), String::from("-"))
    } else {
        (
            model.spec.stage.as_str().to_string(),
            model.spec.block.as_str().to_string(),
        )
    }
}
