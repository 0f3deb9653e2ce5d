//! Experiment configuration: a flat `key = value` file with command-line
//! `--set key=value` overrides.
//!
//! Unknown keys are rejected, and validation reports every problem at
//! once. The fully resolved configuration is written alongside each
//! command's outputs so any run is replayable from its artifacts alone.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use avasr_core::attention::AttentionConfig;
use avasr_core::corpus::{CorpusConfig, Vocab};
use avasr_core::eval::{EvalOptions, WerUnit};
use avasr_core::fusion::FusionBlockKind;
use avasr_core::model::{DualCombine, FusionSpec, FusionStage, ModelConfig};
use avasr_core::noise::NoiseKind;
use avasr_core::rng::derive_seed;
use avasr_core::train::{LrSchedule, TrainConfig};

use crate::error::{CliError, Result};
use crate::wire::Dtype;

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub threads: usize,
    pub corpus_dir: Option<PathBuf>,
    pub corpus: CorpusConfig,
    pub stage: FusionStage,
    pub block: FusionBlockKind,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub n_premix_blocks: usize,
    pub n_shared_blocks: usize,
    pub n_decoder_blocks: usize,
    pub d_audio_in: usize,
    pub dual_combine: DualCombine,
    pub audio_only: bool,
    pub late_audio_only: bool,
    pub train: TrainConfig,
    pub ckpt_dtype: Dtype,
    pub resume: Option<PathBuf>,
    /// Run at most this many epochs per invocation (0 = no cap); the
    /// schedule still spans `train.epochs`, so capped runs resume exactly.
    pub stop_after: usize,
    pub eval_noise_kinds: Vec<NoiseKind>,
    pub eval_snr_set: Vec<i32>,
    pub beam_width: usize,
    pub max_len: usize,
    pub length_norm: bool,
    pub wer_unit: WerUnit,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let corpus = CorpusConfig::default();
        ExperimentConfig {
            seed: 7,
            out_dir: PathBuf::from("runs/default"),
            threads: 0,
            corpus_dir: None,
            corpus,
            stage: FusionStage::Early,
            block: FusionBlockKind::Align,
            d_model: 64,
            n_heads: 4,
            d_ff: 256,
            n_premix_blocks: 1,
            n_shared_blocks: 2,
            n_decoder_blocks: 2,
            d_audio_in: 320,
            dual_combine: DualCombine::Sum,
            audio_only: false,
            late_audio_only: false,
            train: TrainConfig::default(),
            ckpt_dtype: Dtype::F32,
            resume: None,
            stop_after: 0,
            eval_noise_kinds: vec![NoiseKind::BabbleLike, NoiseKind::HumLike],
            eval_snr_set: vec![20, 15, 10, 5, 0, -5],
            beam_width: 6,
            max_len: 12,
            length_norm: false,
            wer_unit: WerUnit::Token,
        }
    }
}

impl ExperimentConfig {
    /// Directory the corpus lives in (explicit key or `<out_dir>/corpus`).
    pub fn corpus_dir(&self) -> PathBuf {
        self.corpus_dir
            .clone()
            .unwrap_or_else(|| self.out_dir.join("corpus"))
    }

    pub fn fusion_spec(&self) -> FusionSpec {
        FusionSpec {
            stage: self.stage,
            block: self.block,
        }
    }

    /// Model configuration; vocab and video width come from the corpus.
    pub fn model_config(&self, vocab: &Vocab, d_video: usize) -> ModelConfig {
        ModelConfig {
            attention: AttentionConfig {
                d_model: self.d_model,
                n_heads: self.n_heads,
            },
            d_ff: self.d_ff,
            n_premix_blocks: self.n_premix_blocks,
            n_shared_blocks: self.n_shared_blocks,
            n_decoder_blocks: self.n_decoder_blocks,
            vocab_size: vocab.size(),
            d_audio_in: self.d_audio_in,
            d_video_in: d_video,
            dual_combine: self.dual_combine,
            audio_only: self.audio_only,
            late_audio_only: self.late_audio_only,
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            beam_width: self.beam_width,
            max_len: self.max_len,
            length_norm: self.length_norm,
            noise_kinds: self.eval_noise_kinds.clone(),
            snr_set: self.eval_snr_set.clone(),
            wer_unit: self.wer_unit,
        }
    }

    /// Serializes every key; the output parses back to the same config.
    pub fn render(&self) -> String {
        let join_i32 = |v: &[i32]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let join_kinds = |v: &[NoiseKind]| {
            v.iter()
                .map(|k| k.as_str().to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut s = String::new();
        s.push_str(&format!("seed = {}\n", self.seed));
        s.push_str(&format!("out_dir = {}\n", self.out_dir.display()));
        s.push_str(&format!("threads = {}\n", self.threads));
        s.push_str(&format!("corpus.dir = {}\n", self.corpus_dir().display()));
        s.push_str(&format!("corpus.n_samples = {}\n", self.corpus.n_samples));
        s.push_str(&format!("corpus.alphabet = {}\n", self.corpus.alphabet));
        s.push_str(&format!("corpus.min_tokens = {}\n", self.corpus.min_tokens));
        s.push_str(&format!("corpus.max_tokens = {}\n", self.corpus.max_tokens));
        s.push_str(&format!("corpus.d_video = {}\n", self.corpus.d_video));
        s.push_str(&format!(
            "corpus.video_jitter = {}\n",
            self.corpus.video_jitter
        ));
        s.push_str(&format!(
            "corpus.channel_snr_db = {}\n",
            self.corpus.channel_snr_db
        ));
        s.push_str(&format!("model.stage = {}\n", self.stage.as_str()));
        s.push_str(&format!("model.block = {}\n", self.block.as_str()));
        s.push_str(&format!("model.d_model = {}\n", self.d_model));
        s.push_str(&format!("model.n_heads = {}\n", self.n_heads));
        s.push_str(&format!("model.d_ff = {}\n", self.d_ff));
        s.push_str(&format!(
            "model.n_premix_blocks = {}\n",
            self.n_premix_blocks
        ));
        s.push_str(&format!(
            "model.n_shared_blocks = {}\n",
            self.n_shared_blocks
        ));
        s.push_str(&format!(
            "model.n_decoder_blocks = {}\n",
            self.n_decoder_blocks
        ));
        s.push_str(&format!("model.d_audio_in = {}\n", self.d_audio_in));
        s.push_str(&format!(
            "model.dual_combine = {}\n",
            self.dual_combine.as_str()
        ));
        s.push_str(&format!("model.audio_only = {}\n", self.audio_only));
        s.push_str(&format!(
            "model.late_audio_only = {}\n",
            self.late_audio_only
        ));
        s.push_str(&format!("train.epochs = {}\n", self.train.epochs));
        s.push_str(&format!("train.cl_epochs = {}\n", self.train.cl_epochs));
        s.push_str(&format!("train.lr_start = {}\n", self.train.lr_start));
        s.push_str(&format!("train.lr_end = {}\n", self.train.lr_end));
        s.push_str(&format!(
            "train.schedule = {}\n",
            self.train.schedule.as_str()
        ));
        s.push_str(&format!(
            "train.label_smoothing = {}\n",
            self.train.label_smoothing
        ));
        s.push_str(&format!("train.dropout = {}\n", self.train.dropout));
        s.push_str(&format!("train.batch_size = {}\n", self.train.batch_size));
        s.push_str(&format!(
            "train.snr_set = {}\n",
            join_i32(&self.train.snr_set)
        ));
        s.push_str(&format!(
            "train.noise_kinds = {}\n",
            join_kinds(&self.train.noise_kinds)
        ));
        s.push_str(&format!(
            "train.max_grad_norm = {}\n",
            self.train.max_grad_norm.unwrap_or(0.0)
        ));
        s.push_str(&format!(
            "train.ckpt_dtype = {}\n",
            self.ckpt_dtype.as_str()
        ));
        s.push_str(&format!(
            "train.resume = {}\n",
            self.resume
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default()
        ));
        s.push_str(&format!("train.stop_after = {}\n", self.stop_after));
        s.push_str(&format!(
            "eval.noise_kinds = {}\n",
            join_kinds(&self.eval_noise_kinds)
        ));
        s.push_str(&format!(
            "eval.snr_set = {}\n",
            join_i32(&self.eval_snr_set)
        ));
        s.push_str(&format!("eval.beam_width = {}\n", self.beam_width));
        s.push_str(&format!("eval.max_len = {}\n", self.max_len));
        s.push_str(&format!("eval.length_norm = {}\n", self.length_norm));
        s.push_str(&format!(
            "eval.wer_unit = {}\n",
            match self.wer_unit {
                WerUnit::Token => "token",
                WerUnit::Char => "char",
            }
        ));
        s
    }
}

/// Raw `key = value` lines (comments with `#`, blank lines ignored).
fn parse_pairs(text: &str, source: &str, errors: &mut Vec<String>) -> BTreeMap<String, String> {
    let mut map = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) => {
                map.insert(k.trim().to_string(), v.trim().to_string());
            }
            None => errors.push(format!(
                "{source}:{}: expected key = value, got {raw:?}",
                lineno + 1
            )),
        }
    }
    map
}

struct Parser<'a> {
    pairs: &'a BTreeMap<String, String>,
    seen: std::collections::BTreeSet<String>,
    errors: Vec<String>,
}

impl<'a> Parser<'a> {
    fn new(pairs: &'a BTreeMap<String, String>) -> Self {
        Parser {
            pairs,
            seen: Default::default(),
            errors: Vec::new(),
        }
    }

    fn take<T, F: FnOnce(&str) -> std::result::Result<T, String>>(
        &mut self,
        key: &str,
        parse: F,
        into: &mut T,
    ) {
        self.seen.insert(key.to_string());
        if let Some(raw) = self.pairs.get(key) {
            match parse(raw) {
                Ok(v) => *into = v,
                Err(msg) => self.errors.push(format!("{key}: {msg}")),
            }
        }
    }
}

fn p_usize(s: &str) -> std::result::Result<usize, String> {
    s.parse()
        .map_err(|_| format!("expected a non-negative integer, got {s:?}"))
}

fn p_u64(s: &str) -> std::result::Result<u64, String> {
    s.parse()
        .map_err(|_| format!("expected a non-negative integer, got {s:?}"))
}

fn p_f64(s: &str) -> std::result::Result<f64, String> {
    s.parse()
        .map_err(|_| format!("expected a number, got {s:?}"))
}

fn p_bool(s: &str) -> std::result::Result<bool, String> {
    match s {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("expected true or false, got {s:?}")),
    }
}

fn p_string(s: &str) -> std::result::Result<String, String> {
    Ok(s.to_string())
}

fn p_i32_list(s: &str) -> std::result::Result<Vec<i32>, String> {
    // Empty means an empty grid (evaluation then covers only the clean column).
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|x| {
            x.trim()
                .parse::<i32>()
                .map_err(|_| format!("bad integer {x:?} in list"))
        })
        .collect()
}

fn p_kinds(s: &str) -> std::result::Result<Vec<NoiseKind>, String> {
    if s.trim().is_empty() {
        return Err("expected a comma-separated noise kind list".into());
    }
    s.split(',')
        .map(|x| NoiseKind::parse(x.trim()).map_err(|e| e.to_string()))
        .collect()
}

/// Loads the config file (if any), applies `--set` overrides, validates
/// exhaustively.
pub fn load_config(path: Option<&Path>, sets: &[String]) -> Result<ExperimentConfig> {
    let mut errors = Vec::new();
    let mut pairs = BTreeMap::new();
    if let Some(p) = path {
        let text = std::fs::read_to_string(p)?;
        pairs = parse_pairs(&text, &p.display().to_string(), &mut errors);
    }
    for set in sets {
        match set.split_once('=') {
            Some((k, v)) => {
                pairs.insert(k.trim().to_string(), v.trim().to_string());
            }
            None => errors.push(format!("--set {set:?}: expected key=value")),
        }
    }

    let mut cfg = ExperimentConfig::default();
    let mut corpus_dir = String::new();
    let mut resume = String::new();
    let mut max_grad_norm = 0.0f64;
    let mut ckpt_dtype = String::from("f32");
    let mut schedule = String::from("log_linear");
    let mut stage = String::from("early");
    let mut block = String::from("align");
    let mut dual = String::from("sum");
    let mut wer_unit = String::from("token");

    {
        let mut p = Parser::new(&pairs);
        p.take("seed", p_u64, &mut cfg.seed);
        let mut out_dir = cfg.out_dir.display().to_string();
        p.take("out_dir", p_string, &mut out_dir);
        cfg.out_dir = PathBuf::from(out_dir);
        p.take("threads", p_usize, &mut cfg.threads);
        p.take("corpus.dir", p_string, &mut corpus_dir);
        p.take("corpus.n_samples", p_usize, &mut cfg.corpus.n_samples);
        p.take("corpus.alphabet", p_string, &mut cfg.corpus.alphabet);
        p.take("corpus.min_tokens", p_usize, &mut cfg.corpus.min_tokens);
        p.take("corpus.max_tokens", p_usize, &mut cfg.corpus.max_tokens);
        p.take("corpus.d_video", p_usize, &mut cfg.corpus.d_video);
        p.take("corpus.video_jitter", p_f64, &mut cfg.corpus.video_jitter);
        p.take(
            "corpus.channel_snr_db",
            p_f64,
            &mut cfg.corpus.channel_snr_db,
        );
        p.take("model.stage", p_string, &mut stage);
        p.take("model.block", p_string, &mut block);
        p.take("model.d_model", p_usize, &mut cfg.d_model);
        p.take("model.n_heads", p_usize, &mut cfg.n_heads);
        p.take("model.d_ff", p_usize, &mut cfg.d_ff);
        p.take("model.n_premix_blocks", p_usize, &mut cfg.n_premix_blocks);
        p.take("model.n_shared_blocks", p_usize, &mut cfg.n_shared_blocks);
        p.take("model.n_decoder_blocks", p_usize, &mut cfg.n_decoder_blocks);
        p.take("model.d_audio_in", p_usize, &mut cfg.d_audio_in);
        p.take("model.dual_combine", p_string, &mut dual);
        p.take("model.audio_only", p_bool, &mut cfg.audio_only);
        p.take("model.late_audio_only", p_bool, &mut cfg.late_audio_only);
        p.take("train.epochs", p_usize, &mut cfg.train.epochs);
        p.take("train.cl_epochs", p_usize, &mut cfg.train.cl_epochs);
        p.take("train.lr_start", p_f64, &mut cfg.train.lr_start);
        p.take("train.lr_end", p_f64, &mut cfg.train.lr_end);
        p.take("train.schedule", p_string, &mut schedule);
        p.take(
            "train.label_smoothing",
            p_f64,
            &mut cfg.train.label_smoothing,
        );
        p.take("train.dropout", p_f64, &mut cfg.train.dropout);
        p.take("train.batch_size", p_usize, &mut cfg.train.batch_size);
        p.take("train.snr_set", p_i32_list, &mut cfg.train.snr_set);
        p.take("train.noise_kinds", p_kinds, &mut cfg.train.noise_kinds);
        p.take("train.max_grad_norm", p_f64, &mut max_grad_norm);
        p.take("train.ckpt_dtype", p_string, &mut ckpt_dtype);
        p.take("train.resume", p_string, &mut resume);
        p.take("train.stop_after", p_usize, &mut cfg.stop_after);
        p.take("eval.noise_kinds", p_kinds, &mut cfg.eval_noise_kinds);
        p.take("eval.snr_set", p_i32_list, &mut cfg.eval_snr_set);
        p.take("eval.beam_width", p_usize, &mut cfg.beam_width);
        p.take("eval.max_len", p_usize, &mut cfg.max_len);
        p.take("eval.length_norm", p_bool, &mut cfg.length_norm);
        p.take("eval.wer_unit", p_string, &mut wer_unit);

        for key in pairs.keys() {
            if !p.seen.contains(key) {
                p.errors.push(format!("unknown config key {key:?}"));
            }
        }
        errors.extend(p.errors);
    }

    // Enum-valued keys, reported with their allowed values.
    match FusionStage::parse(&stage) {
        Ok(s) => cfg.stage = s,
        Err(e) => errors.push(format!("model.stage: {e}")),
    }
    match FusionBlockKind::parse(&block) {
        Ok(b) => cfg.block = b,
        Err(e) => errors.push(format!("model.block: {e}")),
    }
    match DualCombine::parse(&dual) {
        Ok(d) => cfg.dual_combine = d,
        Err(e) => errors.push(format!("model.dual_combine: {e}")),
    }
    match LrSchedule::parse(&schedule) {
        Ok(s) => cfg.train.schedule = s,
        Err(e) => errors.push(format!("train.schedule: {e}")),
    }
    match Dtype::parse(&ckpt_dtype) {
        Ok(d) => cfg.ckpt_dtype = d,
        Err(e) => errors.push(format!("train.ckpt_dtype: {e}")),
    }
    match wer_unit.as_str() {
        "token" => cfg.wer_unit = WerUnit::Token,
        "char" => cfg.wer_unit = WerUnit::Char,
        other => errors.push(format!(
            "eval.wer_unit: expected token or char, got {other:?}"
        )),
    }
    if !corpus_dir.is_empty() {
        cfg.corpus_dir = Some(PathBuf::from(corpus_dir));
    }
    if !resume.is_empty() {
        cfg.resume = Some(PathBuf::from(resume));
    }
    cfg.train.max_grad_norm = (max_grad_norm > 0.0).then_some(max_grad_norm);

    // Derived values and semantic checks.
    cfg.corpus.seed = derive_seed(cfg.seed, "corpus", &[]);
    cfg.train.seed = derive_seed(cfg.seed, "train", &[]);
    if cfg.d_model == 0 || cfg.n_heads == 0 || cfg.d_model % cfg.n_heads != 0 {
        errors.push(format!(
            "model.d_model {} must be a positive multiple of model.n_heads {}",
            cfg.d_model, cfg.n_heads
        ));
    }
    if let Err(e) = Vocab::new(&cfg.corpus.alphabet) {
        errors.push(format!("corpus.alphabet: {e}"));
    }
    if cfg.corpus.min_tokens < 1 || cfg.corpus.max_tokens < cfg.corpus.min_tokens {
        errors.push(format!(
            "corpus token range {}..={} is invalid",
            cfg.corpus.min_tokens, cfg.corpus.max_tokens
        ));
    }
    if let Err(e) = cfg.train.validate() {
        errors.push(e.to_string());
    }
    if cfg.train.epochs > 0 && (cfg.train.snr_set.is_empty() || cfg.train.noise_kinds.is_empty()) {
        errors.push("train.snr_set and train.noise_kinds must be nonempty".into());
    }
    if cfg.beam_width == 0 || cfg.max_len == 0 {
        errors.push("eval.beam_width and eval.max_len must be >= 1".into());
    }
    if cfg.eval_noise_kinds.is_empty() {
        errors.push("eval.noise_kinds must be nonempty".into());
    }

    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(CliError::Validation(errors.join("\n")))
    }
}

/// Writes the resolved config into the output directory.
pub fn write_resolved(cfg: &ExperimentConfig) -> Result<PathBuf> {
    std::fs::create_dir_all(&cfg.out_dir)?;
    let path = cfg.out_dir.join("config.resolved");
    std::fs::write(&path, cfg.render())?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn defaults_load_without_a_file() {
        let cfg = load_config(None, &[]).unwrap();
        assert_eq!(cfg.d_model, 64);
        assert_eq!(cfg.stage, FusionStage::Early);
        // Component seeds derive from the root seed.
        assert_eq!(cfg.corpus.seed, derive_seed(7, "corpus", &[]));
    }

    #[test]
    fn set_overrides_win_over_file_values() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("exp.cfg");
        std::fs::write(&path, "model.d_model = 32\nmodel.n_heads = 4  # comment\n").unwrap();
        let cfg = load_config(
            Some(&path),
            &["model.d_model=16".into(), "model.n_heads=2".into()],
        )
        .unwrap();
        assert_eq!(cfg.d_model, 16);
        assert_eq!(cfg.n_heads, 2);
    }

    #[test]
    fn unknown_keys_are_rejected_not_ignored() {
        let err = load_config(None, &["model.depth=9".into()]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("unknown config key"), "{msg}");
        assert!(msg.contains("model.depth"), "{msg}");
    }

    #[test]
    fn invalid_stage_names_field_and_allowed_values() {
        let err = load_config(None, &["model.stage=earlyish".into()]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("model.stage"), "{msg}");
        assert!(msg.contains("earlyish"), "{msg}");
        assert!(msg.contains("early, middle, late"), "{msg}");
    }

    #[test]
    fn all_errors_are_listed_at_once() {
        let err = load_config(
            None,
            &[
                "model.stage=nope".into(),
                "train.dropout=1.5".into(),
                "bogus.key=1".into(),
            ],
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("model.stage"), "{msg}");
        assert!(msg.contains("dropout"), "{msg}");
        assert!(msg.contains("bogus.key"), "{msg}");
    }

    #[test]
    fn rendered_config_parses_back_to_itself() {
        let dir = tempdir().unwrap();
        let cfg = load_config(
            None,
            &["model.block=cross".into(), "train.max_grad_norm=2.5".into()],
        )
        .unwrap();
        let path = dir.path().join("resolved.cfg");
        std::fs::write(&path, cfg.render()).unwrap();
        let back = load_config(Some(&path), &[]).unwrap();
        assert_eq!(back.block, FusionBlockKind::Cross);
        assert_eq!(back.train.max_grad_norm, Some(2.5));
        assert_eq!(back.render(), cfg.render());
    }
}
