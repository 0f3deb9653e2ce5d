//! Corpus on disk: one tab-separated manifest plus per-sample binary
//! tensors (waveform rank-1, video features rank-2, both f32).
//!
//! The manifest's first line is a header carrying every generation
//! parameter, so a corpus directory is self-describing and reloadable;
//! the remaining lines are `id<TAB>transcript<TAB>audio<TAB>video`.

use std::fs;
use std::path::{Path, PathBuf};

use avasr_core::corpus::signature_codebook;
use avasr_core::corpus::{Corpus, CorpusConfig, CorpusSample, Vocab};
use avasr_core::features::Waveform;
use avasr_core::noise::DEFAULT_SAMPLE_RATE;
use avasr_core::Tensor;

use crate::error::{CliError, Result};
use crate::tensorfile::{read_tensor, write_tensor};
use crate::wire::Dtype;

pub const MANIFEST: &str = "manifest.tsv";

fn header_line(cfg: &CorpusConfig) -> String {
    format!(
        "# avasr-corpus v1\tseed={}\talphabet={}\tn_samples={}\tmin_tokens={}\tmax_tokens={}\td_video={}\tvideo_jitter={}\tchannel_snr_db={}\tsample_rate={}",
        cfg.seed,
        cfg.alphabet,
        cfg.n_samples,
        cfg.min_tokens,
        cfg.max_tokens,
        cfg.d_video,
        cfg.video_jitter,
        cfg.channel_snr_db,
        DEFAULT_SAMPLE_RATE,
    )
}

pub fn write_corpus(dir: &Path, corpus: &Corpus) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = header_line(&corpus.config);
    manifest.push('\n');
    for sample in &corpus.samples {
        let audio_name = format!("{}.audio.bin", sample.id);
        let video_name = format!("{}.video.bin", sample.id);
        let wave = Tensor::new(vec![sample.audio.len()], sample.audio.samples.clone())
            .map_err(CliError::Core)?;
        write_tensor(&dir.join(&audio_name), &wave, Dtype::F32)?;
        write_tensor(&dir.join(&video_name), &sample.video, Dtype::F32)?;
        let text = corpus.vocab.decode(&sample.transcript);
        manifest.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            sample.id, text, audio_name, video_name
        ));
    }
    fs::write(dir.join(MANIFEST), manifest)?;
    Ok(())
}

fn parse_header(line: &str) -> Result<CorpusConfig> {
    let mut fields = line.split('\t');
    let tag = fields.next().unwrap_or_default();
    if tag != "# avasr-corpus v1" {
        return Err(CliError::Format(format!(
            "manifest header tag {tag:?} unrecognized"
        )));
    }
    let mut cfg = CorpusConfig::default();
    for field in fields {
        let (k, v) = field.split_once('=').ok_or_else(|| {
            CliError::Format(format!("manifest header field {field:?} is not key=value"))
        })?;
        let bad = || CliError::Format(format!("manifest header field {k}={v} has invalid value"));
        match k {
            "seed" => cfg.seed = v.parse().map_err(|_| bad())?,
            "alphabet" => cfg.alphabet = v.to_string(),
            "n_samples" => cfg.n_samples = v.parse().map_err(|_| bad())?,
            "min_tokens" => cfg.min_tokens = v.parse().map_err(|_| bad())?,
            "max_tokens" => cfg.max_tokens = v.parse().map_err(|_| bad())?,
            "d_video" => cfg.d_video = v.parse().map_err(|_| bad())?,
            "video_jitter" => cfg.video_jitter = v.parse().map_err(|_| bad())?,
            "channel_snr_db" => cfg.channel_snr_db = v.parse().map_err(|_| bad())?,
            "sample_rate" => {
                let sr: u32 = v.parse().map_err(|_| bad())?;
                if sr != DEFAULT_SAMPLE_RATE {
                    return Err(CliError::Format(format!("unsupported sample_rate {sr}")));
                }
            }
            other => {
                return Err(CliError::Format(format!(
                    "manifest header has unknown field {other:?}"
                )))
            }
        }
    }
    Ok(cfg)
}

pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let manifest_path = dir.join(MANIFEST);
    let text = fs::read_to_string(&manifest_path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::Format("empty manifest".into()))?;
    let config = parse_header(header)?;
    let vocab = Vocab::new(&config.alphabet).map_err(CliError::Core)?;
    let codebook = signature_codebook(vocab.content_size(), config.d_video, config.seed);

    let mut samples = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 4 {
            return Err(CliError::Format(format!(
                "{}: line {}: expected 4 tab-separated fields",
                manifest_path.display(),
                lineno + 2
            )));
        }
        let transcript = vocab.encode(parts[1]).map_err(CliError::Core)?;
        let audio_t = read_tensor(&dir.join(parts[2]))?;
        let video = read_tensor(&dir.join(parts[3]))?;
        let audio =
            Waveform::new(audio_t.data().to_vec(), DEFAULT_SAMPLE_RATE).map_err(CliError::Core)?;
        samples.push(CorpusSample {
            id: parts[0].to_string(),
            audio,
            video,
            transcript,
        });
    }
    if samples.len() != config.n_samples {
        return Err(CliError::Format(format!(
            "{}: header says {} samples, found {}",
            manifest_path.display(),
            config.n_samples,
            samples.len()
        )));
    }
    Ok(Corpus {
        config,
        vocab,
        codebook,
        samples,
    })
}

/// All checkpoint files in a directory (or the path itself when a file).
pub fn checkpoint_paths(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    if !path.is_dir() {
        return Err(CliError::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("{} is neither file nor directory", path.display()),
        )));
    }
    let mut out: Vec<PathBuf> = fs::read_dir(path)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "avcp"))
        .collect();
    out.sort();
    Ok(out)
}
