//! Parameter checkpoint files.
//!
//! A flat archive mapping layer-path strings to shaped value arrays, with
//! a text header recording the fusion variant and every dimension needed
//! to rebuild the model. Byte layout (little-endian):
//!
//! ```text
//! magic "AVCP" | version u32 | header_len u32 | header utf-8
//! n_entries u32
//! entry: path (u16-len utf-8) | rank u8 | extents u32 x rank | values
//! ```
//!
//! The header is `key=value` lines. Values are stored at the header's
//! dtype: final checkpoints default to f32; resume checkpoints are f64
//! and additionally carry the optimizer moments as `optim.m.<path>` /
//! `optim.v.<path>` entries plus the step counter, so a 64-bit training
//! run resumed at an epoch boundary continues bit-exactly.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use avasr_core::attention::AttentionConfig;
use avasr_core::fusion::FusionBlockKind;
use avasr_core::model::{DualCombine, FusionSpec, FusionStage, Model, ModelConfig};
use avasr_core::optim::{AdamConfig, AdamState};
use avasr_core::Tensor;

use crate::error::{CliError, Result};
use crate::wire::{
    read_str, read_u32, read_u8, read_values, write_str, write_u32, write_u8, write_values, Dtype,
};

const MAGIC: &[u8; 4] = b"AVCP";
const VERSION: u32 = 1;

/// Optimizer state and the next epoch to run, for resumable checkpoints.
pub struct ResumeState {
    pub opt: AdamState,
    pub next_epoch: usize,
}

pub struct LoadedCheckpoint {
    pub model: Model,
    pub alphabet: String,
    pub resume: Option<ResumeState>,
}

fn header_string(
    model: &Model,
    alphabet: &str,
    dtype: Dtype,
    resume: Option<&ResumeState>,
) -> String {
    let c = &model.config;
    let mut h = String::new();
    h.push_str(&format!("stage={}\n", model.spec.stage.as_str()));
    h.push_str(&format!("block={}\n", model.spec.block.as_str()));
    h.push_str(&format!("d_model={}\n", c.attention.d_model));
    h.push_str(&format!("n_heads={}\n", c.attention.n_heads));
    h.push_str(&format!("d_ff={}\n", c.d_ff));
    h.push_str(&format!("n_premix_blocks={}\n", c.n_premix_blocks));
    h.push_str(&format!("n_shared_blocks={}\n", c.n_shared_blocks));
    h.push_str(&format!("n_decoder_blocks={}\n", c.n_decoder_blocks));
    h.push_str(&format!("vocab_size={}\n", c.vocab_size));
    h.push_str(&format!("d_audio_in={}\n", c.d_audio_in));
    h.push_str(&format!("d_video_in={}\n", c.d_video_in));
    h.push_str(&format!("dual_combine={}\n", c.dual_combine.as_str()));
    h.push_str(&format!("audio_only={}\n", c.audio_only));
    h.push_str(&format!("late_audio_only={}\n", c.late_audio_only));
    h.push_str(&format!("alphabet={alphabet}\n"));
    h.push_str(&format!("dtype={}\n", dtype.as_str()));
    match resume {
        None => h.push_str("kind=final\n"),
        Some(r) => {
            h.push_str("kind=resume\n");
            h.push_str(&format!("next_epoch={}\n", r.next_epoch));
            h.push_str(&format!("adam_step={}\n", r.opt.step));
            h.push_str(&format!("adam_beta1={}\n", r.opt.cfg.beta1));
            h.push_str(&format!("adam_beta2={}\n", r.opt.cfg.beta2));
            h.push_str(&format!("adam_eps={}\n", r.opt.cfg.eps));
        }
    }
    h
}

fn write_entry(w: &mut impl Write, path: &str, tensor: &Tensor, dtype: Dtype) -> Result<()> {
    write_str(w, path)?;
    write_u8(w, tensor.rank() as u8)?;
    for &e in tensor.shape() {
        write_u32(w, e as u32)?;
    }
    write_values(w, tensor.data(), dtype)
}

/// Writes a checkpoint. `resume: Some(..)` stores the optimizer moments
/// alongside the parameters (always at f64).
pub fn save_checkpoint(
    path: &Path,
    model: &Model,
    alphabet: &str,
    dtype: Dtype,
    resume: Option<&ResumeState>,
) -> Result<()> {
    let dtype = if resume.is_some() { Dtype::F64 } else { dtype };
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    write_u32(&mut w, VERSION)?;
    let header = header_string(model, alphabet, dtype, resume);
    write_u32(&mut w, header.len() as u32)?;
    w.write_all(header.as_bytes())?;

    let flat = model.params.flat();
    let n_optim = resume.map_or(0, |r| r.opt.m.len() + r.opt.v.len());
    write_u32(&mut w, (flat.len() + n_optim) as u32)?;
    for (p, t) in &flat {
        write_entry(&mut w, p, t, dtype)?;
    }
    if let Some(r) = resume {
        if r.opt.m.len() != flat.len() {
            return Err(CliError::Format(format!(
                "optimizer holds {} tensors for {} parameters",
                r.opt.m.len(),
                flat.len()
            )));
        }
        for ((p, _), m) in flat.iter().zip(&r.opt.m) {
            write_entry(&mut w, &format!("optim.m.{p}"), m, dtype)?;
        }
        for ((p, _), v) in flat.iter().zip(&r.opt.v) {
            write_entry(&mut w, &format!("optim.v.{p}"), v, dtype)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn parse_header(header: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for line in header.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Format(format!("header line {line:?} is not key=value")))?;
        map.insert(k.to_string(), v.to_string());
    }
    Ok(map)
}

fn header_get<'a>(map: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str> {
    map.get(key)
        .map(|s| s.as_str())
        .ok_or_else(|| CliError::Format(format!("header missing key {key:?}")))
}

fn header_parse<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T> {
    header_get(map, key)?
        .parse::<T>()
        .map_err(|_| CliError::Format(format!("header key {key:?} has invalid value")))
}

pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CliError::Format(format!("{}: bad magic", path.display())));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(CliError::Format(format!(
            "{}: unsupported version {version}",
            path.display()
        )));
    }
    let header_len = read_u32(&mut r)? as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)?;
    let header = String::from_utf8(header_bytes)
        .map_err(|e| CliError::Format(format!("{}: header not utf-8: {e}", path.display())))?;
    let map = parse_header(&header)?;

    let spec = FusionSpec {
        stage: FusionStage::parse(header_get(&map, "stage")?).map_err(CliError::Core)?,
        block: FusionBlockKind::parse(header_get(&map, "block")?).map_err(CliError::Core)?,
    };
    let config = ModelConfig {
        attention: AttentionConfig {
            d_model: header_parse(&map, "d_model")?,
            n_heads: header_parse(&map, "n_heads")?,
        },
        d_ff: header_parse(&map, "d_ff")?,
        n_premix_blocks: header_parse(&map, "n_premix_blocks")?,
        n_shared_blocks: header_parse(&map, "n_shared_blocks")?,
        n_decoder_blocks: header_parse(&map, "n_decoder_blocks")?,
        vocab_size: header_parse(&map, "vocab_size")?,
        d_audio_in: header_parse(&map, "d_audio_in")?,
        d_video_in: header_parse(&map, "d_video_in")?,
        dual_combine: DualCombine::parse(header_get(&map, "dual_combine")?)
            .map_err(CliError::Core)?,
        audio_only: header_parse(&map, "audio_only")?,
        late_audio_only: header_parse(&map, "late_audio_only")?,
    };
    let alphabet = header_get(&map, "alphabet")?.to_string();
    let dtype = Dtype::parse(header_get(&map, "dtype")?)?;

    let n_entries = read_u32(&mut r)? as usize;
    let mut entries: BTreeMap<String, Tensor> = BTreeMap::new();
    for _ in 0..n_entries {
        let epath = read_str(&mut r)?;
        let rank = read_u8(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let data = read_values(&mut r, numel, dtype)?;
        let tensor = Tensor::new(shape, data)
            .map_err(|e| CliError::Format(format!("{}: entry {epath}: {e}", path.display())))?;
        if entries.insert(epath.clone(), tensor).is_some() {
            return Err(CliError::Format(format!(
                "{}: duplicate entry {epath}",
                path.display()
            )));
        }
    }

    // Build the structure, then overwrite every tensor from the archive.
    let mut model = Model::init(spec, config, 0).map_err(CliError::Core)?;
    let mut missing = Vec::new();
    model.params.visit_mut(&mut |p, t| match entries.get(&p) {
        Some(stored) if stored.shape() == t.shape() => *t = stored.clone(),
        Some(stored) => missing.push(format!(
            "{p}: shape {:?} vs stored {:?}",
            t.shape(),
            stored.shape()
        )),
        None => missing.push(format!("{p}: absent from checkpoint")),
    });
    if !missing.is_empty() {
        return Err(CliError::Format(format!(
            "{}: {}",
            path.display(),
            missing.join("; ")
        )));
    }

    let resume = if header_get(&map, "kind")? == "resume" {
        let flat = model.params.flat();
        let take = |prefix: &str| -> Result<Vec<Tensor>> {
            flat.iter()
                .map(|(p, t)| {
                    let key = format!("{prefix}.{p}");
                    match entries.get(&key) {
                        Some(stored) if stored.shape() == t.shape() => Ok(stored.clone()),
                        _ => Err(CliError::Format(format!(
                            "{}: missing or misshaped {key}",
                            path.display()
                        ))),
                    }
                })
                .collect()
        };
        let cfg = AdamConfig {
            beta1: header_parse(&map, "adam_beta1")?,
            beta2: header_parse(&map, "adam_beta2")?,
            eps: header_parse(&map, "adam_eps")?,
        };
        let mut opt = AdamState::new(cfg, &flat.iter().map(|(_, t)| *t).collect::<Vec<_>>());
        opt.m = take("optim.m")?;
        opt.v = take("optim.v")?;
        opt.step = header_parse(&map, "adam_step")?;
        Some(ResumeState {
            opt,
            next_epoch: header_parse(&map, "next_epoch")?,
        })
    } else {
        None
    };

    Ok(LoadedCheckpoint {
        model,
        alphabet,
        resume,
    })
}
