//! `avasr synth-data`: generate the synthetic corpus and write it to disk.

use avasr_core::corpus::synth_av_corpus;

use crate::config::{write_resolved, ExperimentConfig};
use crate::corpusio::write_corpus;
use crate::error::Result;

pub fn cmd_synth_data(cfg: &ExperimentConfig) -> Result<()> {
    write_resolved(cfg)?;
    let corpus = synth_av_corpus(&cfg.corpus).map_err(crate::error::CliError::Core)?;
    let dir = cfg.corpus_dir();
    write_corpus(&dir, &corpus)?;

    let n = corpus.samples.len();
    let mean_tokens = corpus
        .samples
        .iter()
        .map(|s| s.transcript.len())
        .sum::<usize>() as f64
        / n as f64;
    let mean_seconds = corpus
        .samples
        .iter()
        .map(|s| s.audio.duration_secs())
        .sum::<f64>()
        / n as f64;
    println!("corpus written to {}", dir.display());
    println!("sample_count={n} mean_tokens={mean_tokens} mean_seconds={mean_seconds}");
    Ok(())
}
