//! `avasr evaluate`: the SNR-grid WER matrix for one checkpoint or a
//! directory of them (rendering a combined multi-variant table).
//!
//! Cells are independent and run in parallel over a shared immutable
//! model; mixtures derive from the corpus seed, so every variant is
//! scored on identical noisy audio.

use std::path::Path;

use avasr_core::corpus::Corpus;
use avasr_core::eval::{cell_wer, clean_wer, variant_columns, EvalCell, EvalMatrix, SnrPoint};
use avasr_core::model::Model;
use rayon::prelude::*;

use crate::config::{write_resolved, ExperimentConfig};
use crate::corpusio::{checkpoint_paths, load_corpus};
use crate::error::{CliError, Result};

enum Task {
    Clean,
    Cell {
        kind: avasr_core::noise::NoiseKind,
        snr: i32,
    },
}

fn matrix_for(model: &Model, corpus: &Corpus, cfg: &ExperimentConfig) -> Result<EvalMatrix> {
    let opts = cfg.eval_options();
    let mut tasks = vec![Task::Clean];
    for &kind in &opts.noise_kinds {
        for &snr in &opts.snr_set {
            tasks.push(Task::Cell { kind, snr });
        }
    }
    let results: Vec<(Option<(avasr_core::noise::NoiseKind, i32)>, f64)> = tasks
        .par_iter()
        .map(|task| match task {
            Task::Clean => clean_wer(model, corpus, &opts).map(|w| (None, w)),
            Task::Cell { kind, snr } => {
                cell_wer(model, corpus, *kind, *snr, &opts).map(|w| (Some((*kind, *snr)), w))
            }
        })
        .collect::<std::result::Result<_, _>>()
        .map_err(CliError::Core)?;

    let (stage, block) = variant_columns(model);
    let clean = results
        .iter()
        .find(|(key, _)| key.is_none())
        .map(|(_, w)| *w)
        .unwrap();
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
            let wer = results
                .iter()
                .find(|(key, _)| *key == Some((kind, snr)))
                .map(|(_, w)| *w)
                .expect("every task ran");
            cells.push(EvalCell {
                stage: stage.clone(),
                block: block.clone(),
                noise: kind,
                snr: SnrPoint::Db(snr),
                wer,
            });
        }
    }
    Ok(EvalMatrix { cells })
}

pub fn cmd_evaluate(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<()> {
    write_resolved(cfg)?;
    let corpus = load_corpus(&cfg.corpus_dir())?;
    let paths = checkpoint_paths(checkpoint)?;
    if paths.is_empty() {
        return Err(CliError::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("no .avcp checkpoints under {}", checkpoint.display()),
        )));
    }

    let mut combined = EvalMatrix::default();
    for path in &paths {
        let loaded = crate::checkpoint::load_checkpoint(path)?;
        if loaded.alphabet != corpus.vocab.alphabet() {
            return Err(CliError::Validation(format!(
                "checkpoint {} alphabet {:?} does not match corpus alphabet {:?}",
                path.display(),
                loaded.alphabet,
                corpus.vocab.alphabet()
            )));
        }
        let matrix = matrix_for(&loaded.model, &corpus, cfg)?;
        combined.merge(matrix);
    }
    combined.sort_canonical();

    std::fs::create_dir_all(&cfg.out_dir)?;
    let csv_path = cfg.out_dir.join("matrix.csv");
    let txt_path = cfg.out_dir.join("matrix.txt");
    std::fs::write(&csv_path, combined.render_csv())?;
    std::fs::write(&txt_path, combined.render_table())?;
    print!("{}", combined.render_table());
    println!("wrote {} and {}", csv_path.display(), txt_path.display());
    Ok(())
}
