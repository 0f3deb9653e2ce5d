//! `avasr train`: multi-condition training with per-epoch metrics and
//! resumable checkpoints.
//!
//! Every epoch appends one metrics line and refreshes `resume.avcp`
//! (f64 parameters + optimizer moments); the final parameters land in
//! `checkpoint.avcp` at the configured dtype. Resuming from an epoch
//! boundary reproduces the uninterrupted run's remaining metrics lines
//! exactly (wall time aside).

use std::time::Instant;

use avasr_core::model::Model;
use avasr_core::rng::derive_seed;
use avasr_core::train::Trainer;

use crate::checkpoint::{load_checkpoint, save_checkpoint, ResumeState};
use crate::config::{write_resolved, ExperimentConfig};
use crate::corpusio::load_corpus;
use crate::error::{CliError, Result};
use crate::metrics::{append_line, MetricsLine};

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<()> {
    write_resolved(cfg)?;
    let corpus = load_corpus(&cfg.corpus_dir())?;
    let alphabet = corpus.vocab.alphabet();
    let model_config = cfg.model_config(&corpus.vocab, corpus.config.d_video);
    let metrics_path = cfg.out_dir.join("metrics.tsv");

    let (mut trainer, start_epoch) = match &cfg.resume {
        Some(path) => {
            let loaded = load_checkpoint(path)?;
            let resume = loaded.resume.ok_or_else(|| {
                CliError::Validation(format!(
                    "{} is a final checkpoint, not resumable",
                    path.display()
                ))
            })?;
            if loaded.alphabet != alphabet {
                return Err(CliError::Validation(format!(
                    "checkpoint alphabet {:?} does not match corpus alphabet {:?}",
                    loaded.alphabet, alphabet
                )));
            }
            let trainer = Trainer::with_state(loaded.model, resume.opt, &corpus, cfg.train.clone())
                .map_err(CliError::Core)?;
            (trainer, resume.next_epoch)
        }
        None => {
            let model = Model::init(
                cfg.fusion_spec(),
                model_config,
                derive_seed(cfg.seed, "model", &[]),
            )
            .map_err(CliError::Core)?;
            let trainer =
                Trainer::new(model, &corpus, cfg.train.clone()).map_err(CliError::Core)?;
            // Fresh run: truncate any stale metrics.
            if metrics_path.exists() {
                std::fs::remove_file(&metrics_path)?;
            }
            (trainer, 0)
        }
    };

    let end_epoch = if cfg.stop_after > 0 {
        cfg.train.epochs.min(start_epoch + cfg.stop_after)
    } else {
        cfg.train.epochs
    };
    for epoch in start_epoch..end_epoch {
        let t0 = Instant::now();
        let stats = trainer.run_epoch(epoch).map_err(CliError::Core)?;
        let line = MetricsLine {
            epoch,
            lr: stats.lr,
            mean_loss: stats.mean_loss,
            wall_seconds: t0.elapsed().as_secs_f64(),
        };
        append_line(&metrics_path, &line)?;
        println!(
            "epoch {epoch}: lr {:.3e} loss {:.6} ({:.2}s)",
            stats.lr, stats.mean_loss, line.wall_seconds
        );
        save_checkpoint(
            &cfg.out_dir.join("resume.avcp"),
            &trainer.model,
            &alphabet,
            cfg.ckpt_dtype,
            Some(&ResumeState {
                opt: trainer.opt.clone(),
                next_epoch: epoch + 1,
            }),
        )?;
    }

    if end_epoch < cfg.train.epochs {
        println!(
            "stopped after epoch {}; resume from {}",
            end_epoch - 1,
            cfg.out_dir.join("resume.avcp").display()
        );
        return Ok(());
    }
    let final_path = cfg.out_dir.join("checkpoint.avcp");
    save_checkpoint(&final_path, &trainer.model, &alphabet, cfg.ckpt_dtype, None)?;
    println!("final checkpoint: {}", final_path.display());
    Ok(())
}
