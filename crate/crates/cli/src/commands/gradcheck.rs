//! `avasr gradcheck`: finite-difference verification of every parameter
//! group's gradient, for each of the nine fusion variants, on a tiny
//! deterministic model. Exit status is nonzero when any group's relative
//! error reaches 1e-4.

use std::cell::RefCell;

use avasr_core::attention::{AttentionConfig, ForwardMode};
use avasr_core::corpus::{FeaturePair, Vocab};
use avasr_core::gradcheck::{check_group, DEFAULT_TOLERANCE};
use avasr_core::model::{forward_loss, FusionSpec, Model, ModelConfig};
use avasr_core::rng::{derive_rng, RngCore};
use avasr_core::Tensor;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

#[derive(Clone, Debug)]
pub struct VariantReport {
    pub label: String,
    /// `(layer path, probes, max relative error)` per parameter group.
    pub groups: Vec<(String, usize, f64)>,
}

impl VariantReport {
    pub fn worst(&self) -> (&str, f64) {
        self.groups
            .iter()
            .max_by(|a, b| a.2.partial_cmp(&b.2).unwrap())
            .map(|(p, _, e)| (p.as_str(), *e))
            .unwrap_or(("-", 0.0))
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.groups.iter().all(|(_, _, e)| *e < tolerance)
    }
}

fn micro_config() -> (ModelConfig, Vocab) {
    let vocab = Vocab::new("abc").unwrap();
    let mut cfg = ModelConfig::desk_default(vocab.size());
    cfg.attention = AttentionConfig {
        d_model: 8,
        n_heads: 2,
    };
    cfg.d_ff = 16;
    cfg.n_premix_blocks = 1;
    cfg.n_shared_blocks = 2;
    cfg.n_decoder_blocks = 1;
    cfg.d_audio_in = 10;
    cfg.d_video_in = 12;
    (cfg, vocab)
}

fn micro_batch(cfg: &ModelConfig, vocab: &Vocab, seed: u64) -> Vec<FeaturePair> {
    let mut rng = derive_rng(seed, "gradcheck-input", &[]);
    (0..2)
        .map(|i| {
            let t = 4 + i;
            let n_tokens = 2 + i;
            let targets: Vec<usize> = (0..n_tokens)
                .map(|_| {
                    vocab.first_content_id() + (rng.next_u64() as usize) % vocab.content_size()
                })
                .collect();
            FeaturePair {
                id: format!("g{i}"),
                audio: Tensor::xavier(t, cfg.d_audio_in, &mut rng),
                video: Tensor::xavier(t, cfg.d_video_in, &mut rng),
                targets,
            }
        })
        .collect()
}

/// Checks one variant. `corrupt` (test hook) adds a delta to the analytic
/// gradients of the first group whose path contains the given substring,
/// which must then surface in the report.
pub fn gradcheck_variant(
    spec: FusionSpec,
    seed: u64,
    max_probes: usize,
    corrupt: Option<(&str, f64)>,
) -> Result<VariantReport> {
    let (cfg, vocab) = micro_config();
    let model = Model::init(spec, cfg, seed).map_err(CliError::Core)?;
    let batch = micro_batch(&cfg, &vocab, seed);
    let refs: Vec<&FeaturePair> = batch.iter().collect();

    // Analytic gradients from one taped forward/backward.
    let mut tape = avasr_core::Tape::new();
    let bound = model.bind(&mut tape);
    let out = forward_loss(
        &mut tape,
        &bound,
        &spec,
        &cfg,
        &refs,
        0.1,
        &mut ForwardMode::Eval,
    )
    .map_err(CliError::Core)?;
    tape.backward(out.loss).map_err(CliError::Core)?;
    let ids = bound.flat_ids();
    let mut grads: Vec<Vec<f64>> = ids
        .iter()
        .zip(model.params.flat())
        .map(|(id, (_, t))| {
            tape.grad(*id)
                .map(|g| g.to_vec())
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();

    let paths: Vec<(String, usize)> = model
        .params
        .flat()
        .iter()
        .map(|(p, t)| (p.clone(), t.numel()))
        .collect();
    if let Some((needle, delta)) = corrupt {
        if let Some(gi) = paths.iter().position(|(p, _)| p.contains(needle)) {
            for g in grads[gi].iter_mut() {
                *g += delta;
            }
        }
    }

    let model_cell = RefCell::new(model);
    let mut groups = Vec::with_capacity(paths.len());
    for (gi, (path, numel)) in paths.iter().enumerate() {
        let mut entry = |i: usize, dv: f64| {
            model_cell.borrow_mut().params.flat_mut()[gi].1.data_mut()[i] += dv;
        };
        let mut loss = || -> avasr_core::Result<f64> {
            let m = model_cell.borrow();
            let mut t = avasr_core::Tape::new();
            let b = m.bind(&mut t);
            let out = forward_loss(&mut t, &b, &spec, &cfg, &refs, 0.1, &mut ForwardMode::Eval)?;
            Ok(t.value(out.loss).data()[0])
        };
        let report = check_group(
            path, *numel, &grads[gi], &mut entry, &mut loss, 1e-5, max_probes,
        )
        .map_err(CliError::Core)?;
        groups.push((report.path, report.probes, report.max_rel_err));
    }
    Ok(VariantReport {
        label: spec.label(),
        groups,
    })
}

/// All nine variants at the default probe budget.
pub fn run_gradcheck(seed: u64) -> Result<Vec<VariantReport>> {
    FusionSpec::all()
        .into_iter()
        .map(|spec| gradcheck_variant(spec, seed, 4, None))
        .collect()
}

pub fn cmd_gradcheck(cfg: &ExperimentConfig) -> Result<bool> {
    let reports = run_gradcheck(cfg.seed)?;
    let mut all_ok = true;
    for report in &reports {
        for (path, probes, err) in &report.groups {
            let ok = *err < DEFAULT_TOLERANCE;
            all_ok &= ok;
            println!(
                "{} {} probes={probes} max_rel_err={err:.3e} {}",
                report.label,
                path,
                if ok { "ok" } else { "FAIL" }
            );
        }
        let (wpath, werr) = report.worst();
        println!("{}: worst {wpath} ({werr:.3e})", report.label);
    }
    println!(
        "gradcheck: {}",
        if all_ok {
            "all groups ok"
        } else {
            "FAILURES above 1e-4"
        }
    );
    Ok(all_ok)
}
