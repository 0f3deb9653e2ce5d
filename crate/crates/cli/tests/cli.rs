//! End-to-end tests of the `avasr` binary: every subcommand, the file
//! formats it produces, its determinism guarantees and its exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use avasr_cli::metrics::parse_metrics;

fn avasr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_avasr"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "command failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Tiny-corpus settings shared by the tests; every run dir is a tempdir.
fn base_sets(out_dir: &Path) -> Vec<String> {
    [
        format!("out_dir={}", out_dir.display()),
        "corpus.n_samples=4".into(),
        "corpus.alphabet=abcd".into(),
        "corpus.min_tokens=2".into(),
        "corpus.max_tokens=3".into(),
        "corpus.d_video=16".into(),
        "model.d_model=16".into(),
        "model.n_heads=2".into(),
        "model.d_ff=32".into(),
        "model.n_decoder_blocks=1".into(),
        "eval.max_len=5".into(),
        "eval.beam_width=2".into(),
        "threads=1".into(),
    ]
    .into_iter()
    .collect()
}

fn run_with(cmd: &str, sets: &[String], extra: &[&str]) -> Output {
    let mut args: Vec<String> = vec![cmd.into()];
    for s in sets {
        args.push("--set".into());
        args.push(s.clone());
    }
    args.extend(extra.iter().map(|s| s.to_string()));
    let arg_refs: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
    avasr(&arg_refs)
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

#[test]
fn synth_data_is_deterministic_and_manifest_is_consistent() {
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let out1 = run_with("synth-data", &base_sets(d1.path()), &[]);
    assert_success(&out1);
    let out2 = run_with("synth-data", &base_sets(d2.path()), &[]);
    assert_success(&out2);

    let c1 = dir_bytes(&d1.path().join("corpus"));
    let c2 = dir_bytes(&d2.path().join("corpus"));
    assert_eq!(c1.len(), c2.len());
    for ((n1, b1), (n2, b2)) in c1.iter().zip(&c2) {
        assert_eq!(n1, n2);
        assert_eq!(b1, b2, "{n1} differs between runs");
    }

    // Manifest: header + n lines; printed mean matches a recount.
    let manifest = std::fs::read_to_string(d1.path().join("corpus/manifest.tsv")).unwrap();
    assert_eq!(manifest.lines().count(), 5);
    let mut token_counts = Vec::new();
    for line in manifest.lines().skip(1) {
        token_counts.push(line.split('\t').nth(1).unwrap().chars().count());
    }
    let mean = token_counts.iter().sum::<usize>() as f64 / token_counts.len() as f64;
    let printed = stdout(&out1);
    let printed_mean: f64 = printed
        .split("mean_tokens=")
        .nth(1)
        .and_then(|s| s.split_whitespace().next())
        .unwrap()
        .parse()
        .unwrap();
    assert!(
        (printed_mean - mean).abs() < 1e-9,
        "printed {printed_mean} vs manifest {mean}"
    );
}

#[test]
fn invalid_stage_is_rejected_naming_field_and_values() {
    let dir = tempfile::tempdir().unwrap();
    let mut sets = base_sets(dir.path());
    sets.push("model.stage=earlyish".into());
    let out = run_with("train", &sets, &[]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("model.stage"), "{err}");
    assert!(err.contains("earlyish"), "{err}");
    assert!(err.contains("early, middle, late"), "{err}");
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut sets = base_sets(dir.path());
    sets.push("model.hidden=9".into());
    let out = run_with("synth-data", &sets, &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown config key"));
}

#[test]
fn missing_checkpoint_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let sets = base_sets(dir.path());
    assert_success(&run_with("synth-data", &sets, &[]));
    let out = run_with("evaluate", &sets, &["--checkpoint", "/nonexistent/x.avcp"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn zero_epoch_training_checkpoints_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let mut sets = base_sets(dir.path());
    sets.push("train.epochs=0".into());
    sets.push("seed=33".into());
    assert_success(&run_with("synth-data", &sets, &[]));
    assert_success(&run_with("train", &sets, &[]));

    let loaded =
        avasr_cli::checkpoint::load_checkpoint(&dir.path().join("checkpoint.avcp")).unwrap();
    // Rebuild the same initialization directly.
    let corpus = avasr_cli::corpusio::load_corpus(&dir.path().join("corpus")).unwrap();
    let cfg = avasr_cli::config::load_config(
        None,
        &sets.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
    )
    .unwrap();
    let mc = cfg.model_config(&corpus.vocab, corpus.config.d_video);
    let expect = avasr_core::model::Model::init(
        cfg.fusion_spec(),
        mc,
        avasr_core::rng::derive_seed(cfg.seed, "model", &[]),
    )
    .unwrap();
    let got = loaded.model.params.flat();
    let want = expect.params.flat();
    assert_eq!(got.len(), want.len());
    for ((pa, ta), (pb, tb)) in got.iter().zip(&want) {
        assert_eq!(pa, pb);
        for (x, y) in ta.data().iter().zip(tb.data()) {
            assert_eq!(*x as f32, *y as f32, "{pa} differs");
        }
    }
}

#[test]
fn resume_reproduces_the_uninterrupted_run() {
    let straight = tempfile::tempdir().unwrap();
    let split = tempfile::tempdir().unwrap();
    let common = |dir: &Path| {
        let mut s = base_sets(dir);
        s.push("seed=5".into());
        s.push("train.batch_size=2".into());
        s.push("train.cl_epochs=1".into());
        s.push("train.lr_start=1e-3".into());
        s.push("train.lr_end=1e-4".into());
        s
    };

    // Uninterrupted: 4 epochs.
    let mut sets = common(straight.path());
    sets.push("train.epochs=4".into());
    assert_success(&run_with("synth-data", &sets, &[]));
    assert_success(&run_with("train", &sets, &[]));

    // Interrupted: same 4-epoch schedule capped at 2, then resumed.
    let mut sets_a = common(split.path());
    sets_a.push("train.epochs=4".into());
    sets_a.push("train.stop_after=2".into());
    assert_success(&run_with("synth-data", &sets_a, &[]));
    assert_success(&run_with("train", &sets_a, &[]));
    assert!(
        !split.path().join("checkpoint.avcp").exists(),
        "capped run must not finalize"
    );
    let mut sets_b = common(split.path());
    sets_b.push("train.epochs=4".into());
    sets_b.push(format!(
        "train.resume={}",
        split.path().join("resume.avcp").display()
    ));
    assert_success(&run_with("train", &sets_b, &[]));

    let m_straight =
        parse_metrics(&std::fs::read_to_string(straight.path().join("metrics.tsv")).unwrap())
            .unwrap();
    let m_split =
        parse_metrics(&std::fs::read_to_string(split.path().join("metrics.tsv")).unwrap()).unwrap();
    assert_eq!(m_straight.len(), 4);
    assert_eq!(m_split.len(), 4);
    for (a, b) in m_straight.iter().zip(&m_split) {
        assert_eq!(a.epoch, b.epoch);
        assert_eq!(a.lr.to_bits(), b.lr.to_bits());
        assert_eq!(
            a.mean_loss.to_bits(),
            b.mean_loss.to_bits(),
            "epoch {} loss differs",
            a.epoch
        );
    }
    // Final checkpoints agree byte-for-byte.
    let ck_a = std::fs::read(straight.path().join("checkpoint.avcp")).unwrap();
    let ck_b = std::fs::read(split.path().join("checkpoint.avcp")).unwrap();
    assert_eq!(ck_a, ck_b);
}

#[test]
fn evaluate_is_deterministic_and_clean_only_grids_work() {
    let dir = tempfile::tempdir().unwrap();
    let mut sets = base_sets(dir.path());
    sets.push("train.epochs=0".into());
    sets.push("eval.noise_kinds=white".into());
    sets.push("eval.snr_set=0,-5".into());
    assert_success(&run_with("synth-data", &sets, &[]));
    assert_success(&run_with("train", &sets, &[]));
    let ckpt = dir.path().join("checkpoint.avcp");

    let eval1 = tempfile::tempdir().unwrap();
    let eval2 = tempfile::tempdir().unwrap();
    let mut e1 = sets.clone();
    e1[0] = format!("out_dir={}", eval1.path().display());
    e1.push(format!(
        "corpus.dir={}",
        dir.path().join("corpus").display()
    ));
    let mut e2 = e1.clone();
    e2[0] = format!("out_dir={}", eval2.path().display());
    assert_success(&run_with(
        "evaluate",
        &e1,
        &["--checkpoint", ckpt.to_str().unwrap()],
    ));
    assert_success(&run_with(
        "evaluate",
        &e2,
        &["--checkpoint", ckpt.to_str().unwrap()],
    ));
    let csv1 = std::fs::read(eval1.path().join("matrix.csv")).unwrap();
    let csv2 = std::fs::read(eval2.path().join("matrix.csv")).unwrap();
    assert_eq!(csv1, csv2);

    // Clean-only grid renders a single WER column.
    let clean_dir = tempfile::tempdir().unwrap();
    let mut ec = sets.clone();
    ec[0] = format!("out_dir={}", clean_dir.path().display());
    ec.push(format!(
        "corpus.dir={}",
        dir.path().join("corpus").display()
    ));
    ec.push("eval.snr_set=".into());
    assert_success(&run_with(
        "evaluate",
        &ec,
        &["--checkpoint", ckpt.to_str().unwrap()],
    ));
    let table = std::fs::read_to_string(clean_dir.path().join("matrix.txt")).unwrap();
    let header = table.lines().next().unwrap();
    assert!(header.contains("clean"));
    assert!(!header.contains("dB"), "{header}");
}

#[test]
fn parallel_evaluation_matches_single_threaded() {
    let dir = tempfile::tempdir().unwrap();
    let mut sets = base_sets(dir.path());
    sets.push("train.epochs=0".into());
    sets.push("eval.noise_kinds=pink,hum".into());
    sets.push("eval.snr_set=10,0".into());
    assert_success(&run_with("synth-data", &sets, &[]));
    assert_success(&run_with("train", &sets, &[]));
    let ckpt = dir.path().join("checkpoint.avcp");

    let run_eval = |threads: &str| -> Vec<u8> {
        let out_dir = tempfile::tempdir().unwrap();
        let mut e = sets.clone();
        e[0] = format!("out_dir={}", out_dir.path().display());
        e.push(format!("corpus.dir={}", dir.path().join("corpus").display()));
        e.retain(|s| s != "threads=1");
        e.push(format!("threads={threads}"));
        assert_success(&run_with("evaluate", &e, &["--checkpoint", ckpt.to_str().unwrap()]));
        std::fs::read(out_dir.path().join("matrix.csv")).unwrap()
    };
    assert_eq!(run_eval("1"), run_eval("4"));
}

#[test]
fn nine_variant_directory_evaluation_builds_the_combined_table() {
    let dir = tempfile::tempdir().unwrap();
    let sets = base_sets(dir.path());
    assert_success(&run_with("synth-data", &sets, &[]));

    let ckpt_dir = dir.path().join("variants");
    std::fs::create_dir_all(&ckpt_dir).unwrap();
    for stage in ["early", "middle", "late"] {
        for block in ["concat", "align", "cross"] {
            let vdir = tempfile::tempdir().unwrap();
            let mut s = base_sets(vdir.path());
            s.push(format!(
                "corpus.dir={}",
                dir.path().join("corpus").display()
            ));
            s.push("train.epochs=0".into());
            s.push(format!("model.stage={stage}"));
            s.push(format!("model.block={block}"));
            assert_success(&run_with("train", &s, &[]));
            std::fs::copy(
                vdir.path().join("checkpoint.avcp"),
                ckpt_dir.join(format!("{stage}-{block}.avcp")),
            )
            .unwrap();
        }
    }

    let eval_dir = tempfile::tempdir().unwrap();
    let mut e = base_sets(eval_dir.path());
    e.push(format!(
        "corpus.dir={}",
        dir.path().join("corpus").display()
    ));
    e.push("eval.noise_kinds=babble,hum".into());
    e.push("eval.snr_set=0".into());
    assert_success(&run_with(
        "evaluate",
        &e,
        &["--checkpoint", ckpt_dir.to_str().unwrap()],
    ));

    let csv = std::fs::read_to_string(eval_dir.path().join("matrix.csv")).unwrap();
    let matrix = avasr_core::eval::EvalMatrix::parse_csv(&csv).unwrap();
    for kind in [
        avasr_core::noise::NoiseKind::BabbleLike,
        avasr_core::noise::NoiseKind::HumLike,
    ] {
        let rows: std::collections::BTreeSet<(String, String)> = matrix
            .cells
            .iter()
            .filter(|c| c.noise == kind)
            .map(|c| (c.stage.clone(), c.block.clone()))
            .collect();
        assert_eq!(rows.len(), 9, "expected 9 variant rows per noise kind");
    }

    // report merges CSVs into the same combined table.
    let rep_dir = tempfile::tempdir().unwrap();
    let out = avasr(&[
        "report",
        "--csv",
        eval_dir.path().join("matrix.csv").to_str().unwrap(),
        "--out",
        rep_dir.path().to_str().unwrap(),
    ]);
    assert_success(&out);
    let combined = std::fs::read_to_string(rep_dir.path().join("combined.csv")).unwrap();
    assert_eq!(combined, csv);
}

#[test]
fn gradcheck_fixture_corruption_names_the_layer_path() {
    use avasr_core::fusion::FusionBlockKind;
    use avasr_core::model::{FusionSpec, FusionStage};

    let spec = FusionSpec::new(FusionStage::Early, FusionBlockKind::Align);
    let clean = avasr_cli::commands::gradcheck_variant(spec, 3, 3, None).unwrap();
    assert!(
        clean.passes(1e-4),
        "clean check failed: worst {:?}",
        clean.worst()
    );

    let corrupt =
        avasr_cli::commands::gradcheck_variant(spec, 3, 3, Some(("fusion.audio_mha.wq.w", 0.25)))
            .unwrap();
    assert!(!corrupt.passes(1e-4));
    let failing: Vec<&str> = corrupt
        .groups
        .iter()
        .filter(|(_, _, e)| *e >= 1e-4)
        .map(|(p, _, _)| p.as_str())
        .collect();
    assert_eq!(failing, vec!["fusion.audio_mha.wq.w"]);

    // Deterministic under a fixed seed.
    let again = avasr_cli::commands::gradcheck_variant(spec, 3, 3, None).unwrap();
    for ((p1, _, e1), (p2, _, e2)) in clean.groups.iter().zip(&again.groups) {
        assert_eq!(p1, p2);
        assert_eq!(e1.to_bits(), e2.to_bits());
    }
}

#[test]
fn resolved_config_is_written_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let sets = base_sets(dir.path());
    assert_success(&run_with("synth-data", &sets, &[]));
    let resolved: PathBuf = dir.path().join("config.resolved");
    assert!(resolved.exists());

    // Replaying the resolved config reproduces the corpus byte-for-byte.
    let replay = tempfile::tempdir().unwrap();
    let out = avasr(&[
        "synth-data",
        "--config",
        resolved.to_str().unwrap(),
        "--set",
        &format!("out_dir={}", replay.path().display()),
        "--set",
        &format!("corpus.dir={}", replay.path().join("corpus").display()),
    ]);
    assert_success(&out);
    let a = dir_bytes(&dir.path().join("corpus"));
    let b = dir_bytes(&replay.path().join("corpus"));
    for ((n1, b1), (n2, b2)) in a.iter().zip(&b) {
        assert_eq!(n1, n2);
        assert_eq!(b1, b2, "{n1} differs under replay");
    }
}
