//! Public-API pipeline test: corpus -> features -> training -> decoding
//! -> evaluation matrix, without touching any crate internals.

use avasr_core::attention::AttentionConfig;
use avasr_core::corpus::{featurize, synth_av_corpus, CorpusConfig};
use avasr_core::decode::decode_sample;
use avasr_core::eval::{evaluate_matrix, EvalOptions, SnrPoint};
use avasr_core::features::FbankConfig;
use avasr_core::fusion::FusionBlockKind;
use avasr_core::model::{FusionSpec, FusionStage, Model, ModelConfig};
use avasr_core::noise::NoiseKind;
use avasr_core::train::{TrainConfig, Trainer};
use avasr_core::wer::wer;

fn setup() -> (Model, avasr_core::corpus::Corpus, TrainConfig) {
    let corpus_cfg = CorpusConfig {
        n_samples: 10,
        alphabet: "abcde".into(),
        min_tokens: 2,
        max_tokens: 4,
        seed: 77,
        d_video: 48,
        ..Default::default()
    };
    let corpus = synth_av_corpus(&corpus_cfg).unwrap();
    let mut mc = ModelConfig::desk_default(corpus.vocab.size());
    mc.attention = AttentionConfig {
        d_model: 32,
        n_heads: 4,
    };
    mc.d_ff = 64;
    mc.n_decoder_blocks = 1;
    mc.d_video_in = 48;
    let model = Model::init(
        FusionSpec::new(FusionStage::Early, FusionBlockKind::Cross),
        mc,
        5,
    )
    .unwrap();
    let tc = TrainConfig {
        epochs: 40,
        cl_epochs: 2,
        lr_start: 2e-3,
        lr_end: 3e-4,
        dropout: 0.0,
        batch_size: 5,
        seed: 31,
        snr_set: vec![20],
        noise_kinds: vec![NoiseKind::White],
        ..TrainConfig::default()
    };
    (model, corpus, tc)
}

#[test]
fn pipeline_trains_decodes_and_evaluates() {
    let (model, corpus, tc) = setup();
    let mut trainer = Trainer::new(model, &corpus, tc).unwrap();
    let first = trainer.run_epoch(0).unwrap().mean_loss;
    let mut last = first;
    for e in 1..40 {
        last = trainer.run_epoch(e).unwrap().mean_loss;
    }
    assert!(
        last < 0.8 * first,
        "training made no progress: {first} -> {last}"
    );

    // Decoding a training sample yields tokens from the vocabulary and a
    // finite negative score; after this much training the clean WER over
    // the corpus should have dropped well below chance.
    let fbank = FbankConfig::default();
    let mut total = 0.0;
    for s in &corpus.samples {
        let pair = featurize(&s.id, &s.audio, &s.video, &s.transcript, &fbank).unwrap();
        let hyp = decode_sample(&trainer.model, &pair, 4, 8, false).unwrap();
        assert!(hyp.score <= 0.0 && hyp.score.is_finite());
        total += wer(&s.transcript, &hyp.tokens).unwrap();
    }
    let mean_wer = total / corpus.samples.len() as f64;
    assert!(
        mean_wer < 0.5,
        "decodes are no better than empty output: {mean_wer}"
    );

    // The evaluation grid has the right shape and reproduces bit-exactly.
    let opts = EvalOptions::new(vec![NoiseKind::HumLike], vec![10, 0], 8);
    let m1 = evaluate_matrix(&trainer.model, &corpus, &opts).unwrap();
    let m2 = evaluate_matrix(&trainer.model, &corpus, &opts).unwrap();
    assert_eq!(m1, m2);
    assert_eq!(m1.cells.len(), 3); // clean + two SNR cells
    assert!(m1
        .get("early", "cross", NoiseKind::HumLike, SnrPoint::Clean)
        .is_some());
}
