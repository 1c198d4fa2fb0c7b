use claimrank::encoder::{encode_checkpoint, tokenize, EncoderParams, EncoderShape};
use claimrank::pipeline::{run_pipeline, PipelineConfig};
use claimrank::synthetic::separable_corpus;
use claimrank::training::{
    adamw_step, batch_loss, batch_loss_and_grad, train, training_pairs, Batch, LossKind,
    OptimizerState, TrainConfig,
};
use claimrank::{Pooling, TextView};

fn small_config(pooling: Pooling) -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        epochs: 2,
        warmup_steps: 0,
        lr_backbone: 1e-3,
        lr_custom: 1e-3,
        pooling,
        dim: 16,
        hidden: 8,
        max_len: 16,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_epochs_leave_initialization() {
    let corpus = separable_corpus(20, 5, 1);
    let config = TrainConfig {
        epochs: 0,
        ..small_config(Pooling::Attention)
    };
    let out = train(&corpus, &TextView::default(), &config, None).unwrap();
    let init = EncoderParams::init(
        EncoderShape {
            vocab_size: out.encoder.vocab.len(),
            dim: 16,
            hidden: 8,
        },
        Pooling::Attention,
        config.seed,
    );
    assert_eq!(out.encoder.params, init);
    assert!(out.log.epochs.is_empty());
}

#[test]
fn same_seed_same_checkpoint() {
    let corpus = separable_corpus(32, 10, 2);
    let config = small_config(Pooling::Attention);
    let a = train(&corpus, &TextView::default(), &config, None).unwrap();
    let b = train(&corpus, &TextView::default(), &config, None).unwrap();
    assert_eq!(
        encode_checkpoint(&a.encoder.params).unwrap(),
        encode_checkpoint(&b.encoder.params).unwrap()
    );
    let c = train(
        &corpus,
        &TextView::default(),
        &TrainConfig { seed: 43, ..config },
        None,
    )
    .unwrap();
    assert_ne!(a.encoder.params, c.encoder.params);
    assert_eq!(a.log.to_string().lines().count(), 2);
}

#[test]
fn one_step_lowers_batch_loss() {
    let corpus = separable_corpus(16, 0, 3);
    let view = TextView::default();
    let config = TrainConfig {
        epochs: 0,
        ..small_config(Pooling::Mean)
    };
    for pooling in [Pooling::Mean, Pooling::Attention] {
        let config = TrainConfig {
            pooling,
            ..config.clone()
        };
        let encoder = train(&corpus, &view, &config, None).unwrap().encoder;
        let pairs = training_pairs(&corpus, &view, true);
        let ids: Vec<u64> = pairs.iter().map(|p| p.fact_check_id).collect();
        let batch = Batch::new(
            pairs
                .iter()
                .map(|p| tokenize(&p.post_text, &encoder.vocab, 16))
                .collect(),
            pairs
                .iter()
                .map(|p| tokenize(&p.fact_check_text, &encoder.vocab, 16))
                .collect(),
            &ids,
            &ids,
        )
        .unwrap();
        let mut params = encoder.params.clone();
        let (before, grads) =
            batch_loss_and_grad(&params, &batch, 0.05, LossKind::Symmetric).unwrap();
        let mut state = OptimizerState::new(&params.shape);
        adamw_step(
            &mut params.weights,
            &grads,
            &mut state,
            &config.optimizer(),
            1.0,
        )
        .unwrap();
        let after = batch_loss(&params, &batch, 0.05, LossKind::Symmetric).unwrap();
        assert!(after < before, "{pooling}: {after} >= {before}");
    }
}

#[test]
fn held_out_fold_pipeline_runs() {
    let corpus = separable_corpus(40, 20, 4);
    let config = PipelineConfig {
        train: TrainConfig {
            folds: 5,
            ..small_config(Pooling::Mean)
        },
        fold: Some(1),
        negative_fraction: 0.3,
        ..PipelineConfig::default()
    };
    let out = run_pipeline(&corpus, &config).unwrap();
    assert_eq!(out.report.total, 8);
    assert_eq!(out.train.pairs.len(), 32);
    // 8 gold fact-checks plus 30% of the other 52
    assert_eq!(out.index.len(), 8 + 15);
    for list in out.predictions.values() {
        assert!(list.hits.len() <= 10);
        list.validate().unwrap();
    }
}
