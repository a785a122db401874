use super::*;
use crate::config::Config;
use crate::encoders::{LayoutKind, LeafRnn};
use crate::model::TaskKind;
use crate::pooling::Pooling;
use crate::autodiff::Precision;

fn tiny(task: SynthTask, layout: LayoutKind, train_n: usize) -> (Experiment, Dataset) {
    let data = synth_generate(&SynthSpec {
        task,
        vocab: 10,
        min_len: 2,
        max_len: 6,
        classes: 3,
        train: train_n,
        dev: 12,
        test: 12,
        seed: 5,
    })
    .unwrap();
    let mut exp = Experiment::default();
    exp.model.task = task.task_kind();
    exp.model.encoder.layout = layout;
    exp.model.encoder.leaf_rnn = LeafRnn::None;
    exp.model.encoder.embed_dim = 6;
    exp.model.encoder.leaf_rnn_dim = 4;
    exp.model.encoder.hidden_dim = 8;
    exp.model.mlp_hidden = 8;
    exp.model.decoder_embed_dim = 5;
    exp.model.max_decode_len = 10;
    exp.train.batch_size = 16;
    exp.train.epochs = 2;
    exp.train.seed = 11;
    (exp, data)
}

#[test]
fn epoch_takes_ceil_n_over_batch_steps() {
    let (exp, data) = tiny(SynthTask::FirstTokenClass, LayoutKind::Balanced, 70);
    let out = train(&exp, &data).unwrap();
    assert_eq!(steps_per_epoch(70, 16), 5);
    assert!(out.history.iter().all(|r| r.steps == 5));
    assert_eq!(out.history.len(), 2);
    assert!(out.history.iter().all(|r| r.dev_metric.is_some()));
}

#[test]
fn training_is_deterministic_and_seed_dependent() {
    for task in [SynthTask::FirstTokenClass, SynthTask::Copy] {
        let (exp, data) = tiny(task, LayoutKind::Random(0.5), 40);
        let a = train(&exp, &data).unwrap();
        let b = train(&exp, &data).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
        let mut other = exp.clone();
        other.train.seed = 12;
        let c = train(&other, &data).unwrap();
        assert_ne!(c.checkpoint.params, a.checkpoint.params);
    }
}

#[test]
fn long_examples_are_dropped_before_batching() {
    let (mut exp, data) = tiny(SynthTask::Copy, LayoutKind::Left, 50);
    exp.train.max_len = 4;
    let keep = data.train.iter().filter(|e| e.text.len() <= 4).count();
    let out = train(&exp, &data).unwrap();
    assert_eq!(out.dropped, 50 - keep);
    assert_eq!(out.history[0].steps, steps_per_epoch(keep, 16));
    exp.train.max_len = 1;
    assert!(train(&exp, &data).is_err());
}

#[test]
fn checkpoint_round_trip_reproduces_evaluation() {
    for (task, precision) in [
        (SynthTask::FirstTokenClass, Precision::Single),
        (SynthTask::Reverse, Precision::Single),
        (SynthTask::LastTokenClass, Precision::Double),
    ] {
        let (mut exp, data) = tiny(task, LayoutKind::Gumbel, 40);
        exp.train.precision = precision;
        let out = train(&exp, &data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        out.checkpoint.save(&p).unwrap();
        let loaded = Checkpoint::load(&p).unwrap();
        let a = Trained::from_checkpoint(&out.checkpoint).unwrap().evaluate(&data.test).unwrap();
        let b = Trained::from_checkpoint(&loaded).unwrap().evaluate(&data.test).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.by_length().unwrap(), b.by_length().unwrap());
    }
}

#[test]
fn experiment_config_round_trips() {
    let (mut exp, _) = tiny(SynthTask::Copy, LayoutKind::Random(0.25), 10);
    exp.model.encoder.pooling = Pooling::SelfAttention;
    exp.train.bleu.smoothing = true;
    exp.data.train = Some("a/train.tsv".into());
    let text = exp.to_config().to_string();
    let back = Experiment::from_config(&Config::parse(&text).unwrap()).unwrap();
    assert_eq!(back, exp);
    let mut c = exp.to_config();
    c.set("train.learning_rate", 1);
    assert!(Experiment::from_config(&c).is_err());
    let mut c = exp.to_config();
    c.set("encoder.layout", "sideways");
    assert!(Experiment::from_config(&c).is_err());
}

#[test]
fn task_mismatch_and_missing_trees_fail() {
    let (mut exp, data) = tiny(SynthTask::Copy, LayoutKind::Balanced, 10);
    exp.model.task = TaskKind::Classify;
    assert!(train(&exp, &data).is_err());
    let (exp, data) = tiny(SynthTask::FirstTokenClass, LayoutKind::Parsed, 10);
    assert!(train(&exp, &data).is_err());
}

#[test]
fn parsed_layouts_come_from_the_examples() {
    let (exp, mut data) = tiny(SynthTask::FirstTokenClass, LayoutKind::Parsed, 30);
    for e in data.train.iter_mut().chain(&mut data.dev).chain(&mut data.test) {
        e.tree = Some(crate::trees::TreeLayout::right_branching(e.text.len()).unwrap());
    }
    let out = train(&exp, &data).unwrap();
    let t = Trained::from_checkpoint(&out.checkpoint).unwrap();
    t.evaluate(&data.test).unwrap();
    let s = t.saliency(&data.test).unwrap();
    assert!(s.iter().zip(&data.test).all(|(p, e)| p.scores.len() == e.text.len()));
}
