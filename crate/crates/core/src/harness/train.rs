use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::Adam;
use super::checkpoint::Checkpoint;
use super::data::{Dataset, Example};
use super::embeddings::{load_embeddings, Coverage};
use super::metrics::{accuracy, accuracy_by_length, bleu, bleu_by_length, BleuLevel, BleuOptions, BucketMetric};
use crate::autodiff::{ParamSet, Precision, Real, Tape};
use crate::config::Config;
use crate::encoders::{EncoderConfig, LayoutKind};
use crate::error::{Error, Result};
use crate::model::{Batch, ForwardCtx, Model, ModelConfig, Padded, Prediction, TaskKind, EMBEDDING};
use crate::saliency::{word_saliency, SaliencyProfile};
use crate::trees::TreeLayout;
use crate::vocab::{Vocab, BOS, EOS};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    /// Training examples with a longer source or target are dropped.
    pub max_len: usize,
    pub epochs: usize,
    pub seed: u64,
    pub dropout: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub precision: Precision,
    /// Tokens rarer than this in the training split map to `<unk>`.
    pub min_count: usize,
    pub bleu: BleuOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            batch_size: 64,
            max_len: 64,
            epochs: 10,
            seed: 0,
            dropout: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            precision: Precision::Single,
            min_count: 1,
            bleu: BleuOptions::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.batch_size > 0
            && self.max_len > 0
            && (0.0..1.0).contains(&self.dropout)
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid training settings: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DataPaths {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub train_trees: Option<PathBuf>,
    pub dev_trees: Option<PathBuf>,
    pub test_trees: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
}

/// Everything that determines a run. Zero vocabulary sizes and class counts
/// are filled in from the data when training starts.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataPaths,
}

impl Default for Experiment {
    fn default() -> Self {
        Experiment {
            model: ModelConfig {
                vocab_size: 0,
                num_classes: 0,
                ..ModelConfig::default()
            },
            train: TrainConfig::default(),
            data: DataPaths::default(),
        }
    }
}

const KEYS: &[&str] = &[
    "task",
    "encoder.layout",
    "encoder.leaf_rnn",
    "encoder.embed_dim",
    "encoder.leaf_rnn_dim",
    "encoder.hidden_dim",
    "encoder.pooling",
    "encoder.gumbel_temperature",
    "model.vocab_size",
    "model.target_vocab_size",
    "model.num_classes",
    "model.mlp_hidden",
    "model.decoder_embed_dim",
    "model.max_decode_len",
    "model.freeze_embeddings",
    "train.lr",
    "train.batch_size",
    "train.max_len",
    "train.epochs",
    "train.seed",
    "train.dropout",
    "train.beta1",
    "train.beta2",
    "train.eps",
    "train.precision",
    "train.min_count",
    "train.bleu_level",
    "train.bleu_smoothing",
    "data.train",
    "data.dev",
    "data.test",
    "data.train_trees",
    "data.dev_trees",
    "data.test_trees",
    "data.embeddings",
];

impl Experiment {
    /// Reads every recognised key, defaulting the rest; unknown keys fail.
    pub fn from_config(c: &Config) -> Result<Self> {
        c.check_known(KEYS)?;
        let d = Experiment::default();
        let (m, e, t) = (&d.model, &d.model.encoder, &d.train);
        let encoder = EncoderConfig {
            layout: c.get_or("encoder.layout", e.layout)?,
            leaf_rnn: c.get_or("encoder.leaf_rnn", e.leaf_rnn)?,
            embed_dim: c.get_or("encoder.embed_dim", e.embed_dim)?,
            leaf_rnn_dim: c.get_or("encoder.leaf_rnn_dim", e.leaf_rnn_dim)?,
            hidden_dim: c.get_or("encoder.hidden_dim", e.hidden_dim)?,
            pooling: c.get_or("encoder.pooling", e.pooling)?,
            gumbel_temperature: c.get_or("encoder.gumbel_temperature", e.gumbel_temperature)?,
        };
        let train = TrainConfig {
            lr: c.get_or("train.lr", t.lr)?,
            batch_size: c.get_or("train.batch_size", t.batch_size)?,
            max_len: c.get_or("train.max_len", t.max_len)?,
            epochs: c.get_or("train.epochs", t.epochs)?,
            seed: c.get_or("train.seed", t.seed)?,
            dropout: c.get_or("train.dropout", t.dropout)?,
            beta1: c.get_or("train.beta1", t.beta1)?,
            beta2: c.get_or("train.beta2", t.beta2)?,
            eps: c.get_or("train.eps", t.eps)?,
            precision: c.get_or("train.precision", t.precision)?,
            min_count: c.get_or("train.min_count", t.min_count)?,
            bleu: BleuOptions {
                level: c.get_or("train.bleu_level", BleuLevel::Word)?,
                max_n: 4,
                smoothing: c.get_or("train.bleu_smoothing", false)?,
            },
        };
        train.validate()?;
        let model = ModelConfig {
            task: c.get_or("task", m.task)?,
            encoder,
            vocab_size: c.get_or("model.vocab_size", m.vocab_size)?,
            target_vocab_size: c.get_or("model.target_vocab_size", m.target_vocab_size)?,
            num_classes: c.get_or("model.num_classes", m.num_classes)?,
            mlp_hidden: c.get_or("model.mlp_hidden", m.mlp_hidden)?,
            decoder_embed_dim: c.get_or("model.decoder_embed_dim", m.decoder_embed_dim)?,
            max_decode_len: c.get_or("model.max_decode_len", m.max_decode_len)?,
            dropout: train.dropout,
            freeze_embeddings: c.get_or("model.freeze_embeddings", m.freeze_embeddings)?,
        };
        model.encoder.validate().map_err(|e| Error::Config(e.to_string()))?;
        let data = DataPaths {
            train: c.get_opt("data.train")?,
            dev: c.get_opt("data.dev")?,
            test: c.get_opt("data.test")?,
            train_trees: c.get_opt("data.train_trees")?,
            dev_trees: c.get_opt("data.dev_trees")?,
            test_trees: c.get_opt("data.test_trees")?,
            embeddings: c.get_opt("data.embeddings")?,
        };
        Ok(Experiment { model, train, data })
    }

    pub fn to_config(&self) -> Config {
        let (m, e, t) = (&self.model, &self.model.encoder, &self.train);
        let mut c = Config::new();
        c.set("task", m.task);
        c.set("encoder.layout", e.layout);
        c.set("encoder.leaf_rnn", e.leaf_rnn);
        c.set("encoder.embed_dim", e.embed_dim);
        c.set("encoder.leaf_rnn_dim", e.leaf_rnn_dim);
        c.set("encoder.hidden_dim", e.hidden_dim);
        c.set("encoder.pooling", e.pooling);
        c.set("encoder.gumbel_temperature", e.gumbel_temperature);
        c.set("model.vocab_size", m.vocab_size);
        c.set("model.target_vocab_size", m.target_vocab_size);
        c.set("model.num_classes", m.num_classes);
        c.set("model.mlp_hidden", m.mlp_hidden);
        c.set("model.decoder_embed_dim", m.decoder_embed_dim);
        c.set("model.max_decode_len", m.max_decode_len);
        c.set("model.freeze_embeddings", m.freeze_embeddings);
        c.set("train.lr", t.lr);
        c.set("train.batch_size", t.batch_size);
        c.set("train.max_len", t.max_len);
        c.set("train.epochs", t.epochs);
        c.set("train.seed", t.seed);
        c.set("train.dropout", t.dropout);
        c.set("train.beta1", t.beta1);
        c.set("train.beta2", t.beta2);
        c.set("train.eps", t.eps);
        c.set("train.precision", t.precision.as_str());
        c.set("train.min_count", t.min_count);
        c.set("train.bleu_level", t.bleu.level);
        c.set("train.bleu_smoothing", t.bleu.smoothing);
        let d = &self.data;
        for (k, v) in [
            ("data.train", &d.train),
            ("data.dev", &d.dev),
            ("data.test", &d.test),
            ("data.train_trees", &d.train_trees),
            ("data.dev_trees", &d.dev_trees),
            ("data.test_trees", &d.test_trees),
            ("data.embeddings", &d.embeddings),
        ] {
            if let Some(p) = v {
                c.set(k, p.display());
            }
        }
        c
    }
}

/// An example mapped to vocabulary ids; targets are wrapped in `BOS … EOS`.
#[derive(Debug, Clone)]
struct Prepared {
    src: Vec<usize>,
    src2: Option<Vec<usize>>,
    label: Option<usize>,
    target: Option<Vec<usize>>,
    tree: Option<TreeLayout>,
    tree2: Option<TreeLayout>,
}

fn prepare(ex: &Example, task: TaskKind, vocab: &Vocab, target_vocab: Option<&Vocab>) -> Result<Prepared> {
    let missing = |what: &str| Error::invalid(format!("a {task} example lacks its {what}"));
    let target = match task {
        TaskKind::Seq2Seq => {
            let t = ex.target.as_ref().ok_or_else(|| missing("target"))?;
            let tv = target_vocab.ok_or_else(|| missing("target vocabulary"))?;
            Some(std::iter::once(BOS).chain(tv.encode(t)).chain([EOS]).collect())
        }
        _ => None,
    };
    let label = match task {
        TaskKind::Seq2Seq => None,
        _ => Some(ex.label.ok_or_else(|| missing("label"))?),
    };
    let src2 = match task {
        TaskKind::PairClassify => Some(vocab.encode(ex.text2.as_ref().ok_or_else(|| missing("second sentence"))?)),
        _ => None,
    };
    Ok(Prepared {
        src: vocab.encode(&ex.text),
        src2,
        label,
        target,
        tree: ex.tree.clone(),
        tree2: ex.tree2.clone(),
    })
}

fn make_batch(items: &[&Prepared], parsed: bool) -> Result<Batch> {
    let trees = |get: fn(&Prepared) -> Option<&TreeLayout>| -> Result<Option<Vec<TreeLayout>>> {
        if !parsed {
            return Ok(None);
        }
        items
            .iter()
            .map(|p| get(p).cloned().ok_or_else(|| Error::invalid("parsed layout requested but an example has no tree")))
            .collect::<Result<Vec<_>>>()
            .map(Some)
    };
    let src: Vec<Vec<usize>> = items.iter().map(|p| p.src.clone()).collect();
    let src = Padded::new(&src, trees(|p| p.tree.as_ref())?)?;
    let src2 = if items.iter().all(|p| p.src2.is_some()) && !items.is_empty() {
        let s2: Vec<Vec<usize>> = items.iter().map(|p| p.src2.clone().expect("checked")).collect();
        Some(Padded::new(&s2, trees(|p| p.tree2.as_ref())?)?)
    } else {
        None
    };
    Ok(Batch {
        src,
        src2,
        labels: items.iter().map(|p| p.label).collect(),
        targets: items.iter().map(|p| p.target.clone()).collect(),
    })
}

fn too_long(ex: &Example, max_len: usize) -> bool {
    ex.text.len() > max_len
        || ex.text2.as_ref().is_some_and(|t| t.len() > max_len)
        || ex.target.as_ref().is_some_and(|t| t.len() > max_len)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    /// Mean of the per-batch training losses.
    pub train_loss: f64,
    pub dev_metric: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters of the epoch with the best dev metric (the last epoch
    /// without a dev split).
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    /// Training examples removed by the length filter.
    pub dropped: usize,
    pub coverage: Option<Coverage>,
}

/// Trains from scratch. A pure function of its arguments: identical inputs
/// give bit-identical outcomes.
pub fn train(exp: &Experiment, data: &Dataset) -> Result<TrainOutcome> {
    match exp.train.precision {
        Precision::Single => train_typed::<f32>(exp, data),
        Precision::Double => train_typed::<f64>(exp, data),
    }
}

/// Number of optimizer steps in one epoch over `n` examples.
pub fn steps_per_epoch(n: usize, batch_size: usize) -> usize {
    n.div_ceil(batch_size)
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn train_typed<T: Real>(exp: &Experiment, data: &Dataset) -> Result<TrainOutcome> {
    exp.train.validate()?;
    let task = exp.model.task;
    if data.task != task {
        return Err(Error::Config(format!("a {task} model cannot train on a {} dataset", data.task)));
    }
    let tc = &exp.train;
    let kept: Vec<&Example> = data.train.iter().filter(|e| !too_long(e, tc.max_len)).collect();
    let dropped = data.train.len() - kept.len();
    if kept.is_empty() {
        return Err(Error::invalid(format!(
            "no training examples of at most {} tokens",
            tc.max_len
        )));
    }

    let vocab = Vocab::build(
        kept.iter()
            .flat_map(|e| std::iter::once(e.text.as_slice()).chain(e.text2.as_deref())),
        tc.min_count,
    );
    let target_vocab = (task == TaskKind::Seq2Seq).then(|| {
        Vocab::build(kept.iter().filter_map(|e| e.target.as_deref()), tc.min_count)
    });
    let mut mc = exp.model.clone();
    mc.dropout = tc.dropout;
    mc.vocab_size = vocab.len();
    mc.target_vocab_size = target_vocab.as_ref().map_or(0, Vocab::len);
    if task != TaskKind::Seq2Seq && mc.num_classes == 0 {
        let top = data
            .train
            .iter()
            .chain(&data.dev)
            .chain(&data.test)
            .filter_map(|e| e.label)
            .max()
            .unwrap_or(0);
        mc.num_classes = (top + 1).max(2);
    }
    let model = Model::new(mc.clone())?;
    let mut effective = exp.clone();
    effective.model = mc;

    let mut params: ParamSet<T> = model.init_params(&mut ChaCha8Rng::seed_from_u64(tc.seed))?;
    let coverage = match &exp.data.embeddings {
        Some(p) => Some(load_embeddings(p, &vocab, params.get_mut(EMBEDDING)?)?),
        None => None,
    };

    let train_set = kept
        .iter()
        .map(|e| prepare(e, task, &vocab, target_vocab.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let parsed = exp.model.encoder.layout == LayoutKind::Parsed;
    let mut shuffle_rng = stream_rng(tc.seed, 1);
    let mut ctx = ForwardCtx::train(0);
    ctx.rng = stream_rng(tc.seed, 2);
    let mut adam = Adam::<T>::new(tc.beta1, tc.beta2, tc.eps);
    let evaluator = Evaluator {
        model: &model,
        vocab: &vocab,
        target_vocab: target_vocab.as_ref(),
        train: tc,
    };

    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ParamSet<T>, Adam<T>)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=tc.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(tc.batch_size) {
            let items: Vec<&Prepared> = chunk.iter().map(|&i| &train_set[i]).collect();
            let batch = make_batch(&items, parsed)?;
            let (loss, grads) = {
                let mut tape = Tape::new();
                let pv = params.attach(&mut tape, |n| model.trainable(n));
                let l = model.loss(&mut tape, &pv, &batch, &mut ctx)?;
                let lv = tape.value(l).item().as_f64();
                if !lv.is_finite() {
                    return Err(Error::NonFinite(format!("training loss at epoch {epoch}, step {}", steps + 1)));
                }
                (lv, tape.backward(l)?.into_named())
            };
            adam.update(&mut params, &grads, tc.lr, |n| model.trainable(n))?;
            loss_sum += loss;
            steps += 1;
        }
        let dev_metric = if data.dev.is_empty() {
            None
        } else {
            Some(evaluator.evaluate(&params, &data.dev)?.value)
        };
        history.push(EpochRecord {
            epoch,
            steps,
            train_loss: loss_sum / steps as f64,
            dev_metric,
        });
        let improved = match (&best, dev_metric) {
            (None, _) => true,
            (Some(_), None) => true,
            (Some((b, ..)), Some(m)) => m > *b,
        };
        if improved {
            best = Some((dev_metric.unwrap_or(f64::NEG_INFINITY), epoch, params.clone(), adam.clone()));
        }
    }
    let (best_epoch, params, adam) = match best {
        Some((_, e, p, a)) => (e, p, a),
        None => (0, params, adam),
    };
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            config: effective.to_config(),
            vocab,
            target_vocab,
            params: params.cast(),
            adam: Some(adam.cast()),
        },
        history,
        best_epoch,
        dropped,
        coverage,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum EvalOutcome {
    Classes { predicted: Vec<usize>, gold: Vec<usize> },
    Sequences { hypotheses: Vec<Vec<String>>, references: Vec<Vec<String>> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// `accuracy` (a fraction) or `bleu` (0–100).
    pub metric: &'static str,
    pub value: f64,
    /// Source length of every example, for length grouping.
    pub lengths: Vec<usize>,
    pub outcome: EvalOutcome,
    pub bleu: BleuOptions,
}

impl EvalReport {
    pub fn by_length(&self) -> Result<Vec<BucketMetric>> {
        match &self.outcome {
            EvalOutcome::Classes { predicted, gold } => accuracy_by_length(&self.lengths, predicted, gold),
            EvalOutcome::Sequences { hypotheses, references } => {
                bleu_by_length(&self.lengths, hypotheses, references, self.bleu)
            }
        }
    }
}

struct Evaluator<'a> {
    model: &'a Model,
    vocab: &'a Vocab,
    target_vocab: Option<&'a Vocab>,
    train: &'a TrainConfig,
}

impl Evaluator<'_> {
    fn evaluate<T: Real>(&self, params: &ParamSet<T>, examples: &[Example]) -> Result<EvalReport> {
        if examples.is_empty() {
            return Err(Error::invalid("cannot evaluate an empty split"));
        }
        let task = self.model.config().task;
        let prepared = examples
            .iter()
            .map(|e| prepare(e, task, self.vocab, self.target_vocab))
            .collect::<Result<Vec<_>>>()?;
        let parsed = self.model.config().encoder.layout == LayoutKind::Parsed;
        let mut ctx = ForwardCtx::eval(0);
        ctx.rng = stream_rng(self.train.seed, 3);
        let mut classes = Vec::new();
        let mut sequences = Vec::new();
        for chunk in prepared.chunks(self.train.batch_size) {
            let items: Vec<&Prepared> = chunk.iter().collect();
            let batch = make_batch(&items, parsed)?;
            let mut tape = Tape::new();
            let pv = params.attach(&mut tape, |_| false);
            match self.model.predict(&mut tape, &pv, &batch, &mut ctx)? {
                Prediction::Classes(c) => classes.extend(c),
                Prediction::Sequences(s) => sequences.extend(s),
            }
        }
        let lengths = examples.iter().map(|e| e.text.len()).collect();
        let (metric, value, outcome) = if task == TaskKind::Seq2Seq {
            let tv = self.target_vocab.ok_or_else(|| Error::invalid("seq2seq model without a target vocabulary"))?;
            let hypotheses: Vec<Vec<String>> = sequences.iter().map(|s| tv.decode(s)).collect();
            let references: Vec<Vec<String>> = examples.iter().map(|e| e.target.clone().unwrap_or_default()).collect();
            let b = bleu(&hypotheses, &references, self.train.bleu)?.score;
            ("bleu", b, EvalOutcome::Sequences { hypotheses, references })
        } else {
            let gold: Vec<usize> = prepared.iter().map(|p| p.label.expect("prepared")).collect();
            let a = accuracy(&classes, &gold)?;
            ("accuracy", a, EvalOutcome::Classes { predicted: classes, gold })
        };
        Ok(EvalReport {
            metric,
            value,
            lengths,
            outcome,
            bleu: self.train.bleu,
        })
    }
}

/// A model restored from a checkpoint, ready for evaluation and analysis.
#[derive(Debug, Clone)]
pub struct Trained {
    pub experiment: Experiment,
    pub model: Model,
    pub vocab: Vocab,
    pub target_vocab: Option<Vocab>,
    pub params: ParamSet<f64>,
}

impl Trained {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let experiment = Experiment::from_config(&ckpt.config)?;
        let model = Model::new(experiment.model.clone())?;
        if ckpt.vocab.len() != experiment.model.vocab_size {
            return Err(Error::Checkpoint("vocabulary size disagrees with the stored config".into()));
        }
        Ok(Trained {
            experiment,
            model,
            vocab: ckpt.vocab.clone(),
            target_vocab: ckpt.target_vocab.clone(),
            params: ckpt.params.clone(),
        })
    }

    fn evaluator(&self) -> Evaluator<'_> {
        Evaluator {
            model: &self.model,
            vocab: &self.vocab,
            target_vocab: self.target_vocab.as_ref(),
            train: &self.experiment.train,
        }
    }

    /// Evaluates at the precision the model was trained in.
    pub fn evaluate(&self, examples: &[Example]) -> Result<EvalReport> {
        match self.experiment.train.precision {
            Precision::Single => self.evaluator().evaluate(&self.params.cast::<f32>(), examples),
            Precision::Double => self.evaluator().evaluate(&self.params, examples),
        }
    }

    /// Word saliency of each example's (first) sentence, computed in f64.
    pub fn saliency(&self, examples: &[Example]) -> Result<Vec<SaliencyProfile>> {
        let parsed = self.experiment.model.encoder.layout == LayoutKind::Parsed;
        let mut ctx = ForwardCtx::eval(0);
        ctx.rng = stream_rng(self.experiment.train.seed, 4);
        let mut out = Vec::with_capacity(examples.len());
        for chunk in examples.chunks(self.experiment.train.batch_size) {
            let ids: Vec<Vec<usize>> = chunk.iter().map(|e| self.vocab.encode(&e.text)).collect();
            let layouts = if parsed {
                Some(
                    chunk
                        .iter()
                        .map(|e| e.tree.clone().ok_or_else(|| Error::invalid("parsed layout requested but an example has no tree")))
                        .collect::<Result<Vec<_>>>()?,
                )
            } else {
                None
            };
            let src = Padded::new(&ids, layouts)?;
            out.extend(word_saliency(&self.model, &self.params, &src, &mut ctx)?);
        }
        Ok(out)
    }
}
