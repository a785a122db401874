//! Full models of the three task framings: a shared embedding table and
//! sentence encoder feeding either an MLP classifier (single sentences or
//! pairs through relation features) or a GRU decoder.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Init, ParamSet, ParamVars, Real, Tape, Var};
use crate::encoders::{Encoder, EncoderConfig, EncoderInput, EncoderOutput};
use crate::error::{Error, Result};
use crate::heads::{cross_entropy, relation_features, Classifier, Decoder};
use crate::trees::TreeLayout;
use crate::vocab::PAD;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Classify,
    PairClassify,
    Seq2Seq,
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Classify => "classify",
            TaskKind::PairClassify => "pair-classify",
            TaskKind::Seq2Seq => "seq2seq",
        })
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "classify" => Ok(TaskKind::Classify),
            "pair-classify" | "pair" => Ok(TaskKind::PairClassify),
            "seq2seq" => Ok(TaskKind::Seq2Seq),
            other => Err(Error::invalid(format!("unknown task kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-forward state: whether dropout and sampled Gumbel merges are active,
/// and the generator for those and for random layouts.
#[derive(Debug, Clone)]
pub struct ForwardCtx {
    pub mode: Mode,
    pub rng: ChaCha8Rng,
}

impl ForwardCtx {
    pub fn train(seed: u64) -> Self {
        ForwardCtx {
            mode: Mode::Train,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn eval(seed: u64) -> Self {
        ForwardCtx {
            mode: Mode::Eval,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub task: TaskKind,
    pub encoder: EncoderConfig,
    pub vocab_size: usize,
    /// Decoder vocabulary (seq2seq only).
    pub target_vocab_size: usize,
    pub num_classes: usize,
    pub mlp_hidden: usize,
    pub decoder_embed_dim: usize,
    pub max_decode_len: usize,
    pub dropout: f64,
    pub freeze_embeddings: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            task: TaskKind::Classify,
            encoder: EncoderConfig::default(),
            vocab_size: 0,
            target_vocab_size: 0,
            num_classes: 2,
            mlp_hidden: 1024,
            decoder_embed_dim: 300,
            max_decode_len: 80,
            dropout: 0.0,
            freeze_embeddings: false,
        }
    }
}

/// Sentences as a padded `[batch, width]` id matrix plus true lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct Padded {
    pub ids: Vec<usize>,
    pub lengths: Vec<usize>,
    pub width: usize,
    pub layouts: Option<Vec<TreeLayout>>,
}

impl Padded {
    pub fn new(sentences: &[Vec<usize>], layouts: Option<Vec<TreeLayout>>) -> Result<Self> {
        if let Some(l) = &layouts {
            if l.len() != sentences.len() {
                return Err(Error::invalid("one layout per sentence is required"));
            }
        }
        let width = sentences.iter().map(Vec::len).max().unwrap_or(0);
        let mut ids = vec![PAD; width * sentences.len()];
        for (b, s) in sentences.iter().enumerate() {
            ids[b * width..b * width + s.len()].copy_from_slice(s);
        }
        Ok(Padded {
            ids,
            lengths: sentences.iter().map(Vec::len).collect(),
            width,
            layouts,
        })
    }

    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    pub fn sentence(&self, b: usize) -> &[usize] {
        &self.ids[b * self.width..b * self.width + self.lengths[b]]
    }

    /// Row of the padded matrix holding each real token.
    pub fn rows(&self) -> Vec<Vec<usize>> {
        self.lengths
            .iter()
            .enumerate()
            .map(|(b, &n)| (b * self.width..b * self.width + n).collect())
            .collect()
    }

    fn stacked(&self, other: &Padded) -> Result<Padded> {
        let mut s: Vec<Vec<usize>> = (0..self.len()).map(|b| self.sentence(b).to_vec()).collect();
        s.extend((0..other.len()).map(|b| other.sentence(b).to_vec()));
        let layouts = match (&self.layouts, &other.layouts) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).cloned().collect()),
            (None, None) => None,
            _ => return Err(Error::invalid("layouts given for only one side of a pair")),
        };
        Padded::new(&s, layouts)
    }
}

/// A training or evaluation batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub src: Padded,
    /// Second sentence of each pair.
    pub src2: Option<Padded>,
    pub labels: Option<Vec<usize>>,
    /// `BOS … EOS` target sequences.
    pub targets: Option<Vec<Vec<usize>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    Classes(Vec<usize>),
    Sequences(Vec<Vec<usize>>),
}

#[derive(Debug, Clone)]
enum Head {
    Classifier(Classifier),
    Decoder(Decoder),
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    encoder: Encoder,
    head: Head,
}

pub const EMBEDDING: &str = "emb.src";

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let encoder = Encoder::new(config.encoder.clone())?;
        if config.vocab_size == 0 {
            return Err(Error::invalid("vocabulary size must be positive"));
        }
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(Error::invalid(format!("dropout must lie in [0, 1), got {}", config.dropout)));
        }
        let d = encoder.encoding_dim();
        let head = match config.task {
            TaskKind::Classify => Head::Classifier(Classifier::new(d, config.mlp_hidden, config.num_classes)?),
            TaskKind::PairClassify => {
                Head::Classifier(Classifier::new(4 * d, config.mlp_hidden, config.num_classes)?)
            }
            TaskKind::Seq2Seq => {
                if config.max_decode_len == 0 {
                    return Err(Error::invalid("max decode length must be positive"));
                }
                Head::Decoder(Decoder::new(d, config.decoder_embed_dim, config.target_vocab_size)?)
            }
        };
        Ok(Model {
            config,
            encoder,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn init_params<T: Real>(&self, rng: &mut ChaCha8Rng) -> Result<ParamSet<T>> {
        let mut params = ParamSet::new();
        params.add(
            EMBEDDING,
            &[self.config.vocab_size, self.config.encoder.embed_dim],
            Init::Uniform(0.1),
            rng,
        )?;
        self.encoder.init_params(&mut params, rng)?;
        match &self.head {
            Head::Classifier(c) => c.init(&mut params, rng)?,
            Head::Decoder(d) => d.init(&mut params, rng)?,
        }
        Ok(params)
    }

    /// Whether `name` receives updates (embeddings may be frozen).
    pub fn trainable(&self, name: &str) -> bool {
        !(self.config.freeze_embeddings && name == EMBEDDING)
    }

    /// Encodes sentences whose embeddings are already on the tape as rows of
    /// `embedded`.
    pub fn encode_embedded<T: Real>(
        &self,
        tape: &mut Tape<'_, T>,
        pv: &ParamVars,
        embedded: Var,
        rows: &[Vec<usize>],
        layouts: Option<&[TreeLayout]>,
        ctx: &mut ForwardCtx,
    ) -> Result<EncoderOutput> {
        let input = EncoderInput {
            embedded,
            rows,
            layouts,
        };
        self.encoder
            .forward(tape, pv, &input, ctx.mode == Mode::Train, &mut ctx.rng)
    }

    /// Looks up every cell of the padded matrix (pad rows are never read by
    /// the encoder) and encodes.
    pub fn encode<T: Real>(
        &self,
        tape: &mut Tape<'_, T>,
        pv: &ParamVars,
        src: &Padded,
        ctx: &mut ForwardCtx,
    ) -> Result<EncoderOutput> {
        if src.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        if let Some(&id) = src.ids.iter().find(|&&id| id >= self.config.vocab_size) {
            return Err(Error::invalid(format!("token id {id} outside the vocabulary")));
        }
        let embedded = tape.embedding(pv.get(EMBEDDING)?, &src.ids)?;
        self.encode_embedded(tape, pv, embedded, &src.rows(), src.layouts.as_deref(), ctx)
    }

    fn features<T: Real>(
        &self,
        tape: &mut Tape<'_, T>,
        pv: &ParamVars,
        batch: &Batch,
        ctx: &mut ForwardCtx,
    ) -> Result<Var> {
        match self.config.task {
            TaskKind::PairClassify => {
                let src2 = batch
                    .src2
                    .as_ref()
                    .ok_or_else(|| Error::invalid("pair task batch lacks second sentences"))?;
                if src2.len() != batch.src.len() {
                    return Err(Error::invalid("pair sides differ in size"));
                }
                // both sides go through one encoder call
                let both = batch.src.stacked(src2)?;
                let enc = self.encode(tape, pv, &both, ctx)?.encoding;
                let n = batch.src.len();
                let s1 = tape.slice(enc, 0, 0, n)?;
                let s2 = tape.slice(enc, 0, n, 2 * n)?;
                relation_features(tape, s1, s2)
            }
            _ => Ok(self.encode(tape, pv, &batch.src, ctx)?.encoding),
        }
    }

    fn rate(&self, ctx: &ForwardCtx) -> f64 {
        if ctx.mode == Mode::Train {
            self.config.dropout
        } else {
            0.0
        }
    }

    /// Class logits `[batch, classes]` for the classification tasks.
    pub fn logits<T: Real>(
        &self,
        tape: &mut Tape<'_, T>,
        pv: &ParamVars,
        batch: &Batch,
        ctx: &mut ForwardCtx,
    ) -> Result<Var> {
        let Head::Classifier(c) = &self.head else {
            return Err(Error::invalid("logits requested from a seq2seq model"));
        };
        let feats = self.features(tape, pv, batch, ctx)?;
        let rate = self.rate(ctx);
        c.forward(tape, pv, feats, rate, &mut ctx.rng)
    }

    /// Training objective: mean cross-entropy for classification, mean
    /// per-token NLL for seq2seq.
    pub fn loss<T: Real>(
        &self,
        tape: &mut Tape<'_, T>,
        pv: &ParamVars,
        batch: &Batch,
        ctx: &mut ForwardCtx,
    ) -> Result<Var> {
        match &self.head {
            Head::Classifier(c) => {
                let labels = batch
                    .labels
                    .as_ref()
                    .ok_or_else(|| Error::invalid("classification batch lacks labels"))?;
                if let Some(&l) = labels.iter().find(|&&l| l >= c.classes) {
                    return Err(Error::invalid(format!("label {l} outside {} classes", c.classes)));
                }
                let logits = self.logits(tape, pv, batch, ctx)?;
                cross_entropy(tape, logits, labels)
            }
            Head::Decoder(d) => {
                let targets = batch
                    .targets
                    .as_ref()
                    .ok_or_else(|| Error::invalid("seq2seq batch lacks targets"))?;
                let enc = self.encode(tape, pv, &batch.src, ctx)?.encoding;
                Ok(d.teacher_forced(tape, pv, enc, targets)?.loss)
            }
        }
    }

    pub fn predict<T: Real>(
        &self,
        tape: &mut Tape<'_, T>,
        pv: &ParamVars,
        batch: &Batch,
        ctx: &mut ForwardCtx,
    ) -> Result<Prediction> {
        match &self.head {
            Head::Classifier(_) => {
                let logits = self.logits(tape, pv, batch, ctx)?;
                let v = tape.value(logits);
                let preds = (0..v.rows())
                    .map(|r| {
                        let row = v.row(r);
                        (1..row.len()).fold(0, |best, i| if row[i] > row[best] { i } else { best })
                    })
                    .collect();
                Ok(Prediction::Classes(preds))
            }
            Head::Decoder(d) => {
                let enc = self.encode(tape, pv, &batch.src, ctx)?.encoding;
                Ok(Prediction::Sequences(d.greedy(tape, pv, enc, self.config.max_decode_len)?))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::encoders::{LayoutKind, LeafRnn};
    use crate::pooling::Pooling;
    use crate::vocab::{BOS, EOS};

    fn small(task: TaskKind, layout: LayoutKind) -> ModelConfig {
        ModelConfig {
            task,
            encoder: EncoderConfig {
                layout,
                leaf_rnn: LeafRnn::Bidirectional,
                embed_dim: 3,
                leaf_rnn_dim: 2,
                hidden_dim: 4,
                pooling: Pooling::None,
                gumbel_temperature: 1.0,
            },
            vocab_size: 10,
            target_vocab_size: 10,
            num_classes: 3,
            mlp_hidden: 5,
            decoder_embed_dim: 3,
            max_decode_len: 6,
            dropout: 0.0,
            freeze_embeddings: false,
        }
    }

    fn batch(task: TaskKind) -> Batch {
        let s = vec![vec![4, 5, 6], vec![7], vec![8, 9, 4, 5]];
        let src = Padded::new(&s, None).unwrap();
        Batch {
            src2: (task == TaskKind::PairClassify).then(|| Padded::new(&[vec![5, 5], vec![6, 7, 8], vec![9]], None).unwrap()),
            labels: (task != TaskKind::Seq2Seq).then(|| vec![0, 2, 1]),
            targets: (task == TaskKind::Seq2Seq).then(|| {
                s.iter()
                    .map(|x| std::iter::once(BOS).chain(x.iter().copied()).chain([EOS]).collect())
                    .collect()
            }),
            src,
        }
    }

    #[test]
    fn padded_layout_and_rows() {
        let p = Padded::new(&[vec![4, 5], vec![6, 7, 8]], None).unwrap();
        assert_eq!(p.ids, [4, 5, PAD, 6, 7, 8]);
        assert_eq!(p.rows(), [vec![0, 1], vec![3, 4, 5]]);
        assert_eq!(p.sentence(1), [6, 7, 8]);
    }

    #[test]
    fn end_to_end_gradients_for_every_task() {
        for task in [TaskKind::Classify, TaskKind::PairClassify, TaskKind::Seq2Seq] {
            let model = Model::new(small(task, LayoutKind::Balanced)).unwrap();
            let params: ParamSet<f64> = model.init_params(&mut ChaCha8Rng::seed_from_u64(1)).unwrap();
            let b = batch(task);
            let err = grad_check(&params, 1e-4, |tape, pv| {
                model.loss(tape, pv, &b, &mut ForwardCtx::eval(0))
            })
            .unwrap();
            assert!(err < 1e-4, "{task}: relative error {err}");
        }
    }

    #[test]
    fn predictions_have_the_right_shape() {
        for task in [TaskKind::Classify, TaskKind::PairClassify, TaskKind::Seq2Seq] {
            let model = Model::new(small(task, LayoutKind::Gumbel)).unwrap();
            let params: ParamSet<f32> = model.init_params(&mut ChaCha8Rng::seed_from_u64(2)).unwrap();
            let mut tape = Tape::new();
            let pv = params.attach(&mut tape, |_| false);
            match model.predict(&mut tape, &pv, &batch(task), &mut ForwardCtx::eval(0)).unwrap() {
                Prediction::Classes(c) => assert!(c.len() == 3 && c.iter().all(|&x| x < 3)),
                Prediction::Sequences(s) => assert!(s.len() == 3 && s.iter().all(|x| x.len() <= 6)),
            }
        }
    }

    #[test]
    fn frozen_embeddings_are_not_trainable() {
        let mut cfg = small(TaskKind::Classify, LayoutKind::Left);
        cfg.freeze_embeddings = true;
        let model = Model::new(cfg).unwrap();
        assert!(!model.trainable(EMBEDDING));
        assert!(model.trainable("cls.w1"));
    }

    #[test]
    fn bad_configs_and_batches_are_rejected() {
        let mut cfg = small(TaskKind::Classify, LayoutKind::Left);
        cfg.num_classes = 1;
        assert!(Model::new(cfg).is_err());
        let model = Model::new(small(TaskKind::Classify, LayoutKind::Left)).unwrap();
        let params: ParamSet<f64> = model.init_params(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut tape = Tape::new();
        let pv = params.attach(&mut tape, |_| true);
        let mut b = batch(TaskKind::Classify);
        b.labels = Some(vec![0, 3, 1]);
        assert!(model.loss(&mut tape, &pv, &b, &mut ForwardCtx::eval(0)).is_err());
        b.labels = None;
        assert!(model.loss(&mut tape, &pv, &b, &mut ForwardCtx::eval(0)).is_err());
        let mut b = batch(TaskKind::Classify);
        b.src = Padded::new(&[vec![42]], None).unwrap();
        assert!(model.loss(&mut tape, &pv, &b, &mut ForwardCtx::eval(0)).is_err());
    }

    #[test]
    fn task_names_round_trip() {
        for t in [TaskKind::Classify, TaskKind::PairClassify, TaskKind::Seq2Seq] {
            assert_eq!(t.to_string().parse::<TaskKind>().unwrap(), t);
        }
    }
}
