//! Sentence encoders: linear (bi-)LSTMs and binary tree-LSTMs over fixed,
//! parsed, random, or Gumbel-induced layouts, with optional bidirectional
//! leaf RNNs and pooling.

mod cells;
mod gumbel;
mod sequence;
mod tree;

use std::fmt;
use std::str::FromStr;

use rand::Rng;

pub use cells::{lstm_cell, tree_lstm_cell, LstmCell, LstmCellParams, TreeLstmCell, TreeLstmCellParams};
pub use gumbel::{encode_gumbel_sentence, GumbelSentence};
pub use sequence::{concat_states, run_lstm, SeqStates};
pub use tree::{affine_leaves, compose_layouts, LeafStates, TreeStates};

use crate::autodiff::{Init, ParamSet, ParamVars, Real, Tape, Var};
use crate::error::{Error, Result};
use crate::pooling::{self, AttentionParams, Pooling, ATTENTION_DIM};
use crate::trees::TreeLayout;

/// A row of a tape matrix (or a whole vector when the source is rank 1).
pub type RowRef = (Var, usize);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayoutKind {
    /// Layouts supplied with the data (bracketed trees).
    Parsed,
    Balanced,
    Left,
    Right,
    /// Balanced split with probability ρ, otherwise `(k − 1, 1)`.
    Random(f64),
    Gumbel,
    Linear,
    LinearBidirectional,
}

impl LayoutKind {
    pub fn is_tree(self) -> bool {
        !matches!(self, LayoutKind::Linear | LayoutKind::LinearBidirectional)
    }

    /// Builds the layout for an `n`-token sentence for the kinds that are
    /// determined by length (and the rng, for `Random`).
    pub fn build<R: Rng + ?Sized>(self, n: usize, rng: &mut R) -> Result<TreeLayout> {
        match self {
            LayoutKind::Balanced => TreeLayout::balanced(n),
            LayoutKind::Left => TreeLayout::left_branching(n),
            LayoutKind::Right => TreeLayout::right_branching(n),
            LayoutKind::Random(rho) => TreeLayout::random(n, rho, rng),
            other => Err(Error::invalid(format!(
                "layout kind `{other}` cannot be built from sentence length"
            ))),
        }
    }
}

impl fmt::Display for LayoutKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayoutKind::Parsed => f.write_str("parsed"),
            LayoutKind::Balanced => f.write_str("balanced"),
            LayoutKind::Left => f.write_str("left"),
            LayoutKind::Right => f.write_str("right"),
            LayoutKind::Random(rho) => write!(f, "random:{rho}"),
            LayoutKind::Gumbel => f.write_str("gumbel"),
            LayoutKind::Linear => f.write_str("linear"),
            LayoutKind::LinearBidirectional => f.write_str("linear-bidirectional"),
        }
    }
}

impl FromStr for LayoutKind {
    type Err = Error;

    /// Accepts the display names; `random` takes ρ as `random:0.5` or
    /// `random(0.5)`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let kind = match s {
            "parsed" => LayoutKind::Parsed,
            "balanced" => LayoutKind::Balanced,
            "left" | "left-branching" => LayoutKind::Left,
            "right" | "right-branching" => LayoutKind::Right,
            "gumbel" => LayoutKind::Gumbel,
            "linear" | "lstm" => LayoutKind::Linear,
            "linear-bidirectional" | "bilstm" => LayoutKind::LinearBidirectional,
            _ => {
                let rho = s
                    .strip_prefix("random:")
                    .or_else(|| s.strip_prefix("random(").and_then(|r| r.strip_suffix(')')))
                    .ok_or_else(|| Error::invalid(format!("unknown layout kind `{s}`")))?;
                let rho: f64 = rho
                    .trim()
                    .parse()
                    .map_err(|_| Error::invalid(format!("bad rho in `{s}`")))?;
                if !(0.0..=1.0).contains(&rho) {
                    return Err(Error::invalid(format!("rho must lie in [0, 1], got {rho}")));
                }
                LayoutKind::Random(rho)
            }
        };
        Ok(kind)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LeafRnn {
    #[default]
    None,
    Bidirectional,
}

impl fmt::Display for LeafRnn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LeafRnn::None => "none",
            LeafRnn::Bidirectional => "bidirectional",
        })
    }
}

impl FromStr for LeafRnn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "none" => Ok(LeafRnn::None),
            "bidirectional" | "bi" => Ok(LeafRnn::Bidirectional),
            other => Err(Error::invalid(format!("unknown leaf rnn `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub layout: LayoutKind,
    pub leaf_rnn: LeafRnn,
    pub embed_dim: usize,
    /// Per direction, for the leaf RNN and the bidirectional linear encoder.
    pub leaf_rnn_dim: usize,
    /// Tree cell width, and the unidirectional linear LSTM width.
    pub hidden_dim: usize,
    pub pooling: Pooling,
    pub gumbel_temperature: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            layout: LayoutKind::Balanced,
            leaf_rnn: LeafRnn::Bidirectional,
            embed_dim: 300,
            leaf_rnn_dim: 300,
            hidden_dim: 600,
            pooling: Pooling::None,
            gumbel_temperature: 1.0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.leaf_rnn_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::invalid("encoder dimensions must be positive"));
        }
        if let LayoutKind::Random(rho) = self.layout {
            if !(0.0..=1.0).contains(&rho) {
                return Err(Error::invalid(format!("rho must lie in [0, 1], got {rho}")));
            }
        }
        if !(self.gumbel_temperature > 0.0) {
            return Err(Error::invalid(format!(
                "gumbel temperature must be positive, got {}",
                self.gumbel_temperature
            )));
        }
        if self.layout.is_tree()
            && self.leaf_rnn == LeafRnn::Bidirectional
            && self.hidden_dim != 2 * self.leaf_rnn_dim
        {
            return Err(Error::invalid(format!(
                "a bidirectional leaf RNN feeds {}-dimensional leaves to a tree of width {}",
                2 * self.leaf_rnn_dim,
                self.hidden_dim
            )));
        }
        Ok(())
    }

    /// Size of one sentence encoding (and of every pooled state).
    pub fn encoding_dim(&self) -> usize {
        match self.layout {
            LayoutKind::Linear => self.hidden_dim,
            LayoutKind::LinearBidirectional => 2 * self.leaf_rnn_dim,
            _ => self.hidden_dim,
        }
    }
}

/// Packed embeddings for a batch: `rows[b][j]` is the row of `embedded`
/// holding token `j` of sentence `b`.
#[derive(Debug, Clone)]
pub struct EncoderInput<'a> {
    pub embedded: Var,
    pub rows: &'a [Vec<usize>],
    /// Required for [`LayoutKind::Parsed`]; overrides the built layouts of the
    /// other tree kinds when given.
    pub layouts: Option<&'a [TreeLayout]>,
}

#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// `[batch, encoding_dim]`.
    pub encoding: Var,
    /// Per sentence, the states a pooling layer sees: leaves then internal
    /// nodes for trees (2n − 1), positions for linear encoders (n).
    pub states: Vec<Vec<RowRef>>,
    /// Layout used per sentence (empty for linear encoders).
    pub layouts: Vec<TreeLayout>,
    /// Attention weights per sentence under self-attentive pooling.
    pub attention: Vec<Var>,
}

/// A sentence encoder bound to an [`EncoderConfig`]. Parameters live in a
/// shared [`ParamSet`] under the `enc.` and `pool.` prefixes.
#[derive(Debug, Clone)]
pub struct Encoder {
    config: EncoderConfig,
}

impl Encoder {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        Ok(Encoder { config })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn encoding_dim(&self) -> usize {
        self.config.encoding_dim()
    }

    fn linear_cells(&self) -> (LstmCell, Option<LstmCell>) {
        let c = &self.config;
        match c.layout {
            LayoutKind::LinearBidirectional => (
                LstmCell::new("enc.lstm.fwd", c.leaf_rnn_dim, c.embed_dim),
                Some(LstmCell::new("enc.lstm.bwd", c.leaf_rnn_dim, c.embed_dim)),
            ),
            _ => (LstmCell::new("enc.lstm.fwd", c.hidden_dim, c.embed_dim), None),
        }
    }

    fn leaf_cells(&self) -> (LstmCell, LstmCell) {
        let c = &self.config;
        (
            LstmCell::new("enc.leaf.fwd", c.leaf_rnn_dim, c.embed_dim),
            LstmCell::new("enc.leaf.bwd", c.leaf_rnn_dim, c.embed_dim),
        )
    }

    fn tree_cell(&self) -> TreeLstmCell {
        TreeLstmCell::new("enc.tree", self.config.hidden_dim)
    }

    pub fn init_params<T: Real, R: Rng + ?Sized>(
        &self,
        params: &mut ParamSet<T>,
        rng: &mut R,
    ) -> Result<()> {
        let c = &self.config;
        if c.layout.is_tree() {
            match c.leaf_rnn {
                LeafRnn::None => {
                    let (h, e) = (c.hidden_dim, c.embed_dim);
                    params.add("enc.leaf.w_h", &[h, e], Init::FanIn, rng)?;
                    params.add("enc.leaf.b_h", &[h], Init::Zeros, rng)?;
                    params.add("enc.leaf.w_c", &[h, e], Init::FanIn, rng)?;
                    params.add("enc.leaf.b_c", &[h], Init::Zeros, rng)?;
                }
                LeafRnn::Bidirectional => {
                    let (f, b) = self.leaf_cells();
                    f.init(params, rng)?;
                    b.init(params, rng)?;
                }
            }
            self.tree_cell().init(params, rng)?;
            if c.layout == LayoutKind::Gumbel {
                params.add("enc.gumbel.query", &[c.hidden_dim], Init::FanIn, rng)?;
            }
        } else {
            let (f, b) = self.linear_cells();
            f.init(params, rng)?;
            if let Some(b) = b {
                b.init(params, rng)?;
            }
        }
        if c.pooling == Pooling::SelfAttention {
            AttentionParams::init(params, "pool", ATTENTION_DIM, self.encoding_dim(), rng)?;
        }
        Ok(())
    }

    /// Encodes a batch. `sample` turns on stochastic Gumbel merge selection;
    /// `rng` also draws random layouts.
    pub fn forward<T: Real, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_, T>,
        pv: &ParamVars,
        input: &EncoderInput<'_>,
        sample: bool,
        rng: &mut R,
    ) -> Result<EncoderOutput> {
        if input.rows.is_empty() {
            return Err(Error::invalid("cannot encode an empty batch"));
        }
        if let Some(i) = input.rows.iter().position(Vec::is_empty) {
            return Err(Error::invalid(format!("sentence {i} is empty")));
        }
        let (roots, states, layouts) = match self.config.layout {
            LayoutKind::Linear | LayoutKind::LinearBidirectional => {
                let (r, s) = self.encode_linear(tape, pv, input)?;
                (r, s, Vec::new())
            }
            LayoutKind::Gumbel => self.encode_gumbel(tape, pv, input, sample, rng)?,
            kind => {
                let layouts = match input.layouts {
                    Some(l) => l.to_vec(),
                    None if kind == LayoutKind::Parsed => {
                        return Err(Error::invalid("parsed layouts were not supplied"));
                    }
                    None => input
                        .rows
                        .iter()
                        .map(|r| kind.build(r.len(), rng))
                        .collect::<Result<_>>()?,
                };
                let (r, s) = self.encode_tree(tape, pv, input, &layouts)?;
                (r, s, layouts)
            }
        };

        let mut attention = Vec::new();
        let encoding = if self.config.pooling == Pooling::None {
            tape.gather_rows(&roots)?
        } else {
            let att = match self.config.pooling {
                Pooling::SelfAttention => Some(AttentionParams::bind(pv, "pool")?),
                _ => None,
            };
            let mut pooled = Vec::with_capacity(states.len());
            for s in &states {
                let h = tape.gather_rows(s)?;
                let (v, a) = pooling::pool(tape, self.config.pooling, att.as_ref(), h)?;
                pooled.push((v, 0));
                attention.extend(a);
            }
            tape.gather_rows(&pooled)?
        };
        Ok(EncoderOutput {
            encoding,
            states,
            layouts,
            attention,
        })
    }

    fn encode_linear<T: Real>(
        &self,
        tape: &mut Tape<'_, T>,
        pv: &ParamVars,
        input: &EncoderInput<'_>,
    ) -> Result<(Vec<RowRef>, Vec<Vec<RowRef>>)> {
        let (fwd, bwd) = self.linear_cells();
        let fp = fwd.bind(pv)?;
        let f = run_lstm(tape, &fp, fwd.hidden, input.embedded, input.rows, false)?;
        match bwd {
            None => {
                let roots = f.h.iter().map(|s| *s.last().unwrap()).collect();
                Ok((roots, f.h))
            }
            Some(bwd) => {
                let bp = bwd.bind(pv)?;
                let b = run_lstm(tape, &bp, bwd.hidden, input.embedded, input.rows, true)?;
                let f_last: Vec<RowRef> = f.h.iter().map(|s| *s.last().unwrap()).collect();
                let b_first: Vec<RowRef> = b.h.iter().map(|s| s[0]).collect();
                let fl = tape.gather_rows(&f_last)?;
                let bf = tape.gather_rows(&b_first)?;
                let enc = tape.concat_last(&[fl, bf])?;
                let roots = (0..f_last.len()).map(|i| (enc, i)).collect();
                let states = concat_states(tape, &f.h, &b.h)?;
                Ok((roots, states))
            }
        }
    }

    /// Leaf `(h, c)` per token: affine maps of the embedding, or the
    /// concatenated states of the bidirectional leaf RNN.
    pub fn leaf_transform<T: Real>(
        &self,
        tape: &mut Tape<'_, T>,
        pv: &ParamVars,
        input: &EncoderInput<'_>,
    ) -> Result<LeafStates> {
        match self.config.leaf_rnn {
            LeafRnn::None => affine_leaves(
                tape,
                (pv.get("enc.leaf.w_h")?, pv.get("enc.leaf.b_h")?),
                (pv.get("enc.leaf.w_c")?, pv.get("enc.leaf.b_c")?),
                input.embedded,
                input.rows,
            ),
            LeafRnn::Bidirectional => {
                let (fwd, bwd) = self.leaf_cells();
                let (fp, bp) = (fwd.bind(pv)?, bwd.bind(pv)?);
                let d = self.config.leaf_rnn_dim;
                let f = run_lstm(tape, &fp, d, input.embedded, input.rows, false)?;
                let b = run_lstm(tape, &bp, d, input.embedded, input.rows, true)?;
                Ok(LeafStates {
                    h: concat_states(tape, &f.h, &b.h)?,
                    c: concat_states(tape, &f.c, &b.c)?,
                })
            }
        }
    }

    fn encode_tree<T: Real>(
        &self,
        tape: &mut Tape<'_, T>,
        pv: &ParamVars,
        input: &EncoderInput<'_>,
        layouts: &[TreeLayout],
    ) -> Result<(Vec<RowRef>, Vec<Vec<RowRef>>)> {
        let leaves = self.leaf_transform(tape, pv, input)?;
        let cell = self.tree_cell().bind(pv)?;
        let out = compose_layouts(tape, &cell, &leaves, layouts)?;
        let states = leaves
            .h
            .into_iter()
            .zip(out.internal)
            .map(|(mut l, i)| {
                l.extend(i);
                l
            })
            .collect();
        Ok((out.roots, states))
    }

    #[allow(clippy::type_complexity)]
    fn encode_gumbel<T: Real, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_, T>,
        pv: &ParamVars,
        input: &EncoderInput<'_>,
        sample: bool,
        rng: &mut R,
    ) -> Result<(Vec<RowRef>, Vec<Vec<RowRef>>, Vec<TreeLayout>)> {
        let leaves = self.leaf_transform(tape, pv, input)?;
        let cell = self.tree_cell().bind(pv)?;
        let query = pv.get("enc.gumbel.query")?;
        let mut roots = Vec::with_capacity(input.rows.len());
        let mut states = Vec::with_capacity(input.rows.len());
        let mut layouts = Vec::with_capacity(input.rows.len());
        for b in 0..input.rows.len() {
            let s = encode_gumbel_sentence(
                tape,
                &cell,
                query,
                &leaves,
                b,
                self.config.gumbel_temperature,
                sample,
                rng,
            )?;
            roots.push(s.root);
            let mut st = leaves.h[b].clone();
            st.extend(s.internal);
            states.push(st);
            layouts.push(s.layout);
        }
        Ok((roots, states, layouts))
    }
}

#[cfg(test)]
mod tests;
