//! Task heads: an MLP classifier, sentence-pair relation features, and a GRU
//! decoder trained with teacher forcing and decoded greedily.

use rand::Rng;

use crate::autodiff::{Init, ParamSet, ParamVars, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::vocab::{BOS, EOS};

/// Inverted dropout: zeroes entries with probability `rate` and rescales the
/// survivors by `1 / (1 - rate)`. A no-op for `rate == 0`.
pub fn dropout<T: Real, R: Rng + ?Sized>(
    tape: &mut Tape<'_, T>,
    x: Var,
    rate: f64,
    rng: &mut R,
) -> Result<Var> {
    if rate == 0.0 {
        return Ok(x);
    }
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("dropout rate must lie in [0, 1), got {rate}")));
    }
    let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
    let shape = tape.shape(x).to_vec();
    let mut mask = Tensor::zeros(&shape);
    for m in mask.data_mut() {
        if rng.random::<f64>() >= rate {
            *m = keep;
        }
    }
    tape.mul_const(x, &mask)
}

/// Two-layer ReLU MLP `input → hidden → classes` under the `cls.` prefix.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub input: usize,
    pub hidden: usize,
    pub classes: usize,
}

impl Classifier {
    pub fn new(input: usize, hidden: usize, classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(Error::invalid(format!(
                "a classifier needs at least two classes, got {classes}"
            )));
        }
        if input == 0 || hidden == 0 {
            return Err(Error::invalid("classifier dimensions must be positive"));
        }
        Ok(Classifier {
            input,
            hidden,
            classes,
        })
    }

    pub fn init<T: Real, R: Rng + ?Sized>(&self, params: &mut ParamSet<T>, rng: &mut R) -> Result<()> {
        params.add("cls.w1", &[self.hidden, self.input], Init::FanIn, rng)?;
        params.add("cls.b1", &[self.hidden], Init::Zeros, rng)?;
        params.add("cls.w2", &[self.classes, self.hidden], Init::FanIn, rng)?;
        params.add("cls.b2", &[self.classes], Init::Zeros, rng)?;
        Ok(())
    }

    /// Logits `[batch, classes]` for features `[batch, input]`, with dropout
    /// at `rate` on the input and on the hidden layer.
    pub fn forward<T: Real, R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_, T>,
        pv: &ParamVars,
        x: Var,
        rate: f64,
        rng: &mut R,
    ) -> Result<Var> {
        let x = dropout(tape, x, rate, rng)?;
        let h = tape.affine(x, pv.get("cls.w1")?, Some(pv.get("cls.b1")?))?;
        let h = tape.relu(h);
        let h = dropout(tape, h, rate, rng)?;
        tape.affine(h, pv.get("cls.w2")?, Some(pv.get("cls.b2")?))
    }
}

/// Mean negative log-likelihood of `labels` under row-wise `logits`.
pub fn cross_entropy<T: Real>(tape: &mut Tape<'_, T>, logits: Var, labels: &[usize]) -> Result<Var> {
    let lp = tape.log_softmax(logits)?;
    let picked = tape.pick(lp, labels)?;
    let total = tape.sum(picked);
    let n = T::from_f64_lossy(labels.len() as f64);
    Ok(tape.scale(total, -T::one() / n, T::zero()))
}

/// `[s1; s2; s1 − s2; s1 ⊙ s2]`, row-wise for `[batch, d]` inputs.
pub fn relation_features<T: Real>(tape: &mut Tape<'_, T>, s1: Var, s2: Var) -> Result<Var> {
    if tape.shape(s1) != tape.shape(s2) {
        return Err(Error::shape("relation_features", tape.shape(s1), tape.shape(s2)));
    }
    let diff = tape.sub(s1, s2)?;
    let prod = tape.mul(s1, s2)?;
    tape.concat_last(&[s1, s2, diff, prod])
}

#[derive(Debug, Clone, Copy)]
pub struct GruParams {
    pub w_u: Var,
    pub w_r: Var,
    pub w_h: Var,
    pub b_u: Var,
    pub b_r: Var,
    pub b_h: Var,
}

impl GruParams {
    pub fn init<T: Real, R: Rng + ?Sized>(
        params: &mut ParamSet<T>,
        prefix: &str,
        hidden: usize,
        input: usize,
        rng: &mut R,
    ) -> Result<()> {
        for g in ["u", "r", "h"] {
            params.add(&format!("{prefix}.w_{g}"), &[hidden, hidden + input], Init::FanIn, rng)?;
            params.add(&format!("{prefix}.b_{g}"), &[hidden], Init::Zeros, rng)?;
        }
        Ok(())
    }

    pub fn bind(pv: &ParamVars, prefix: &str) -> Result<Self> {
        let g = |n: &str| pv.get(&format!("{prefix}.{n}"));
        Ok(GruParams {
            w_u: g("w_u")?,
            w_r: g("w_r")?,
            w_h: g("w_h")?,
            b_u: g("b_u")?,
            b_r: g("b_r")?,
            b_h: g("b_h")?,
        })
    }
}

/// `u = σ(W_u[h,x]+b_u)`, `r = σ(W_r[h,x]+b_r)`, `h̃ = tanh(W_h[r⊙h, x]+b_h)`,
/// `h' = (1−u)⊙h + u⊙h̃`.
pub fn gru_cell<T: Real>(tape: &mut Tape<'_, T>, p: &GruParams, h: Var, x: Var) -> Result<Var> {
    let z = tape.concat_last(&[h, x])?;
    let u = tape.affine(z, p.w_u, Some(p.b_u))?;
    let u = tape.sigmoid(u);
    let r = tape.affine(z, p.w_r, Some(p.b_r))?;
    let r = tape.sigmoid(r);
    let rh = tape.mul(r, h)?;
    let z2 = tape.concat_last(&[rh, x])?;
    let cand = tape.affine(z2, p.w_h, Some(p.b_h))?;
    let cand = tape.tanh(cand);
    let keep = tape.scale(u, -T::one(), T::one());
    let old = tape.mul(keep, h)?;
    let new = tape.mul(u, cand)?;
    tape.add(old, new)
}

/// GRU decoder under the `dec.` prefix. Its hidden size equals the sentence
/// encoding size and its initial state is an affine map of the encoding.
#[derive(Debug, Clone)]
pub struct Decoder {
    pub encoding_dim: usize,
    pub embed_dim: usize,
    pub vocab_size: usize,
}

/// Teacher-forced decoding result.
#[derive(Debug, Clone, Copy)]
pub struct DecoderLoss {
    /// Mean NLL per scored (non-pad) target position.
    pub loss: Var,
    pub tokens: usize,
}

impl Decoder {
    pub fn new(encoding_dim: usize, embed_dim: usize, vocab_size: usize) -> Result<Self> {
        if encoding_dim == 0 || embed_dim == 0 || vocab_size <= EOS {
            return Err(Error::invalid("decoder dimensions must be positive and cover the special tokens"));
        }
        Ok(Decoder {
            encoding_dim,
            embed_dim,
            vocab_size,
        })
    }

    pub fn init<T: Real, R: Rng + ?Sized>(&self, params: &mut ParamSet<T>, rng: &mut R) -> Result<()> {
        let (d, e, v) = (self.encoding_dim, self.embed_dim, self.vocab_size);
        params.add("dec.emb", &[v, e], Init::Uniform(0.1), rng)?;
        params.add("dec.init.w", &[d, d], Init::FanIn, rng)?;
        params.add("dec.init.b", &[d], Init::Zeros, rng)?;
        GruParams::init(params, "dec.gru", d, e, rng)?;
        params.add("dec.out.w", &[v, d], Init::FanIn, rng)?;
        params.add("dec.out.b", &[v], Init::Zeros, rng)?;
        Ok(())
    }

    fn initial_state<T: Real>(&self, tape: &mut Tape<'_, T>, pv: &ParamVars, encoding: Var) -> Result<Var> {
        tape.affine(encoding, pv.get("dec.init.w")?, Some(pv.get("dec.init.b")?))
    }

    /// Scores `targets[b][1..]` given gold prefixes. Each target must start
    /// with BOS and end with EOS; `encoding` is `[batch, encoding_dim]`.
    pub fn teacher_forced<T: Real>(
        &self,
        tape: &mut Tape<'_, T>,
        pv: &ParamVars,
        encoding: Var,
        targets: &[Vec<usize>],
    ) -> Result<DecoderLoss> {
        if targets.len() != tape.shape(encoding)[0] {
            return Err(Error::invalid(format!(
                "{} targets for {} encodings",
                targets.len(),
                tape.shape(encoding)[0]
            )));
        }
        for t in targets {
            if t.len() < 2 || t[0] != BOS || *t.last().unwrap() != EOS {
                return Err(Error::invalid("decoder targets must be BOS … EOS with at least one step"));
            }
            if t.iter().any(|&id| id >= self.vocab_size) {
                return Err(Error::invalid("target id outside the decoder vocabulary"));
            }
        }
        let gru = GruParams::bind(pv, "dec.gru")?;
        let (emb, out_w, out_b) = (pv.get("dec.emb")?, pv.get("dec.out.w")?, pv.get("dec.out.b")?);
        let h0 = self.initial_state(tape, pv, encoding)?;

        let steps = targets.iter().map(Vec::len).max().unwrap() - 1;
        let mut h = h0;
        let mut active: Vec<usize> = (0..targets.len()).collect();
        let mut picked = Vec::with_capacity(steps);
        let mut tokens = 0;
        for t in 1..=steps {
            let next: Vec<usize> = active.iter().copied().filter(|&b| targets[b].len() > t).collect();
            if next.len() != active.len() {
                let keep: Vec<(Var, usize)> = active
                    .iter()
                    .enumerate()
                    .filter(|(_, b)| targets[**b].len() > t)
                    .map(|(k, _)| (h, k))
                    .collect();
                h = tape.gather_rows(&keep)?;
                active = next;
            }
            let prev: Vec<usize> = active.iter().map(|&b| targets[b][t - 1]).collect();
            let gold: Vec<usize> = active.iter().map(|&b| targets[b][t]).collect();
            let x = tape.embedding(emb, &prev)?;
            h = gru_cell(tape, &gru, h, x)?;
            let logits = tape.affine(h, out_w, Some(out_b))?;
            let lp = tape.log_softmax(logits)?;
            picked.push(tape.pick(lp, &gold)?);
            tokens += gold.len();
        }
        let all = tape.concat(&picked, 0)?;
        let total = tape.sum(all);
        let loss = tape.scale(total, -T::one() / T::from_f64_lossy(tokens as f64), T::zero());
        Ok(DecoderLoss { loss, tokens })
    }

    /// Argmax decoding (lowest id on ties) until EOS or `max_len` tokens.
    /// The returned sequences exclude BOS and EOS.
    pub fn greedy<T: Real>(
        &self,
        tape: &mut Tape<'_, T>,
        pv: &ParamVars,
        encoding: Var,
        max_len: usize,
    ) -> Result<Vec<Vec<usize>>> {
        let batch = tape.shape(encoding)[0];
        let gru = GruParams::bind(pv, "dec.gru")?;
        let (emb, out_w, out_b) = (pv.get("dec.emb")?, pv.get("dec.out.w")?, pv.get("dec.out.b")?);
        let mut h = self.initial_state(tape, pv, encoding)?;
        let mut out = vec![Vec::new(); batch];
        let mut active: Vec<usize> = (0..batch).collect();
        let mut prev = vec![BOS; batch];
        for _ in 0..max_len {
            if active.is_empty() {
                break;
            }
            let x = tape.embedding(emb, &prev)?;
            h = gru_cell(tape, &gru, h, x)?;
            let logits = tape.affine(h, out_w, Some(out_b))?;
            let lv = tape.value(logits);
            let mut keep = Vec::new();
            let mut next_prev = Vec::new();
            for (k, &b) in active.iter().enumerate() {
                let row = lv.row(k);
                let mut best = 0;
                for (i, &v) in row.iter().enumerate().skip(1) {
                    if v > row[best] {
                        best = i;
                    }
                }
                if best != EOS {
                    out[b].push(best);
                    keep.push(k);
                    next_prev.push(best);
                }
            }
            if keep.len() != active.len() {
                if keep.is_empty() {
                    break;
                }
                let rows: Vec<(Var, usize)> = keep.iter().map(|&k| (h, k)).collect();
                h = tape.gather_rows(&rows)?;
                active = keep.iter().map(|&k| active[k]).collect();
            }
            prev = next_prev;
        }
        Ok(out)
    }
}
