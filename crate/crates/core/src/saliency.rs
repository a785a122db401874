//! Word saliency as the L1 norm of the encoding-to-embedding Jacobian,
//! cross-model agreement of saliency profiles, and positional summaries.

use crate::autodiff::{ParamSet, Real, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::model::{ForwardCtx, Model, Padded, EMBEDDING};

/// Per-word saliency `J(s, w_k) = Σ_{i,j} |∂s_i / ∂w_kj|` of one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyProfile {
    pub scores: Vec<f64>,
}

impl SaliencyProfile {
    /// Scores divided by the sentence maximum (all zeros stay zero).
    pub fn normalized(&self) -> Vec<f64> {
        let max = self.scores.iter().cloned().fold(0.0, f64::max);
        if max > 0.0 {
            self.scores.iter().map(|s| s / max).collect()
        } else {
            vec![0.0; self.scores.len()]
        }
    }
}

/// Jacobian L1 norm of `encoding` (`[batch, d]` or `[d]`) with respect to
/// every row of the leaf `embedded`, one reverse pass per encoding
/// dimension. Seeding column `i` of every sentence at once is exact because
/// sentences never share computation.
pub fn input_saliency<T: Real>(tape: &Tape<'_, T>, encoding: Var, embedded: Var) -> Result<Vec<f64>> {
    let eshape = tape.shape(embedded).to_vec();
    if eshape.len() != 2 {
        return Err(Error::shape("input_saliency", &eshape, tape.shape(encoding)));
    }
    if !tape.requires_grad(embedded) {
        return Err(Error::invalid("saliency input must require gradients"));
    }
    let shape = tape.shape(encoding).to_vec();
    let d = *shape.last().ok_or_else(|| Error::shape("input_saliency", &shape, &eshape))?;
    let rows = shape.iter().product::<usize>() / d;
    let mut scores = vec![0.0; eshape[0]];
    for i in 0..d {
        let mut seed = Tensor::zeros(&shape);
        for r in 0..rows {
            seed.data_mut()[r * d + i] = T::one();
        }
        let g = tape.backward_seeded(encoding, &seed)?;
        let Some(ge) = g.get(embedded) else { continue };
        for (k, s) in scores.iter_mut().enumerate() {
            *s += ge.row(k).iter().map(|v| v.as_f64().abs()).sum::<f64>();
        }
    }
    Ok(scores)
}

/// Saliency of every cell of the padded matrix; pad cells never reach the
/// encoder and score exactly zero.
pub fn padded_saliency<T: Real>(
    model: &Model,
    params: &ParamSet<T>,
    src: &Padded,
    ctx: &mut ForwardCtx,
) -> Result<Vec<f64>> {
    if src.lengths.contains(&0) {
        return Err(Error::invalid("saliency of an empty sentence"));
    }
    let table = params.get(EMBEDDING)?;
    let e = table.cols();
    let mut values = Vec::with_capacity(src.ids.len() * e);
    for &id in &src.ids {
        if id >= table.rows() {
            return Err(Error::invalid(format!("token id {id} outside the vocabulary")));
        }
        values.extend_from_slice(table.row(id));
    }
    let mut tape = Tape::new();
    let pv = params.attach(&mut tape, |_| false);
    let embedded = tape.leaf(Some("embedded"), Tensor::new(vec![src.ids.len(), e], values)?, true);
    let out = model.encode_embedded(&mut tape, &pv, embedded, &src.rows(), src.layouts.as_deref(), ctx)?;
    input_saliency(&tape, out.encoding, embedded)
}

/// Per-word saliency profiles of every sentence of `src`.
pub fn word_saliency<T: Real>(
    model: &Model,
    params: &ParamSet<T>,
    src: &Padded,
    ctx: &mut ForwardCtx,
) -> Result<Vec<SaliencyProfile>> {
    let all = padded_saliency(model, params, src, ctx)?;
    Ok(src
        .lengths
        .iter()
        .enumerate()
        .map(|(b, &n)| SaliencyProfile {
            scores: all[b * src.width..b * src.width + n].to_vec(),
        })
        .collect())
}

/// Product-moment correlation. `None` when either input has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<Option<f64>> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::invalid(format!(
            "pearson needs two equal-length series of at least 2 values, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    // sqrt(v·v) == v exactly, so identical inputs give exactly 1
    Ok(Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairAgreement {
    pub first: usize,
    pub second: usize,
    /// Mean Pearson over sentences where it is defined; `None` if never.
    pub mean: Option<f64>,
    pub undefined: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agreement {
    /// Mean over ordered model pairs of the per-pair average Pearson, × 100.
    pub mean: Option<f64>,
    pub pairs: Vec<PairAgreement>,
    /// Length-1 sentences, excluded because correlation is undefined.
    pub excluded_short: usize,
}

/// Agreement of saliency profiles: `profiles[m][s]` is model `m`'s profile of
/// sentence `s`. Every ordered pair `(m, m')`, `m ≠ m'`, is averaged over
/// sentences; pairs are then averaged.
pub fn saliency_agreement(profiles: &[Vec<Vec<f64>>]) -> Result<Agreement> {
    if profiles.len() < 2 {
        return Err(Error::invalid("agreement needs at least two models"));
    }
    let n_sent = profiles[0].len();
    if profiles.iter().any(|p| p.len() != n_sent) {
        return Err(Error::invalid("models were profiled on different corpora"));
    }
    for s in 0..n_sent {
        let len = profiles[0][s].len();
        if profiles.iter().any(|p| p[s].len() != len) {
            return Err(Error::invalid(format!("sentence {s} has profiles of different lengths")));
        }
    }
    let keep: Vec<usize> = (0..n_sent).filter(|&s| profiles[0][s].len() >= 2).collect();
    let mut pairs = Vec::new();
    for a in 0..profiles.len() {
        for b in 0..profiles.len() {
            if a == b {
                continue;
            }
            let (mut sum, mut count, mut undefined) = (0.0, 0usize, 0usize);
            for &s in &keep {
                match pearson(&profiles[a][s], &profiles[b][s])? {
                    Some(r) => {
                        sum += r;
                        count += 1;
                    }
                    None => undefined += 1,
                }
            }
            pairs.push(PairAgreement {
                first: a,
                second: b,
                mean: (count > 0).then(|| sum / count as f64),
                undefined,
            });
        }
    }
    let defined: Vec<f64> = pairs.iter().filter_map(|p| p.mean).collect();
    let mean = (!defined.is_empty()).then(|| 100.0 * defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(Agreement {
        mean,
        pairs,
        excluded_short: n_sent - keep.len(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositionalSummary {
    /// Mean share of normalized saliency mass falling in each part.
    pub parts: Vec<f64>,
    pub sentences: usize,
    /// Sentences shorter than the number of parts or with zero total saliency.
    pub skipped: usize,
}

/// Normalizes each profile to sum 1 and averages, over sentences, the mass in
/// each relative-position part; word `j` of `n` falls in part `⌊parts·j/n⌋`.
pub fn positional_summary(profiles: &[Vec<f64>], parts: usize) -> Result<PositionalSummary> {
    if parts == 0 {
        return Err(Error::invalid("positional summary needs at least one part"));
    }
    let mut acc = vec![0.0; parts];
    let (mut used, mut skipped) = (0usize, 0usize);
    for p in profiles {
        let total: f64 = p.iter().sum();
        if p.len() < parts || total <= 0.0 {
            skipped += 1;
            continue;
        }
        let n = p.len();
        for (j, s) in p.iter().enumerate() {
            acc[parts * j / n] += s / total;
        }
        used += 1;
    }
    if used > 0 {
        acc.iter_mut().for_each(|v| *v /= used as f64);
    }
    Ok(PositionalSummary {
        parts: acc,
        sentences: used,
        skipped,
    })
}
