use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BleuLevel {
    #[default]
    Word,
    /// Every non-space character is a unit (for unsegmented scripts).
    Char,
}

impl fmt::Display for BleuLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BleuLevel::Word => "word",
            BleuLevel::Char => "char",
        })
    }
}

impl FromStr for BleuLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "word" => Ok(BleuLevel::Word),
            "char" => Ok(BleuLevel::Char),
            other => Err(Error::invalid(format!("unknown BLEU level `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BleuOptions {
    pub level: BleuLevel,
    pub max_n: usize,
    /// Add-one smoothing of the precisions of orders ≥ 2.
    pub smoothing: bool,
}

impl Default for BleuOptions {
    fn default() -> Self {
        BleuOptions {
            level: BleuLevel::Word,
            max_n: 4,
            smoothing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bleu {
    /// In `[0, 100]`.
    pub score: f64,
    /// Clipped n-gram precision per order; `None` where the hypotheses hold
    /// no n-grams of that order.
    pub precisions: Vec<Option<f64>>,
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

fn units(tokens: &[String], level: BleuLevel) -> Vec<String> {
    match level {
        BleuLevel::Word => tokens.to_vec(),
        BleuLevel::Char => tokens
            .iter()
            .flat_map(|t| t.chars().filter(|c| !c.is_whitespace()).map(String::from))
            .collect(),
    }
}

fn ngram_counts(units: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if units.len() >= n {
        for w in units.windows(n) {
            *counts.entry(w).or_default() += 1;
        }
    }
    counts
}

/// Corpus BLEU against one reference per hypothesis: clipped n-gram counts
/// and lengths are summed over the corpus before the precisions, their
/// geometric mean and the brevity penalty are taken. Orders absent from every
/// hypothesis are left out of the mean.
pub fn bleu(hypotheses: &[Vec<String>], references: &[Vec<String>], opts: BleuOptions) -> Result<Bleu> {
    if hypotheses.is_empty() {
        return Err(Error::invalid("BLEU of an empty corpus"));
    }
    if hypotheses.len() != references.len() {
        return Err(Error::invalid(format!(
            "{} hypotheses but {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    if opts.max_n == 0 {
        return Err(Error::invalid("BLEU order must be positive"));
    }
    let mut matched = vec![0usize; opts.max_n];
    let mut total = vec![0usize; opts.max_n];
    let (mut hyp_len, mut ref_len) = (0, 0);
    for (h, r) in hypotheses.iter().zip(references) {
        let (h, r) = (units(h, opts.level), units(r, opts.level));
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=opts.max_n {
            let rc = ngram_counts(&r, n);
            for (g, c) in ngram_counts(&h, n) {
                matched[n - 1] += c.min(rc.get(g).copied().unwrap_or(0));
                total[n - 1] += c;
            }
        }
    }
    let precisions: Vec<Option<f64>> = (0..opts.max_n)
        .map(|i| {
            let smooth = opts.smoothing && i > 0;
            match (total[i], smooth) {
                (0, false) => None,
                (t, false) => Some(matched[i] as f64 / t as f64),
                (t, true) => Some((matched[i] + 1) as f64 / (t + 1) as f64),
            }
        })
        .collect();
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    let present: Vec<f64> = precisions.iter().flatten().copied().collect();
    let score = if present.is_empty() || present.contains(&0.0) {
        0.0
    } else {
        let log_mean = present.iter().map(|p| p.ln()).sum::<f64>() / present.len() as f64;
        if present.iter().all(|&p| p == 1.0) && brevity_penalty == 1.0 {
            100.0
        } else {
            100.0 * brevity_penalty * log_mean.exp()
        }
    };
    Ok(Bleu {
        score,
        precisions,
        brevity_penalty,
        hyp_len,
        ref_len,
    })
}

pub fn accuracy(predicted: &[usize], gold: &[usize]) -> Result<f64> {
    if predicted.len() != gold.len() || gold.is_empty() {
        return Err(Error::invalid(format!(
            "accuracy needs equal nonempty lists, got {} and {}",
            predicted.len(),
            gold.len()
        )));
    }
    let hits = predicted.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / gold.len() as f64)
}

/// Length group: `[1, 8]` is group 1 and group `i ≥ 2` covers `[4i+1, 4i+4]`.
pub fn length_bucket(len: usize) -> usize {
    if len <= 8 {
        1
    } else {
        (len - 1) / 4
    }
}

/// Inclusive length range of a group.
pub fn bucket_range(bucket: usize) -> (usize, usize) {
    if bucket <= 1 {
        (1, 8)
    } else {
        (4 * bucket + 1, 4 * bucket + 4)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BucketMetric {
    pub bucket: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub count: usize,
    /// `None` for an empty bucket.
    pub value: Option<f64>,
}

/// Indices of examples per length group, for every group up to the longest.
pub fn bucket_indices(lengths: &[usize]) -> BTreeMap<usize, Vec<usize>> {
    let top = lengths.iter().map(|&l| length_bucket(l)).max().unwrap_or(0);
    let mut out: BTreeMap<usize, Vec<usize>> = (1..=top).map(|b| (b, Vec::new())).collect();
    for (i, &l) in lengths.iter().enumerate() {
        out.entry(length_bucket(l)).or_default().push(i);
    }
    out
}

/// Applies `metric` to the examples of each length group.
pub fn by_length(lengths: &[usize], mut metric: impl FnMut(&[usize]) -> Result<f64>) -> Result<Vec<BucketMetric>> {
    bucket_indices(lengths)
        .into_iter()
        .map(|(bucket, idx)| {
            let (min_len, max_len) = bucket_range(bucket);
            let value = if idx.is_empty() { None } else { Some(metric(&idx)?) };
            Ok(BucketMetric {
                bucket,
                min_len,
                max_len,
                count: idx.len(),
                value,
            })
        })
        .collect()
}

pub fn accuracy_by_length(lengths: &[usize], predicted: &[usize], gold: &[usize]) -> Result<Vec<BucketMetric>> {
    if lengths.len() != gold.len() {
        return Err(Error::invalid("one length per example is required"));
    }
    by_length(lengths, |idx| {
        let p: Vec<usize> = idx.iter().map(|&i| predicted[i]).collect();
        let g: Vec<usize> = idx.iter().map(|&i| gold[i]).collect();
        accuracy(&p, &g)
    })
}

pub fn bleu_by_length(
    lengths: &[usize],
    hypotheses: &[Vec<String>],
    references: &[Vec<String>],
    opts: BleuOptions,
) -> Result<Vec<BucketMetric>> {
    if lengths.len() != references.len() {
        return Err(Error::invalid("one length per example is required"));
    }
    by_length(lengths, |idx| {
        let h: Vec<Vec<String>> = idx.iter().map(|&i| hypotheses[i].clone()).collect();
        let r: Vec<Vec<String>> = idx.iter().map(|&i| references[i].clone()).collect();
        Ok(bleu(&h, &r, opts)?.score)
    })
}
