//! Small synthetic stand-ins for real corpora.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::data::{Dataset, Example};
use crate::error::{Error, Result};
use crate::model::TaskKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthTask {
    Copy,
    Reverse,
    /// Label is the class of the first token: only the left edge matters.
    FirstTokenClass,
    LastTokenClass,
}

impl SynthTask {
    pub fn task_kind(self) -> TaskKind {
        match self {
            SynthTask::Copy | SynthTask::Reverse => TaskKind::Seq2Seq,
            _ => TaskKind::Classify,
        }
    }
}

impl fmt::Display for SynthTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SynthTask::Copy => "copy",
            SynthTask::Reverse => "reverse",
            SynthTask::FirstTokenClass => "first-token-class",
            SynthTask::LastTokenClass => "last-token-class",
        })
    }
}

impl FromStr for SynthTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "copy" => Ok(SynthTask::Copy),
            "reverse" => Ok(SynthTask::Reverse),
            "first-token-class" => Ok(SynthTask::FirstTokenClass),
            "last-token-class" => Ok(SynthTask::LastTokenClass),
            other => Err(Error::invalid(format!("unknown synthetic task `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub task: SynthTask,
    pub vocab: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Class count of the classification tasks.
    pub classes: usize,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            task: SynthTask::Copy,
            vocab: 50,
            min_len: 16,
            max_len: 24,
            classes: 4,
            train: 20_000,
            dev: 500,
            test: 500,
            seed: 0,
        }
    }
}

/// Token `i` is `w{i}` and belongs to class `i mod classes`.
pub fn token(i: usize) -> String {
    format!("w{i}")
}

pub fn token_class(i: usize, classes: usize) -> usize {
    i % classes
}

pub fn synth_generate(spec: &SynthSpec) -> Result<Dataset> {
    if spec.vocab == 0 || spec.train == 0 {
        return Err(Error::invalid("vocabulary and training sizes must be positive"));
    }
    if spec.min_len == 0 || spec.min_len > spec.max_len {
        return Err(Error::invalid(format!(
            "bad length range [{}, {}]",
            spec.min_len, spec.max_len
        )));
    }
    let classify = spec.task.task_kind() == TaskKind::Classify;
    if classify && (spec.classes < 2 || spec.vocab < spec.classes) {
        return Err(Error::invalid(format!(
            "need 2 ≤ classes ≤ vocabulary, got {} classes over {} tokens",
            spec.classes, spec.vocab
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut split = |n: usize| -> Vec<Example> {
        (0..n)
            .map(|_| {
                let len = rng.random_range(spec.min_len..=spec.max_len);
                let ids: Vec<usize> = (0..len).map(|_| rng.random_range(0..spec.vocab)).collect();
                let text: Vec<String> = ids.iter().map(|&i| token(i)).collect();
                match spec.task {
                    SynthTask::Copy => Example::seq2seq(text.clone(), text),
                    SynthTask::Reverse => {
                        let rev = text.iter().rev().cloned().collect();
                        Example::seq2seq(text, rev)
                    }
                    SynthTask::FirstTokenClass => Example::classify(text, token_class(ids[0], spec.classes)),
                    SynthTask::LastTokenClass => Example::classify(text, token_class(ids[len - 1], spec.classes)),
                }
            })
            .collect()
    };
    let (train, dev, test) = (split(spec.train), split(spec.dev), split(spec.test));
    Ok(Dataset {
        task: spec.task.task_kind(),
        train,
        dev,
        test,
    })
}
