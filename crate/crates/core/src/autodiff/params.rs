use std::collections::BTreeMap;

use rand::Rng;

use super::tape::{Tape, Var};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// How a parameter tensor is initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, fan-in = last axis.
    FanIn,
    Uniform(f64),
    Zeros,
    Constant(f64),
}

impl Init {
    pub fn sample<T: Real, R: Rng + ?Sized>(&self, shape: &[usize], rng: &mut R) -> Tensor<T> {
        let n: usize = shape.iter().product();
        let data = match *self {
            Init::FanIn => {
                let fan_in = *shape.last().unwrap_or(&1) as f64;
                uniform(n, 1.0 / fan_in.sqrt(), rng)
            }
            Init::Uniform(bound) => uniform(n, bound, rng),
            Init::Zeros => vec![0.0; n],
            Init::Constant(c) => vec![c; n],
        };
        Tensor::from_parts(
            shape.to_vec(),
            data.into_iter().map(T::from_f64_lossy).collect(),
        )
    }
}

fn uniform<R: Rng + ?Sized>(n: usize, bound: f64, rng: &mut R) -> Vec<f64> {
    (0..n)
        .map(|_| (2.0 * rng.random::<f64>() - 1.0) * bound)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub init: Init,
}

/// Named model weights. Iteration order is the lexicographic name order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet<T> {
    entries: BTreeMap<String, Param<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet {
            entries: BTreeMap::new(),
        }
    }

    pub fn add<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        shape: &[usize],
        init: Init,
        rng: &mut R,
    ) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::DuplicateParam(name.to_owned()));
        }
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(Error::invalid(format!(
                "parameter `{name}` needs positive extents, got {shape:?}"
            )));
        }
        let value = init.sample(shape, rng);
        self.entries.insert(name.to_owned(), Param { value, init });
        Ok(())
    }

    /// Inserts an explicit value.
    pub fn insert(&mut self, name: &str, value: Tensor<T>, init: Init) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::DuplicateParam(name.to_owned()));
        }
        self.entries.insert(name.to_owned(), Param { value, init });
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.entries
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::MissingParam(name.to_owned()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.entries
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::MissingParam(name.to_owned()))
    }

    /// Replaces a value, keeping the shape.
    pub fn set(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let slot = self.get_mut(name)?;
        if slot.shape() != value.shape() {
            return Err(Error::shape("param set", slot.shape(), value.shape()));
        }
        *slot = value;
        Ok(())
    }

    pub fn init_of(&self, name: &str) -> Option<Init> {
        self.entries.get(name).map(|p| p.init)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(k, p)| (k.as_str(), &p.value))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Param {
                            value: p.value.cast(),
                            init: p.init,
                        },
                    )
                })
                .collect(),
        }
    }

    /// Registers every parameter as a borrowed leaf. Names for which
    /// `trainable` returns false are attached without gradients.
    pub fn attach<'p>(
        &'p self,
        tape: &mut Tape<'p, T>,
        trainable: impl Fn(&str) -> bool,
    ) -> ParamVars {
        let vars = self
            .entries
            .iter()
            .map(|(name, p)| (name.clone(), tape.param(name, &p.value, trainable(name))))
            .collect();
        ParamVars { vars }
    }

    /// First parameter holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.entries
            .iter()
            .find(|(_, p)| !p.value.is_finite())
            .map(|(k, _)| k.as_str())
    }
}

/// Tape handles for an attached [`ParamSet`].
#[derive(Debug, Clone, Default)]
pub struct ParamVars {
    vars: BTreeMap<String, Var>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingParam(name.to_owned()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fan_in_init_respects_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ps = ParamSet::<f64>::new();
        ps.add("w", &[16, 25], Init::FanIn, &mut rng).unwrap();
        let w = ps.get("w").unwrap();
        assert!(w.data().iter().all(|v| v.abs() <= 0.2));
        assert!(w.data().iter().any(|v| v.abs() > 0.1));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ps = ParamSet::<f32>::new();
        ps.add("b", &[3], Init::Zeros, &mut rng).unwrap();
        assert!(matches!(
            ps.add("b", &[3], Init::Zeros, &mut rng),
            Err(Error::DuplicateParam(_))
        ));
    }
}
