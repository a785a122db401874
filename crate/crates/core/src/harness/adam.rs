use std::collections::BTreeMap;

use crate::autodiff::{ParamSet, Real, Tensor};
use crate::error::{Error, Result};

/// Bias-corrected Adam with per-parameter first and second moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub(crate) moments: BTreeMap<String, (Tensor<T>, Tensor<T>)>,
}

impl<T: Real> Default for Adam<T> {
    fn default() -> Self {
        Adam::new(0.9, 0.999, 1e-8)
    }
}

impl<T: Real> Adam<T> {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    /// Moment pairs `(m, v)` by parameter name.
    pub fn moments(&self) -> &BTreeMap<String, (Tensor<T>, Tensor<T>)> {
        &self.moments
    }

    pub fn cast<U: Real>(&self) -> Adam<U> {
        Adam {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            step: self.step,
            moments: self
                .moments
                .iter()
                .map(|(k, (m, v))| (k.clone(), (m.cast(), v.cast())))
                .collect(),
        }
    }

    /// One update of every parameter accepted by `trainable`. Every such
    /// parameter must have a finite gradient of matching shape.
    pub fn update(
        &mut self,
        params: &mut ParamSet<T>,
        grads: &BTreeMap<String, Tensor<T>>,
        lr: f64,
        trainable: impl Fn(&str) -> bool,
    ) -> Result<()> {
        let names: Vec<String> = params.names().filter(|n| trainable(n)).map(str::to_owned).collect();
        for name in &names {
            let g = grads.get(name).ok_or_else(|| Error::MissingGradient(name.clone()))?;
            let p = params.get(name)?;
            if g.shape() != p.shape() {
                return Err(Error::shape("adam", p.shape(), g.shape()));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of `{name}`")));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2) = (T::from_f64_lossy(self.beta1), T::from_f64_lossy(self.beta2));
        let (one, eps) = (T::one(), T::from_f64_lossy(self.eps));
        let (step_size, c2) = (T::from_f64_lossy(lr / c1), T::from_f64_lossy(c2));
        for name in &names {
            let g = &grads[name];
            let p = params.get_mut(name)?;
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (Tensor::zeros(g.shape()), Tensor::zeros(g.shape())));
            for (((pi, mi), vi), &gi) in p
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                *pi = *pi - step_size * *mi / ((*vi / c2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
