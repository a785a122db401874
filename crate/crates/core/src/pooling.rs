//! Max, mean, and self-attentive pooling over a sentence's state matrix.
//!
//! For tree encoders the pooled set holds every leaf and internal hidden
//! state (2n − 1 rows); for linear encoders it holds the n per-position
//! states. The pooled vector replaces the root/final-state encoding.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::autodiff::{Init, ParamSet, ParamVars, Real, Reduction, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Width of the attention projection `W_α`.
pub const ATTENTION_DIM: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pooling {
    #[default]
    None,
    Max,
    Mean,
    SelfAttention,
}

impl Pooling {
    pub fn as_str(self) -> &'static str {
        match self {
            Pooling::None => "none",
            Pooling::Max => "max",
            Pooling::Mean => "mean",
            Pooling::SelfAttention => "self-attention",
        }
    }
}

impl fmt::Display for Pooling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Pooling::None),
            "max" => Ok(Pooling::Max),
            "mean" => Ok(Pooling::Mean),
            "self-attention" | "attention" | "attn" => Ok(Pooling::SelfAttention),
            other => Err(Error::invalid(format!("unknown pooling `{other}`"))),
        }
    }
}

/// `W_α` of shape `[att_dim, state_dim]` and `w_β` of length `att_dim`.
#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub w_alpha: Var,
    pub w_beta: Var,
}

impl AttentionParams {
    pub fn init<T: Real, R: Rng + ?Sized>(
        params: &mut ParamSet<T>,
        prefix: &str,
        att_dim: usize,
        state_dim: usize,
        rng: &mut R,
    ) -> Result<()> {
        params.add(&format!("{prefix}.w_alpha"), &[att_dim, state_dim], Init::FanIn, rng)?;
        params.add(&format!("{prefix}.w_beta"), &[att_dim], Init::FanIn, rng)?;
        Ok(())
    }

    pub fn bind(pv: &ParamVars, prefix: &str) -> Result<Self> {
        Ok(AttentionParams {
            w_alpha: pv.get(&format!("{prefix}.w_alpha"))?,
            w_beta: pv.get(&format!("{prefix}.w_beta"))?,
        })
    }
}

fn check_states<T: Real>(tape: &Tape<'_, T>, h: Var, op: &str) -> Result<()> {
    let s = tape.shape(h);
    if s.len() != 2 || s[0] == 0 {
        return Err(Error::invalid(format!(
            "{op} needs a non-empty [m, d] state matrix, got {s:?}"
        )));
    }
    Ok(())
}

/// Per-dimension maximum over the rows of `h`. Gradients go to the lowest
/// row index among ties.
pub fn max_pool<T: Real>(tape: &mut Tape<'_, T>, h: Var) -> Result<Var> {
    check_states(tape, h, "max_pool")?;
    tape.reduce(h, Reduction::Max, Some(0))
}

/// `(1/m) Σ_j h_j`, evaluated as the uniform-weight product `u H` so that it
/// coincides bit for bit with self-attention under uniform weights.
pub fn mean_pool<T: Real>(tape: &mut Tape<'_, T>, h: Var) -> Result<Var> {
    check_states(tape, h, "mean_pool")?;
    let m = tape.shape(h)[0];
    let w = T::one() / T::from_f64_lossy(m as f64);
    let u = tape.constant(Tensor::full(&[m], w));
    tape.matmul(u, h)
}

/// `a = softmax(w_β · tanh(W_α Hᵀ))`, `s = a H`. Returns `(s, a)`.
pub fn self_attention<T: Real>(
    tape: &mut Tape<'_, T>,
    p: &AttentionParams,
    h: Var,
) -> Result<(Var, Var)> {
    check_states(tape, h, "self_attention")?;
    let proj = tape.affine(h, p.w_alpha, None)?;
    let proj = tape.tanh(proj);
    let scores = tape.matmul(proj, p.w_beta)?;
    let a = tape.softmax(scores)?;
    let s = tape.matmul(a, h)?;
    Ok((s, a))
}

/// Pools `h` according to `kind`; attention weights are returned for
/// self-attention. `Pooling::None` is rejected since there is nothing to pool.
pub fn pool<T: Real>(
    tape: &mut Tape<'_, T>,
    kind: Pooling,
    attention: Option<&AttentionParams>,
    h: Var,
) -> Result<(Var, Option<Var>)> {
    match kind {
        Pooling::None => Err(Error::invalid("pooling kind `none` does not pool")),
        Pooling::Max => Ok((max_pool(tape, h)?, None)),
        Pooling::Mean => Ok((mean_pool(tape, h)?, None)),
        Pooling::SelfAttention => {
            let p = attention.ok_or_else(|| Error::invalid("self-attention needs parameters"))?;
            let (s, a) = self_attention(tape, p, h)?;
            Ok((s, Some(a)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, m: usize, d: usize) -> Tensor<f64> {
        Tensor::matrix(m, d, (0..m * d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect())
            .unwrap()
    }

    #[test]
    fn single_row_pools_to_itself() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let h = random_matrix(&mut rng, 1, 5);
        let mut tape = Tape::<f64>::new();
        let hv = tape.constant(h.clone());
        let mx = max_pool(&mut tape, hv).unwrap();
        let mn = mean_pool(&mut tape, hv).unwrap();
        assert_eq!(tape.value(mx).data(), h.data());
        assert_eq!(tape.value(mn).data(), h.data());
    }

    #[test]
    fn mean_of_two_rows_is_midpoint() {
        let h = Tensor::matrix(2, 2, vec![0.0, 2.0, 4.0, -2.0]).unwrap();
        let mut tape = Tape::<f64>::new();
        let hv = tape.constant(h);
        let mn = mean_pool(&mut tape, hv).unwrap();
        assert_eq!(tape.value(mn).data(), &[2.0, 0.0]);
    }

    #[test]
    fn max_dominates_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let h = random_matrix(&mut rng, 7, 4);
            let mut tape = Tape::<f64>::new();
            let hv = tape.constant(h);
            let mx = max_pool(&mut tape, hv).unwrap();
            let mn = mean_pool(&mut tape, hv).unwrap();
            for (a, b) in tape.value(mx).data().iter().zip(tape.value(mn).data()) {
                assert!(a >= b);
            }
        }
    }

    #[test]
    fn max_gradient_goes_to_argmax_rows() {
        let h = Tensor::matrix(3, 2, vec![1.0, 5.0, 3.0, 5.0, 2.0, 0.0]).unwrap();
        let mut tape = Tape::<f64>::new();
        let hv = tape.leaf(Some("h"), h, true);
        let mx = max_pool(&mut tape, hv).unwrap();
        let s = tape.sum(mx);
        let g = tape.backward(s).unwrap();
        // column 1 ties between rows 0 and 1: the lower index wins
        assert_eq!(g.get(hv).unwrap().data(), &[0.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn zero_attention_is_mean_pool() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = random_matrix(&mut rng, 5, 6);
        let mut params = ParamSet::<f64>::new();
        params.insert("w_alpha", Tensor::zeros(&[ATTENTION_DIM, 6]), Init::Zeros).unwrap();
        params.insert("w_beta", Tensor::zeros(&[ATTENTION_DIM]), Init::Zeros).unwrap();
        let mut tape = Tape::new();
        let pv = params.attach(&mut tape, |_| false);
        let p = AttentionParams {
            w_alpha: pv.get("w_alpha").unwrap(),
            w_beta: pv.get("w_beta").unwrap(),
        };
        let hv = tape.constant(h);
        let (s, a) = self_attention(&mut tape, &p, hv).unwrap();
        let mn = mean_pool(&mut tape, hv).unwrap();
        assert_eq!(tape.value(a).data(), &[0.2; 5]);
        assert_eq!(tape.value(s).data(), tape.value(mn).data());
    }

    #[test]
    fn attention_weights_form_a_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut params = ParamSet::<f64>::new();
        AttentionParams::init(&mut params, "pool", ATTENTION_DIM, 4, &mut rng).unwrap();
        for m in 1..9 {
            let h = random_matrix(&mut rng, m, 4).map(|v| v * 10.0);
            let mut tape = Tape::new();
            let pv = params.attach(&mut tape, |_| true);
            let p = AttentionParams::bind(&pv, "pool").unwrap();
            let hv = tape.constant(h.clone());
            let (s, a) = self_attention(&mut tape, &p, hv).unwrap();
            let a = tape.value(a).data().to_vec();
            assert!(a.iter().all(|&x| x >= 0.0));
            assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            if m == 1 {
                assert_eq!(a, vec![1.0]);
                assert_eq!(tape.value(s).data(), h.data());
            }
        }
    }

    #[test]
    fn attention_matches_direct_formula_and_gradients() {
        let (m, d, k) = (4, 3, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = ParamSet::<f64>::new();
        AttentionParams::init(&mut params, "pool", k, d, &mut rng).unwrap();
        params.insert("h", random_matrix(&mut rng, m, d), Init::Zeros).unwrap();

        let wa = params.get("pool.w_alpha").unwrap().clone();
        let wb = params.get("pool.w_beta").unwrap().clone();
        let h = params.get("h").unwrap().clone();
        let scores: Vec<f64> = (0..m)
            .map(|j| {
                (0..k)
                    .map(|r| {
                        let z: f64 = (0..d).map(|c| wa.at(&[r, c]) * h.at(&[j, c])).sum();
                        wb.data()[r] * z.tanh()
                    })
                    .sum()
            })
            .collect();
        let mx = scores.iter().cloned().fold(f64::MIN, f64::max);
        let e: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
        let z: f64 = e.iter().sum();
        let a: Vec<f64> = e.iter().map(|v| v / z).collect();
        let s: Vec<f64> = (0..d)
            .map(|c| (0..m).map(|j| a[j] * h.at(&[j, c])).sum())
            .collect();

        let mut tape = Tape::new();
        let pv = params.attach(&mut tape, |_| true);
        let p = AttentionParams::bind(&pv, "pool").unwrap();
        let (sv, av) = self_attention(&mut tape, &p, pv.get("h").unwrap()).unwrap();
        for (x, y) in tape.value(av).data().iter().zip(&a) {
            assert!((x - y).abs() < 1e-12);
        }
        for (x, y) in tape.value(sv).data().iter().zip(&s) {
            assert!((x - y).abs() < 1e-12);
        }

        let err = grad_check(&params, 1e-4, |tape, pv| {
            let p = AttentionParams::bind(pv, "pool")?;
            let (s, _) = self_attention(tape, &p, pv.get("h")?)?;
            let sq = tape.mul(s, s)?;
            Ok(tape.sum(sq))
        })
        .unwrap();
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn empty_state_matrix_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let v = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        assert!(max_pool(&mut tape, v).is_err());
        assert!(pool(&mut tape, Pooling::None, None, v).is_err());
    }

    #[test]
    fn pooling_names_round_trip() {
        for p in [Pooling::None, Pooling::Max, Pooling::Mean, Pooling::SelfAttention] {
            assert_eq!(p.to_string().parse::<Pooling>().unwrap(), p);
        }
    }
}
