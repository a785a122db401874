use super::params::{ParamSet, ParamVars};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Compares reverse-mode gradients of a scalar function of `params` against
/// five-point central differences with step `eps` (truncation error
/// `O(eps⁴)`; `eps ≈ 1e-4` balances it against round-off) and returns the
/// largest relative error `|analytic - numeric| / max(|analytic| + |numeric|, floor)`.
///
/// `floor` is `1e-8` plus `1e-5` times the largest analytic gradient entry:
/// differences resolve a derivative only to about `ulp(f) / eps`, so
/// components many orders of magnitude below the gradient's scale are
/// compared at that scale instead of against pure round-off.
///
/// Runs in double precision only. `f` must be deterministic.
pub fn grad_check<F>(params: &ParamSet<f64>, eps: f64, f: F) -> Result<f64>
where
    F: for<'p> Fn(&mut Tape<'p, f64>, &ParamVars) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::invalid("grad_check step must be positive"));
    }
    let analytic = {
        let mut tape = Tape::new();
        let pv = params.attach(&mut tape, |_| true);
        let out = f(&mut tape, &pv)?;
        let v = tape.value(out);
        if v.len() != 1 {
            return Err(Error::NonScalar(v.shape().to_vec()));
        }
        if !v.is_finite() {
            return Err(Error::NonFinite("grad_check objective".into()));
        }
        tape.backward(out)?.into_named()
    };

    let eval = |p: &ParamSet<f64>| -> Result<f64> {
        let mut tape = Tape::new();
        let pv = p.attach(&mut tape, |_| false);
        let out = f(&mut tape, &pv)?;
        let v = tape.value(out).item();
        if !v.is_finite() {
            return Err(Error::NonFinite("grad_check objective".into()));
        }
        Ok(v)
    };

    let scale = analytic
        .values()
        .flat_map(|g| g.data().iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = 1e-8 + 1e-5 * scale;
    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    for (name, value) in params.iter() {
        let grad = analytic
            .get(name)
            .ok_or_else(|| Error::MissingGradient(name.to_owned()))?;
        for i in 0..value.len() {
            let orig = value.data()[i];
            let mut at = |delta: f64| -> Result<f64> {
                probe.get_mut(name)?.data_mut()[i] = orig + delta;
                eval(&probe)
            };
            let (p2, p1, m1, m2) = (at(2.0 * eps)?, at(eps)?, at(-eps)?, at(-2.0 * eps)?);
            probe.get_mut(name)?.data_mut()[i] = orig;
            let numeric = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * eps);
            let a = grad.data()[i];
            if !a.is_finite() {
                return Err(Error::NonFinite(format!("gradient of `{name}`")));
            }
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(floor);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
