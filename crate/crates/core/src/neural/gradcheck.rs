//! Central finite-difference verification of tape gradients.

use rand::Rng;

use super::mat::{dot, Mat};
use super::params::{Grads, ParamId, ParamStore};
use super::tape::{NResult, Tape, Var};
use crate::rng::rng_for;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub n_checked: usize,
}

/// Compare analytic gradients of `L = Σ W ⊙ f(θ)` against central
/// differences for every scalar of every parameter. `W` is a fixed random
/// weighting. Relative error is `|a − n| / max(|a|, |n|, floor)`.
pub fn check_gradients<F>(
    store: &ParamStore,
    forward: F,
    eps: f64,
    floor: f64,
    seed: u64,
) -> NResult<GradCheckReport>
where
    F: Fn(&mut Tape) -> NResult<Var>,
{
    let (weights, analytic) = {
        let mut tape = Tape::new(store);
        let out = forward(&mut tape)?;
        let shape = tape.value(out).shape();
        let mut rng = rng_for(seed);
        let w = Mat::from_vec(
            shape.0,
            shape.1,
            (0..shape.0 * shape.1)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        );
        let mut grads = Grads::zeros_like(store);
        tape.backward(&[(out, w.clone())], &mut grads)?;
        (w, grads)
    };
    let loss = |s: &ParamStore| -> NResult<f64> {
        let mut tape = Tape::new(s);
        let out = forward(&mut tape)?;
        Ok(dot(&tape.value(out).data, &weights.data))
    };
    let mut probe = store.clone();
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: None,
        n_checked: 0,
    };
    for p in 0..store.len() {
        let id = ParamId(p);
        for i in 0..store.get(id).data.len() {
            let orig = store.get(id).data[i];
            probe.get_mut(id).data[i] = orig + eps;
            let up = loss(&probe)?;
            probe.get_mut(id).data[i] = orig - eps;
            let down = loss(&probe)?;
            probe.get_mut(id).data[i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.get(id).data[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            report.n_checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some((store.name(id).to_string(), i));
            }
        }
    }
    Ok(report)
}
