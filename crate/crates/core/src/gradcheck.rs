//! Central finite-difference verification of tape gradients (f64 only).

use crate::error::Result;
use crate::param::ParamStore;
use crate::tape::{Tape, Var};

/// Maximum over every scalar of every parameter of
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`, where `numeric`
/// is the central difference with step `eps`. Returns 0 for an empty store.
pub fn grad_check<F>(store: &mut ParamStore<f64>, eps: f64, loss: F) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let l = loss(&mut tape, store)?;
    let grads = tape.grads(l)?;
    let ids: alloc::vec::Vec<_> = store.ids().collect();
    let mut worst = 0.0f64;
    for id in ids {
        let analytic = grads
            .param(id)
            .cloned()
            .unwrap_or_else(|| crate::Tensor::zeros(store.value(id).shape()));
        for j in 0..analytic.len() {
            let orig = store.value(id).data()[j];
            store.value_mut(id).data_mut()[j] = orig + eps;
            let up = eval(store, &loss)?;
            store.value_mut(id).data_mut()[j] = orig - eps;
            let down = eval(store, &loss)?;
            store.value_mut(id).data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.data()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

fn eval<F>(store: &ParamStore<f64>, loss: &F) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let l = loss(&mut tape, store)?;
    tape.value(l).item()
}
