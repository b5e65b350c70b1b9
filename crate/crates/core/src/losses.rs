//! Losses recorded on a tape.

use crate::error::Result;
use crate::layers::{Network, Stack};
use crate::param::ParamStore;
use crate::scalar::{cst, Real};
use crate::tape::{Tape, Var};

/// Mean squared reconstruction error of `net` on `x`.
pub fn auto_loss<T: Real>(tape: &mut Tape<T>, store: &ParamStore<T>, net: &Network, x: Var) -> Result<Var> {
    let r = net.reconstruct(tape, store, x)?;
    tape.mse(r, x)
}

/// Composed-reconstruction objective of a pair of maps:
/// `mse(f_ab(f_ba(x_b)), x_b) + mse(f_ba(f_ab(x_a)), x_a)`.
pub fn cycle_pair_loss<T, FA, FB>(tape: &mut Tape<T>, mut f_ab: FA, mut f_ba: FB, x_a: Var, x_b: Var) -> Result<Var>
where
    T: Real,
    FA: FnMut(&mut Tape<T>, Var) -> Result<Var>,
    FB: FnMut(&mut Tape<T>, Var) -> Result<Var>,
{
    let h = f_ba(tape, x_b)?;
    let back_b = f_ab(tape, h)?;
    let h = f_ab(tape, x_a)?;
    let back_a = f_ba(tape, h)?;
    let lb = tape.mse(back_b, x_b)?;
    let la = tape.mse(back_a, x_a)?;
    tape.add(lb, la)
}

/// `0.5 * sum(mu^2 + exp(lv) - lv - 1)` per sample, averaged over the batch
/// (axis 0).
pub fn kl_divergence<T: Real>(tape: &mut Tape<T>, mu: Var, logvar: Var) -> Result<Var> {
    let n = tape.shape(mu)[0];
    let mu2 = tape.mul(mu, mu)?;
    let ev = tape.exp(logvar);
    let a = tape.add(mu2, ev)?;
    let b = tape.sub(a, logvar)?;
    let c = tape.add_scalar(b, -T::one());
    let s = tape.sum(c);
    Ok(tape.scale(s, cst(0.5 / n as f64)))
}

/// How the generator is scored by its discriminator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GenLoss {
    /// `-E[log D(fake)]`
    #[default]
    NonSaturating,
    /// `E[log(1 - D(fake))]`, minimized by the generator.
    Minimax,
}

/// `-(E[log D(real)] + E[log(1 - D(fake))])` on sigmoid outputs.
pub fn discriminator_loss<T: Real>(tape: &mut Tape<T>, d_real: Var, d_fake: Var) -> Result<Var> {
    let a = tape.bce(d_real, T::one());
    let b = tape.bce(d_fake, T::zero());
    tape.add(a, b)
}

pub fn generator_loss<T: Real>(tape: &mut Tape<T>, d_fake: Var, kind: GenLoss) -> Var {
    match kind {
        GenLoss::NonSaturating => tape.bce(d_fake, T::one()),
        GenLoss::Minimax => {
            let b = tape.bce(d_fake, T::zero());
            tape.scale(b, -T::one())
        }
    }
}

/// Discriminator and generator views of one adversarial term.
pub fn adversarial_loss<T: Real>(tape: &mut Tape<T>, d_real: Var, d_fake: Var, kind: GenLoss) -> Result<(Var, Var)> {
    let d = discriminator_loss(tape, d_real, d_fake)?;
    let g = generator_loss(tape, d_fake, kind);
    Ok((d, g))
}

/// `mean|gen_a(gen_b(x_a)) - x_a| + mean|gen_b(gen_a(x_b)) - x_b|`.
pub fn cycle_loss<T, FA, FB>(tape: &mut Tape<T>, mut gen_a: FA, mut gen_b: FB, x_a: Var, x_b: Var) -> Result<Var>
where
    T: Real,
    FA: FnMut(&mut Tape<T>, Var) -> Result<Var>,
    FB: FnMut(&mut Tape<T>, Var) -> Result<Var>,
{
    let fb = gen_b(tape, x_a)?;
    let back_a = gen_a(tape, fb)?;
    let fa = gen_a(tape, x_b)?;
    let back_b = gen_b(tape, fa)?;
    let la = tape.l1(back_a, x_a)?;
    let lb = tape.l1(back_b, x_b)?;
    tape.add(la, lb)
}

/// `lambda * cycle + sum(adversarial generator terms)`.
pub fn total_loss<T: Real>(tape: &mut Tape<T>, cycle: Var, adversarial: &[Var], lambda: T) -> Result<Var> {
    let mut acc = tape.scale(cycle, lambda);
    for &a in adversarial {
        acc = tape.add(acc, a)?;
    }
    Ok(acc)
}

/// Runs `stack` as a generator closure.
pub fn stack_fn<'a, T: Real>(
    stack: &'a Stack,
    store: &'a ParamStore<T>,
) -> impl FnMut(&mut Tape<T>, Var) -> Result<Var> + 'a {
    move |tape, x| stack.forward(tape, store, x)
}
