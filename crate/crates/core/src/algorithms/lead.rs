use nalgebra::DMatrix;

use super::LeadParams;
use crate::compression::{Compressor, KeyedDither};
use crate::exec::Executor;
use crate::problems::{GradientNoise, Problem};
use crate::rng::Streams;
use crate::topology::MixingMatrix;
use crate::{Error, Result};

/// Full LEAD state at the start of round `round`.
#[derive(Debug, Clone, PartialEq)]
pub struct SwarmState {
    pub x: DMatrix<f64>,
    pub d_dual: DMatrix<f64>,
    pub h: DMatrix<f64>,
    /// Tracks `W·h`; each agent only ever holds its own row.
    pub h_w: DMatrix<f64>,
    /// Previous iterate.
    pub x_prev: DMatrix<f64>,
    pub round: u64,
}

/// Everything a round needs besides the state and step sizes.
#[derive(Clone, Copy)]
pub struct LeadContext<'a> {
    pub problem: &'a Problem,
    pub mixing: &'a MixingMatrix,
    pub compressor: &'a Compressor,
    pub noise: &'a GradientNoise,
    pub streams: Streams,
    pub exec: &'a Executor,
}

/// Quantities produced by one round, for metrics and invariant checks.
#[derive(Debug, Clone)]
pub struct StepTrace {
    /// The single gradient sample used twice in the round.
    pub grad: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub y_hat: DMatrix<f64>,
    /// `‖Ŷ − Y‖_F`.
    pub comp_err: f64,
    /// Sum over agents of transmitted payload bits.
    pub bits: u64,
}

/// Sets up round 1: `D = 0`, `H = h1` (zero if `None`), `H_w = W·H` and
/// `X¹ = X⁰ − η∇F(X⁰; ξ⁰)`, where `ξ⁰` comes from gradient round 0.
pub fn lead_init(
    ctx: &LeadContext<'_>,
    params: &LeadParams,
    x0: &DMatrix<f64>,
    h1: Option<&DMatrix<f64>>,
) -> Result<SwarmState> {
    params.validate()?;
    let (n, d) = (ctx.problem.n(), ctx.problem.d());
    if ctx.mixing.n() != n {
        return Err(Error::DimensionMismatch(format!(
            "mixing matrix is for {} agents, problem has {n}",
            ctx.mixing.n()
        )));
    }
    let g0 = ctx.problem.stochastic_gradient(x0, ctx.noise, &ctx.streams, 0, ctx.exec)?.value;
    let h = match h1 {
        Some(h) if h.shape() == (n, d) => h.clone(),
        Some(h) => {
            return Err(Error::DimensionMismatch(format!(
                "initial state is {}x{}, expected {n}x{d}",
                h.nrows(),
                h.ncols()
            )))
        }
        None => DMatrix::zeros(n, d),
    };
    Ok(SwarmState {
        x: x0 - g0 * params.eta,
        d_dual: DMatrix::zeros(n, d),
        h_w: ctx.mixing.mix(&h),
        h,
        x_prev: x0.clone(),
        round: 1,
    })
}

/// One synchronized LEAD round.
pub fn lead_step(state: &mut SwarmState, ctx: &LeadContext<'_>, params: &LeadParams) -> Result<StepTrace> {
    params.validate()?;
    let k = state.round;
    let eta = params.eta;
    let grad = ctx.problem.stochastic_gradient(&state.x, ctx.noise, &ctx.streams, k, ctx.exec)?.value;
    let y = &state.x - &grad * eta - &state.d_dual * eta;

    let diff = &y - &state.h;
    let messages = ctx.exec.map(diff.nrows(), |i| {
        let row: Vec<f64> = diff.row(i).iter().copied().collect();
        let mut dither = KeyedDither::new(ctx.streams, k, i as u64);
        ctx.compressor.compress(&row, &mut dither)
    });
    let mut q = DMatrix::zeros(diff.nrows(), diff.ncols());
    let mut bits = 0;
    for (i, m) in messages.into_iter().enumerate() {
        let (qi, b) = m?;
        q.row_mut(i).iter_mut().zip(qi).for_each(|(dst, v)| *dst = v);
        bits += b;
    }

    let y_hat = &state.h + &q;
    let y_hat_w = &state.h_w + ctx.mixing.mix(&q);
    let a = params.alpha;
    state.h = &state.h * (1.0 - a) + &y_hat * a;
    state.h_w = &state.h_w * (1.0 - a) + &y_hat_w * a;
    state.d_dual += (&y_hat - &y_hat_w) * (params.gamma / (2.0 * eta));
    let x_next = &state.x - &grad * eta - &state.d_dual * eta;
    state.x_prev = std::mem::replace(&mut state.x, x_next);
    state.round += 1;

    let comp_err = (&y_hat - &y).norm();
    Ok(StepTrace { grad, y, y_hat, comp_err, bits })
}
