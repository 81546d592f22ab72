//! Dense layers and token-mixing residual blocks over `[B, T, N, D]` activations.

use trajloom_grad::{BoundParams, ParamSet, Rng, Tape, Tensor, Var};

use crate::error::Result;

/// `w ~ N(0, gain²/fan_in)`, zero bias.
pub(crate) fn init_dense(
    ps: &mut ParamSet,
    name: &str,
    fan_in: usize,
    fan_out: usize,
    gain: f64,
    rng: &mut Rng,
) {
    let std = gain / (fan_in as f64).sqrt();
    let w = rng.draw_normal(&[fan_in, fan_out]).scale(std);
    ps.insert(format!("{name}.w"), w);
    ps.insert(format!("{name}.b"), Tensor::zeros(&[fan_out]));
}

pub(crate) fn dense(tape: &mut Tape, bp: &BoundParams, name: &str, x: Var) -> Result<Var> {
    let w = bp.get(&format!("{name}.w"))?;
    let b = bp.get(&format!("{name}.b"))?;
    Ok(tape.affine(x, w, b)?)
}

pub(crate) fn init_block(
    ps: &mut ParamSet,
    name: &str,
    t: usize,
    n: usize,
    d: usize,
    rng: &mut Rng,
) {
    init_dense(ps, &format!("{name}.sp.a"), n, n, 1.0, rng);
    init_dense(ps, &format!("{name}.sp.b"), n, n, 0.5, rng);
    init_dense(ps, &format!("{name}.tm.a"), t, t, 1.0, rng);
    init_dense(ps, &format!("{name}.tm.b"), t, t, 0.5, rng);
    init_dense(ps, &format!("{name}.ch.a"), d, 2 * d, 1.0, rng);
    init_dense(ps, &format!("{name}.ch.b"), 2 * d, d, 0.5, rng);
}

/// Two-layer GELU MLP applied along `axis`, added residually.
fn mix_axis(tape: &mut Tape, bp: &BoundParams, name: &str, x: Var, axis: usize) -> Result<Var> {
    let rank = tape.shape(x).len();
    let last = rank - 1;
    let (moved, perm) = if axis == last {
        (x, None)
    } else {
        let mut perm: Vec<usize> = (0..rank).filter(|&a| a != axis).collect();
        perm.push(axis);
        (tape.permute(x, &perm)?, Some(perm))
    };
    let h = dense(tape, bp, &format!("{name}.a"), moved)?;
    let h = tape.gelu(h);
    let h = dense(tape, bp, &format!("{name}.b"), h)?;
    let h = match perm {
        None => h,
        Some(perm) => {
            let mut inv = vec![0; rank];
            for (i, &p) in perm.iter().enumerate() {
                inv[p] = i;
            }
            tape.permute(h, &inv)?
        }
    };
    Ok(tape.add(x, h)?)
}

/// Spatial token mixing, temporal token mixing, then a channel MLP.
pub(crate) fn block(tape: &mut Tape, bp: &BoundParams, name: &str, x: Var) -> Result<Var> {
    let x = mix_axis(tape, bp, &format!("{name}.sp"), x, 2)?;
    let x = mix_axis(tape, bp, &format!("{name}.tm"), x, 1)?;
    mix_axis(tape, bp, &format!("{name}.ch"), x, 3)
}

/// Add a parameter broadcast from extent-1 axes up to `x`'s shape.
pub(crate) fn add_broadcast(tape: &mut Tape, x: Var, p: Var) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let e = tape.expand(p, &shape)?;
    Ok(tape.add(x, e)?)
}
