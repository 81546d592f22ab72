//! Fixed-step Euler and adaptive Dormand–Prince integration of `dz/dt = v(z, t)` over `t ∈ [0, 1]`.

use serde::{Deserialize, Serialize};
use trajloom_grad::Tensor;

use crate::error::{invalid, Error, Result};

/// How future latents are integrated at sampling time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SamplerSpec {
    Euler {
        steps: usize,
    },
    Dopri5 {
        rtol: f64,
        atol: f64,
    },
    /// Dormand–Prince stages on a uniform grid without step control.
    Dopri5Fixed {
        steps: usize,
    },
}

impl Default for SamplerSpec {
    fn default() -> Self {
        SamplerSpec::Euler { steps: 10 }
    }
}

impl SamplerSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SamplerSpec::Euler { steps } | SamplerSpec::Dopri5Fixed { steps } if steps == 0 => {
                Err(invalid("sampler", "steps must be at least 1"))
            }
            SamplerSpec::Dopri5 { rtol, atol } if !(rtol > 0.0 && atol > 0.0) => {
                Err(invalid("sampler", "tolerances must be positive"))
            }
            _ => Ok(()),
        }
    }
}

fn check_finite(z: &Tensor, step: usize) -> Result<()> {
    if z.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            what: "ode state",
            step,
        })
    }
}

/// Forward Euler from `t = 0` to `t = 1` on `steps` uniform intervals.
pub fn euler_sample<F>(mut v: F, z0: &Tensor, steps: usize) -> Result<Tensor>
where
    F: FnMut(&Tensor, f64) -> Result<Tensor>,
{
    if steps == 0 {
        return Err(invalid("euler", "steps must be at least 1"));
    }
    let h = 1.0 / steps as f64;
    let mut z = z0.clone();
    for i in 0..steps {
        let dz = v(&z, i as f64 * h)?;
        z = z.axpy(h, &dz)?;
        check_finite(&z, i)?;
    }
    Ok(z)
}

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
/// Fifth-order weights (equal to the last stage row).
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// One Dormand–Prince step: fifth-order solution and embedded error estimate.
fn dopri_step<F>(v: &mut F, z: &Tensor, t: f64, h: f64) -> Result<(Tensor, Tensor)>
where
    F: FnMut(&Tensor, f64) -> Result<Tensor>,
{
    let mut k: Vec<Tensor> = Vec::with_capacity(7);
    for s in 0..7 {
        let mut zs = z.clone();
        for (j, kj) in k.iter().enumerate() {
            if A[s][j] != 0.0 {
                zs = zs.axpy(h * A[s][j], kj)?;
            }
        }
        k.push(v(&zs, t + C[s] * h)?);
    }
    let mut z5 = z.clone();
    let mut err = Tensor::zeros(z.shape());
    for s in 0..7 {
        if B5[s] != 0.0 {
            z5 = z5.axpy(h * B5[s], &k[s])?;
        }
        let e = B5[s] - B4[s];
        if e != 0.0 {
            err = err.axpy(h * e, &k[s])?;
        }
    }
    Ok((z5, err))
}

/// Adaptive Dormand–Prince 5(4) from `t = 0` to `t = 1` with RMS error control.
pub fn dopri5_sample<F>(mut v: F, z0: &Tensor, rtol: f64, atol: f64) -> Result<Tensor>
where
    F: FnMut(&Tensor, f64) -> Result<Tensor>,
{
    if !(rtol > 0.0 && atol > 0.0) {
        return Err(invalid("dopri5", "tolerances must be positive"));
    }
    const H_MIN: f64 = 1e-12;
    let mut z = z0.clone();
    let mut t = 0.0;
    let mut h = 0.1_f64;
    let mut step = 0;
    while t < 1.0 {
        let h_try = h.min(1.0 - t);
        if h_try < H_MIN && 1.0 - t > H_MIN {
            return Err(invalid("dopri5", format!("step size underflow at t = {t}")));
        }
        let (z_new, e) = dopri_step(&mut v, &z, t, h_try)?;
        let n = z.len().max(1) as f64;
        let err = (z
            .data()
            .iter()
            .zip(z_new.data())
            .zip(e.data())
            .map(|((&a, &b), &d)| {
                let sc = atol + rtol * a.abs().max(b.abs());
                (d / sc).powi(2)
            })
            .sum::<f64>()
            / n)
            .sqrt();
        if !err.is_finite() {
            return Err(Error::NonFinite {
                what: "ode state",
                step,
            });
        }
        if err <= 1.0 {
            t = if 1.0 - t - h_try <= H_MIN {
                1.0
            } else {
                t + h_try
            };
            z = z_new;
            check_finite(&z, step)?;
            step += 1;
        }
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h = h_try * factor;
    }
    Ok(z)
}

/// Dormand–Prince fifth-order stages on `steps` uniform intervals.
pub fn dopri5_fixed_sample<F>(mut v: F, z0: &Tensor, steps: usize) -> Result<Tensor>
where
    F: FnMut(&Tensor, f64) -> Result<Tensor>,
{
    if steps == 0 {
        return Err(invalid("dopri5", "steps must be at least 1"));
    }
    let h = 1.0 / steps as f64;
    let mut z = z0.clone();
    for i in 0..steps {
        z = dopri_step(&mut v, &z, i as f64 * h, h)?.0;
        check_finite(&z, i)?;
    }
    Ok(z)
}

pub fn integrate<F>(v: F, z0: &Tensor, spec: &SamplerSpec) -> Result<Tensor>
where
    F: FnMut(&Tensor, f64) -> Result<Tensor>,
{
    match *spec {
        SamplerSpec::Euler { steps } => euler_sample(v, z0, steps),
        SamplerSpec::Dopri5 { rtol, atol } => dopri5_sample(v, z0, rtol, atol),
        SamplerSpec::Dopri5Fixed { steps } => dopri5_fixed_sample(v, z0, steps),
    }
}

/// Spacing of the rollout time grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridSpacing {
    Uniform,
    Logit,
}

/// `K + 1` strictly increasing times within `[t_ε, 1 − t_ε]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    pub times: Vec<f64>,
    pub spacing: GridSpacing,
}

impl TimeGrid {
    /// Grid spanning the whole clamp interval `[t_ε, 1 − t_ε]`.
    pub fn new(steps: usize, eps: f64, spacing: GridSpacing) -> Result<Self> {
        Self::with_span(steps, eps, eps, spacing)
    }

    /// Uniform spacing over `[t_ε', 1 − t_ε']`, or `sigmoid` of logits spaced
    /// uniformly over `[logit(t_ε'), logit(1 − t_ε')]`; then clamped to `[t_ε, 1 − t_ε]`.
    pub fn with_span(steps: usize, eps: f64, span: f64, spacing: GridSpacing) -> Result<Self> {
        if steps == 0 {
            return Err(invalid("time grid", "need at least one step"));
        }
        for e in [eps, span] {
            if !(e > 0.0 && e < 0.5) {
                return Err(invalid("time grid", format!("bound {e} outside (0, 0.5)")));
            }
        }
        let (lo, hi) = (eps, 1.0 - eps);
        let times: Vec<f64> = match spacing {
            GridSpacing::Uniform => (0..=steps)
                .map(|i| (span + (1.0 - 2.0 * span) * i as f64 / steps as f64).clamp(lo, hi))
                .collect(),
            GridSpacing::Logit => {
                let (a, b) = (logit(span), logit(1.0 - span));
                (0..=steps)
                    .map(|i| sigmoid(a + (b - a) * i as f64 / steps as f64).clamp(lo, hi))
                    .collect()
            }
        };
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("time grid", "times are not strictly increasing"));
        }
        Ok(TimeGrid { times, spacing })
    }

    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}
