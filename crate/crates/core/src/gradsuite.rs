//! Scalar scenarios over every loss and network forward for central-difference
//! gradient checks.

use trajloom_grad::{grad_check_report, GradCheckReport, ParamSet, Rng, Tape, Tensor, Var};

use crate::lossbank::*;
use crate::models::*;
use crate::Result;

pub type CaseFn = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

pub struct Case {
    pub name: &'static str,
    pub f: CaseFn,
    pub inputs: Vec<Tensor>,
}

fn random_tensor(shape: &[usize], rng: &mut Rng, scale: f64) -> Tensor {
    rng.draw_normal(shape).scale(scale)
}

fn random_mask(shape: &[usize], p: f64, rng: &mut Rng) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n)
            .map(|_| if rng.uniform() < p { 1.0 } else { 0.0 })
            .collect(),
    )
    .expect("shape matches data")
}

fn case(name: &'static str, f: CaseFn, inputs: Vec<Tensor>) -> Case {
    Case { name, f, inputs }
}

fn first_channel(t: &Tensor) -> Tensor {
    let c = *t.shape().last().unwrap();
    let shape = t.shape()[..t.shape().len() - 1].to_vec();
    Tensor::new(shape, t.data().iter().step_by(c).copied().collect()).unwrap()
}

pub fn loss_cases(seed: u64) -> Vec<Case> {
    let mut rng = Rng::new(seed);
    let shape = [2, 3, 4, 4, 2];
    let target = random_tensor(&shape, &mut rng, 0.5);
    let recon = target.add(&random_tensor(&shape, &mut rng, 0.7)).unwrap();
    let mask = random_mask(&shape[..4], 0.8, &mut rng);
    let spec = NeighborSpec::new(vec![1, 2], vec![1.0, 0.5]).unwrap();
    let lat = [2, 2, 3, 4];
    let weights = token_weights(&random_mask(&[2, 4, 2, 6], 0.5, &mut rng), 2, 2, 0.01).unwrap();
    let z: Vec<Tensor> = (0..3).map(|_| random_tensor(&lat, &mut rng, 1.0)).collect();
    let targets: Vec<(Tensor, Tensor)> = (0..3)
        .map(|_| {
            (
                random_tensor(&lat, &mut rng, 1.0),
                random_tensor(&lat, &mut rng, 1.0),
            )
        })
        .collect();
    let labels = rng.draw_uniform(&[2, 2, 3]);
    let prev = (z[0].clone(), z[0].scale(-0.5));

    let (t1, m1) = (target.clone(), mask.clone());
    let (t2, m2) = (target.clone(), mask.clone());
    let (t3, m3, s3) = (target.clone(), mask.clone(), spec.clone());
    let (t4, m4) = (target, mask);
    let (w1, w2, w3) = (weights.clone(), weights.clone(), weights);
    vec![
        case(
            "recon_loss",
            Box::new(move |tp, x| recon_loss_var(tp, x[0], &t1, &m1, 0.5)),
            vec![recon.clone()],
        ),
        case(
            "temporal_loss",
            Box::new(move |tp, x| temporal_loss_var(tp, x[0], &t2, &m2)),
            vec![recon.clone()],
        ),
        case(
            "spatial_loss",
            Box::new(move |tp, x| spatial_loss_var(tp, x[0], &t3, &m3, &s3)),
            vec![recon.clone()],
        ),
        case(
            "st_regularizer",
            Box::new(move |tp, x| st_regularizer_var(tp, x[0], &t4, &m4, &spec, 0.1, 0.2)),
            vec![recon],
        ),
        case(
            "kl_loss",
            Box::new(|tp, x| kl_loss_var(tp, x[0], x[1])),
            vec![z[0].clone(), z[1].scale(0.5)],
        ),
        case(
            "fm_loss",
            Box::new(move |tp, x| fm_loss_var(tp, x[0], x[1], &w1)),
            vec![z[0].clone(), z[1].clone()],
        ),
        case(
            "kstep_loss",
            Box::new(move |tp, x| kstep_loss_var(tp, x, &targets, &w2, 1.0, 0.5)),
            z.clone(),
        ),
        case(
            "endpoint_consistency",
            // The earlier step is detached, so it enters as a constant.
            Box::new(move |tp, x| {
                let zp = tp.constant(prev.0.clone());
                let vp = tp.constant(prev.1.clone());
                endpoint_consistency_var(tp, &[zp, x[0]], &[vp, x[1]], &[0.2, 0.6], &w3, true)
            }),
            vec![z[1].clone(), z[2].clone()],
        ),
        case(
            "bce_logits",
            Box::new(move |tp, x| bce_logits_var(tp, x[0], &labels)),
            vec![first_channel(&z[2])],
        ),
    ]
}

/// `Σ out ⊙ R` for a fixed random `R`, so every output coordinate is exercised.
fn project(tape: &mut Tape, out: Var, r: &Tensor) -> Result<Var> {
    let rv = tape.constant(r.clone());
    let p = tape.mul(out, rv)?;
    Ok(tape.sum(p)?)
}

/// Inputs are the parameter values followed by the data tensors.
fn with_params(params: &ParamSet, data: Vec<Tensor>) -> Vec<Tensor> {
    let mut v = params.values();
    v.extend(data);
    v
}

pub fn vae_config() -> VaeConfig {
    VaeConfig {
        height: 8,
        width: 8,
        frames: 3,
        patch: 4,
        hidden: 6,
        blocks: 1,
        latent_channels: 3,
        ratio: 2,
        logvar_init: -1.0,
    }
}

pub fn flow_config(fusion: bool) -> FlowNetConfig {
    FlowNetConfig {
        latent_channels: 3,
        tokens: 4,
        future_steps: 2,
        history_steps: 2,
        hidden: 6,
        blocks: 1,
        time_features: 4,
        fusion,
        fusion_alpha: 0.3,
    }
}

pub fn model_cases(seed: u64) -> Vec<Case> {
    let mut rng = Rng::new(seed);
    let vae = Vae::init(vae_config(), &mut rng).unwrap();
    let np = vae.params.len();
    let x = random_tensor(&vae.cfg.segment_shape(2), &mut rng, 0.3);
    let z = random_tensor(&vae.cfg.latent_shape(2), &mut rng, 1.0);
    let r_lat = random_tensor(&vae.cfg.latent_shape(2), &mut rng, 1.0);
    let r_lat2 = random_tensor(&vae.cfg.latent_shape(2), &mut rng, 1.0);
    let r_seg = random_tensor(&vae.cfg.segment_shape(2), &mut rng, 1.0);
    let eps = random_tensor(&[2, 3], &mut rng, 1.0);
    let mut out = Vec::new();

    let (v1, v2) = (vae.clone(), vae.clone());
    let (ra, rb) = (r_lat.clone(), r_lat2);
    out.push(case(
        "vae_encode",
        Box::new(move |tp, a| {
            let bp = v1.params.bind_vars(&a[..np])?;
            let (mu, lv) = v1.encode_var(tp, &bp, a[np])?;
            let pm = project(tp, mu, &ra)?;
            let pl = project(tp, lv, &rb)?;
            Ok(tp.add(pm, pl)?)
        }),
        with_params(&vae.params, vec![x]),
    ));
    out.push(case(
        "vae_decode",
        Box::new(move |tp, a| {
            let bp = v2.params.bind_vars(&a[..np])?;
            let y = v2.decode_var(tp, &bp, a[np])?;
            project(tp, y, &r_seg)
        }),
        with_params(&vae.params, vec![z]),
    ));
    let r2 = random_tensor(&[2, 3], &mut rng, 1.0);
    out.push(case(
        "reparameterize",
        Box::new(move |tp, a| {
            let z = reparameterize_var(tp, a[0], a[1], &eps)?;
            project(tp, z, &r2)
        }),
        vec![
            random_tensor(&[2, 3], &mut rng, 1.0),
            random_tensor(&[2, 3], &mut rng, 0.5),
        ],
    ));

    for (name, fusion) in [("velocity_fused", true), ("velocity_plain", false)] {
        let net = VelocityNet::init(flow_config(fusion), &mut rng).unwrap();
        let mut params = net.params.clone();
        // Move gates off their zero init so the sigmoid slope varies.
        if fusion {
            *params.get_mut("vel.fusion.gate").unwrap() = random_tensor(&[2], &mut rng, 1.0);
        }
        let net = VelocityNet {
            cfg: net.cfg,
            params,
        };
        let np = net.params.len();
        let shape = net.cfg.latent_shape(2);
        let cond = FlowCondition {
            z_hist: random_tensor(&[2, 2, 4, 3], &mut rng, 1.0),
            hist_vis: rng.draw_uniform(&[2, 2, 4]),
        };
        let t = vec![rng.uniform(), rng.uniform()];
        let r = random_tensor(&shape, &mut rng, 1.0);
        let inputs = with_params(&net.params, vec![random_tensor(&shape, &mut rng, 1.0)]);
        out.push(case(
            name,
            Box::new(move |tp, a| {
                let bp = net.params.bind_vars(&a[..np])?;
                let v = net.forward_var(tp, &bp, a[np], &t, &cond)?;
                project(tp, v, &r)
            }),
            inputs,
        ));
    }

    let fused = VelocityNet::init(flow_config(true), &mut rng).unwrap();
    let mut tok = ParamSet::new();
    for (k, v) in fused
        .params
        .iter()
        .filter(|(k, _)| k.starts_with("vel.tok."))
    {
        tok.insert(k.clone(), v.clone());
    }
    let nt = tok.len();
    let r = random_tensor(&[2, 2, 4, 6], &mut rng, 1.0);
    let inputs = with_params(
        &tok,
        vec![
            random_tensor(&[2, 2, 4, 6], &mut rng, 1.0),
            random_tensor(&[2, 3, 4, 3], &mut rng, 1.0),
            Tensor::from_vec(vec![0.4]),
            random_tensor(&[2], &mut rng, 1.0),
        ],
    );
    out.push(case(
        "fuse_history",
        Box::new(move |tp, a| {
            let bp = tok.bind_vars(&a[..nt])?;
            let f = fuse_history(tp, &bp, "vel.tok", a[nt], a[nt + 1], a[nt + 2], a[nt + 3])?;
            project(tp, f, &r)
        }),
        inputs,
    ));

    let head = VisibilityHead::init(
        VisConfig {
            latent_channels: 3,
            hidden: 5,
            layers: 2,
        },
        &mut rng,
    )
    .unwrap();
    let np = head.params.len();
    let r = random_tensor(&[2, 3, 4], &mut rng, 1.0);
    let inputs = with_params(
        &head.params,
        vec![random_tensor(&[2, 3, 4, 3], &mut rng, 1.0)],
    );
    out.push(case(
        "visibility_logits",
        Box::new(move |tp, a| {
            let bp = head.params.bind_vars(&a[..np])?;
            let l = head.logits_var(tp, &bp, a[np])?;
            project(tp, l, &r)
        }),
        inputs,
    ));
    out
}

/// Worst relative error of one scenario over all checked seeds.
#[derive(Clone, Debug)]
pub struct CaseResult {
    pub name: &'static str,
    pub seed: u64,
    pub report: GradCheckReport,
}

/// Check every loss and model scenario for each seed and keep the worst seed per scenario.
pub fn run(seeds: std::ops::Range<u64>, step: f64) -> Result<Vec<CaseResult>> {
    let mut out: Vec<CaseResult> = Vec::new();
    for seed in seeds {
        for c in loss_cases(seed).into_iter().chain(model_cases(seed)) {
            let report = grad_check_report(&c.f, &c.inputs, step)?;
            match out.iter_mut().find(|r| r.name == c.name) {
                Some(r) if r.report.max_rel_error >= report.max_rel_error => {}
                Some(r) => {
                    *r = CaseResult {
                        name: c.name,
                        seed,
                        report,
                    }
                }
                None => out.push(CaseResult {
                    name: c.name,
                    seed,
                    report,
                }),
            }
        }
    }
    Ok(out)
}
