mod common;

use proptest::prelude::*;
use trajloom_core::config::OptimConfig;
use trajloom_core::flowgen::train_visibility;
use trajloom_core::models::*;
use trajloom_grad::{grad_check, ParamSet, Rng, Tape, Tensor};

use trajloom_core::gradsuite::{flow_config, model_cases, vae_config};

#[test]
fn every_forward_passes_grad_check() {
    for seed in 0..10 {
        for c in model_cases(seed) {
            let err = grad_check(c.f, &c.inputs, 1e-6).unwrap();
            assert!(err < 1e-4, "{} seed {seed}: {err}", c.name);
        }
    }
}

#[test]
fn default_segment_compresses_to_two_latent_steps() {
    let cfg = VaeConfig::default();
    assert_eq!(cfg.latent_frames(), 2);
    assert_eq!(cfg.latent_shape(3), vec![3, 2, 16, 8]);
}

#[test]
fn encode_is_deterministic_and_decode_restores_shape() {
    let mut rng = Rng::new(2);
    let vae = Vae::init(vae_config(), &mut rng).unwrap();
    let seg = rng.draw_normal(&vae.cfg.segment_shape(1)).scale(0.2);
    let both = Tensor::new(vae.cfg.segment_shape(2), [seg.data(), seg.data()].concat()).unwrap();
    let (mu, lv) = vae.encode(&both).unwrap();
    let half = mu.len() / 2;
    assert_eq!(mu.data()[..half], mu.data()[half..]);
    assert_eq!(lv.data()[..half], lv.data()[half..]);
    assert_eq!(vae.decode(&mu).unwrap().shape(), both.shape());
    let zero = vae
        .decode(&Tensor::zeros(&vae.cfg.latent_shape(1)))
        .unwrap();
    assert!(zero.is_finite());
}

#[test]
fn reparameterize_limits_and_monte_carlo_mean() {
    let mu = Tensor::from_vec(vec![0.3, -1.2, 2.0]);
    let z = reparameterize(&mu, &Tensor::full(&[3], -30.0), &mut Rng::new(1)).unwrap();
    assert!(z.sub(&mu).unwrap().max_abs() < 1e-6);
    let lv = Tensor::from_vec(vec![0.0, -1.0, 0.5]);
    let mut rng = Rng::new(7);
    let mut acc = [0.0; 3];
    let draws = 100_000;
    for _ in 0..draws {
        let z = reparameterize(&mu, &lv, &mut rng).unwrap();
        for (a, v) in acc.iter_mut().zip(z.data()) {
            *a += v / draws as f64;
        }
    }
    for (a, m) in acc.iter().zip(mu.data()) {
        assert!((a - m).abs() < 0.01, "{a} vs {m}");
    }
    let a = reparameterize(&mu, &lv, &mut Rng::new(5)).unwrap();
    let b = reparameterize(&mu, &lv, &mut Rng::new(5)).unwrap();
    assert_eq!(a, b);
}

fn fuse(tokens: &Tensor, hist: &Tensor, alpha: f64, gates: &[f64], tok: &ParamSet) -> Tensor {
    let mut tape = Tape::new();
    let bp = tok.bind_frozen(&mut tape);
    let t = tape.constant(tokens.clone());
    let h = tape.constant(hist.clone());
    let a = tape.constant(Tensor::from_vec(vec![alpha]));
    let g = tape.constant(Tensor::from_vec(gates.to_vec()));
    let out = fuse_history(&mut tape, &bp, "vel.tok", t, h, a, g).unwrap();
    tape.value(out).clone()
}

fn tok_params(seed: u64) -> ParamSet {
    let mut rng = Rng::new(seed);
    let mut p = ParamSet::new();
    p.insert("vel.tok.w", rng.draw_normal(&[3, 6]));
    p.insert("vel.tok.b", rng.draw_normal(&[6]));
    p
}

#[test]
fn fusion_ramp_start_injects_only_the_anchor() {
    let tok = tok_params(3);
    let mut rng = Rng::new(4);
    let tokens = Tensor::zeros(&[1, 3, 4, 6]);
    let hist = rng.draw_normal(&[1, 2, 4, 3]);
    // Gate logit 0 gives g = ½.
    let out = fuse(&tokens, &hist, 1.0, &[0.0, 0.0, 0.0], &tok);
    let last = Tensor::new(vec![4, 3], hist.data()[12..].to_vec()).unwrap();
    let w = tok.get("vel.tok.w").unwrap();
    let b = tok.get("vel.tok.b").unwrap();
    for n in 0..4 {
        for d in 0..6 {
            let mut want = b.data()[d];
            for c in 0..3 {
                want += last.at(&[n, c]) * w.at(&[c, d]);
            }
            assert!((out.at(&[0, 0, n, d]) - 0.5 * want).abs() < 1e-12);
        }
    }
}

#[test]
fn static_history_injects_the_same_hint_at_every_step() {
    let tok = tok_params(5);
    let mut rng = Rng::new(6);
    let slice = rng.draw_normal(&[1, 1, 4, 3]);
    let hist = Tensor::new(vec![1, 2, 4, 3], [slice.data(), slice.data()].concat()).unwrap();
    let tokens = Tensor::zeros(&[1, 3, 4, 6]);
    let out = fuse(&tokens, &hist, 0.7, &[0.0, 0.0, 0.0], &tok);
    let per = 4 * 6;
    assert_eq!(out.data()[..per], out.data()[per..2 * per]);
    assert_eq!(out.data()[..per], out.data()[2 * per..]);
}

#[test]
fn velocity_output_shape_and_determinism() {
    let mut rng = Rng::new(8);
    let net = VelocityNet::init(flow_config(true), &mut rng).unwrap();
    let z = rng.draw_normal(&net.cfg.latent_shape(3));
    let cond = FlowCondition {
        z_hist: rng.draw_normal(&[3, 2, 4, 3]),
        hist_vis: Tensor::ones(&[3, 2, 4]),
    };
    let t = [0.1, 0.5, 0.9];
    let a = net.forward(&z, &t, &cond).unwrap();
    assert_eq!(a.shape(), z.shape());
    assert_eq!(a, net.forward(&z, &t, &cond).unwrap());
}

#[test]
fn fusion_defaults() {
    let net = VelocityNet::init(FlowNetConfig::default(), &mut Rng::new(0)).unwrap();
    let fp = net.fusion_params().unwrap().unwrap();
    assert_eq!(fp.alpha, 0.1);
    assert!(fp.gates().iter().all(|&g| g == 0.5));
}

#[test]
fn pooled_visibility_examples() {
    assert!(pool_visibility(&Tensor::ones(&[4, 8, 8]), 4, 2)
        .unwrap()
        .data()
        .iter()
        .all(|&v| v == 1.0));
    assert!(pool_visibility(&Tensor::zeros(&[4, 8, 8]), 4, 2)
        .unwrap()
        .data()
        .iter()
        .all(|&v| v == 0.0));
    let mut m = Tensor::zeros(&[4, 8, 8]);
    m.set(&[3, 6, 1], 1.0);
    let p = pool_visibility(&m, 4, 2).unwrap();
    assert_eq!(p.data(), &[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
}

#[test]
fn visibility_head_shapes_and_thresholds() {
    let head = VisibilityHead::init(VisConfig::default(), &mut Rng::new(1)).unwrap();
    let z = Rng::new(2).draw_normal(&[2, 2, 16, 8]);
    let (logits, mask) = head.predict(&z, 1.0).unwrap();
    assert_eq!(logits.shape(), &[2, 2, 16]);
    assert!(mask.iter().all(|&m| !m));
}

#[test]
fn visibility_head_learns_separable_toy() {
    let (z, y) = common::separable_toy(96, 1);
    let optim = OptimConfig {
        lr: 3e-3,
        ..OptimConfig::default()
    };
    let head = VisibilityHead::init(VisConfig::default(), &mut Rng::new(3)).unwrap();
    let (head, _) = train_visibility(head, &z, &y, 300, 16, &optim, 4).unwrap();
    let (zt, yt) = common::separable_toy(32, 2);
    let (_, pred) = head.predict(&zt, 0.5).unwrap();
    let hits = pred
        .iter()
        .zip(yt.data())
        .filter(|(&p, &t)| p == (t == 1.0))
        .count();
    let acc = hits as f64 / pred.len() as f64;
    assert!(acc > 0.95, "accuracy {acc}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn zero_gain_fusion_is_identity(seed in any::<u64>()) {
        let tok = tok_params(seed);
        let mut rng = Rng::new(seed ^ 1);
        let tokens = rng.draw_normal(&[2, 3, 4, 6]);
        let hist = rng.draw_normal(&[2, 2, 4, 3]);
        let gates: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
        prop_assert_eq!(fuse(&tokens, &hist, 0.0, &gates, &tok), tokens);
    }

    #[test]
    fn pooling_matches_or_oracle(seed in any::<u64>(), p in 0.0f64..0.2) {
        let m = common::random_mask(&[4, 8, 8], p, &mut Rng::new(seed));
        let pooled = pool_visibility(&m, 4, 2).unwrap();
        prop_assert_eq!(pooled, common::pool_or(&m, 4, 2));
    }

    #[test]
    fn decode_of_mean_keeps_shape(frames in 1usize..7, ratio in 1usize..4, batch in 1usize..3) {
        let cfg = VaeConfig { frames, ratio, ..vae_config() };
        let mut rng = Rng::new(frames as u64);
        let vae = Vae::init(cfg, &mut rng).unwrap();
        let x = rng.draw_normal(&vae.cfg.segment_shape(batch));
        let (mu, _) = vae.encode(&x).unwrap();
        let y = vae.decode(&mu).unwrap();
        prop_assert_eq!(y.shape(), x.shape());
    }
}
