use proptest::prelude::*;
use trajloom_core::motionlab::*;
use trajloom_core::trajfield::GridSpec;
use trajloom_grad::Rng;

fn grid() -> GridSpec {
    GridSpec::new(64, 64, 8).unwrap()
}

fn scene(kind: MotionKind, frames: usize) -> trajloom_core::trajfield::SparseTracks {
    generate(&MotionSpec::new(kind, frames, grid()), &mut Rng::new(0)).unwrap()
}

fn dist(p: [f64; 2], c: [f64; 2]) -> f64 {
    (p[0] - c[0]).hypot(p[1] - c[1])
}

#[test]
fn translation_adds_exactly_two_per_frame() {
    let tr = scene(MotionKind::Translation { vx: 2.0, vy: 0.0 }, 6);
    for t in 1..6 {
        for k in 0..tr.num_tracks() {
            assert_eq!(tr.position(t, k)[0] - tr.position(t - 1, k)[0], 2.0);
            assert_eq!(tr.position(t, k)[1], tr.position(0, k)[1]);
        }
    }
}

#[test]
fn rotation_keeps_distance_to_center() {
    let tr = scene(MotionKind::Rotation { omega: 0.07 }, 20);
    let c = frame_center(&tr.grid);
    for t in 0..20 {
        for k in 0..tr.num_tracks() {
            assert!((dist(tr.position(t, k), c) - dist(tr.position(0, k), c)).abs() < 1e-9);
        }
    }
}

#[test]
fn zoom_follows_radial_law() {
    let c_rate = 0.03;
    let tr = scene(MotionKind::Zoom { rate: c_rate }, 10);
    let c = frame_center(&tr.grid);
    for t in 0..10 {
        for k in 0..tr.num_tracks() {
            let r0 = dist(tr.position(0, k), c);
            assert!((dist(tr.position(t, k), c) - r0 * (1.0 + c_rate).powi(t as i32)).abs() < 1e-9);
        }
    }
}

#[test]
fn occluded_and_exiting_points_are_invisible() {
    let mut spec = MotionSpec::new(MotionKind::Translation { vx: 8.0, vy: 0.0 }, 4, grid());
    spec.occlusions.push(Occlusion {
        rect: Rect {
            x0: 0.0,
            y0: 0.0,
            x1: 16.0,
            y1: 16.0,
        },
        start: 0,
        end: 1,
    });
    let tr = generate(&spec, &mut Rng::new(0)).unwrap();
    // Track 0 starts at (3.5, 3.5): hidden at frame 0, visible after.
    assert!(!tr.visible(0, 0) && tr.visible(1, 0));
    // The last column leaves the frame after one step.
    assert!(tr.visible(0, 7) && !tr.visible(1, 7));
}

#[test]
fn alternating_jitter_overlay() {
    let mut spec = MotionSpec::new(MotionKind::Static, 4, grid());
    spec.jitter = Some(Jitter {
        amplitude: 0.25,
        mode: JitterMode::Alternating,
    });
    let tr = generate(&spec, &mut Rng::new(0)).unwrap();
    let base = scene(MotionKind::Static, 4);
    for t in 0..4 {
        let s = if t % 2 == 0 { 0.25 } else { -0.25 };
        for k in 0..tr.num_tracks() {
            assert_eq!(tr.position(t, k)[0] - base.position(t, k)[0], s);
            assert_eq!(tr.position(t, k)[1] - base.position(t, k)[1], s);
        }
    }
}

#[test]
fn toy_pair_shapes_and_zero_bias() {
    let p = toy_1d_pair(0.0, 5).unwrap();
    assert_eq!(p.truth.shape(), &[5, 1, TOY_WIDTH, 2]);
    assert_eq!(p.truth, p.smooth);
    assert_eq!(p.truth, p.jitter);
    assert!(toy_1d_pair(0.1, 2).is_err());
}

#[test]
fn camera_estimate_for_pure_translation() {
    let s = estimate_camera(&scene(MotionKind::Translation { vx: 5.0, vy: 0.0 }, 6)).unwrap();
    assert!((s.translation[0] - 5.0).abs() < 1e-6 && s.translation[1].abs() < 1e-6);
    assert!(s.zoom.abs() < 1e-6 && s.roll.abs() < 1e-6 && s.shake < 1e-6);
    assert_eq!(
        caption(&s, &CaptionThresholds::default()),
        "camera pans right, fast"
    );
}

#[test]
fn camera_estimate_for_pure_zoom_and_roll() {
    let z = estimate_camera(&scene(MotionKind::Zoom { rate: 0.01 }, 6)).unwrap();
    assert!((z.zoom - 0.01).abs() < 1e-6, "{z:?}");
    assert!(z.translation[0].abs() < 1e-6 && z.translation[1].abs() < 1e-6);
    assert!(z.roll.abs() < 1e-6 && z.shake < 1e-6);
    assert_eq!(
        caption(&z, &CaptionThresholds::default()),
        "camera zooms in, slow"
    );

    let r = estimate_camera(&scene(MotionKind::Rotation { omega: -0.02 }, 6)).unwrap();
    assert!((r.roll + 0.02).abs() < 1e-6 && r.zoom.abs() < 1e-6 && r.shake < 1e-6);
    assert_eq!(
        caption(&r, &CaptionThresholds::default()),
        "camera rolls counterclockwise, fast"
    );
}

#[test]
fn static_scene_has_zero_stats() {
    let s = estimate_camera(&scene(MotionKind::Static, 4)).unwrap();
    assert_eq!(
        (s.translation, s.zoom, s.roll, s.shake),
        ([0.0, 0.0], 0.0, 0.0, 0.0)
    );
    assert_eq!(caption(&s, &CaptionThresholds::default()), "static camera");
}

#[test]
fn shaky_scene_is_handheld() {
    let mut spec = MotionSpec::new(MotionKind::Translation { vx: 0.01, vy: 0.0 }, 8, grid());
    spec.jitter = Some(Jitter {
        amplitude: 1.0,
        mode: JitterMode::Random,
    });
    let s = estimate_camera(&generate(&spec, &mut Rng::new(5)).unwrap()).unwrap();
    assert_eq!(
        caption(&s, &CaptionThresholds::default()),
        "handheld camera"
    );
}

#[test]
fn tilt_captions_follow_vertical_sign() {
    let th = CaptionThresholds::default();
    let up = estimate_camera(&scene(MotionKind::Translation { vx: 0.0, vy: -0.1 }, 4)).unwrap();
    assert_eq!(caption(&up, &th), "camera tilts up, slow");
    let down = estimate_camera(&scene(MotionKind::Translation { vx: 0.0, vy: 1.0 }, 4)).unwrap();
    assert_eq!(caption(&down, &th), "camera tilts down, fast");
}

#[test]
fn too_few_tracks_is_an_error() {
    let g = GridSpec::new(8, 8, 4).unwrap();
    let tr = generate(&MotionSpec::new(MotionKind::Static, 3, g), &mut Rng::new(0)).unwrap();
    let mut hidden = tr.clone();
    hidden.visibility.iter_mut().for_each(|v| *v = false);
    assert!(estimate_camera(&hidden).is_err());
    assert!(estimate_camera(&tr).is_ok());
}

#[test]
fn mixed_scenes_are_seed_deterministic() {
    let g = GridSpec::new(32, 32, 4).unwrap();
    let a = mixed_scene_spec(g, 8, 0.5, &mut Rng::new(9));
    let b = mixed_scene_spec(g, 8, 0.5, &mut Rng::new(9));
    assert_eq!(a, b);
    assert_eq!(
        generate(&a, &mut Rng::new(1)).unwrap(),
        generate(&b, &mut Rng::new(1)).unwrap()
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn caption_is_invariant_to_frame_scaling(
        vx in -4.0f64..4.0, vy in -4.0f64..4.0, zoom in -0.02f64..0.02,
        roll in -0.02f64..0.02, shake in 0.0f64..2.0, scale in 1usize..6,
    ) {
        let th = CaptionThresholds::default();
        let base = CameraStats { translation: [vx, vy], zoom, roll, shake, frame_width: 64, frame_height: 48 };
        let f = scale as f64;
        let scaled = CameraStats {
            translation: [vx * f, vy * f],
            shake: shake * f,
            frame_width: 64 * scale,
            frame_height: 48 * scale,
            ..base
        };
        prop_assert_eq!(caption(&base, &th), caption(&scaled, &th));
    }

    #[test]
    fn generation_is_deterministic(seed in 0u64..1000, amp in 0.0f64..2.0) {
        let mut spec = MotionSpec::new(MotionKind::Rotation { omega: 0.03 }, 5, grid());
        spec.jitter = Some(Jitter { amplitude: amp, mode: JitterMode::Random });
        prop_assert_eq!(
            generate(&spec, &mut Rng::new(seed)).unwrap(),
            generate(&spec, &mut Rng::new(seed)).unwrap()
        );
    }
}
