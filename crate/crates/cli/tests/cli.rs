use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use trajloom_core::tlf::{Convention, Coords, TlfFile};

const TINY: &str = "seed = 3
[data]
train_scenes = 8
eval_scenes = 4
[vae]
steps = 4
batch = 2
[flow]
steps = 4
batch = 4
[finetune]
steps = 2
batch = 4
sub_batch = 2
";

fn trajloom(cwd: &Path, out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trajloom"))
        .current_dir(cwd)
        .env_remove("TRAJLOOM_OUT")
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(o: Output) -> String {
    assert!(
        o.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        o.status.code(),
        String::from_utf8_lossy(&o.stdout),
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn pixel_f32(f: &TlfFile) -> Vec<f32> {
    let Coords::F32(v) = &f.coords else {
        panic!("expected 32-bit coordinates")
    };
    v.clone()
}

struct Dir {
    _tmp: tempfile::TempDir,
    root: PathBuf,
}

fn dir() -> Dir {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().to_path_buf();
    Dir { _tmp: tmp, root }
}

#[test]
fn synth_translation_matches_analytic_tracks() {
    let d = dir();
    ok(trajloom(
        &d.root,
        &d.root.join("out"),
        &[
            "synth",
            "--kind",
            "translation",
            "--vx",
            "2",
            "--frames",
            "16",
            "a.tlf",
        ],
    ));
    let f = TlfFile::read(&d.root.join("a.tlf")).unwrap();
    assert_eq!(
        (f.frames, f.grid.height, f.grid.width, f.grid.stride),
        (16, 32, 32, 4)
    );
    assert_eq!(f.convention, Convention::Pixel);
    let c = pixel_f32(&f);
    for t in 0..16 {
        for i in 0..8 {
            for j in 0..8 {
                let k = i * 8 + j;
                let x = 4.0 * j as f64 + 1.5 + 2.0 * t as f64;
                let y = 4.0 * i as f64 + 1.5;
                assert_eq!(c[(t * 64 + k) * 2] as f64, x);
                assert_eq!(c[(t * 64 + k) * 2 + 1] as f64, y);
                assert_eq!(f.visibility[t * 64 + k], x <= 31.5, "t {t} k {k}");
            }
        }
    }
}

#[test]
fn offsets_and_back_is_bit_identical() {
    let d = dir();
    let out = d.root.join("out");
    for conv in ["pixel", "normalized"] {
        ok(trajloom(
            &d.root,
            &out,
            &[
                "synth",
                "--kind",
                "rotation",
                "--omega",
                "0.05",
                "--convention",
                conv,
                "in.tlf",
            ],
        ));
        ok(trajloom(&d.root, &out, &["offsets", "in.tlf", "off.tlf"]));
        ok(trajloom(
            &d.root,
            &out,
            &["offsets", "--invert", "off.tlf", "back.tlf"],
        ));
        let a = std::fs::read(d.root.join("in.tlf")).unwrap();
        assert_eq!(a, std::fs::read(d.root.join("back.tlf")).unwrap(), "{conv}");
        let off = TlfFile::read(&d.root.join("off.tlf")).unwrap();
        assert_eq!(off.convention, Convention::Offset);
    }
}

#[test]
fn flowtv_of_uniform_translation_prints_zero() {
    let d = dir();
    let out = d.root.join("out");
    ok(trajloom(
        &d.root,
        &out,
        &[
            "synth",
            "--kind",
            "translation",
            "--vx",
            "0.75",
            "--vy",
            "-0.5",
            "a.tlf",
        ],
    ));
    let s = ok(trajloom(
        &d.root,
        &out,
        &["eval", "--metric", "flowtv", "a.tlf"],
    ));
    assert_eq!(s, "0.0\n");
    let csv = std::fs::read_to_string(out.join("eval_metrics.csv")).unwrap();
    assert_eq!(csv, "dataset,method,metric,value\na,input,flowtv,0.0\n");
}

#[test]
fn vepe_against_shifted_reference() {
    let d = dir();
    let out = d.root.join("out");
    ok(trajloom(
        &d.root,
        &out,
        &["synth", "--kind", "static", "--frames", "3", "a.tlf"],
    ));
    let mut f = TlfFile::read(&d.root.join("a.tlf")).unwrap();
    let Coords::F32(c) = &mut f.coords else {
        panic!()
    };
    for p in c.chunks_mut(2) {
        p[0] += 3.0;
        p[1] += 4.0;
    }
    f.write(&d.root.join("b.tlf")).unwrap();
    let s = ok(trajloom(
        &d.root,
        &out,
        &["eval", "--metric", "vepe", "b.tlf", "--reference", "a.tlf"],
    ));
    assert_eq!(s, "5.0\n");
}

#[test]
fn error_kinds_map_to_exit_codes() {
    let d = dir();
    let out = d.root.join("out");
    std::fs::write(d.root.join("junk.tlf"), b"TRJF\x01\x00").unwrap();
    let o = trajloom(&d.root, &out, &["eval", "junk.tlf"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error[format]:"));

    ok(trajloom(
        &d.root,
        &out,
        &["synth", "--kind", "static", "a.tlf"],
    ));
    assert_eq!(
        code(&trajloom(
            &d.root,
            &out,
            &["offsets", "--invert", "a.tlf", "b.tlf"]
        )),
        2
    );

    std::fs::write(d.root.join("bad.toml"), "[flow]\nsigma = -1.0\n").unwrap();
    let o = trajloom(
        &d.root,
        &out,
        &["--config", "bad.toml", "synth", "--kind", "static"],
    );
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error[config]:"));

    let nan = TINY.replace("[vae]\n", "[vae]\nlogvar_init = 1000.0\n");
    std::fs::write(d.root.join("nan.toml"), nan).unwrap();
    assert_eq!(
        code(&trajloom(
            &d.root,
            &out,
            &["--config", "nan.toml", "train-vae"]
        )),
        4
    );

    assert_eq!(code(&trajloom(&d.root, &out, &["frobnicate"])), 64);
    assert_eq!(
        code(&trajloom(
            &d.root,
            &out,
            &["eval", "--metric", "vepe", "a.tlf"]
        )),
        64
    );
    assert_eq!(code(&trajloom(&d.root, &out, &["train-flow"])), 1);
    assert_eq!(code(&trajloom(&d.root, &out, &["--help"])), 0);
}

#[test]
fn repeated_runs_give_identical_manifests_and_metrics() {
    let d = dir();
    std::fs::write(d.root.join("tiny.toml"), TINY).unwrap();
    let mut seen: Vec<Vec<(String, Vec<u8>)>> = Vec::new();
    for run in ["r1", "r2"] {
        let out = d.root.join(run);
        for cmd in [
            &["train-vae"][..],
            &["train-flow"],
            &["finetune"],
            &["analyze-variance", "--scenes", "4"],
        ] {
            let mut args = vec!["--config", "tiny.toml"];
            args.extend_from_slice(cmd);
            ok(trajloom(&d.root, &out, &args));
        }
        let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(&out)
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| {
                p.extension()
                    .is_some_and(|e| e == "csv" || e == "json" || e == "trjp")
            })
            .map(|p| {
                (
                    p.file_name().unwrap().to_string_lossy().into_owned(),
                    std::fs::read(&p).unwrap(),
                )
            })
            .collect();
        files.sort();
        seen.push(files);
    }
    assert_eq!(seen[0].len(), 14);
    assert_eq!(seen[0], seen[1]);
    let manifest: serde_json::Value = serde_json::from_slice(
        &seen[0]
            .iter()
            .find(|f| f.0 == "train-vae.manifest.json")
            .unwrap()
            .1,
    )
    .unwrap();
    assert_eq!(manifest["seed"], 3);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 3);

    let out = d.root.join("r3");
    ok(trajloom(
        &d.root,
        &out,
        &[
            "--config",
            "tiny.toml",
            "--seed",
            "4",
            "analyze-variance",
            "--scenes",
            "4",
        ],
    ));
    let other = std::fs::read(out.join("analyze-variance_metrics.csv")).unwrap();
    let first = &seen[0]
        .iter()
        .find(|f| f.0 == "analyze-variance_metrics.csv")
        .unwrap()
        .1;
    assert_ne!(&other, first);
}

#[test]
fn sample_continues_from_a_history_file() {
    let d = dir();
    std::fs::write(d.root.join("tiny.toml"), TINY).unwrap();
    let out = d.root.join("out");
    for cmd in ["train-vae", "train-flow"] {
        ok(trajloom(&d.root, &out, &["--config", "tiny.toml", cmd]));
    }
    ok(trajloom(
        &d.root,
        &out,
        &[
            "synth",
            "--kind",
            "translation",
            "--vx",
            "1",
            "--frames",
            "12",
            "h.tlf",
        ],
    ));
    ok(trajloom(
        &d.root,
        &out,
        &["--config", "tiny.toml", "sample", "h.tlf", "f.tlf"],
    ));
    let f = TlfFile::read(&d.root.join("f.tlf")).unwrap();
    assert_eq!((f.frames, f.grid.num_tracks()), (8, 64));
    ok(trajloom(
        &d.root,
        &out,
        &["--config", "tiny.toml", "sample", "h.tlf", "g.tlf"],
    ));
    assert_eq!(
        std::fs::read(d.root.join("f.tlf")).unwrap(),
        std::fs::read(d.root.join("g.tlf")).unwrap()
    );
    ok(trajloom(
        &d.root,
        &out,
        &[
            "--config",
            "tiny.toml",
            "sample",
            "--sampler",
            "dopri5",
            "h.tlf",
            "k.tlf",
        ],
    ));
}

#[test]
fn empty_run_plots_to_header_only_table() {
    let d = dir();
    let empty = d.root.join("empty");
    std::fs::create_dir(&empty).unwrap();
    let out = d.root.join("out");
    ok(trajloom(&d.root, &out, &["plot", "empty"]));
    assert_eq!(
        std::fs::read_to_string(out.join("metrics_table.csv")).unwrap(),
        "run,dataset,method,metric,value\n"
    );
    assert_ne!(code(&trajloom(&d.root, &out, &["plot", "missing"])), 0);
}

#[test]
fn two_run_table_has_one_row_per_run_and_metric() {
    let d = dir();
    for (run, vx) in [("slow", "0.5"), ("fast", "2")] {
        let out = d.root.join(run);
        ok(trajloom(
            &d.root,
            &out,
            &[
                "synth",
                "--kind",
                "translation",
                "--vx",
                vx,
                "--frames",
                "6",
                "a.tlf",
            ],
        ));
        ok(trajloom(
            &d.root,
            &out,
            &["eval", "--metric", "flowtv", "--metric", "divcurl", "a.tlf"],
        ));
    }
    let out = d.root.join("cmp");
    ok(trajloom(&d.root, &out, &["plot", "slow", "fast"]));
    let table = std::fs::read_to_string(out.join("metrics_table.csv")).unwrap();
    assert_eq!(
        table,
        "run,dataset,method,metric,value\n\
         slow,a,input,flowtv,0.0\nslow,a,input,divcurl,0.0\n\
         fast,a,input,flowtv,0.0\nfast,a,input,divcurl,0.0\n"
    );
}

/// Polyline vertices of every track in an overlay, keyed by track index.
fn polylines(svg: &str) -> Vec<(usize, Vec<[f32; 2]>)> {
    svg.lines()
        .filter(|l| l.starts_with("<polyline"))
        .map(|l| {
            let attr = |name: &str| {
                let start = l.find(&format!("{name}=\"")).unwrap() + name.len() + 2;
                let end = start + l[start..].find('"').unwrap();
                l[start..end].to_string()
            };
            let pts = attr("points")
                .split(' ')
                .map(|p| {
                    let (x, y) = p.split_once(',').unwrap();
                    [x.parse().unwrap(), y.parse().unwrap()]
                })
                .collect();
            (attr("data-track").parse().unwrap(), pts)
        })
        .collect()
}

#[test]
fn overlay_vertices_equal_absolute_pixel_coordinates() {
    let d = dir();
    let out = d.root.join("out");
    ok(trajloom(
        &d.root,
        &out,
        &[
            "synth", "--kind", "zoom", "--rate", "0.04", "--frames", "10", "--jitter", "0.3",
            "z.tlf",
        ],
    ));
    ok(trajloom(&d.root, &out, &["offsets", "z.tlf", "zo.tlf"]));
    for name in ["z", "zo"] {
        ok(trajloom(
            &d.root,
            &out,
            &["plot", "out", "--tracks", &format!("{name}.tlf")],
        ));
        let svg = std::fs::read_to_string(out.join(format!("plots/{name}_overlay.svg"))).unwrap();
        let f = TlfFile::read(&d.root.join(format!("{name}.tlf"))).unwrap();
        let px = pixel_f32(&f.to_absolute(Some(Convention::Pixel)).unwrap());
        let n = f.grid.num_tracks();
        let lines = polylines(&svg);
        let drawn = (0..n)
            .filter(|&k| (0..f.frames).any(|t| f.visibility[t * n + k]))
            .count();
        assert_eq!(lines.len(), drawn);
        for (k, pts) in lines {
            let expect: Vec<[f32; 2]> = (0..f.frames)
                .filter(|&t| f.visibility[t * n + k])
                .map(|t| [px[(t * n + k) * 2], px[(t * n + k) * 2 + 1]])
                .collect();
            assert_eq!(pts, expect, "track {k}");
        }
        let again = {
            ok(trajloom(
                &d.root,
                &out,
                &["plot", "out", "--tracks", &format!("{name}.tlf")],
            ));
            std::fs::read_to_string(out.join(format!("plots/{name}_overlay.svg"))).unwrap()
        };
        assert_eq!(svg, again);
    }
}

#[test]
fn rasterized_file_is_dense_and_normalized() {
    let d = dir();
    let out = d.root.join("out");
    ok(trajloom(
        &d.root,
        &out,
        &["synth", "--kind", "static", "--frames", "2", "a.tlf"],
    ));
    ok(trajloom(
        &d.root,
        &out,
        &["rasterize", "a.tlf", "dense.tlf"],
    ));
    let f = TlfFile::read(&d.root.join("dense.tlf")).unwrap();
    assert_eq!(
        (f.grid.stride, f.grid.num_tracks(), f.convention),
        (1, 32 * 32, Convention::Normalized)
    );
    let c = pixel_f32(&f);
    // Pixel (h, w) = (5, 6) lies in cell (1, 1), centered at pixel (5.5, 5.5).
    let i = (5 * 32 + 6) * 2;
    assert_eq!([c[i], c[i + 1]], [(2.0 * 6.0 / 32.0 - 1.0) as f32; 2]);
}

#[test]
fn camcap_prints_and_records_caption() {
    let d = dir();
    let out = d.root.join("out");
    ok(trajloom(
        &d.root,
        &out,
        &[
            "synth",
            "--kind",
            "translation",
            "--vx",
            "-3",
            "--frames",
            "6",
            "a.tlf",
        ],
    ));
    assert_eq!(
        ok(trajloom(&d.root, &out, &["camcap", "a.tlf"])),
        "camera pans left, fast\n"
    );
    let j: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("camcap.json")).unwrap()).unwrap();
    assert_eq!(j["caption"], "camera pans left, fast");
    assert_eq!(j["stats"]["translation"][0], -3.0);
}

#[test]
fn gradcheck_passes_and_writes_a_table() {
    let d = dir();
    let out = d.root.join("out");
    ok(trajloom(&d.root, &out, &["gradcheck", "--seeds", "1"]));
    let csv = std::fs::read_to_string(out.join("gradcheck.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next(),
        Some("case,seed,max_rel_error,input,index,analytic,numeric")
    );
    let rows: Vec<&str> = lines.collect();
    assert!(rows.len() >= 10);
    for r in rows {
        let err: f64 = r.split(',').nth(2).unwrap().parse().unwrap();
        assert!(err < 1e-4, "{r}");
    }
    assert_ne!(
        code(&trajloom(
            &d.root,
            &out,
            &["gradcheck", "--seeds", "1", "--tolerance", "0"]
        )),
        0
    );
}
