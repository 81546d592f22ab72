use std::path::{Path, PathBuf};

use serde::Serialize;
use trajloom_core::checkpoint::{
    pipeline_checkpoint, pipeline_from_checkpoint, vae_checkpoint, vae_from_checkpoint, Checkpoint,
};
use trajloom_core::flowgen::{
    encode_corpus, endpoint_error, eval_fm_loss, eval_vae, finetune_onpolicy, sample_future,
    train_flow as fit_flow, train_vae as fit_vae, DeskCorpus, LatentCorpus, LossCurve, Pipeline,
    SampleOptions, SamplerSpec, Scene,
};
use trajloom_core::gradsuite;
use trajloom_core::metrics::{div_curl_energy, flow_tv, location_variance, vepe};
use trajloom_core::models::{Vae, VelocityNet, VisibilityHead};
use trajloom_core::motionlab::{
    caption, estimate_camera, generate, mixed_scene_spec, Jitter, JitterMode, MotionKind,
    MotionSpec, Occlusion, Rect,
};
use trajloom_core::tlf::{Convention, Coords, TlfFile};
use trajloom_core::trajfield::{
    encode_tracks, rasterize as rasterize_tracks, GridSpec, SparseTracks,
};
use trajloom_core::Error;
use trajloom_grad::Rng;

use crate::run::{fmt_value, CliError, CliResult, MetricRow, Run};
use crate::{
    AbsConvention, EvalArgs, JitterKind, Kind, MetricKind, SampleArgs, SamplerKind, SynthArgs,
    VarianceArgs,
};

// Offsets of independent random streams from the run seed.
const S_VAE_INIT: u64 = 1;
const S_VAE_TRAIN: u64 = 2;
const S_FLOW_INIT: u64 = 3;
const S_HEAD_INIT: u64 = 4;
const S_FLOW_TRAIN: u64 = 5;
const S_FINETUNE: u64 = 6;
const S_FM_EVAL: u64 = 8;
const S_ENDPOINT: u64 = 10;

/// Euler steps of the endpoint-error probe.
const ENDPOINT_STEPS: usize = 10;

fn convention(c: AbsConvention) -> Convention {
    match c {
        AbsConvention::Pixel => Convention::Pixel,
        AbsConvention::Normalized => Convention::Normalized,
    }
}

fn read_tlf(path: &Path) -> CliResult<TlfFile> {
    let bytes = std::fs::read(path).map_err(crate::run::io_err(path))?;
    TlfFile::from_bytes(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())).into(),
        other => other.into(),
    })
}

fn write_tlf(run: &mut Run, path: &Path, f: &TlfFile) -> CliResult<()> {
    run.write(path, &f.to_bytes()?)
}

fn read_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    let bytes = std::fs::read(path).map_err(crate::run::io_err(path))?;
    Ok(Checkpoint::from_bytes(&bytes)?)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| "input".into(), |s| s.to_string_lossy().into_owned())
}

fn parse_occlusion(s: &str) -> CliResult<Occlusion> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("occlusion `{s}` is not six numbers")))?;
    let [x0, y0, x1, y1, start, end] = v[..] else {
        return Err(CliError::Usage(format!(
            "occlusion `{s}` needs x0,y0,x1,y1,start,end"
        )));
    };
    if start < 0.0 || end < start || start.fract() != 0.0 || end.fract() != 0.0 {
        return Err(CliError::Usage(format!(
            "occlusion `{s}` has a bad frame range"
        )));
    }
    Ok(Occlusion {
        rect: Rect { x0, y0, x1, y1 },
        start: start as usize,
        end: end as usize,
    })
}

pub fn synth(run: &mut Run, a: &SynthArgs) -> CliResult<()> {
    let d = &run.cfg.data;
    let grid = GridSpec::new(
        a.height.unwrap_or(d.height),
        a.width.unwrap_or(d.width),
        a.stride.unwrap_or(d.stride),
    )?;
    let mut rng = Rng::new(run.seed());
    let mut spec = match a.kind {
        Kind::Mixed => mixed_scene_spec(grid, a.frames, a.tracker_noise, &mut rng),
        k => {
            let kind = match k {
                Kind::Static => MotionKind::Static,
                Kind::Translation => MotionKind::Translation { vx: a.vx, vy: a.vy },
                Kind::Rotation => MotionKind::Rotation { omega: a.omega },
                Kind::Zoom => MotionKind::Zoom { rate: a.rate },
                Kind::Shear => MotionKind::Shear { rate: a.rate },
                Kind::Mixed => unreachable!(),
            };
            MotionSpec::new(kind, a.frames, grid)
        }
    };
    for o in &a.occlusion {
        spec.occlusions.push(parse_occlusion(o)?);
    }
    if let Some(amplitude) = a.jitter {
        let mode = match a.jitter_mode {
            JitterKind::Alternating => JitterMode::Alternating,
            JitterKind::Random => JitterMode::Random,
        };
        spec.jitter = Some(Jitter { amplitude, mode });
    }
    let tracks = generate(&spec, &mut rng)?;
    let file = TlfFile::from_tracks(&tracks, convention(a.convention))?;
    let path = a.output.clone().unwrap_or_else(|| run.path("synth.tlf"));
    write_tlf(run, &path, &file)?;
    println!(
        "{}: {} frames, {} tracks",
        path.display(),
        file.frames,
        file.num_tracks()
    );
    Ok(())
}

pub fn rasterize(run: &mut Run, input: &Path, output: Option<PathBuf>) -> CliResult<()> {
    let tracks = read_tlf(input)?.to_tracks()?;
    let dense = rasterize_tracks(&tracks)?;
    let g = tracks.grid;
    let file = TlfFile {
        grid: GridSpec::new(g.height, g.width, 1)?,
        frames: dense.frames,
        convention: Convention::Normalized,
        origin: Convention::Normalized,
        coords: Coords::F32(dense.coords),
        visibility: dense.mask,
    };
    let path = output.unwrap_or_else(|| run.path("rasterized.tlf"));
    write_tlf(run, &path, &file)
}

pub fn offsets(
    run: &mut Run,
    input: &Path,
    output: &Path,
    invert: bool,
    to: Option<AbsConvention>,
) -> CliResult<()> {
    let file = read_tlf(input)?;
    let is_offset = file.convention == Convention::Offset;
    let out = match (invert, is_offset) {
        (false, false) => file.to_offsets()?,
        (true, true) => file.to_absolute(to.map(convention))?,
        (false, true) => {
            return Err(Error::Format(format!("{} already holds offsets", input.display())).into())
        }
        (true, false) => {
            return Err(
                Error::Format(format!("{} holds absolute coordinates", input.display())).into(),
            )
        }
    };
    write_tlf(run, output, &out)
}

pub fn analyze_variance(run: &mut Run, a: &VarianceArgs) -> CliResult<()> {
    let mut sets: Vec<(String, Vec<SparseTracks>)> = Vec::new();
    if a.files.is_empty() {
        let d = &run.cfg.data;
        let grid = GridSpec::new(d.height, d.width, d.stride)?;
        let mut rng = Rng::new(run.seed());
        let mut scenes = Vec::with_capacity(a.scenes);
        for _ in 0..a.scenes {
            let spec = mixed_scene_spec(grid, a.frames, a.tracker_noise, &mut rng);
            scenes.push(generate(&spec, &mut rng)?);
        }
        sets.push(("synthetic-mixed".into(), scenes));
    } else {
        for f in &a.files {
            sets.push((stem(f), vec![read_tlf(f)?.to_tracks()?]));
        }
    }
    let mut rows = Vec::new();
    for (name, scenes) in &sets {
        let mut abs = [0.0; 2];
        let mut off = [0.0; 2];
        for s in scenes {
            let v = location_variance(s)?;
            for i in 0..2 {
                abs[i] += v.absolute[i] / scenes.len() as f64;
                off[i] += v.offset[i] / scenes.len() as f64;
            }
        }
        for (method, e) in [("absolute", abs), ("offset", off)] {
            rows.push(MetricRow::new(name, method, "explained_variance_x", e[0]));
            rows.push(MetricRow::new(name, method, "explained_variance_y", e[1]));
            rows.push(MetricRow::new(
                name,
                method,
                "explained_variance",
                0.5 * (e[0] + e[1]),
            ));
        }
        let gap = 0.5 * (abs[0] + abs[1]) - 0.5 * (off[0] + off[1]);
        rows.push(MetricRow::new(
            name,
            "absolute-minus-offset",
            "explained_variance",
            gap,
        ));
        println!(
            "{name}: absolute {:.2}%  offset {:.2}%  gap {:.2} pp",
            0.5 * (abs[0] + abs[1]),
            0.5 * (off[0] + off[1]),
            gap
        );
    }
    run.write_metrics("analyze-variance_metrics.csv", &rows)?;
    Ok(())
}

fn write_curve(run: &mut Run, name: &str, curve: &LossCurve) -> CliResult<()> {
    let path = run.path(name);
    run.write(&path, curve.to_csv().as_bytes())
}

fn vae_rows(rows: &mut Vec<MetricRow>, vae: &Vae, data: &DeskCorpus) -> CliResult<()> {
    let sets: [(&str, &[Scene]); 2] = [("eval", &data.eval), ("eval-jittered", &data.jittered)];
    for (name, scenes) in sets {
        let e = eval_vae(vae, scenes)?;
        rows.push(MetricRow::new(name, "vae", "vepe_px", e.vepe_px));
        rows.push(MetricRow::new(name, "vae", "temporal_loss", e.temporal));
        rows.push(MetricRow::new(name, "vae", "recon_loss", e.recon));
    }
    Ok(())
}

pub fn train_vae(run: &mut Run) -> CliResult<()> {
    let cfg = run.cfg.clone();
    let data = DeskCorpus::generate(&cfg.data, run.seed())?;
    let vae = Vae::init(
        cfg.vae.model(&cfg.data, cfg.data.past_frames),
        &mut Rng::new(run.stream(S_VAE_INIT)),
    )?;
    let trained = fit_vae(vae, &data.train_clips(), &cfg.vae, run.stream(S_VAE_TRAIN))?;
    let totals = trained.curve.totals();
    let mut rows = Vec::new();
    if let (Some(&first), Some(&last)) = (totals.first(), totals.last()) {
        rows.push(MetricRow::new("train", "vae", "loss_initial", first));
        rows.push(MetricRow::new("train", "vae", "loss_final", last));
    }
    vae_rows(&mut rows, &trained.vae, &data)?;
    let ck = run.path("vae.trjp");
    run.write(&ck, &vae_checkpoint(&trained.vae).to_bytes()?)?;
    write_curve(run, "vae_loss.csv", &trained.curve)?;
    run.write_metrics("train-vae_metrics.csv", &rows)?;
    print_rows(&rows);
    Ok(())
}

/// Training and held-out latent corpora; held-out latents use the training statistics.
fn corpora(
    run: &Run,
    vae: &Vae,
    data: &DeskCorpus,
    stats: Option<&trajloom_core::flowgen::LatentStats>,
) -> CliResult<(LatentCorpus, LatentCorpus)> {
    let past = run.cfg.data.past_frames;
    let w = run.cfg.flow.invisible_weight;
    let train = encode_corpus(vae, &data.train_clips(), past, stats, w)?;
    let eval = encode_corpus(vae, &data.eval_clips(), past, Some(&train.stats), w)?;
    Ok((train, eval))
}

pub fn train_flow(run: &mut Run, vae: Option<PathBuf>) -> CliResult<()> {
    let cfg = run.cfg.clone();
    let vae_path = vae.unwrap_or_else(|| run.path("vae.trjp"));
    let vae = vae_from_checkpoint(&read_checkpoint(&vae_path)?)?;
    let data = DeskCorpus::generate(&cfg.data, run.seed())?;
    let (corpus, ecorpus) = corpora(run, &vae, &data, None)?;
    let net = VelocityNet::init(
        cfg.flow.model(&vae.cfg, &cfg.data),
        &mut Rng::new(run.stream(S_FLOW_INIT)),
    )?;
    let head = VisibilityHead::init(
        cfg.flow.vis_model(&vae.cfg),
        &mut Rng::new(run.stream(S_HEAD_INIT)),
    )?;
    let fm0 = eval_fm_loss(&net, &ecorpus, &cfg.flow, run.stream(S_FM_EVAL))?;
    let trained = fit_flow(net, head, &corpus, &cfg.flow, run.stream(S_FLOW_TRAIN))?;
    let fm1 = eval_fm_loss(&trained.net, &ecorpus, &cfg.flow, run.stream(S_FM_EVAL))?;
    let ep = endpoint_error(
        &trained.net,
        &ecorpus,
        &cfg.flow,
        ENDPOINT_STEPS,
        run.stream(S_ENDPOINT),
    )?;
    let rows = vec![
        MetricRow::new("eval", "flow", "fm_loss_initial", fm0),
        MetricRow::new("eval", "flow", "fm_loss_final", fm1),
        MetricRow::new("eval", "flow", "endpoint_error", ep),
    ];
    let pipe = Pipeline {
        vae,
        net: trained.net,
        head: trained.head,
        stats: corpus.stats.clone(),
    };
    let ck = run.path("pipeline.trjp");
    run.write(&ck, &pipeline_checkpoint(&pipe)?.to_bytes()?)?;
    write_curve(run, "flow_loss.csv", &trained.curve)?;
    run.write_metrics("train-flow_metrics.csv", &rows)?;
    print_rows(&rows);
    Ok(())
}

pub fn finetune(run: &mut Run, pipeline: Option<PathBuf>) -> CliResult<()> {
    let cfg = run.cfg.clone();
    let path = pipeline.unwrap_or_else(|| run.path("pipeline.trjp"));
    let pipe = pipeline_from_checkpoint(&read_checkpoint(&path)?)?;
    let data = DeskCorpus::generate(&cfg.data, run.seed())?;
    let (corpus, ecorpus) = corpora(run, &pipe.vae, &data, Some(&pipe.stats))?;
    let before = endpoint_error(
        &pipe.net,
        &ecorpus,
        &cfg.flow,
        ENDPOINT_STEPS,
        run.stream(S_ENDPOINT),
    )?;
    let (net, curve) = finetune_onpolicy(
        pipe.net.clone(),
        &corpus,
        &cfg.finetune,
        &cfg.flow,
        run.stream(S_FINETUNE),
    )?;
    let after = endpoint_error(
        &net,
        &ecorpus,
        &cfg.flow,
        ENDPOINT_STEPS,
        run.stream(S_ENDPOINT),
    )?;
    let rows = vec![
        MetricRow::new("eval", "pretrained", "endpoint_error", before),
        MetricRow::new("eval", "finetuned", "endpoint_error", after),
    ];
    let tuned = Pipeline { net, ..pipe };
    let ck = run.path("pipeline_ft.trjp");
    run.write(&ck, &pipeline_checkpoint(&tuned)?.to_bytes()?)?;
    write_curve(run, "finetune_loss.csv", &curve)?;
    run.write_metrics("finetune_metrics.csv", &rows)?;
    print_rows(&rows);
    Ok(())
}

pub fn sample(run: &mut Run, a: &SampleArgs) -> CliResult<()> {
    let path = a
        .pipeline
        .clone()
        .unwrap_or_else(|| run.path("pipeline.trjp"));
    let pipe = pipeline_from_checkpoint(&read_checkpoint(&path)?)?;
    let tracks = read_tlf(&a.history)?.to_tracks()?;
    let seg = pipe.vae.cfg.frames;
    if tracks.frames < seg {
        return Err(Error::Invalid {
            what: "sample",
            reason: format!(
                "history has {} frames, the model needs {seg}",
                tracks.frames
            ),
        }
        .into());
    }
    let history = encode_tracks(&tracks.frame_range(tracks.frames - seg, seg)?)?;
    let sampler = match a.sampler {
        None => run.cfg.sampler.method,
        Some(SamplerKind::Euler) => SamplerSpec::Euler { steps: a.steps },
        Some(SamplerKind::Dopri5) => SamplerSpec::Dopri5 {
            rtol: a.rtol,
            atol: a.atol,
        },
        Some(SamplerKind::Dopri5Fixed) => SamplerSpec::Dopri5Fixed { steps: a.steps },
    };
    let opts = SampleOptions {
        sampler,
        anchor_mode: run.cfg.flow.anchor_mode,
        sigma0: run.cfg.flow.sigma0,
        vis_threshold: run.cfg.sampler.vis_threshold,
    };
    let fc = sample_future(&pipe, &history, &opts, run.seed())?;
    let file = TlfFile::from_tracks(&fc.field.to_tracks(), Convention::Pixel)?;
    let out = a.output.clone().unwrap_or_else(|| run.path("forecast.tlf"));
    write_tlf(run, &out, &file)?;
    println!("{}: {} future frames", out.display(), file.frames);
    Ok(())
}

pub fn eval(run: &mut Run, a: &EvalArgs) -> CliResult<()> {
    let tracks = read_tlf(&a.input)?.to_tracks()?;
    let reference = match &a.reference {
        Some(p) => Some(read_tlf(p)?.to_tracks()?),
        None => None,
    };
    let metrics = if a.metric.is_empty() {
        let mut m = vec![
            MetricKind::Flowtv,
            MetricKind::Divcurl,
            MetricKind::Variance,
        ];
        if reference.is_some() {
            m.push(MetricKind::Vepe);
        }
        m
    } else {
        a.metric.clone()
    };
    let dataset = a.dataset.clone().unwrap_or_else(|| stem(&a.input));
    let mut rows = Vec::new();
    for m in metrics {
        match m {
            MetricKind::Flowtv => rows.push(MetricRow::new(
                &dataset,
                &a.method,
                "flowtv",
                flow_tv(&tracks)?,
            )),
            MetricKind::Divcurl => {
                let e = div_curl_energy(&tracks, run.cfg.metrics.double_stride)?;
                rows.push(MetricRow::new(&dataset, &a.method, "divcurl", e));
            }
            MetricKind::Vepe => {
                let r = reference
                    .as_ref()
                    .ok_or_else(|| CliError::Usage("--metric vepe needs --reference".into()))?;
                rows.push(MetricRow::new(
                    &dataset,
                    &a.method,
                    "vepe",
                    vepe(&tracks, r)?,
                ));
            }
            MetricKind::Variance => {
                let (abs, off) = location_variance(&tracks)?.means();
                rows.push(MetricRow::new(
                    &dataset,
                    &a.method,
                    "explained_variance_absolute",
                    abs,
                ));
                rows.push(MetricRow::new(
                    &dataset,
                    &a.method,
                    "explained_variance_offset",
                    off,
                ));
            }
        }
    }
    run.write_metrics("eval_metrics.csv", &rows)?;
    if let [only] = &rows[..] {
        println!("{}", fmt_value(only.value));
    } else {
        print_rows(&rows);
    }
    Ok(())
}

#[derive(Serialize)]
struct CamcapReport<'a> {
    input: String,
    caption: &'a str,
    stats: trajloom_core::motionlab::CameraStats,
}

pub fn camcap(run: &mut Run, input: &Path) -> CliResult<()> {
    let tracks = read_tlf(input)?.to_tracks()?;
    let stats = estimate_camera(&tracks)?;
    let text = caption(&stats, &run.cfg.metrics.caption);
    let report = CamcapReport {
        input: stem(input),
        caption: &text,
        stats,
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    let path = run.path("camcap.json");
    run.write(&path, json.as_bytes())?;
    println!("{text}");
    Ok(())
}

pub fn gradcheck(run: &mut Run, seeds: u64, step: f64, tolerance: f64) -> CliResult<()> {
    let results = gradsuite::run(0..seeds, step)?;
    let mut csv = String::from("case,seed,max_rel_error,input,index,analytic,numeric\n");
    let mut failed = Vec::new();
    for r in &results {
        let p = &r.report;
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.name,
            r.seed,
            fmt_value(p.max_rel_error),
            p.input,
            p.index,
            fmt_value(p.analytic),
            fmt_value(p.numeric)
        ));
        let ok = p.max_rel_error < tolerance;
        println!(
            "{} {:<28} {:.3e}",
            if ok { "ok  " } else { "FAIL" },
            r.name,
            p.max_rel_error
        );
        if !ok {
            failed.push(r.name);
        }
    }
    let path = run.path("gradcheck.csv");
    run.write(&path, csv.as_bytes())?;
    if failed.is_empty() {
        println!(
            "{} cases within {tolerance:e} over {seeds} seeds",
            results.len()
        );
        Ok(())
    } else {
        Err(CliError::Failed(format!(
            "gradient check failed for {}",
            failed.join(", ")
        )))
    }
}

fn print_rows(rows: &[MetricRow]) {
    for r in rows {
        println!(
            "{} {} {} {}",
            r.dataset,
            r.method,
            r.metric,
            fmt_value(r.value)
        );
    }
}
