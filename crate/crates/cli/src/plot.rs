//! Metric tables and SVG figures from run directories.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use trajloom_core::tlf::{Convention, Coords, TlfFile};
use trajloom_core::Error;

use crate::run::{fmt_value, io_err, CliError, CliResult, Run, METRICS_HEADER};

pub const TABLE_HEADER: &str = "run,dataset,method,metric,value";

const LOSS_W: f64 = 640.0;
const LOSS_H: f64 = 360.0;
const MARGIN: f64 = 40.0;

fn sorted_entries(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(io_err(dir))?;
    let mut v = Vec::new();
    for e in rd {
        let p = e.map_err(io_err(dir))?.path();
        if p.is_file() {
            v.push(p);
        }
    }
    v.sort();
    Ok(v)
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map_or_else(String::new, |s| s.to_string_lossy().into_owned())
}

fn run_name(dir: &Path) -> String {
    let canon = dir.canonicalize().unwrap_or_else(|_| dir.to_path_buf());
    canon
        .file_name()
        .map_or_else(|| "run".into(), |s| s.to_string_lossy().into_owned())
}

/// Rows of every `*_metrics.csv` in the run, prefixed with the run name.
fn table_rows(run: &str, files: &[PathBuf]) -> CliResult<Vec<String>> {
    let mut rows = Vec::new();
    for f in files
        .iter()
        .filter(|f| file_name(f).ends_with("_metrics.csv"))
    {
        let text = std::fs::read_to_string(f).map_err(io_err(f))?;
        let mut lines = text.lines();
        if lines.next() != Some(METRICS_HEADER) {
            return Err(Error::Format(format!("{}: not a metric table", f.display())).into());
        }
        for l in lines.filter(|l| !l.is_empty()) {
            if l.split(',').count() != 4 {
                return Err(Error::Format(format!("{}: bad row `{l}`", f.display())).into());
            }
            rows.push(format!("{run},{l}"));
        }
    }
    Ok(rows)
}

/// Hue of track `k` among `n`, following row-major grid order.
fn track_color(k: usize, n: usize) -> String {
    let hue = 300.0 * k as f64 / n.max(2).saturating_sub(1) as f64;
    format!("hsl({hue:.1},80%,45%)")
}

/// Pixel coordinates as stored by `to_absolute(Pixel)`.
pub fn pixel_coords(f: &TlfFile) -> CliResult<Vec<f32>> {
    match f.to_absolute(Some(Convention::Pixel))?.coords {
        Coords::F32(v) => Ok(v),
        Coords::F64(_) => Err(Error::Format("absolute file with 64-bit coordinates".into()).into()),
    }
}

/// One polyline per track through its visible positions, drawn in track order.
pub fn overlay_svg(f: &TlfFile) -> CliResult<String> {
    let px = pixel_coords(f)?;
    let g = f.grid;
    let n = g.num_tracks();
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">",
        w = g.width,
        h = g.height
    );
    let _ = writeln!(
        s,
        "<rect width=\"{}\" height=\"{}\" fill=\"white\"/>",
        g.width, g.height
    );
    for k in 0..n {
        let pts: Vec<String> = (0..f.frames)
            .filter(|&t| f.visibility[t * n + k])
            .map(|t| {
                let i = (t * n + k) * 2;
                format!("{:?},{:?}", px[i], px[i + 1])
            })
            .collect();
        if pts.is_empty() {
            continue;
        }
        let color = track_color(k, n);
        let _ = writeln!(
            s,
            "<polyline data-track=\"{k}\" points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"0.5\"/>",
            pts.join(" ")
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Loss curves from a `step,<columns>` CSV; log scale when every value is positive.
pub fn loss_svg(csv: &str) -> CliResult<String> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap_or_default().split(',').collect();
    if header.len() < 2 || header[0] != "step" {
        return Err(Error::Format("loss table must start with `step`".into()).into());
    }
    let cols = header.len() - 1;
    let mut series = vec![Vec::new(); cols];
    for l in lines.filter(|l| !l.is_empty()) {
        let vals: Vec<f64> = l
            .split(',')
            .skip(1)
            .map(|v| v.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| CliError::Core(Error::Format(format!("bad loss row `{l}`"))))?;
        if vals.len() != cols {
            return Err(Error::Format(format!("bad loss row `{l}`")).into());
        }
        for (c, v) in vals.into_iter().enumerate() {
            series[c].push(v);
        }
    }
    let all = series.iter().flatten().copied().filter(|v| v.is_finite());
    let log = series.iter().flatten().all(|&v| v > 0.0);
    let tf = |v: f64| if log { v.log10() } else { v };
    let (lo, hi) = all
        .map(tf)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(v), b.max(v))
        });
    let span = if hi > lo { hi - lo } else { 1.0 };
    let steps = series.first().map_or(0, |s| s.len()).max(2) - 1;
    let (pw, ph) = (LOSS_W - 2.0 * MARGIN, LOSS_H - 2.0 * MARGIN);

    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{LOSS_W}\" height=\"{LOSS_H}\" viewBox=\"0 0 {LOSS_W} {LOSS_H}\">"
    );
    let _ = writeln!(
        s,
        "<rect width=\"{LOSS_W}\" height=\"{LOSS_H}\" fill=\"white\"/>"
    );
    let _ = writeln!(
        s,
        "<rect x=\"{MARGIN}\" y=\"{MARGIN}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"#888\"/>"
    );
    for (c, vals) in series.iter().enumerate() {
        let pts: Vec<String> = vals
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite() && (!log || **v > 0.0))
            .map(|(i, &v)| {
                let x = MARGIN + pw * i as f64 / steps as f64;
                let y = MARGIN + ph * (1.0 - (tf(v) - lo) / span);
                format!("{x:.2},{y:.2}")
            })
            .collect();
        let color = track_color(c, cols);
        let _ = writeln!(
            s,
            "<polyline data-series=\"{}\" points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1\"/>",
            header[c + 1],
            pts.join(" ")
        );
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{color}\">{}</text>",
            MARGIN + 8.0,
            MARGIN + 16.0 * (c + 1) as f64,
            header[c + 1]
        );
    }
    let scale = if log { "log10" } else { "linear" };
    let _ = writeln!(
        s,
        "<text x=\"{MARGIN}\" y=\"{}\" font-size=\"11\">{scale} [{}, {}]</text>",
        LOSS_H - 12.0,
        fmt_value(lo),
        fmt_value(hi)
    );
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn plot(run: &mut Run, runs: &[PathBuf], tracks: &[PathBuf]) -> CliResult<()> {
    let mut table = String::from(TABLE_HEADER);
    table.push('\n');
    let mut figures: Vec<(String, String)> = Vec::new();
    for dir in runs {
        if !dir.is_dir() {
            return Err(CliError::Io {
                path: dir.clone(),
                source: std::io::Error::new(
                    std::io::ErrorKind::NotFound,
                    "run directory not found",
                ),
            });
        }
        let name = run_name(dir);
        let files = sorted_entries(dir)?;
        for r in table_rows(&name, &files)? {
            table.push_str(&r);
            table.push('\n');
        }
        for f in &files {
            let fname = file_name(f);
            if fname.ends_with(".tlf") {
                let svg = overlay_svg(&TlfFile::read(f)?)?;
                figures.push((
                    format!("{name}_{}_overlay.svg", fname.trim_end_matches(".tlf")),
                    svg,
                ));
            } else if fname.ends_with("_loss.csv") {
                let text = std::fs::read_to_string(f).map_err(io_err(f))?;
                figures.push((
                    format!("{name}_{}.svg", fname.trim_end_matches(".csv")),
                    loss_svg(&text)?,
                ));
            }
        }
    }
    for t in tracks {
        let svg = overlay_svg(&TlfFile::read(t)?)?;
        let stem = t
            .file_stem()
            .map_or_else(|| "tracks".into(), |s| s.to_string_lossy().into_owned());
        figures.push((format!("{stem}_overlay.svg"), svg));
    }
    let table_path = run.path("metrics_table.csv");
    run.write(&table_path, table.as_bytes())?;
    for (name, svg) in figures {
        let p = run.path(&format!("plots/{name}"));
        run.write(&p, svg.as_bytes())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_plot_rejects_bad_tables() {
        assert!(loss_svg("epoch,x\n0,1\n").is_err());
        assert!(loss_svg("step,x\n0,abc\n").is_err());
        assert!(loss_svg("step,x,y\n0,1\n").is_err());
    }

    #[test]
    fn loss_plot_is_deterministic() {
        let csv = "step,total,rec\n0,2e0,1e0\n1,1e0,5e-1\n2,5e-1,2.5e-1\n";
        let a = loss_svg(csv).unwrap();
        assert_eq!(a, loss_svg(csv).unwrap());
        assert_eq!(a.matches("<polyline").count(), 2);
        assert!(a.contains("log10"));
    }

    #[test]
    fn colors_run_along_track_order() {
        assert_eq!(track_color(0, 10), "hsl(0.0,80%,45%)");
        assert_eq!(track_color(9, 10), "hsl(300.0,80%,45%)");
    }
}
