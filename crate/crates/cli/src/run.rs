//! Output directory handling, run manifests and metric CSV tables.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use trajloom_core::config::RunConfig;
use trajloom_core::Error;
use trajloom_grad::GradError;

pub const OUT_ENV: &str = "TRAJLOOM_OUT";
pub const DEFAULT_OUT: &str = "trajloom-out";
pub const METRICS_HEADER: &str = "dataset,method,metric,value";

#[derive(Debug)]
pub enum CliError {
    Core(Error),
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    Usage(String),
    /// A check the command performs did not pass.
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(Error::Format(_)) => 2,
            CliError::Core(Error::Config(_)) => 3,
            CliError::Core(Error::NonFinite { .. })
            | CliError::Core(Error::Grad(
                GradError::NonFinite { .. } | GradError::NonFiniteGradient(_),
            )) => 4,
            CliError::Usage(_) => 64,
            _ => 1,
        }
    }

    fn kind(&self) -> &'static str {
        match self.exit_code() {
            2 => "format",
            3 => "config",
            4 => "numerical",
            64 => "usage",
            _ => match self {
                CliError::Io { .. } => "io",
                CliError::Failed(_) => "check",
                _ => "invalid",
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error[{}]: ", self.kind())?;
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            CliError::Usage(m) | CliError::Failed(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<GradError> for CliError {
    fn from(e: GradError) -> Self {
        CliError::Core(Error::Grad(e))
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Serialize)]
struct OutputEntry {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    args: &'a [String],
    seed: u64,
    config_sha256: String,
    outputs: &'a [OutputEntry],
}

/// One invocation: effective config, output root, and every file it wrote.
pub struct Run {
    pub command: &'static str,
    pub cfg: RunConfig,
    pub out: PathBuf,
    args: Vec<String>,
    outputs: Vec<OutputEntry>,
}

impl Run {
    pub fn new(
        command: &'static str,
        cfg: RunConfig,
        out: PathBuf,
        args: Vec<String>,
    ) -> CliResult<Self> {
        std::fs::create_dir_all(&out).map_err(io_err(&out))?;
        Ok(Run {
            command,
            cfg,
            out,
            args,
            outputs: Vec::new(),
        })
    }

    pub fn seed(&self) -> u64 {
        self.cfg.seed
    }

    /// Seed for an independent stream of this run.
    pub fn stream(&self, k: u64) -> u64 {
        self.cfg.seed.wrapping_add(k)
    }

    /// Path under the output root.
    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn write(&mut self, path: &Path, bytes: &[u8]) -> CliResult<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        std::fs::write(path, bytes).map_err(io_err(path))?;
        let shown = path.strip_prefix(&self.out).unwrap_or(path);
        self.outputs.push(OutputEntry {
            path: shown.display().to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    pub fn write_metrics(&mut self, name: &str, rows: &[MetricRow]) -> CliResult<PathBuf> {
        let path = self.path(name);
        self.write(&path, metrics_csv(rows).as_bytes())?;
        Ok(path)
    }

    /// Write `<command>.manifest.json` under the output root.
    pub fn finish(self) -> CliResult<()> {
        let manifest = Manifest {
            tool: "trajloom",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            args: &self.args,
            seed: self.cfg.seed,
            config_sha256: sha256_hex(self.cfg.to_toml().as_bytes()),
            outputs: &self.outputs,
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        let path = self.path(&format!("{}.manifest.json", self.command));
        std::fs::write(&path, text).map_err(io_err(&path))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub dataset: String,
    pub method: String,
    pub metric: String,
    pub value: f64,
}

impl MetricRow {
    pub fn new(dataset: &str, method: &str, metric: &str, value: f64) -> Self {
        MetricRow {
            dataset: dataset.into(),
            method: method.into(),
            metric: metric.into(),
            value,
        }
    }
}

/// Shortest round-trip decimal form, always with a fractional part or exponent.
pub fn fmt_value(v: f64) -> String {
    format!("{v:?}")
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{}\n",
            r.dataset,
            r.method,
            r.metric,
            fmt_value(r.value)
        ));
    }
    s
}
