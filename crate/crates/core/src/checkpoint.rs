//! Parameter checkpoints: magic `TRJP`, `u32` version, a length-prefixed TOML
//! metadata section, then named `f64` blocks (`u32` name length, name, `u32`
//! rank, `u32` dims, data), all little-endian.

use std::path::Path;

use serde::{Deserialize, Serialize};
use trajloom_grad::{ParamSet, Tensor};

use crate::error::{Error, Result};
use crate::flowgen::{LatentStats, Pipeline};
use crate::models::{FlowNetConfig, Vae, VaeConfig, VelocityNet, VisConfig, VisibilityHead};

pub const MAGIC: &[u8; 4] = b"TRJP";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vae: Option<VaeConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flow: Option<FlowNetConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vis: Option<VisConfig>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ParamSet,
}

fn put_u32(b: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} exceeds u32")))?;
    b.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("checkpoint truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&VERSION.to_le_bytes());
        let meta = toml::to_string(&self.meta).map_err(|e| Error::Format(e.to_string()))?;
        put_u32(&mut b, meta.len())?;
        b.extend_from_slice(meta.as_bytes());
        put_u32(&mut b, self.params.len())?;
        for (name, t) in self.params.iter() {
            put_u32(&mut b, name.len())?;
            b.extend_from_slice(name.as_bytes());
            put_u32(&mut b, t.shape().len())?;
            for &d in t.shape() {
                put_u32(&mut b, d)?;
            }
            for v in t.data() {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(b)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad magic, not a checkpoint".into()));
        }
        let version = r.u32()?;
        if version != VERSION as usize {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let len = r.u32()?;
        let text = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format("metadata is not UTF-8".into()))?;
        let meta: CheckpointMeta =
            toml::from_str(text).map_err(|e| Error::Format(e.to_string()))?;
        let count = r.u32()?;
        let mut params = ParamSet::new();
        for _ in 0..count {
            let n = r.u32()?;
            let name = std::str::from_utf8(r.take(n)?)
                .map_err(|_| Error::Format("block name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()?;
            let shape = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let len = len
                .and_then(|l| l.checked_mul(8))
                .ok_or_else(|| Error::Format("block size overflows".into()))?;
            let data = r
                .take(len)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            params.insert(name, Tensor::new(shape, data)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after the last block".into()));
        }
        Ok(Checkpoint { meta, params })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }
}

fn missing(what: &str) -> Error {
    Error::Format(format!("checkpoint lacks {what}"))
}

pub fn vae_checkpoint(vae: &Vae) -> Checkpoint {
    Checkpoint {
        meta: CheckpointMeta {
            kind: "vae".into(),
            vae: Some(vae.cfg.clone()),
            flow: None,
            vis: None,
        },
        params: vae.params.clone(),
    }
}

/// Parameters whose names start with any of `prefixes`.
fn pick(params: &ParamSet, prefixes: &[&str]) -> ParamSet {
    let mut p = ParamSet::new();
    for (k, v) in params
        .iter()
        .filter(|(k, _)| prefixes.iter().any(|pre| k.starts_with(pre)))
    {
        p.insert(k.clone(), v.clone());
    }
    p
}

/// The autoencoder from either checkpoint kind.
pub fn vae_from_checkpoint(ck: &Checkpoint) -> Result<Vae> {
    let cfg = ck
        .meta
        .vae
        .clone()
        .ok_or_else(|| missing("the autoencoder config"))?;
    cfg.validate()?;
    Ok(Vae {
        cfg,
        params: pick(&ck.params, &["enc.", "dec."]),
    })
}

/// Autoencoder, velocity field, visibility head and latent statistics in one file.
pub fn pipeline_checkpoint(pipe: &Pipeline) -> Result<Checkpoint> {
    let mut params = ParamSet::new();
    for (k, v) in pipe
        .vae
        .params
        .iter()
        .chain(pipe.net.params.iter())
        .chain(pipe.head.params.iter())
    {
        params.insert(k.clone(), v.clone());
    }
    let c = pipe.stats.mean.len();
    params.insert("stats.mean", Tensor::new(vec![c], pipe.stats.mean.clone())?);
    params.insert("stats.std", Tensor::new(vec![c], pipe.stats.std.clone())?);
    Ok(Checkpoint {
        meta: CheckpointMeta {
            kind: "pipeline".into(),
            vae: Some(pipe.vae.cfg.clone()),
            flow: Some(pipe.net.cfg.clone()),
            vis: Some(pipe.head.cfg.clone()),
        },
        params,
    })
}

pub fn pipeline_from_checkpoint(ck: &Checkpoint) -> Result<Pipeline> {
    if ck.meta.kind != "pipeline" {
        return Err(Error::Format(format!(
            "expected a pipeline checkpoint, found `{}`",
            ck.meta.kind
        )));
    }
    let flow = ck
        .meta
        .flow
        .clone()
        .ok_or_else(|| missing("the flow config"))?;
    let vis = ck
        .meta
        .vis
        .clone()
        .ok_or_else(|| missing("the visibility config"))?;
    flow.validate()?;
    let stats = LatentStats::new(
        ck.params.get("stats.mean")?.data().to_vec(),
        ck.params.get("stats.std")?.data().to_vec(),
    )?;
    Ok(Pipeline {
        vae: vae_from_checkpoint(ck)?,
        net: VelocityNet {
            cfg: flow,
            params: pick(&ck.params, &["vel."]),
        },
        head: VisibilityHead {
            cfg: vis,
            params: pick(&ck.params, &["vis."]),
        },
        stats,
    })
}
