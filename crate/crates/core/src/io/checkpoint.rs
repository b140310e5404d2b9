//! Parameter checkpoints: `"FWIC"`, version `u8`, block count `u32`, then per
//! block a `u32` name length, the UTF-8 name, a `u64` value count and the
//! values as `f64`, all little-endian.

use std::fs;
use std::path::Path;

use crate::ansatz::{ConstantAnsatz, GeneratorNetwork, NetworkConfig};
use crate::error::{FwiError, Result};
use crate::fields::Grid;
use crate::inversion::AnsatzParams;

const MAGIC: &[u8; 4] = b"FWIC";
const VERSION: u8 = 1;

/// Ordered named blocks of `f64` values.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub blocks: Vec<(String, Vec<f64>)>,
}

fn as_f64(v: &[usize]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

impl Checkpoint {
    pub fn push(&mut self, name: &str, values: Vec<f64>) {
        self.blocks.push((name.to_string(), values));
    }

    pub fn get(&self, name: &str) -> Result<&[f64]> {
        self.blocks
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| FwiError::Format(format!("checkpoint has no block `{name}`")))
    }

    fn usizes(&self, name: &str) -> Result<Vec<usize>> {
        self.get(name)?
            .iter()
            .map(|&v| {
                if v >= 0.0 && v.fract() == 0.0 {
                    Ok(v as usize)
                } else {
                    Err(FwiError::Format(format!("block `{name}` holds a non-integer {v}")))
                }
            })
            .collect()
    }

    fn scalar(&self, name: &str) -> Result<f64> {
        match self.get(name)? {
            [v] => Ok(*v),
            other => Err(FwiError::Format(format!("block `{name}` has {} values, expected 1", other.len()))),
        }
    }

    pub fn from_params(params: &AnsatzParams) -> Self {
        let mut c = Checkpoint::default();
        match params {
            AnsatzParams::Constant(a) => {
                let (eps, upper) = a.bounds();
                c.push("kind.constant", vec![]);
                c.push("grid.dims", as_f64(a.grid().dims()));
                c.push("grid.spacing", a.grid().spacing().to_vec());
                let voxel: Vec<usize> = a
                    .grid()
                    .dims()
                    .iter()
                    .zip(a.voxel_counts())
                    .map(|(d, n)| d / n)
                    .collect();
                c.push("voxel", as_f64(&voxel));
                c.push("bounds", vec![eps, upper]);
                c.push("coeffs", a.coeffs().to_vec());
            }
            AnsatzParams::Network(n) => {
                let cfg = n.config();
                c.push("kind.network", vec![]);
                c.push("network.latent_channels", vec![cfg.latent_channels as f64]);
                c.push("network.latent_dims", as_f64(&cfg.latent_dims));
                c.push("network.block_channels", as_f64(&cfg.block_channels));
                c.push("network.output_dims", as_f64(&cfg.output_dims));
                c.push("network.pixel_norm", vec![if cfg.pixel_norm { 1.0 } else { 0.0 }]);
                c.push("network.eps", vec![cfg.eps]);
                c.push("latent", n.latent().to_vec());
                for b in n.param_blocks() {
                    c.push(&b.name, n.params()[b.start..b.start + b.len].to_vec());
                }
            }
        }
        c
    }

    pub fn to_params(&self) -> Result<AnsatzParams> {
        if self.get("kind.constant").is_ok() {
            let grid = Grid::with_spacing(&self.usizes("grid.dims")?, self.get("grid.spacing")?, 1)?;
            let bounds = self.get("bounds")?;
            if bounds.len() != 2 {
                return Err(FwiError::Format("block `bounds` needs two values".into()));
            }
            let a = ConstantAnsatz::new(&grid, &self.usizes("voxel")?, self.get("coeffs")?.to_vec(), bounds[0], bounds[1])?;
            return Ok(AnsatzParams::Constant(a));
        }
        if self.get("kind.network").is_ok() {
            let cfg = NetworkConfig {
                latent_channels: self.scalar("network.latent_channels")? as usize,
                latent_dims: self.usizes("network.latent_dims")?,
                block_channels: self.usizes("network.block_channels")?,
                output_dims: self.usizes("network.output_dims")?,
                pixel_norm: self.scalar("network.pixel_norm")? != 0.0,
                eps: self.scalar("network.eps")?,
            };
            let template = GeneratorNetwork::from_parts(cfg.clone(), self.get("latent")?.to_vec(), vec![0.0; cfg.param_count()])?;
            let mut params = vec![0.0; cfg.param_count()];
            for b in template.param_blocks() {
                let v = self.get(&b.name)?;
                if v.len() != b.len {
                    return Err(FwiError::Format(format!("block `{}` has {} values, expected {}", b.name, v.len(), b.len)));
                }
                params[b.start..b.start + b.len].copy_from_slice(v);
            }
            return Ok(AnsatzParams::Network(GeneratorNetwork::from_parts(cfg, template.latent().to_vec(), params)?));
        }
        Err(FwiError::Format("checkpoint names neither a constant nor a network Ansatz".into()))
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.extend_from_slice(&(self.blocks.len() as u32).to_le_bytes());
        for (name, values) in &self.blocks {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(values.len() as u64).to_le_bytes());
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let short = || FwiError::Format("truncated checkpoint".into());
        let mut pos = 0;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = bytes.get(pos..pos + n).ok_or_else(short)?;
            pos += n;
            Ok(s)
        };
        if take(4)? != MAGIC {
            return Err(FwiError::Format("not a checkpoint file (bad magic)".into()));
        }
        let version = take(1)?[0];
        if version != VERSION {
            return Err(FwiError::Format(format!("unsupported checkpoint version {version}")));
        }
        let count = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
        let mut blocks = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let len = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
            let name = String::from_utf8(take(len)?.to_vec())
                .map_err(|_| FwiError::Format("block name is not UTF-8".into()))?;
            let n = u64::from_le_bytes(take(8)?.try_into().expect("8 bytes")) as usize;
            let raw = take(n.checked_mul(8).ok_or_else(short)?)?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            blocks.push((name, values));
        }
        if pos != bytes.len() {
            return Err(FwiError::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Self { blocks })
    }
}

pub fn write_checkpoint(path: &Path, params: &AnsatzParams) -> Result<()> {
    fs::write(path, Checkpoint::from_params(params).encode())?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<AnsatzParams> {
    Checkpoint::decode(&fs::read(path)?)?.to_params()
}
