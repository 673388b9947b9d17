//! Self-describing checkpoint container.
//!
//! Layout: 8-byte magic, little-endian u32 format version, little-endian
//! u64 header length, JSON header (config, train mode, RTG scale, parameter
//! names and dims), then each parameter's values as raw little-endian f32
//! in header order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::config::{ModelConfig, TrainMode};
use crate::model::net::Params;

const MAGIC: &[u8; 8] = b"BIDLABCK";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    mode: TrainMode,
    rtg_scale: f32,
    params: Vec<ParamMeta>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamMeta {
    name: String,
    dims: Vec<usize>,
}

/// A trained model plus everything needed to run it.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub mode: TrainMode,
    /// Divisor that maps raw episode returns into normalized RTG units.
    pub rtg_scale: f32,
    pub params: Params,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let io_err = |e| Error::io(path.display().to_string(), e);
        let named = self.params.named();
        let header = Header {
            config: self.config.clone(),
            mode: self.mode,
            rtg_scale: self.rtg_scale,
            params: named
                .iter()
                .map(|(name, t)| ParamMeta {
                    name: name.clone(),
                    dims: t.dims().to_vec(),
                })
                .collect(),
        };
        let header_bytes =
            serde_json::to_vec(&header).map_err(|e| Error::Schema(e.to_string()))?;

        let mut w = BufWriter::new(File::create(path).map_err(io_err)?);
        w.write_all(MAGIC).map_err(io_err)?;
        w.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
        w.write_all(&(header_bytes.len() as u64).to_le_bytes())
            .map_err(io_err)?;
        w.write_all(&header_bytes).map_err(io_err)?;
        for (_, t) in &named {
            for v in t.values() {
                w.write_all(&v.to_le_bytes()).map_err(io_err)?;
            }
        }
        w.flush().map_err(io_err)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let io_err = |e| Error::io(path.display().to_string(), e);
        let mut r = BufReader::new(File::open(path).map_err(io_err)?);

        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io_err)?;
        if &magic != MAGIC {
            return Err(Error::Schema(format!(
                "{}: not a checkpoint file (bad magic)",
                path.display()
            )));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word).map_err(io_err)?;
        let version = u32::from_le_bytes(word);
        if version != VERSION {
            return Err(Error::Schema(format!(
                "{}: unsupported checkpoint version {version} (expected {VERSION})",
                path.display()
            )));
        }
        let mut long = [0u8; 8];
        r.read_exact(&mut long).map_err(io_err)?;
        let header_len = u64::from_le_bytes(long) as usize;
        let mut header_bytes = vec![0u8; header_len];
        r.read_exact(&mut header_bytes).map_err(io_err)?;
        let header: Header = serde_json::from_slice(&header_bytes)
            .map_err(|e| Error::Schema(format!("{}: malformed header: {e}", path.display())))?;
        header.config.validate()?;

        let mut params = Params::init(&header.config, 0)?;
        let mut slots = params.named_mut();
        if slots.len() != header.params.len() {
            return Err(Error::Schema(format!(
                "{}: header lists {} parameters, model expects {}",
                path.display(),
                header.params.len(),
                slots.len()
            )));
        }
        for (slot, meta) in slots.iter_mut().zip(&header.params) {
            let (name, tensor) = slot;
            if *name != meta.name || tensor.dims() != &meta.dims[..] {
                return Err(Error::Schema(format!(
                    "{}: parameter {} {:?} does not match expected {} {:?}",
                    path.display(),
                    meta.name,
                    meta.dims,
                    name,
                    tensor.dims()
                )));
            }
            let mut bytes = vec![0u8; tensor.numel() * 4];
            r.read_exact(&mut bytes).map_err(io_err)?;
            for (slot_v, chunk) in tensor.values_mut().iter_mut().zip(bytes.chunks_exact(4)) {
                *slot_v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            }
        }
        let mut trailing = [0u8; 1];
        if r.read(&mut trailing).map_err(io_err)? != 0 {
            return Err(Error::Schema(format!(
                "{}: trailing bytes after parameter payload",
                path.display()
            )));
        }
        if !(header.rtg_scale.is_finite() && header.rtg_scale > 0.0) {
            return Err(Error::Schema(format!(
                "{}: rtg_scale must be positive and finite, got {}",
                path.display(),
                header.rtg_scale
            )));
        }

        Ok(Checkpoint {
            config: header.config,
            mode: header.mode,
            rtg_scale: header.rtg_scale,
            params,
        })
    }
}
