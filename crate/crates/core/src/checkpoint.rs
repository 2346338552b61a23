//! Versioned binary checkpoints.
//!
//! Layout: magic, format version, model config block, train config block,
//! best validation MAR and the update it was reached at, then the parameter
//! arrays in layout order, each as (name length, name, rows, cols, row-major
//! f64 little-endian values). Writes go through a temp file + rename.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{CoreError, Result};
use crate::linalg::Matrix;
use crate::model::{ModelConfig, ParamLayout, ParameterSet};
use crate::training::{NegativeScope, TrainConfig};

const MAGIC: &[u8; 8] = b"CITERANK";
const VERSION: u32 = 1;

/// A trained model snapshot plus the metric that selected it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub params: ParameterSet,
    pub best_val_mar: f64,
    pub saved_at_update: u64,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION);

        let m = &self.model;
        put_u32(&mut out, m.input_dim as u32);
        put_u32(&mut out, m.embed_dim as u32);
        put_u32(&mut out, m.n_layers as u32);
        put_u32(&mut out, m.n_heads as u32);
        put_u32(&mut out, m.ffn_hidden as u32);
        put_f64(&mut out, m.adj_dropout_p);
        put_f64(&mut out, m.ffn_dropout_p);
        out.push(m.use_learned_residual as u8);
        out.push(m.use_bilinear as u8);

        let t = &self.train;
        put_f64(&mut out, t.learning_rate);
        put_u64(&mut out, t.total_updates);
        put_u32(&mut out, t.neg_ratio as u32);
        put_u64(&mut out, t.eval_every);
        put_u64(&mut out, t.seed);
        put_u32(&mut out, t.k as u32);
        out.push(match t.negative_scope {
            NegativeScope::TrainRows => 0,
            NegativeScope::Global => 1,
        });

        put_f64(&mut out, self.best_val_mar);
        put_u64(&mut out, self.saved_at_update);

        let layout = ParamLayout::for_config(m);
        put_u32(&mut out, self.params.entries.len() as u32);
        for (name, matrix) in layout.names.iter().zip(&self.params.entries) {
            put_u32(&mut out, name.len() as u32);
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, matrix.rows() as u32);
            put_u32(&mut out, matrix.cols() as u32);
            for &v in matrix.as_slice() {
                put_f64(&mut out, v);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Cursor { bytes, pos: 0 };
        let magic = r.take(8)?;
        if magic != MAGIC {
            return Err(CoreError::Format("bad checkpoint magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CoreError::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let model = ModelConfig {
            input_dim: r.u32()? as usize,
            embed_dim: r.u32()? as usize,
            n_layers: r.u32()? as usize,
            n_heads: r.u32()? as usize,
            ffn_hidden: r.u32()? as usize,
            adj_dropout_p: r.f64()?,
            ffn_dropout_p: r.f64()?,
            use_learned_residual: r.u8()? != 0,
            use_bilinear: r.u8()? != 0,
        };
        let train = TrainConfig {
            learning_rate: r.f64()?,
            total_updates: r.u64()?,
            neg_ratio: r.u32()? as usize,
            eval_every: r.u64()?,
            seed: r.u64()?,
            k: r.u32()? as usize,
            negative_scope: match r.u8()? {
                0 => NegativeScope::TrainRows,
                1 => NegativeScope::Global,
                x => return Err(CoreError::Format(format!("bad negative scope {x}"))),
            },
        };
        let best_val_mar = r.f64()?;
        let saved_at_update = r.u64()?;

        let layout = ParamLayout::for_config(&model);
        let n_arrays = r.u32()? as usize;
        if n_arrays != layout.names.len() {
            return Err(CoreError::Format(format!(
                "expected {} arrays, found {n_arrays}",
                layout.names.len()
            )));
        }
        let mut entries = Vec::with_capacity(n_arrays);
        for (name, &(rows, cols)) in layout.names.iter().zip(&layout.shapes) {
            let len = r.u32()? as usize;
            let got = std::str::from_utf8(r.take(len)?)
                .map_err(|_| CoreError::Format("array name not utf-8".into()))?;
            if got != name {
                return Err(CoreError::Format(format!(
                    "array order mismatch: expected {name:?}, found {got:?}"
                )));
            }
            let fr = r.u32()? as usize;
            let fc = r.u32()? as usize;
            if (fr, fc) != (rows, cols) {
                return Err(CoreError::Format(format!(
                    "array {name:?}: expected {rows}x{cols}, found {fr}x{fc}"
                )));
            }
            let mut data = Vec::with_capacity(fr * fc);
            for _ in 0..fr * fc {
                data.push(r.f64()?);
            }
            entries.push(Matrix::from_vec(fr, fc, data));
        }
        Ok(Checkpoint {
            model,
            train,
            params: ParameterSet { entries },
            best_val_mar,
            saved_at_update,
        })
    }

    /// Write atomically: temp file in the same directory, then rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        let tmp = dir.join(format!(
            ".{}.tmp",
            path.file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| "checkpoint".into())
        ));
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(CoreError::Format("checkpoint truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
