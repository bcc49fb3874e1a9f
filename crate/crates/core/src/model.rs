//! Trainable question-side parameters and their checkpoint format.

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::binary;
use crate::encoder::SyntheticEncoder;
use crate::error::{ElqError, Result};
use crate::matrix::Matrix;
use crate::spans::HeadWeights;
use crate::training::TrainConfig;

const CHECKPOINT_MAGIC: &[u8; 4] = b"ELQC";
const CHECKPOINT_VERSION: u32 = 1;

/// Projection + bias of the encoder and the three span-scoring vectors.
///
/// Flattened parameter layout (used by the optimizer and gradient checks):
/// projection (row-major `base_dim x dim`), bias, start, end, mention.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub encoder: SyntheticEncoder,
    pub heads: HeadWeights,
}

impl Model {
    /// Identity projection, zero bias and zero heads.
    pub fn new(seed: u64, base_dim: usize, dim: usize) -> Self {
        Model {
            encoder: SyntheticEncoder::new(seed, base_dim, dim),
            heads: HeadWeights::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.encoder.dim()
    }

    pub fn base_dim(&self) -> usize {
        self.encoder.base_dim()
    }

    pub fn num_params(&self) -> usize {
        let (b, h) = (self.base_dim(), self.dim());
        b * h + 4 * h
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        out.extend_from_slice(self.encoder.projection.as_slice());
        out.extend_from_slice(&self.encoder.bias);
        out.extend_from_slice(&self.heads.start);
        out.extend_from_slice(&self.heads.end);
        out.extend_from_slice(&self.heads.mention);
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(ElqError::DimensionMismatch(format!(
                "{} parameters, model has {}",
                flat.len(),
                self.num_params()
            )));
        }
        let (b, h) = (self.base_dim(), self.dim());
        let (proj, rest) = flat.split_at(b * h);
        self.encoder.projection.as_mut_slice().copy_from_slice(proj);
        let (bias, rest) = rest.split_at(h);
        self.encoder.bias.copy_from_slice(bias);
        let (start, rest) = rest.split_at(h);
        let (end, mention) = rest.split_at(h);
        self.heads.start.copy_from_slice(start);
        self.heads.end.copy_from_slice(end);
        self.heads.mention.copy_from_slice(mention);
        Ok(())
    }
}

/// Versioned binary checkpoint: magic `ELQC`, version, training config,
/// encoder seed and dims, then projection, bias and heads as `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub config: TrainConfig,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = binary::create(path)?;
        self.write_to(&mut w).map_err(|e| ElqError::io(path, e))?;
        w.flush().map_err(|e| ElqError::io(path, e))
    }

    fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let c = &self.config;
        binary::write_magic(w, CHECKPOINT_MAGIC)?;
        w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
        w.write_u32::<LittleEndian>(c.epochs as u32)?;
        w.write_u32::<LittleEndian>(c.batch_size as u32)?;
        w.write_f64::<LittleEndian>(c.learning_rate)?;
        w.write_f64::<LittleEndian>(c.max_grad_norm)?;
        w.write_f64::<LittleEndian>(c.warmup_fraction)?;
        w.write_u32::<LittleEndian>(c.hard_negatives as u32)?;
        w.write_u32::<LittleEndian>(c.max_span_len as u32)?;
        w.write_u64::<LittleEndian>(c.seed)?;
        let m = &self.model;
        w.write_u64::<LittleEndian>(m.encoder.seed())?;
        w.write_u32::<LittleEndian>(m.base_dim() as u32)?;
        w.write_u32::<LittleEndian>(m.dim() as u32)?;
        binary::write_f64s(w, m.encoder.projection.as_slice())?;
        binary::write_f64s(w, &m.encoder.bias)?;
        binary::write_f64s(w, &m.heads.start)?;
        binary::write_f64s(w, &m.heads.end)?;
        binary::write_f64s(w, &m.heads.mention)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = binary::open(path)?;
        let ckpt = Self::read_from(&mut r)?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(|e| ElqError::io(path, e))? != 0 {
            return Err(ElqError::Format(format!(
                "{}: trailing bytes after checkpoint",
                path.display()
            )));
        }
        Ok(ckpt)
    }

    fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        const WHAT: &str = "checkpoint";
        let t = binary::truncated(WHAT);
        binary::read_magic(r, CHECKPOINT_MAGIC, WHAT)?;
        let version = r.read_u32::<LittleEndian>().map_err(&t)?;
        if version != CHECKPOINT_VERSION {
            return Err(ElqError::Version {
                kind: "checkpoint",
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let config = TrainConfig {
            epochs: r.read_u32::<LittleEndian>().map_err(&t)? as usize,
            batch_size: r.read_u32::<LittleEndian>().map_err(&t)? as usize,
            learning_rate: r.read_f64::<LittleEndian>().map_err(&t)?,
            max_grad_norm: r.read_f64::<LittleEndian>().map_err(&t)?,
            warmup_fraction: r.read_f64::<LittleEndian>().map_err(&t)?,
            hard_negatives: r.read_u32::<LittleEndian>().map_err(&t)? as usize,
            max_span_len: r.read_u32::<LittleEndian>().map_err(&t)? as usize,
            seed: r.read_u64::<LittleEndian>().map_err(&t)?,
        };
        let enc_seed = r.read_u64::<LittleEndian>().map_err(&t)?;
        let base_dim = r.read_u32::<LittleEndian>().map_err(&t)? as usize;
        let dim = r.read_u32::<LittleEndian>().map_err(&t)? as usize;
        let projection = Matrix::from_vec(base_dim, dim, binary::read_f64s(r, WHAT)?)?;
        let bias = binary::read_f64s(r, WHAT)?;
        let heads = HeadWeights {
            start: binary::read_f64s(r, WHAT)?,
            end: binary::read_f64s(r, WHAT)?,
            mention: binary::read_f64s(r, WHAT)?,
        };
        if heads.dim() != dim {
            return Err(ElqError::DimensionMismatch(format!(
                "checkpoint heads have dim {}, encoder dim {dim}",
                heads.dim()
            )));
        }
        heads.validate()?;
        let encoder = SyntheticEncoder::with_parameters(enc_seed, projection, bias)?;
        Ok(Checkpoint {
            model: Model { encoder, heads },
            config,
        })
    }
}
