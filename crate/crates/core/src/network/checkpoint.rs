//! Versioned binary checkpoint: network parameters and, optionally, the
//! optimizer state needed to resume training bit-exactly.
//!
//! Layout (little endian): magic `SRNNCKPT`, `u32` version, `u64` epochs
//! done, `u32` layer count, then per layer an activation tag, `u64` rows,
//! `u64` cols, row-major weights and bias (both length-prefixed). The value
//! head and the optional top-k follow, then an optional optimizer section.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Activation, DenseLayer, MlpParams, Optimizer, OptimizerKind};
use crate::binio::*;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

const MAGIC: &[u8; 8] = b"SRNNCKPT";
const VERSION: u32 = 1;
const MAX_LEN: usize = 1 << 26;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: MlpParams,
    pub optimizer: Option<Optimizer>,
    pub epochs_done: u64,
}

impl Checkpoint {
    pub fn params_only(params: MlpParams) -> Self {
        Checkpoint {
            params,
            optimizer: None,
            epochs_done: 0,
        }
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        write_u32(w, VERSION)?;
        write_u64(w, self.epochs_done)?;
        let p = &self.params;
        write_u32(w, p.layers.len() as u32)?;
        for l in &p.layers {
            write_u8(w, l.activation.tag())?;
            write_u64(w, l.weights.rows() as u64)?;
            write_u64(w, l.weights.cols() as u64)?;
            write_f64s(w, l.weights.as_slice())?;
            write_f64s(w, &l.bias)?;
        }
        write_f64s(w, &p.value_head)?;
        match p.topk {
            Some(k) => {
                write_u8(w, 1)?;
                write_u64(w, k as u64)?;
            }
            None => write_u8(w, 0)?,
        }
        match &self.optimizer {
            None => write_u8(w, 0)?,
            Some(opt) => {
                write_u8(w, 1)?;
                write_optimizer(w, opt)?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        expect_magic(r, MAGIC)?;
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let epochs_done = read_u64(r)?;
        let n_layers = read_u32(r)? as usize;
        if n_layers == 0 || n_layers > 64 {
            return Err(Error::Format(format!("implausible layer count {n_layers}")));
        }
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let activation = Activation::from_tag(read_u8(r)?)?;
            let rows = read_len(r, MAX_LEN)?;
            let cols = read_len(r, MAX_LEN)?;
            let weights = Matrix::from_vec(rows, cols, read_f64s(r, MAX_LEN)?)
                .map_err(|e| Error::Format(e.to_string()))?;
            let bias = read_f64s(r, MAX_LEN)?;
            layers.push(DenseLayer {
                weights,
                bias,
                activation,
            });
        }
        let value_head = read_f64s(r, MAX_LEN)?;
        let topk = match read_u8(r)? {
            0 => None,
            1 => Some(read_u64(r)? as usize),
            t => return Err(Error::Format(format!("bad top-k flag {t}"))),
        };
        let params = MlpParams {
            layers,
            value_head,
            topk,
        };
        params.validate().map_err(|e| Error::Format(e.to_string()))?;
        let optimizer = match read_u8(r)? {
            0 => None,
            1 => Some(read_optimizer(r)?),
            t => return Err(Error::Format(format!("bad optimizer flag {t}"))),
        };
        Ok(Checkpoint {
            params,
            optimizer,
            epochs_done,
        })
    }
}

fn write_optimizer(w: &mut impl Write, opt: &Optimizer) -> Result<()> {
    write_u8(w, opt.kind.tag())?;
    match opt.kind {
        OptimizerKind::Adam {
            beta1,
            beta2,
            epsilon,
        } => {
            write_f64(w, beta1)?;
            write_f64(w, beta2)?;
            write_f64(w, epsilon)?;
        }
        OptimizerKind::RmsProp { decay, epsilon } => {
            write_f64(w, decay)?;
            write_f64(w, epsilon)?;
        }
        OptimizerKind::StepDecaySgd { factor, every } => {
            write_f64(w, factor)?;
            write_u64(w, every)?;
        }
    }
    write_f64(w, opt.base_lr)?;
    write_u64(w, opt.t)?;
    write_u64(w, opt.episodes)?;
    for store in [&opt.first, &opt.second] {
        write_u64(w, store.len() as u64)?;
        for slot in store {
            write_f64s(w, slot)?;
        }
    }
    Ok(())
}

fn read_optimizer(r: &mut impl Read) -> Result<Optimizer> {
    let kind = match read_u8(r)? {
        0 => OptimizerKind::Adam {
            beta1: read_f64(r)?,
            beta2: read_f64(r)?,
            epsilon: read_f64(r)?,
        },
        1 => OptimizerKind::RmsProp {
            decay: read_f64(r)?,
            epsilon: read_f64(r)?,
        },
        2 => OptimizerKind::StepDecaySgd {
            factor: read_f64(r)?,
            every: read_u64(r)?,
        },
        t => return Err(Error::Format(format!("unknown optimizer tag {t}"))),
    };
    let base_lr = read_f64(r)?;
    let t = read_u64(r)?;
    let episodes = read_u64(r)?;
    let mut stores = Vec::with_capacity(2);
    for _ in 0..2 {
        let n = read_len(r, 1024)?;
        let slots = (0..n).map(|_| read_f64s(r, MAX_LEN)).collect::<Result<Vec<_>>>()?;
        stores.push(slots);
    }
    let second = stores.pop().unwrap();
    let first = stores.pop().unwrap();
    Ok(Optimizer {
        kind,
        base_lr,
        t,
        episodes,
        first,
        second,
    })
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    ckpt.write_to(&mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    Checkpoint::read_from(&mut r)
}
