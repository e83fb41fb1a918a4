//! Binary model checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic       4 bytes  "BSNN"
//! version     u32      1
//! epochs      u64      epochs completed when saved
//! n           u32      number of layer widths (layers + 1)
//! widths      n × u32  input width first
//! per layer   out·in × f32 weights (row-major), out × f32 bias
//! has_adam    u32      0 or 1
//! if has_adam:
//!   step      u64
//!   beta1     f64
//!   beta2     f64
//!   epsilon   f64
//!   first     per-layer blocks as above
//!   second    per-layer blocks as above
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{AdamState, Gradients, Layer, Network};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"BSNN";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network<f32>,
    pub adam: Option<AdamState<f32>>,
    pub epochs: u64,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&self.epochs.to_le_bytes())?;
        let dims = self.network.dims();
        w.write_all(&(dims.len() as u32).to_le_bytes())?;
        for d in dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        write_layers(w, self.network.layers())?;
        match &self.adam {
            None => w.write_all(&0u32.to_le_bytes())?,
            Some(adam) => {
                w.write_all(&1u32.to_le_bytes())?;
                w.write_all(&adam.step.to_le_bytes())?;
                for h in [adam.beta1, adam.beta2, adam.epsilon] {
                    w.write_all(&h.to_le_bytes())?;
                }
                write_layers(w, &adam.first.layers)?;
                write_layers(w, &adam.second.layers)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let epochs = read_u64(r)?;
        let n = read_u32(r)? as usize;
        if !(2..=64).contains(&n) {
            return Err(Error::Format(format!("implausible layer count {n}")));
        }
        let dims = (0..n).map(|_| read_u32(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let network = Network::from_layers(read_layers(r, &dims)?)?;
        let adam = match read_u32(r)? {
            0 => None,
            1 => {
                let step = read_u64(r)?;
                let beta1 = read_f64(r)?;
                let beta2 = read_f64(r)?;
                let epsilon = read_f64(r)?;
                let first = Gradients { layers: read_layers(r, &dims)? };
                let second = Gradients { layers: read_layers(r, &dims)? };
                Some(AdamState { first, second, step, beta1, beta2, epsilon })
            }
            other => return Err(Error::Format(format!("bad optimizer flag {other}"))),
        };
        Ok(Self { network, adam, epochs })
    }
}

fn write_layers<W: Write>(w: &mut W, layers: &[Layer<f32>]) -> Result<()> {
    for l in layers {
        for x in l.weights.iter().chain(l.bias.iter()) {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_layers<R: Read>(r: &mut R, dims: &[usize]) -> Result<Vec<Layer<f32>>> {
    dims.windows(2)
        .map(|d| {
            let (inp, out) = (d[0], d[1]);
            let weights = Array2::from_shape_vec((out, inp), read_f32s(r, out * inp)?)
                .map_err(|e| Error::Format(e.to_string()))?;
            let bias = Array1::from(read_f32s(r, out)?);
            Ok(Layer { weights, bias })
        })
        .collect()
}

fn read_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f32>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect())
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}
