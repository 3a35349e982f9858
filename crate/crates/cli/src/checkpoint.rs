//! Binary checkpoints.
//!
//! ```text
//! "EQP1"  precision byte (4 or 8)  u32 layer count  u32 sizes...
//! W_1 (row-major) b_1 ... W_N b_N   at the declared precision
//! u64 epoch  32-byte rng key
//! ```
//!
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use eqprop::train::Precision;
use eqprop::{EqPropError, LayeredParams, Scalar, Topology};

use crate::error::{CliError, CliResult, Context};

pub const MAGIC: &[u8; 4] = b"EQP1";

#[derive(Clone, Debug, PartialEq)]
pub enum Params {
    F32(LayeredParams<f32>),
    F64(LayeredParams<f64>),
}

impl Params {
    pub fn precision(&self) -> Precision {
        match self {
            Params::F32(_) => Precision::F32,
            Params::F64(_) => Precision::F64,
        }
    }

    pub fn topology(&self) -> eqprop::Result<Topology> {
        match self {
            Params::F32(p) => p.topology(),
            Params::F64(p) => p.topology(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: Params,
    pub epoch: u64,
    pub rng_key: [u8; 32],
}

/// Size in bytes of a checkpoint for `topology` at `precision`.
pub fn encoded_len(topology: &Topology, precision: Precision) -> usize {
    4 + 1 + 4 + 4 * topology.sizes().len() + precision.bytes() * topology.num_params() + 8 + 32
}

fn write_params<T: Scalar>(out: &mut Vec<u8>, p: &LayeredParams<T>) {
    for (w, b) in p.weights.iter().zip(&p.biases) {
        w.iter().for_each(|v| v.write_le(out));
        b.iter().for_each(|v| v.write_le(out));
    }
}

impl Checkpoint {
    pub fn encode(&self) -> eqprop::Result<Vec<u8>> {
        let topology = self.params.topology()?;
        let precision = self.params.precision();
        let mut out = Vec::with_capacity(encoded_len(&topology, precision));
        out.extend_from_slice(MAGIC);
        out.push(precision.bytes() as u8);
        out.extend_from_slice(&(topology.sizes().len() as u32).to_le_bytes());
        for &d in topology.sizes() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        match &self.params {
            Params::F32(p) => write_params(&mut out, p),
            Params::F64(p) => write_params(&mut out, p),
        }
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.rng_key);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> eqprop::Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(EqPropError::Format {
                expected: "magic \"EQP1\"".into(),
                found: format!("{:?}", String::from_utf8_lossy(magic)),
            });
        }
        let precision = match r.take(1, "precision flag")?[0] {
            4 => Precision::F32,
            8 => Precision::F64,
            other => {
                return Err(EqPropError::Format {
                    expected: "precision flag 4 or 8".into(),
                    found: other.to_string(),
                })
            }
        };
        let count = r.u32("layer count")? as usize;
        if count < 2 {
            return Err(EqPropError::Format {
                expected: "at least 2 layers".into(),
                found: count.to_string(),
            });
        }
        // each size costs 4 bytes, so a bogus count fails here instead of allocating
        if count > r.remaining() / 4 {
            return Err(EqPropError::Truncated(format!("{count} layer sizes")));
        }
        let sizes = (0..count)
            .map(|_| r.u32("layer size").map(|v| v as usize))
            .collect::<eqprop::Result<Vec<_>>>()?;
        let topology = Topology::new(sizes)?;
        let params = match precision {
            Precision::F32 => Params::F32(r.params(&topology)?),
            Precision::F64 => Params::F64(r.params(&topology)?),
        };
        let epoch = u64::from_le_bytes(r.take(8, "epoch counter")?.try_into().unwrap());
        let rng_key = r.take(32, "rng state")?.try_into().unwrap();
        if r.remaining() != 0 {
            return Err(EqPropError::Format {
                expected: "end of checkpoint".into(),
                found: format!("{} trailing bytes", r.remaining()),
            });
        }
        Ok(Checkpoint {
            params,
            epoch,
            rng_key,
        })
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        let bytes = self.encode().context(|| "encoding checkpoint".into())?;
        // write-then-rename so an interrupted run never leaves half a file
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        Checkpoint::decode(&bytes).context(|| format!("reading checkpoint {}", path.display()))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &str) -> eqprop::Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(EqPropError::Truncated(format!(
                "{what}: need {n} bytes at offset {}, have {}",
                self.pos,
                self.remaining()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> eqprop::Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn params<T: Scalar>(&mut self, topology: &Topology) -> eqprop::Result<LayeredParams<T>> {
        let n = topology.num_params();
        let raw = self.take(n * T::BYTES, "parameters")?;
        let values: Vec<T> = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
        LayeredParams::from_flat(topology, &values)
    }
}
