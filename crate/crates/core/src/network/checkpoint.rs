//! Binary checkpoint format.
//!
//! ```text
//! "PAAC1"
//! u32 in_channels, u32 class_count
//! u32 n_cascade, n_cascade x u32 stride, n_cascade x u32 width
//! u32 n_parallel, n_parallel x u32 stride, n_parallel x u32 width
//! f64 cell_size, u64 seed
//! u64 parameter count, then every parameter as f64 in declaration order
//! ```
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use super::{Network, NetworkConfig};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"PAAC1";

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("checkpoint truncated at byte {}", self.at)))?;
        let out = &self.bytes[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn list(&mut self, n: usize) -> Result<Vec<usize>> {
        (0..n).map(|_| self.u32().map(|v| v as usize)).collect()
    }
}

fn push_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

impl Network {
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = &self.config;
        let mut out = Vec::with_capacity(64 + 8 * self.param_count());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        push_u32(&mut out, c.in_channels);
        push_u32(&mut out, c.class_count);
        push_u32(&mut out, c.cascade_strides.len());
        c.cascade_strides
            .iter()
            .for_each(|&v| push_u32(&mut out, v));
        c.cascade_widths.iter().for_each(|&v| push_u32(&mut out, v));
        push_u32(&mut out, c.parallel_strides.len());
        c.parallel_strides
            .iter()
            .for_each(|&v| push_u32(&mut out, v));
        c.parallel_widths
            .iter()
            .for_each(|&v| push_u32(&mut out, v));
        out.extend_from_slice(&c.cell_size.to_le_bytes());
        out.extend_from_slice(&c.seed.to_le_bytes());
        out.extend_from_slice(&(self.param_count() as u64).to_le_bytes());
        for t in self.parameters() {
            for v in t.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(CHECKPOINT_MAGIC.len())? != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let in_channels = r.u32()? as usize;
        let class_count = r.u32()? as usize;
        let n_cascade = r.u32()? as usize;
        let cascade_strides = r.list(n_cascade)?;
        let cascade_widths = r.list(n_cascade)?;
        let n_parallel = r.u32()? as usize;
        let parallel_strides = r.list(n_parallel)?;
        let parallel_widths = r.list(n_parallel)?;
        let cell_size = r.f64()?;
        let seed = r.u64()?;
        let config = NetworkConfig {
            in_channels,
            class_count,
            cascade_strides,
            cascade_widths,
            parallel_strides,
            parallel_widths,
            cell_size,
            seed,
        };
        config
            .validate()
            .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;
        let count = r.u64()? as usize;
        if count != config.param_count() {
            return Err(Error::Format(format!(
                "checkpoint holds {count} parameters, header implies {}",
                config.param_count()
            )));
        }
        let mut net = Network::new(config)?;
        for t in net.parameters_mut() {
            for v in t.as_mut_slice() {
                *v = r.f64()?;
            }
        }
        if r.at != bytes.len() {
            return Err(Error::Format(format!(
                "{} trailing bytes after parameters",
                bytes.len() - r.at
            )));
        }
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
