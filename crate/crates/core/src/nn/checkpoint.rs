//! Versioned binary container for parameter blocks.
//!
//! Layout (little endian):
//!
//! ```text
//! magic     8 bytes  "VFLCKPT\0"
//! version   u8       1
//! dtype     u8       4 (f32) or 8 (f64)
//! vehicle   u32
//! mask      u8       sensor bits
//! n_blocks  u32
//! per block:
//!   name_len u16, name utf-8
//!   seed     u64
//!   ndim     u8, dims u32 × ndim
//!   values   dtype × product(dims)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"VFLCKPT\0";
pub const FORMAT_VERSION: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamBlock<T> {
    pub name: String,
    pub seed: u64,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub vehicle_id: u32,
    pub mask_bits: u8,
    pub blocks: Vec<ParamBlock<T>>,
}

fn take<'a>(buf: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if buf.len() < n {
        return Err(Error::Format("checkpoint truncated".into()));
    }
    let (head, tail) = buf.split_at(n);
    *buf = tail;
    Ok(head)
}

fn take_u8(buf: &mut &[u8]) -> Result<u8> {
    Ok(take(buf, 1)?[0])
}

fn take_u16(buf: &mut &[u8]) -> Result<u16> {
    Ok(u16::from_le_bytes(take(buf, 2)?.try_into().expect("2 bytes")))
}

fn take_u32(buf: &mut &[u8]) -> Result<u32> {
    Ok(u32::from_le_bytes(take(buf, 4)?.try_into().expect("4 bytes")))
}

fn take_u64(buf: &mut &[u8]) -> Result<u64> {
    Ok(u64::from_le_bytes(take(buf, 8)?.try_into().expect("8 bytes")))
}

impl<T: Scalar> Checkpoint<T> {
    pub fn block(&self, name: &str) -> Option<&ParamBlock<T>> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.push(FORMAT_VERSION);
        out.push(T::WIDTH);
        out.extend_from_slice(&self.vehicle_id.to_le_bytes());
        out.push(self.mask_bits);
        out.extend_from_slice(&(self.blocks.len() as u32).to_le_bytes());
        for b in &self.blocks {
            out.extend_from_slice(&(b.name.len() as u16).to_le_bytes());
            out.extend_from_slice(b.name.as_bytes());
            out.extend_from_slice(&b.seed.to_le_bytes());
            out.push(b.shape.len() as u8);
            for &d in &b.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &b.data {
                if T::WIDTH == 4 {
                    out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
                } else {
                    out.extend_from_slice(&v.as_f64().to_le_bytes());
                }
            }
        }
        out
    }

    /// Decodes a container; a container of the other float width is
    /// converted on load.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut buf = bytes;
        if take(&mut buf, 8)? != MAGIC {
            return Err(Error::Format("bad checkpoint magic".into()));
        }
        let version = take_u8(&mut buf)?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let width = take_u8(&mut buf)?;
        if width != 4 && width != 8 {
            return Err(Error::Format(format!("unknown dtype width {width}")));
        }
        let vehicle_id = take_u32(&mut buf)?;
        let mask_bits = take_u8(&mut buf)?;
        let n_blocks = take_u32(&mut buf)? as usize;
        let mut blocks = Vec::with_capacity(n_blocks.min(1024));
        for _ in 0..n_blocks {
            let nlen = take_u16(&mut buf)? as usize;
            let name = String::from_utf8(take(&mut buf, nlen)?.to_vec())
                .map_err(|_| Error::Format("block name is not utf-8".into()))?;
            let seed = take_u64(&mut buf)?;
            let ndim = take_u8(&mut buf)? as usize;
            let shape = (0..ndim)
                .map(|_| take_u32(&mut buf).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let count: usize = shape.iter().product();
            let raw = take(&mut buf, count * width as usize)?;
            let data = if width == 4 {
                raw.chunks_exact(4)
                    .map(|c| T::of(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
                    .collect()
            } else {
                raw.chunks_exact(8)
                    .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
                    .collect()
            };
            blocks.push(ParamBlock { name, seed, shape, data });
        }
        if !buf.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes in checkpoint", buf.len())));
        }
        Ok(Self {
            vehicle_id,
            mask_bits,
            blocks,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint<f64> {
        Checkpoint {
            vehicle_id: 3,
            mask_bits: 0b101,
            blocks: vec![
                ParamBlock {
                    name: "gps.0.weight".into(),
                    seed: 77,
                    shape: vec![2, 3],
                    data: vec![0.5, -1.25, 3.0, 0.0, 1e-3, -7.0],
                },
                ParamBlock {
                    name: "gps.0.bias".into(),
                    seed: 77,
                    shape: vec![2],
                    data: vec![0.1, 0.2],
                },
            ],
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        assert_eq!(Checkpoint::<f64>::from_bytes(&c.to_bytes()).unwrap(), c);
    }

    #[test]
    fn truncation_and_bad_magic_are_rejected() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::<f64>::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::<f64>::from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::<f64>::from_bytes(&extra).is_err());
    }

    #[test]
    fn narrow_container_loads_as_wide() {
        let c = sample();
        let narrow = Checkpoint::<f32> {
            vehicle_id: c.vehicle_id,
            mask_bits: c.mask_bits,
            blocks: c
                .blocks
                .iter()
                .map(|b| ParamBlock {
                    name: b.name.clone(),
                    seed: b.seed,
                    shape: b.shape.clone(),
                    data: b.data.iter().map(|&v| v as f32).collect(),
                })
                .collect(),
        };
        let wide = Checkpoint::<f64>::from_bytes(&narrow.to_bytes()).unwrap();
        assert_eq!(wide.blocks[0].data[1], -1.25);
    }
}
