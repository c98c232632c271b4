//! Dense row-major f64 tensors plus their on-disk representation.
//!
//! All math in this crate runs in f64. The file format ("DTNS") is:
//! magic `DTNS`, u32 rank, u32 extent per dimension, one dtype flag byte
//! (0 = f32, 1 = f64), then the values little-endian in row-major order.
//! Checkpoints store f64; f32 exists for compact feature dumps.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"DTNS";

/// Upper bound on element count accepted from disk; rejects corrupt headers
/// before they turn into gigantic allocations.
const MAX_NUMEL: u64 = 1 << 28;
const MAX_RANK: u32 = 8;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::config(format!(
                "tensor shape {:?} implies {} elements, got {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Reinterprets the buffer under a new shape with the same element count.
    pub fn reshape(self, shape: Vec<usize>) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::config(format!(
                "cannot reshape {:?} ({} elements) to {:?} ({} elements)",
                self.shape,
                self.data.len(),
                shape,
                numel
            )));
        }
        Ok(Tensor {
            shape,
            data: self.data,
        })
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [a, b] => Ok((a, b)),
            _ => Err(Error::config(format!(
                "expected rank-2 tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [a, b, c] => Ok((a, b, c)),
            _ => Err(Error::config(format!(
                "expected rank-3 tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [a, b, c, d] => Ok((a, b, c, d)),
            _ => Err(Error::config(format!(
                "expected rank-4 tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W, precision: Precision) -> io::Result<()> {
        w.write_all(TENSOR_MAGIC)?;
        w.write_all(&(self.shape.len() as u32).to_le_bytes())?;
        for &d in &self.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        match precision {
            Precision::F32 => {
                w.write_all(&[0u8])?;
                let mut bytes = Vec::with_capacity(self.data.len() * 4);
                for &v in &self.data {
                    bytes.extend_from_slice(&(v as f32).to_le_bytes());
                }
                w.write_all(&bytes)?;
            }
            Precision::F64 => {
                w.write_all(&[1u8])?;
                let mut bytes = Vec::with_capacity(self.data.len() * 8);
                for &v in &self.data {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
                w.write_all(&bytes)?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> io::Result<Tensor> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != TENSOR_MAGIC {
            return Err(bad_data(format!("bad tensor magic {magic:?}")));
        }
        let rank = read_u32(r)?;
        if rank > MAX_RANK {
            return Err(bad_data(format!("tensor rank {rank} exceeds limit {MAX_RANK}")));
        }
        let mut shape = Vec::with_capacity(rank as usize);
        let mut numel: u64 = 1;
        for _ in 0..rank {
            let d = read_u32(r)? as u64;
            numel = numel
                .checked_mul(d)
                .filter(|&n| n <= MAX_NUMEL)
                .ok_or_else(|| bad_data("tensor extent product overflows sanity limit"))?;
            shape.push(d as usize);
        }
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let numel = numel as usize;
        let mut data = Vec::with_capacity(numel);
        match flag[0] {
            0 => {
                let mut bytes = vec![0u8; numel * 4];
                r.read_exact(&mut bytes)?;
                for chunk in bytes.chunks_exact(4) {
                    data.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
                }
            }
            1 => {
                let mut bytes = vec![0u8; numel * 8];
                r.read_exact(&mut bytes)?;
                for chunk in bytes.chunks_exact(8) {
                    data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
                }
            }
            other => return Err(bad_data(format!("unknown tensor dtype flag {other}"))),
        }
        Ok(Tensor { shape, data })
    }

    pub fn save(&self, path: impl AsRef<Path>, precision: Precision) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w, precision)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Tensor> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        Tensor::read_from(&mut r).map_err(|e| match e.kind() {
            io::ErrorKind::InvalidData | io::ErrorKind::UnexpectedEof => {
                Error::data(format!("{}: {}", path.display(), e))
            }
            _ => Error::io(path, e),
        })
    }
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn bad_data(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}
