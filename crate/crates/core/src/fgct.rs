//! The FGCT tensor file format.
//!
//! ```text
//! offset  size      field
//! 0       4         magic "FGCT"
//! 4       2         version (u16, = 1)
//! 6       1         dtype code (u8, 1 = float32)
//! 7       1         ndim (u8)
//! 8       4*ndim    dims (u32 each)
//! ...     4*prod    payload, row-major float32
//! ```
//!
//! All integers and floats are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::Grid;

pub const MAGIC: [u8; 4] = *b"FGCT";
pub const VERSION: u16 = 1;
pub const DTYPE_F32: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<u32>, data: Vec<f32>) -> Result<Self> {
        let expected: u64 = dims.iter().map(|&d| d as u64).product();
        if expected != data.len() as u64 {
            return Err(Error::DimensionMismatch(format!(
                "tensor dims {dims:?} need {expected} values, got {}",
                data.len()
            )));
        }
        if dims.len() > u8::MAX as usize {
            return Err(Error::InvalidParameter(format!("too many dimensions: {}", dims.len())));
        }
        Ok(Tensor { dims, data })
    }

    /// A grid as a `[height, width]` tensor, rounded to float32.
    pub fn from_grid(grid: &Grid) -> Self {
        Tensor {
            dims: vec![grid.height() as u32, grid.width() as u32],
            data: grid.as_slice().iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn from_mask(mask: &Grid<bool>) -> Self {
        Tensor {
            dims: vec![mask.height() as u32, mask.width() as u32],
            data: mask.as_slice().iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
        }
    }

    pub fn into_grid(self) -> Result<Grid> {
        let [h, w] = self.dims[..] else {
            return Err(Error::DimensionMismatch(format!("expected a 2-D tensor, got dims {:?}", self.dims)));
        };
        Grid::from_vec(w as usize, h as usize, self.data.into_iter().map(f64::from).collect())
    }

    pub fn encode<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(&MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&[DTYPE_F32, self.dims.len() as u8])?;
        for d in &self.dims {
            w.write_all(&d.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        w.flush()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.dims.len() + 4 * self.data.len());
        self.encode(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    /// Parses a complete file image. Trailing bytes are an error.
    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut cur = bytes;
        let mut take = |n: usize| -> std::result::Result<&[u8], String> {
            if cur.len() < n {
                return Err(format!("truncated: needed {n} more bytes, {} left", cur.len()));
            }
            let (head, tail) = cur.split_at(n);
            cur = tail;
            Ok(head)
        };
        if take(4)? != MAGIC {
            return Err("bad magic".into());
        }
        let version = u16::from_le_bytes(take(2)?.try_into().unwrap());
        if version != VERSION {
            return Err(format!("unsupported version {version}"));
        }
        let header = take(2)?;
        let (dtype, ndim) = (header[0], header[1] as usize);
        if dtype != DTYPE_F32 {
            return Err(format!("unsupported dtype code {dtype}"));
        }
        let dims: Vec<u32> = take(4 * ndim)?
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let count: u64 = dims.iter().map(|&d| d as u64).product();
        let payload = take(usize::try_from(count * 4).map_err(|_| "payload too large".to_string())?)?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if !cur.is_empty() {
            return Err(format!("{} trailing bytes", cur.len()));
        }
        Ok(Tensor { dims, data })
    }
}

pub fn write_tensor(path: &Path, tensor: &Tensor) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::write(path, e))?;
    tensor
        .encode(BufWriter::new(file))
        .map_err(|e| Error::write(path, e))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
        .map_err(|e| Error::read(path, e))?;
    Tensor::decode(&bytes).map_err(|reason| Error::Tensor {
        path: path.to_path_buf(),
        reason,
    })
}
