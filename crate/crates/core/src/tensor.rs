//! Dense row-major tensors of rank 1 to 3, plus a small binary dump format:
//! a little-endian `u64` header length, a JSON header `{"dtype":"f64","shape":[..]}`,
//! then the values as little-endian `f64`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct DumpHeader {
    dtype: String,
    shape: Vec<usize>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 3 {
            return Err(Error::Shape(format!("rank {} not in 1..=3", shape.len())));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("tensor"));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    /// Rank-2 tensor from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::Shape(format!("expected rank 2, got {:?}", self.shape))),
        }
    }

    /// `(d0, d1, d2)` of a rank-3 tensor.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [a, b, c] => Ok((a, b, c)),
            _ => Err(Error::Shape(format!("expected rank 3, got {:?}", self.shape))),
        }
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[f64] {
        let cols = *self.shape.last().expect("rank >= 1");
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        let cols = (*self.shape.last().expect("rank >= 1")).max(1);
        self.data.chunks(cols)
    }

    /// Block `i` along the leading axis of a rank-3 tensor, as a rank-2 tensor.
    pub fn block(&self, i: usize) -> Result<Tensor> {
        let (n, r, c) = self.dims3()?;
        if i >= n {
            return Err(Error::Shape(format!("block {i} out of {n}")));
        }
        Ok(Tensor {
            shape: vec![r, c],
            data: self.data[i * r * c..(i + 1) * r * c].to_vec(),
        })
    }

    /// Stacks equally shaped rank-2 tensors into a rank-3 tensor.
    pub fn stack(blocks: &[Tensor]) -> Result<Tensor> {
        let Some(first) = blocks.first() else {
            return Err(Error::EmptyInput("tensor blocks"));
        };
        let (r, c) = first.dims2()?;
        let mut data = Vec::with_capacity(blocks.len() * r * c);
        for b in blocks {
            if b.dims2()? != (r, c) {
                return Err(Error::Shape(format!(
                    "cannot stack {:?} with {:?}",
                    b.shape, first.shape
                )));
            }
            data.extend_from_slice(&b.data);
        }
        Ok(Tensor {
            shape: vec![blocks.len(), r, c],
            data,
        })
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let header = serde_json::to_vec(&DumpHeader {
            dtype: "f64".into(),
            shape: self.shape.clone(),
        })?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = u64::from_le_bytes(len);
        if len > 1 << 20 {
            return Err(Error::Shape(format!("tensor header of {len} bytes is too large")));
        }
        let mut header = vec![0u8; len as usize];
        r.read_exact(&mut header)?;
        let header: DumpHeader = serde_json::from_slice(&header)?;
        if header.dtype != "f64" {
            return Err(Error::Shape(format!("unsupported dtype {}", header.dtype)));
        }
        let n: usize = header.shape.iter().product();
        let mut data = Vec::with_capacity(n);
        let mut buf = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        Tensor::new(header.shape, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction_checks() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![], vec![]).is_err());
        assert!(Tensor::new(vec![1, 1, 1, 1], vec![0.0]).is_err());
        assert!(matches!(
            Tensor::new(vec![2], vec![0.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
        assert!(Tensor::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn blocks_and_stacking() {
        let t = Tensor::new(vec![2, 2, 3], (0..12).map(f64::from).collect()).unwrap();
        let b1 = t.block(1).unwrap();
        assert_eq!(b1.shape(), &[2, 3]);
        assert_eq!(b1.row(0), &[6.0, 7.0, 8.0]);
        let back = Tensor::stack(&[t.block(0).unwrap(), b1]).unwrap();
        assert_eq!(back, t);
        assert!(t.block(2).is_err());
    }

    #[test]
    fn dump_layout() {
        let t = Tensor::new(vec![1, 2], vec![1.5, -2.0]).unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        let header = br#"{"dtype":"f64","shape":[1,2]}"#;
        assert_eq!(&buf[..8], &(header.len() as u64).to_le_bytes());
        assert_eq!(&buf[8..8 + header.len()], header);
        assert_eq!(&buf[8 + header.len()..8 + header.len() + 8], &1.5f64.to_le_bytes());
        assert_eq!(Tensor::read_from(&buf[..]).unwrap(), t);
        assert!(Tensor::read_from(&buf[..buf.len() - 1]).is_err());
    }
}
