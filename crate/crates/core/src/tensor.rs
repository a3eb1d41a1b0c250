//! Dense row-major tensors of f64 with an optional gradient slot.
//!
//! This is the numeric currency of the whole crate: parameters, activations,
//! observations and pseudo-rewards are all `Tensor`s. The binary blob format
//! (`save`/`load`) is rank + dims as little-endian u64 followed by row-major
//! little-endian f64 data; checkpoints are built out of these blobs.

use std::io::{Read, Write};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
            grad: None,
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape("Tensor::from_vec", expected, data.len()));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            grad: None,
        })
    }

    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    /// NaN/Inf anywhere is a checkable error state, never silently allowed.
    pub fn validate_finite(&self, op: &'static str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite { op })
        }
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Gradient slot, allocated zeroed on first access. Accumulation is
    /// additive; the caller owns zeroing between steps.
    pub fn grad_mut(&mut self) -> &mut [f64] {
        let len = self.data.len();
        self.grad.get_or_insert_with(|| vec![0.0; len])
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn accumulate_grad(&mut self, delta: &[f64]) {
        let g = self.grad_mut();
        debug_assert_eq!(g.len(), delta.len());
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += di;
        }
    }

    pub fn save<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&(self.shape.len() as u64).to_le_bytes())?;
        for &d in &self.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load<R: Read>(r: &mut R) -> Result<Self> {
        let mut buf8 = [0u8; 8];
        r.read_exact(&mut buf8)?;
        let rank = u64::from_le_bytes(buf8) as usize;
        if rank > 8 {
            return Err(Error::Other(format!("implausible tensor rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            r.read_exact(&mut buf8)?;
            shape.push(u64::from_le_bytes(buf8) as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            r.read_exact(&mut buf8)?;
            data.push(f64::from_le_bytes(buf8));
        }
        Tensor::from_vec(&shape, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_bad_length() {
        assert!(Tensor::from_vec(&[2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn grad_accumulates_additively() {
        let mut t = Tensor::zeros(&[3]);
        t.accumulate_grad(&[1.0, 2.0, 3.0]);
        t.accumulate_grad(&[1.0, 1.0, 1.0]);
        assert_eq!(t.grad().unwrap(), &[2.0, 3.0, 4.0]);
        t.zero_grad();
        assert_eq!(t.grad().unwrap(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn save_load_roundtrip() {
        let t = Tensor::from_vec(&[2, 2], vec![1.0, -2.5, 3.25, 0.0]).unwrap();
        let mut buf = Vec::new();
        t.save(&mut buf).unwrap();
        // header: rank + 2 dims, then 4 f64s
        assert_eq!(buf.len(), 8 * 3 + 8 * 4);
        let back = Tensor::load(&mut buf.as_slice()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn finite_validation() {
        let mut t = Tensor::zeros(&[2]);
        assert!(t.validate_finite("test").is_ok());
        t.data_mut()[1] = f64::NAN;
        assert!(t.validate_finite("test").is_err());
    }
}
