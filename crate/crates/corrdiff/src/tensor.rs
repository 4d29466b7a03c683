//! Shaped real-valued arrays and the raw tensor file format.
//!
//! Arithmetic is carried in f64; the on-disk format stores float32 payloads.

use crate::error::{Error, Result};

/// Hard cap on element counts accepted from untrusted files.
pub const MAX_ELEMENTS: usize = 1 << 26;
/// Maximum tensor rank accepted from untrusted files.
pub const MAX_RANK: usize = 8;

/// A dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() {
            return Err(Error::dimension("rank >= 1", "rank 0"));
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::dimension("all dims >= 1", format!("{shape:?}")));
        }
        let n = checked_len(&shape)?;
        if data.len() != n {
            return Err(Error::dimension(format!("{n} elements"), format!("{}", data.len())));
        }
        Ok(Self { shape, data })
    }

    /// All-zero tensor. Panics on a zero or overflowing shape; use [`Tensor::new`]
    /// for untrusted dimensions.
    pub fn zeros(shape: &[usize]) -> Self {
        let n = checked_len(shape).expect("valid shape");
        Self { shape: shape.to_vec(), data: vec![0.0; n] }
    }

    pub fn from_scalar_slice(data: &[f64]) -> Self {
        Self { shape: vec![data.len().max(1)], data: if data.is_empty() { vec![0.0] } else { data.to_vec() } }
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }

    pub fn is_all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| c * v)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        lincomb(1.0, self, 1.0, other)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        lincomb(1.0, self, -1.0, other)
    }

    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        check_same_shape(self, other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Mean squared error between two same-shaped tensors.
    pub fn mse(&self, other: &Tensor) -> Result<f64> {
        check_same_shape(self, other)?;
        let n = self.len() as f64;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| {
                let d = a - b;
                d * d
            })
            .sum::<f64>()
            / n)
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        check_same_shape(self, other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// FNV-1a hash of the raw f64 payload; used for trajectory snapshots.
    pub fn content_hash(&self) -> u64 {
        let mut h = 0xCBF29CE484222325u64;
        for v in &self.data {
            for byte in v.to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x100000001B3);
            }
        }
        h
    }
}

pub(crate) fn check_same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if !a.same_shape(b) {
        return Err(Error::dimension(format!("{:?}", a.shape), format!("{:?}", b.shape)));
    }
    Ok(())
}

fn checked_len(shape: &[usize]) -> Result<usize> {
    let mut n = 1usize;
    for &d in shape {
        n = n
            .checked_mul(d)
            .filter(|&m| m <= MAX_ELEMENTS)
            .ok_or_else(|| Error::dimension(format!("<= {MAX_ELEMENTS} elements"), format!("{shape:?}")))?;
    }
    Ok(n)
}

/// ca*a + cb*b elementwise.
pub fn lincomb(ca: f64, a: &Tensor, cb: f64, b: &Tensor) -> Result<Tensor> {
    check_same_shape(a, b)?;
    let data = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| ca * x + cb * y)
        .collect();
    Ok(Tensor { shape: a.shape.clone(), data })
}

// ---------------------------------------------------------------------------
// Raw tensor file format (.cdt)
//
//   bytes 0..8   magic "CDTENSOR"
//   byte  8      rank (1..=8)
//   then         rank little-endian u32 dims, each >= 1
//   then         little-endian float32 payload, prod(dims) values
// ---------------------------------------------------------------------------

pub const TENSOR_MAGIC: &[u8; 8] = b"CDTENSOR";

pub fn to_cdt_bytes(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(9 + 4 * t.shape.len() + 4 * t.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.push(t.shape.len() as u8);
    for &d in &t.shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in &t.data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn from_cdt_bytes(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 9 {
        return Err(Error::Format(format!("tensor file too short: {} bytes", bytes.len())));
    }
    if &bytes[..8] != TENSOR_MAGIC {
        return Err(Error::Format("bad tensor magic".into()));
    }
    let rank = bytes[8] as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(Error::Format(format!("unsupported tensor rank {rank}")));
    }
    let header = 9 + 4 * rank;
    if bytes.len() < header {
        return Err(Error::Format("tensor header truncated".into()));
    }
    let mut shape = Vec::with_capacity(rank);
    for i in 0..rank {
        let off = 9 + 4 * i;
        let d = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
        if d == 0 {
            return Err(Error::Format("tensor dimension is zero".into()));
        }
        shape.push(d);
    }
    let n = checked_len(&shape).map_err(|_| Error::Format(format!("tensor too large: {shape:?}")))?;
    let expected = header + 4 * n;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "tensor payload length mismatch: expected {expected} bytes, got {}",
            bytes.len()
        )));
    }
    let mut data = Vec::with_capacity(n);
    for i in 0..n {
        let off = header + 4 * i;
        data.push(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as f64);
    }
    Tensor::new(shape, data)
}

pub fn read_cdt_file(path: &std::path::Path) -> Result<Tensor> {
    let bytes = std::fs::read(path)?;
    from_cdt_bytes(&bytes)
}

pub fn write_cdt_file(path: &std::path::Path, t: &Tensor) -> Result<()> {
    std::fs::write(path, to_cdt_bytes(t))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_bad_shapes() {
        assert!(Tensor::new(vec![], vec![]).is_err());
        assert!(Tensor::new(vec![0], vec![]).is_err());
        assert!(Tensor::new(vec![3], vec![0.0; 2]).is_err());
    }

    #[test]
    fn lincomb_matches_by_hand() {
        let a = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let b = Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
        let c = lincomb(2.0, &a, -1.0, &b).unwrap();
        assert_eq!(c.data(), &[1.5, 5.0, 4.0]);
    }

    #[test]
    fn shape_mismatch_is_a_dimension_error() {
        let a = Tensor::zeros(&[3]);
        let b = Tensor::zeros(&[4]);
        assert!(matches!(a.add(&b), Err(Error::Dimension { .. })));
    }

    #[test]
    fn cdt_round_trip() {
        let t = Tensor::new(vec![2, 3], vec![0.0, 1.5, -2.25, 0.125, 10.0, -0.5]).unwrap();
        let bytes = to_cdt_bytes(&t);
        let back = from_cdt_bytes(&bytes).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn cdt_rejects_garbage() {
        assert!(from_cdt_bytes(b"").is_err());
        assert!(from_cdt_bytes(b"CDTENSOR").is_err());
        let mut bytes = to_cdt_bytes(&Tensor::zeros(&[4]));
        bytes.truncate(bytes.len() - 1);
        assert!(from_cdt_bytes(&bytes).is_err());
        let mut bad_magic = to_cdt_bytes(&Tensor::zeros(&[4]));
        bad_magic[0] = b'X';
        assert!(from_cdt_bytes(&bad_magic).is_err());
    }

    #[test]
    fn cdt_rejects_zero_dim() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(TENSOR_MAGIC);
        bytes.push(1);
        bytes.extend_from_slice(&0u32.to_le_bytes());
        assert!(from_cdt_bytes(&bytes).is_err());
    }
}
