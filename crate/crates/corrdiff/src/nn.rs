//! Minimal dense layers with hand-written backward passes.
//!
//! The trainable models in this crate are small perceptrons, so instead of a
//! general autodiff tape each layer exposes `forward` plus a `backward` that
//! consumes the cached input and the output cotangent. Parameters flatten
//! into a single `Vec<f64>` in a fixed layout so the optimizer and the
//! checkpoint format can stay oblivious to the architecture.

use crate::error::{Error, Result};
use crate::rng::DetRng;

/// Fully connected layer, row-major weights `[out_dim x in_dim]` plus bias.
#[derive(Debug, Clone)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self { in_dim, out_dim, w: vec![0.0; in_dim * out_dim], b: vec![0.0; out_dim] }
    }

    /// Seeded uniform init scaled by 1/sqrt(in_dim).
    pub fn init(in_dim: usize, out_dim: usize, rng: &mut DetRng) -> Self {
        let scale = 1.0 / (in_dim as f64).sqrt();
        let w = (0..in_dim * out_dim).map(|_| rng.range(-scale, scale)).collect();
        let b = vec![0.0; out_dim];
        Self { in_dim, out_dim, w, b }
    }

    pub fn param_len(&self) -> usize {
        self.w.len() + self.b.len()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim {
            return Err(Error::dimension(format!("input of {}", self.in_dim), format!("{}", x.len())));
        }
        let mut y = self.b.clone();
        for o in 0..self.out_dim {
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            y[o] += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        Ok(y)
    }

    /// Accumulates dL/dw and dL/db into `dw`/`db` and returns dL/dx.
    pub fn backward(&self, x: &[f64], dy: &[f64], dw: &mut [f64], db: &mut [f64]) -> Vec<f64> {
        debug_assert_eq!(dy.len(), self.out_dim);
        let mut dx = vec![0.0; self.in_dim];
        for o in 0..self.out_dim {
            let g = dy[o];
            db[o] += g;
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            let drow = &mut dw[o * self.in_dim..(o + 1) * self.in_dim];
            for i in 0..self.in_dim {
                drow[i] += g * x[i];
                dx[i] += g * row[i];
            }
        }
        dx
    }

    fn write_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.w);
        out.extend_from_slice(&self.b);
    }

    fn read_params(&mut self, src: &[f64]) -> usize {
        let nw = self.w.len();
        let nb = self.b.len();
        self.w.copy_from_slice(&src[..nw]);
        self.b.copy_from_slice(&src[nw..nw + nb]);
        nw + nb
    }
}

pub fn tanh_forward(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.tanh()).collect()
}

/// Backward through tanh given the forward *output* y = tanh(x).
pub fn tanh_backward(y: &[f64], dy: &[f64]) -> Vec<f64> {
    y.iter().zip(dy).map(|(y, g)| g * (1.0 - y * y)).collect()
}

/// Dense stack with tanh between layers (none after the last).
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Cached activations from [`Mlp::forward_cached`]: the input plus each
/// layer's post-activation output.
pub struct MlpTrace {
    acts: Vec<Vec<f64>>,
}

impl MlpTrace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().unwrap()
    }
}

impl Mlp {
    /// Builds the stack from a dims list, e.g. `[in, hidden, hidden, out]`.
    pub fn init(dims: &[usize], rng: &mut DetRng) -> Self {
        let layers = dims.windows(2).map(|w| Dense::init(w[0], w[1], rng)).collect();
        Self { layers }
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.layers[0].in_dim];
        dims.extend(self.layers.iter().map(|l| l.out_dim));
        dims
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn param_len(&self) -> usize {
        self.layers.iter().map(Dense::param_len).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut trace = self.forward_cached(x)?;
        Ok(trace.acts.pop().unwrap())
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<MlpTrace> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(acts.last().unwrap())?;
            let a = if i + 1 < self.layers.len() { tanh_forward(&z) } else { z };
            acts.push(a);
        }
        Ok(MlpTrace { acts })
    }

    /// Backward pass. Accumulates parameter gradients into `grad` (laid out
    /// like [`Mlp::params`]) and returns dL/dinput.
    pub fn backward(&self, trace: &MlpTrace, dout: &[f64], grad: &mut [f64]) -> Vec<f64> {
        debug_assert_eq!(grad.len(), self.param_len());
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for layer in &self.layers {
            offsets.push(off);
            off += layer.param_len();
        }
        let mut dy = dout.to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if i + 1 < self.layers.len() {
                // Undo the tanh that followed this layer.
                dy = tanh_backward(&trace.acts[i + 1], &dy);
            }
            let off = offsets[i];
            let (dw, db) = grad[off..off + layer.param_len()].split_at_mut(layer.w.len());
            dy = layer.backward(&trace.acts[i], &dy, dw, db);
        }
        dy
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_len());
        for layer in &self.layers {
            layer.write_params(&mut out);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_len() {
            return Err(Error::Config(format!(
                "expected {} parameters, got {}",
                self.param_len(),
                params.len()
            )));
        }
        let mut off = 0;
        for layer in &mut self.layers {
            off += layer.read_params(&params[off..]);
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Weights file format (.cdw)
//
//   bytes 0..4    magic "CDWT"
//   bytes 4..8    little-endian u32 version (currently 1)
//   bytes 8..16   little-endian u64 offset of the layer-size list (= 16)
//   at offset     little-endian u32 count, then count u32 sizes
//   then          flat little-endian float32 parameters
// ---------------------------------------------------------------------------

pub const WEIGHTS_MAGIC: &[u8; 4] = b"CDWT";
pub const WEIGHTS_VERSION: u32 = 1;

const MAX_SIZES: usize = 64;
const MAX_PARAMS: usize = 1 << 24;

/// Serializes a size list (architecture descriptor) plus flat parameters.
pub fn weights_to_bytes(sizes: &[u32], params: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 + 4 * sizes.len() + 4 * params.len());
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    out.extend_from_slice(&16u64.to_le_bytes());
    out.extend_from_slice(&(sizes.len() as u32).to_le_bytes());
    for &s in sizes {
        out.extend_from_slice(&s.to_le_bytes());
    }
    for &p in params {
        out.extend_from_slice(&(p as f32).to_le_bytes());
    }
    out
}

pub fn weights_from_bytes(bytes: &[u8]) -> Result<(Vec<u32>, Vec<f64>)> {
    let fail = |msg: &str| Error::Format(format!("weights file: {msg}"));
    if bytes.len() < 16 {
        return Err(fail("shorter than the 16-byte header"));
    }
    if &bytes[..4] != WEIGHTS_MAGIC {
        return Err(fail("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != WEIGHTS_VERSION {
        return Err(fail(&format!("unsupported version {version}")));
    }
    let offset = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if offset != 16 {
        return Err(fail(&format!("unexpected size-list offset {offset}")));
    }
    if bytes.len() < offset + 4 {
        return Err(fail("size list truncated"));
    }
    let count = u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap()) as usize;
    if count > MAX_SIZES {
        return Err(fail(&format!("size list too long: {count}")));
    }
    let sizes_end = offset + 4 + 4 * count;
    if bytes.len() < sizes_end {
        return Err(fail("size list truncated"));
    }
    let sizes: Vec<u32> = (0..count)
        .map(|i| u32::from_le_bytes(bytes[offset + 4 + 4 * i..offset + 8 + 4 * i].try_into().unwrap()))
        .collect();
    let tail = &bytes[sizes_end..];
    if tail.len() % 4 != 0 {
        return Err(fail("parameter payload is not a multiple of 4 bytes"));
    }
    let n = tail.len() / 4;
    if n > MAX_PARAMS {
        return Err(fail(&format!("too many parameters: {n}")));
    }
    let params: Vec<f64> = (0..n)
        .map(|i| f32::from_le_bytes(tail[4 * i..4 * i + 4].try_into().unwrap()) as f64)
        .collect();
    if params.iter().any(|p| !p.is_finite()) {
        return Err(fail("non-finite parameter"));
    }
    Ok((sizes, params))
}
