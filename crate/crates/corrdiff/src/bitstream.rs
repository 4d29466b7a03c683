//! The `.crdf` wire container.
//!
//! Everything the decoder needs to replay the encoder trajectory travels
//! here: the coded latent with its entropy parameters, the per-step blend
//! factors, and the synchronization metadata (schedule kind, step count,
//! noise seed, signal shape, autoencoder configuration). Multi-byte fields
//! are big-endian. Layout:
//!
//! ```text
//! offset  size  field
//! 0       4     magic "CRDF"
//! 4       1     version (1)
//! 5       1     schedule kind id
//! 6       2     T, number of reverse steps
//! 8       8     noise seed
//! 16      1     signal rank R (1..=8)
//! 17      4*R   signal dims, u32 each
//! ..      1     autoencoder id (0 = linear-dct, 1 = tiny-mlp)
//! ..      8     autoencoder config (keep f32 + qstep f32, or fingerprint u64)
//! ..      2     entropy channel count C
//! ..      4*C   per channel: binary16 mean, binary16 scale
//! ..      4     coded-latent length L
//! ..      L     coded latent (range-coder payload + its own CRC32)
//! ..      2*T   gamma track, binary16 each, t = T..1 order
//! ..      4     CRC32 of every preceding byte
//! ```
//!
//! Parsing rejects bad magic and unknown versions first, then verifies the
//! stream checksum over the whole prefix before trusting any block, so a
//! single corrupted byte anywhere is always caught.

use crate::correction::GammaTrack;
use crate::error::{Error, ProtocolError, Result};
use crate::latent::{ChannelParams, LatentCode};
use crate::schedule::ScheduleKind;
use crate::tensor::{MAX_ELEMENTS, MAX_RANK};

pub const STREAM_MAGIC: [u8; 4] = *b"CRDF";
pub const STREAM_VERSION: u8 = 1;

/// Maximum entropy channels a stream may declare.
pub const MAX_CHANNELS: usize = 4096;

/// Wire-level autoencoder identity and configuration. Weights for trainable
/// pairs are out-of-band shared state; only a fingerprint travels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AeDescriptor {
    LinearDct { keep_ratio: f32, qstep: f32 },
    TinyMlp { fingerprint: u64 },
}

impl AeDescriptor {
    pub fn id_byte(&self) -> u8 {
        match self {
            Self::LinearDct { .. } => 0,
            Self::TinyMlp { .. } => 1,
        }
    }

    fn config_bytes(&self) -> [u8; 8] {
        match self {
            Self::LinearDct { keep_ratio, qstep } => {
                let mut out = [0u8; 8];
                out[..4].copy_from_slice(&keep_ratio.to_be_bytes());
                out[4..].copy_from_slice(&qstep.to_be_bytes());
                out
            }
            Self::TinyMlp { fingerprint } => fingerprint.to_be_bytes(),
        }
    }

    fn from_wire(id: u8, config: [u8; 8]) -> Result<Self> {
        match id {
            0 => {
                let keep_ratio = f32::from_be_bytes(config[..4].try_into().unwrap());
                let qstep = f32::from_be_bytes(config[4..].try_into().unwrap());
                if !(keep_ratio > 0.0 && keep_ratio <= 1.0) || !(qstep > 0.0) || !qstep.is_finite() {
                    return Err(Error::Protocol(ProtocolError::Malformed(format!(
                        "bad linear-dct config (keep {keep_ratio}, qstep {qstep})"
                    ))));
                }
                Ok(Self::LinearDct { keep_ratio, qstep })
            }
            1 => Ok(Self::TinyMlp { fingerprint: u64::from_be_bytes(config) }),
            other => Err(Error::Protocol(ProtocolError::Malformed(format!(
                "unknown autoencoder id {other}"
            )))),
        }
    }
}

/// Parsed (or to-be-serialized) stream contents.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrDiffStream {
    pub schedule_kind: ScheduleKind,
    pub t_steps: u16,
    pub seed: u64,
    pub signal_shape: Vec<usize>,
    pub autoencoder: AeDescriptor,
    pub entropy_params: Vec<ChannelParams>,
    /// Output of [`crate::latent::range_encode`].
    pub coded_latent: Vec<u8>,
    pub gammas: GammaTrack,
}

/// Where the bits went, for operator-facing accounting. The three parts sum
/// to the serialized size exactly; the gamma part is always 16*T bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BitBreakdown {
    pub header_bits: u64,
    pub latent_bits: u64,
    pub gamma_bits: u64,
}

impl BitBreakdown {
    pub fn total_bits(&self) -> u64 {
        self.header_bits + self.latent_bits + self.gamma_bits
    }
}

impl CorrDiffStream {
    fn validate(&self) -> Result<()> {
        if self.t_steps == 0 {
            return Err(Error::Config("stream needs at least one step".into()));
        }
        if self.gammas.len() != self.t_steps as usize {
            return Err(Error::Config(format!(
                "gamma track has {} entries for T={}",
                self.gammas.len(),
                self.t_steps
            )));
        }
        if self.signal_shape.is_empty() || self.signal_shape.len() > MAX_RANK {
            return Err(Error::Config(format!("bad signal rank {}", self.signal_shape.len())));
        }
        let mut n = 1usize;
        for &d in &self.signal_shape {
            if d == 0 || d > u32::MAX as usize {
                return Err(Error::Config(format!("bad signal dim {d}")));
            }
            n = n
                .checked_mul(d)
                .filter(|&m| m <= MAX_ELEMENTS)
                .ok_or_else(|| Error::Config("signal too large".into()))?;
        }
        if self.entropy_params.is_empty() || self.entropy_params.len() > MAX_CHANNELS {
            return Err(Error::Config(format!("bad channel count {}", self.entropy_params.len())));
        }
        if self.coded_latent.len() > u32::MAX as usize {
            return Err(Error::Config("coded latent too large".into()));
        }
        Ok(())
    }

    pub fn serialize(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let mut out = Vec::with_capacity(64 + self.coded_latent.len() + 2 * self.gammas.len());
        out.extend_from_slice(&STREAM_MAGIC);
        out.push(STREAM_VERSION);
        out.push(self.schedule_kind.wire_id()?);
        out.extend_from_slice(&self.t_steps.to_be_bytes());
        out.extend_from_slice(&self.seed.to_be_bytes());
        out.push(self.signal_shape.len() as u8);
        for &d in &self.signal_shape {
            out.extend_from_slice(&(d as u32).to_be_bytes());
        }
        out.push(self.autoencoder.id_byte());
        out.extend_from_slice(&self.autoencoder.config_bytes());
        out.extend_from_slice(&(self.entropy_params.len() as u16).to_be_bytes());
        for p in &self.entropy_params {
            out.extend_from_slice(&p.mean_bits().to_be_bytes());
            out.extend_from_slice(&p.scale_bits().to_be_bytes());
        }
        out.extend_from_slice(&(self.coded_latent.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.coded_latent);
        out.extend_from_slice(&self.gammas.to_be_bytes());
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_be_bytes());
        Ok(out)
    }

    /// Bit accounting of the serialized layout: latent block (length prefix
    /// plus payload), gamma block, and everything else as header.
    pub fn bit_breakdown(&self) -> Result<BitBreakdown> {
        let total = self.serialize()?.len() as u64 * 8;
        let latent_bits = (4 + self.coded_latent.len() as u64) * 8;
        let gamma_bits = self.gammas.len() as u64 * 16;
        Ok(BitBreakdown { header_bits: total - latent_bits - gamma_bits, latent_bits, gamma_bits })
    }

    /// Decodes the latent carried by this stream given the latent shape
    /// (derivable from the header for linear-dct; from out-of-band weights
    /// for tiny-mlp).
    pub fn decode_latent_block(&self, latent_shape: &[usize]) -> Result<LatentCode> {
        crate::latent::range_decode(&self.coded_latent, latent_shape, &self.entropy_params)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Protocol(ProtocolError::Truncated {
                needed: self.pos + n,
                available: self.bytes.len(),
            }));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses and validates a stream. Magic and version are checked first so
/// deliberate mismatches surface as such; after that the whole-prefix
/// checksum must hold before any block is interpreted.
pub fn parse(bytes: &[u8]) -> Result<CorrDiffStream> {
    if bytes.len() < 6 {
        return Err(Error::Protocol(ProtocolError::Truncated { needed: 6, available: bytes.len() }));
    }
    if bytes[..4] != STREAM_MAGIC {
        return Err(Error::Protocol(ProtocolError::BadMagic));
    }
    if bytes[4] != STREAM_VERSION {
        return Err(Error::Protocol(ProtocolError::UnsupportedVersion(bytes[4])));
    }
    if bytes.len() < 10 {
        return Err(Error::Protocol(ProtocolError::Truncated { needed: 10, available: bytes.len() }));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_be_bytes(crc_bytes.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Protocol(ProtocolError::ChecksumMismatch { stored, computed }));
    }

    let mut cur = Cursor { bytes: body, pos: 5 };
    let schedule_kind = ScheduleKind::from_wire_id(cur.u8()?)
        .map_err(|_| Error::Protocol(ProtocolError::Malformed("unknown schedule id".into())))?;
    let t_steps = cur.u16()?;
    if t_steps == 0 {
        return Err(Error::Protocol(ProtocolError::Malformed("T must be at least 1".into())));
    }
    let seed = cur.u64()?;
    let rank = cur.u8()? as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(Error::Protocol(ProtocolError::Malformed(format!("bad signal rank {rank}"))));
    }
    let mut signal_shape = Vec::with_capacity(rank);
    let mut elems = 1usize;
    for _ in 0..rank {
        let d = cur.u32()? as usize;
        if d == 0 {
            return Err(Error::Protocol(ProtocolError::Malformed("zero signal dim".into())));
        }
        elems = elems
            .checked_mul(d)
            .filter(|&m| m <= MAX_ELEMENTS)
            .ok_or_else(|| Error::Protocol(ProtocolError::Malformed("signal too large".into())))?;
        signal_shape.push(d);
    }
    let ae_id = cur.u8()?;
    let ae_config: [u8; 8] = cur.take(8)?.try_into().unwrap();
    let autoencoder = AeDescriptor::from_wire(ae_id, ae_config)?;
    let channels = cur.u16()? as usize;
    if channels == 0 || channels > MAX_CHANNELS {
        return Err(Error::Protocol(ProtocolError::Malformed(format!("bad channel count {channels}"))));
    }
    let mut entropy_params = Vec::with_capacity(channels);
    for _ in 0..channels {
        let mean_bits = cur.u16()?;
        let scale_bits = cur.u16()?;
        let p = ChannelParams::from_bits(mean_bits, scale_bits).map_err(|e| {
            Error::Protocol(ProtocolError::Malformed(format!("bad entropy params: {e}")))
        })?;
        entropy_params.push(p);
    }
    let latent_len = cur.u32()? as usize;
    let coded_latent = cur.take(latent_len)?.to_vec();
    let gamma_bytes = cur.take(2 * t_steps as usize)?;
    let gammas = GammaTrack::from_be_bytes(gamma_bytes)?;
    if cur.pos != body.len() {
        return Err(Error::Protocol(ProtocolError::Malformed(format!(
            "{} trailing bytes after the gamma block",
            body.len() - cur.pos
        ))));
    }
    Ok(CorrDiffStream {
        schedule_kind,
        t_steps,
        seed,
        signal_shape,
        autoencoder,
        entropy_params,
        coded_latent,
        gammas,
    })
}
