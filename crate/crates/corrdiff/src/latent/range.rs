//! Carry-free renormalizing range coder on 64-bit state.
//!
//! Encoder and decoder keep (low, range) in u64, emit or consume one byte at
//! a time, and avoid carry propagation by never emitting a byte until the top
//! byte of the interval is settled; when a small interval straddles a byte
//! boundary it is cut back to the boundary instead (the classic Subbotin
//! scheme, widened to 64 bits). Symbol intervals are expressed as cumulative
//! ranges under a fixed per-step total, which here is always either the
//! 2^16 probability mass of a [`super::entropy::ChannelModel`] or 256 for raw
//! escape bytes.

const TOP: u64 = 1 << 56;
const BOT: u64 = 1 << 48;

pub struct RangeEncoder {
    low: u64,
    range: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self { low: 0, range: u64::MAX, out: Vec::new() }
    }

    /// Narrows the interval to [cum_lo, cum_hi) / total. Requires
    /// 0 <= cum_lo < cum_hi <= total <= 2^16.
    pub fn encode(&mut self, cum_lo: u32, cum_hi: u32, total: u32) {
        debug_assert!(cum_lo < cum_hi && cum_hi <= total);
        let r = self.range / total as u64;
        self.low = self.low.wrapping_add(r * cum_lo as u64);
        self.range = r * (cum_hi - cum_lo) as u64;
        self.normalize();
    }

    fn normalize(&mut self) {
        loop {
            if (self.low ^ self.low.wrapping_add(self.range)) >= TOP {
                if self.range >= BOT {
                    break;
                }
                // Interval straddles the emit boundary: cut it back to the
                // next BOT-aligned point so the top byte settles.
                self.range = self.low.wrapping_neg() & (BOT - 1);
            }
            self.out.push((self.low >> 56) as u8);
            self.low <<= 8;
            self.range <<= 8;
        }
    }

    /// Emits the remaining state and returns the byte stream.
    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..8 {
            self.out.push((self.low >> 56) as u8);
            self.low <<= 8;
        }
        self.out
    }

    /// Byte stream without any flush; only valid when nothing was encoded.
    pub fn finish_empty(self) -> Vec<u8> {
        debug_assert!(self.out.is_empty() && self.low == 0);
        Vec::new()
    }
}

pub struct RangeDecoder<'a> {
    low: u64,
    range: u64,
    code: u64,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        let mut d = Self { low: 0, range: u64::MAX, code: 0, bytes, pos: 0 };
        for _ in 0..8 {
            d.code = (d.code << 8) | d.next_byte() as u64;
        }
        d
    }

    fn next_byte(&mut self) -> u8 {
        // Reads past the end decode as zero; the outer checksum guards
        // against real truncation.
        let b = self.bytes.get(self.pos).copied().unwrap_or(0);
        self.pos += 1;
        b
    }

    /// Cumulative offset of the pending symbol under `total`. Always below
    /// `total`; corrupt streams clamp to the last symbol and are caught by
    /// the outer checksum.
    pub fn decode_offset(&mut self, total: u32) -> u32 {
        let r = self.range / total as u64;
        let off = self.code.wrapping_sub(self.low) / r;
        off.min(total as u64 - 1) as u32
    }

    /// Commits the symbol interval; must mirror the encoder call exactly.
    pub fn decode_update(&mut self, cum_lo: u32, cum_hi: u32, total: u32) {
        let r = self.range / total as u64;
        self.low = self.low.wrapping_add(r * cum_lo as u64);
        self.range = r * (cum_hi - cum_lo) as u64;
        loop {
            if (self.low ^ self.low.wrapping_add(self.range)) >= TOP {
                if self.range >= BOT {
                    break;
                }
                self.range = self.low.wrapping_neg() & (BOT - 1);
            }
            self.code = (self.code << 8) | self.next_byte() as u64;
            self.low <<= 8;
            self.range <<= 8;
        }
    }
}
