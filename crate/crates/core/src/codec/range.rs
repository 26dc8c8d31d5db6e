//! Range coder over 16-bit frequency tables.
//!
//! State is a 64-bit `low` and 32-bit `range`. Each symbol narrows
//! `r = range >> 16` to `[low + r * cum, low + r * (cum + freq))`; while
//! `range < 2^24` one byte is shifted out. Carries out of bit 32 are
//! resolved through a cached byte plus a run of pending `0xFF` bytes.
//! Flushing shifts out five bytes. The first byte produced is always zero
//! and is not stored, so the decoder primes its code register with four
//! bytes and an empty stream is four bytes long.

use super::{QuantizedCdf, PRECISION_BITS};
use crate::error::{Error, Result};

const TOP: u32 = 1 << 24;

#[derive(Debug)]
pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    pending: u64,
    started: bool,
    carries: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        RangeEncoder { low: 0, range: u32::MAX, cache: 0, pending: 1, started: false, carries: 0, out: Vec::new() }
    }

    fn emit(&mut self, byte: u8) {
        if self.started {
            self.out.push(byte);
        } else {
            self.started = true;
        }
    }

    fn shift_low(&mut self) {
        if self.low < 0xFF00_0000 || self.low >= 1 << 32 {
            let carry = (self.low >> 32) as u8;
            self.carries += carry as u64;
            let mut byte = self.cache;
            while self.pending > 0 {
                self.emit(byte.wrapping_add(carry));
                byte = 0xFF;
                self.pending -= 1;
            }
            self.cache = (self.low >> 24) as u8;
        }
        self.pending += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    pub fn encode(&mut self, symbol: i64, cdf: &QuantizedCdf) -> Result<()> {
        let (cum, freq) = cdf.interval(symbol)?;
        let r = self.range >> PRECISION_BITS;
        self.low += r as u64 * cum as u64;
        self.range = r * freq;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
        Ok(())
    }

    /// Carries propagated into already-produced bytes so far.
    pub fn carries(&self) -> u64 {
        self.carries
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

#[derive(Debug)]
pub struct RangeDecoder<'a> {
    bytes: &'a [u8],
    pos: usize,
    code: u32,
    range: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Result<Self> {
        let mut d = RangeDecoder { bytes, pos: 0, code: 0, range: u32::MAX };
        for _ in 0..4 {
            d.code = (d.code << 8) | d.next_byte()? as u32;
        }
        Ok(d)
    }

    fn next_byte(&mut self) -> Result<u8> {
        let b = self
            .bytes
            .get(self.pos)
            .copied()
            .ok_or_else(|| Error::Corrupt("range decoder ran past the end of its segment".into()))?;
        self.pos += 1;
        Ok(b)
    }

    pub fn decode(&mut self, cdf: &QuantizedCdf) -> Result<i64> {
        let r = self.range >> PRECISION_BITS;
        let target = (self.code / r).min((1 << PRECISION_BITS) - 1);
        let (symbol, cum, freq) = cdf.lookup(target);
        self.code -= r * cum;
        self.range = r * freq;
        if self.code >= self.range {
            return Err(Error::Corrupt("range decoder state out of bounds".into()));
        }
        while self.range < TOP {
            self.code = (self.code << 8) | self.next_byte()? as u32;
            self.range <<= 8;
        }
        Ok(symbol)
    }

    /// Fails unless every byte of the segment was consumed.
    pub fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Corrupt(format!(
                "segment has {} trailing bytes",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}

pub fn encode(symbols: &[i64], cdfs: &[QuantizedCdf]) -> Result<Vec<u8>> {
    if symbols.len() != cdfs.len() {
        return Err(Error::InvalidArgument(format!(
            "{} symbols but {} tables",
            symbols.len(),
            cdfs.len()
        )));
    }
    let mut enc = RangeEncoder::new();
    for (&s, c) in symbols.iter().zip(cdfs) {
        enc.encode(s, c)?;
    }
    Ok(enc.finish())
}

pub fn decode(bytes: &[u8], cdfs: &[QuantizedCdf]) -> Result<Vec<i64>> {
    let mut dec = RangeDecoder::new(bytes)?;
    let out = cdfs.iter().map(|c| dec.decode(c)).collect::<Result<Vec<_>>>()?;
    dec.finish()?;
    Ok(out)
}
