//! Container layout, all integers little-endian:
//!
//! ```text
//! "LALB"  u32 version
//! u32 original width   u32 original height
//! u32 padded width     u32 padded height
//! u64 config digest    u64 weights digest
//! u8  precision (32 or 64)
//! u32 unit count  u32 z segment length  u32 unit segment lengths[count]
//! z segment, then unit segments in schedule order
//! ```

use crate::error::{Error, Result};
use crate::transforms::SPATIAL_ALIGN;

pub const STREAM_MAGIC: &[u8; 4] = b"LALB";
pub const STREAM_VERSION: u32 = 1;
const FIXED_HEADER: usize = 4 + 4 + 16 + 16 + 1 + 8;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::Corrupt("stream truncated inside the header".into()))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Header plus the z segment and the per-unit segments, borrowed from the stream.
pub type Framed<'a> = (BitstreamHeader, &'a [u8], Vec<&'a [u8]>);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitstreamHeader {
    pub width: u32,
    pub height: u32,
    pub padded_width: u32,
    pub padded_height: u32,
    pub config_digest: u64,
    pub weights_digest: u64,
    pub precision: u8,
    pub z_len: u32,
    pub unit_lens: Vec<u32>,
}

impl BitstreamHeader {
    pub fn byte_len(&self) -> usize {
        FIXED_HEADER + 4 * self.unit_lens.len()
    }

    pub fn payload_len(&self) -> usize {
        self.z_len as usize + self.unit_lens.iter().map(|&l| l as usize).sum::<usize>()
    }

    pub fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(STREAM_MAGIC);
        out.extend_from_slice(&STREAM_VERSION.to_le_bytes());
        for v in [self.width, self.height, self.padded_width, self.padded_height] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.config_digest.to_le_bytes());
        out.extend_from_slice(&self.weights_digest.to_le_bytes());
        out.push(self.precision);
        out.extend_from_slice(&(self.unit_lens.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.z_len.to_le_bytes());
        for l in &self.unit_lens {
            out.extend_from_slice(&l.to_le_bytes());
        }
    }

    /// Parse the header and split the payload into `(z segment, unit segments)`.
    pub fn parse(bytes: &[u8]) -> Result<Framed<'_>> {
        if bytes.len() < 4 {
            return Err(Error::Corrupt("stream shorter than its magic".into()));
        }
        if &bytes[..4] != STREAM_MAGIC {
            return Err(Error::BadMagic { expected: "LALB" });
        }
        let mut r = Reader { bytes, pos: 4 };
        let version = r.u32()?;
        if version != STREAM_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let (width, height, padded_width, padded_height) = (r.u32()?, r.u32()?, r.u32()?, r.u32()?);
        let config_digest = r.u64()?;
        let weights_digest = r.u64()?;
        let precision = r.take(1)?[0];
        let count = r.u32()? as usize;
        let z_len = r.u32()?;
        if count > bytes.len() / 4 {
            return Err(Error::Corrupt(format!("{count} segments cannot fit in the stream")));
        }
        let unit_lens = (0..count).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let pos = r.pos;
        let header = BitstreamHeader {
            width,
            height,
            padded_width,
            padded_height,
            config_digest,
            weights_digest,
            precision,
            z_len,
            unit_lens,
        };
        header.check_extents()?;
        let payload = &bytes[pos..];
        if payload.len() != header.payload_len() {
            return Err(Error::Corrupt(format!(
                "payload is {} bytes, header declares {}",
                payload.len(),
                header.payload_len()
            )));
        }
        let (z, mut rest) = payload.split_at(header.z_len as usize);
        let mut units = Vec::with_capacity(count);
        for &l in &header.unit_lens {
            let (seg, tail) = rest.split_at(l as usize);
            units.push(seg);
            rest = tail;
        }
        Ok((header, z, units))
    }

    fn check_extents(&self) -> Result<()> {
        let a = SPATIAL_ALIGN as u32;
        let ok = self.width > 0
            && self.height > 0
            && self.padded_width.is_multiple_of(a)
            && self.padded_height.is_multiple_of(a)
            && self.padded_width >= self.width
            && self.padded_height >= self.height
            && self.padded_width - self.width < a
            && self.padded_height - self.height < a;
        if ok {
            Ok(())
        } else {
            Err(Error::Malformed {
                what: "bitstream header",
                detail: format!(
                    "extents {}x{} padded to {}x{}",
                    self.width, self.height, self.padded_width, self.padded_height
                ),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> (BitstreamHeader, Vec<u8>) {
        let h = BitstreamHeader {
            width: 250,
            height: 100,
            padded_width: 256,
            padded_height: 128,
            config_digest: 1,
            weights_digest: 2,
            precision: 32,
            z_len: 3,
            unit_lens: vec![2, 0, 4],
        };
        let mut bytes = Vec::new();
        h.write(&mut bytes);
        assert_eq!(bytes.len(), h.byte_len());
        bytes.extend([9, 9, 9, 1, 1, 2, 2, 2, 2]);
        (h, bytes)
    }

    #[test]
    fn round_trip() {
        let (h, bytes) = sample();
        let (back, z, units) = BitstreamHeader::parse(&bytes).unwrap();
        assert_eq!(back, h);
        assert_eq!(z, &[9, 9, 9]);
        assert_eq!(units, vec![&[1u8, 1][..], &[][..], &[2, 2, 2, 2][..]]);
    }

    #[test]
    fn framing_errors() {
        let (_, bytes) = sample();
        assert!(matches!(BitstreamHeader::parse(&bytes[..bytes.len() - 1]), Err(Error::Corrupt(_))));
        assert!(matches!(BitstreamHeader::parse(&bytes[..20]), Err(Error::Corrupt(_))));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(BitstreamHeader::parse(&long), Err(Error::Corrupt(_))));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(BitstreamHeader::parse(&bad), Err(Error::BadMagic { .. })));
        let mut bad = bytes;
        bad[8] = 0x41;
        assert!(matches!(BitstreamHeader::parse(&bad), Err(Error::Malformed { .. })));
    }
}
