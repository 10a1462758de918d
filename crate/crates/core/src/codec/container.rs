//! Byte layout of a coded image (integers little-endian):
//!
//! ```text
//! magic          4  b"MBIC"
//! version        u16
//! width, height  u32 x 2   original, before padding
//! lambda index   u8
//! weights        u64       checksum of the weight file
//! streams        u16       substream count
//! substreams     each: length u32, bytes
//! digest         u32       first 4 bytes of SHA-256 over everything above
//! ```

use std::io::{Read, Write};

use sha2::{Digest, Sha256};

use crate::error::{BitstreamError, Result};

pub const MAGIC: &[u8; 4] = b"MBIC";
pub const FORMAT_VERSION: u16 = 1;
/// Fixed bytes before the first substream.
pub const HEADER_LEN: usize = 4 + 2 + 4 + 4 + 1 + 8 + 2;
pub const DIGEST_LEN: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Header {
    pub version: u16,
    pub width: u32,
    pub height: u32,
    pub lambda_index: u8,
    pub weight_checksum: u64,
}

/// Header plus the hyper-latent substream and `2K` latent substreams in
/// schedule order (chunk-major, anchors before non-anchors).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CodedImage {
    pub header: Header,
    pub z_stream: Vec<u8>,
    pub y_streams: Vec<Vec<u8>>,
}

fn digest(bytes: &[u8]) -> [u8; DIGEST_LEN] {
    Sha256::digest(bytes)[..DIGEST_LEN].try_into().unwrap()
}

impl CodedImage {
    pub fn substreams(&self) -> impl Iterator<Item = &[u8]> {
        std::iter::once(self.z_stream.as_slice()).chain(self.y_streams.iter().map(Vec::as_slice))
    }

    pub fn serialized_len(&self) -> usize {
        HEADER_LEN + self.substreams().map(|s| 4 + s.len()).sum::<usize>() + DIGEST_LEN
    }

    /// Size of the container in bits, header and framing included.
    pub fn total_bits(&self) -> u64 {
        8 * self.serialized_len() as u64
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let h = &self.header;
        let mut out = Vec::with_capacity(self.serialized_len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&h.version.to_le_bytes());
        out.extend_from_slice(&h.width.to_le_bytes());
        out.extend_from_slice(&h.height.to_le_bytes());
        out.push(h.lambda_index);
        out.extend_from_slice(&h.weight_checksum.to_le_bytes());
        out.extend_from_slice(&(1 + self.y_streams.len() as u16).to_le_bytes());
        for s in self.substreams() {
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s);
        }
        let d = digest(&out);
        out.extend_from_slice(&d);
        out
    }

    /// Parses and verifies a container. Checks run in order: magic,
    /// version, framing, digest.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let short = |what: &str| BitstreamError::Truncated(format!("stream ends inside {what}"));
        if bytes.len() < MAGIC.len() || &bytes[..4] != MAGIC {
            return Err(BitstreamError::BadMagic.into());
        }
        if bytes.len() < 6 {
            return Err(short("the version field").into());
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != FORMAT_VERSION {
            return Err(BitstreamError::UnsupportedVersion(version).into());
        }
        if bytes.len() < HEADER_LEN {
            return Err(short("the header").into());
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let header = Header {
            version,
            width: u32_at(6),
            height: u32_at(10),
            lambda_index: bytes[14],
            weight_checksum: u64::from_le_bytes(bytes[15..23].try_into().unwrap()),
        };
        let count = u16::from_le_bytes([bytes[23], bytes[24]]) as usize;
        if count == 0 {
            return Err(BitstreamError::Corrupt("no hyper-latent substream".into()).into());
        }
        let mut pos = HEADER_LEN;
        let mut streams = Vec::with_capacity(count);
        for i in 0..count {
            if bytes.len() < pos + 4 {
                return Err(short(&format!("the length of substream {i}")).into());
            }
            let len = u32_at(pos) as usize;
            pos += 4;
            if bytes.len() - pos < len {
                return Err(short(&format!("substream {i}")).into());
            }
            streams.push(bytes[pos..pos + len].to_vec());
            pos += len;
        }
        if bytes.len() < pos + DIGEST_LEN {
            return Err(short("the digest").into());
        }
        if bytes.len() > pos + DIGEST_LEN {
            return Err(BitstreamError::Corrupt(format!(
                "{} bytes after the digest",
                bytes.len() - pos - DIGEST_LEN
            ))
            .into());
        }
        if digest(&bytes[..pos]) != bytes[pos..] {
            return Err(BitstreamError::IntegrityCheck.into());
        }
        let mut streams = streams.into_iter();
        let z_stream = streams.next().unwrap();
        Ok(CodedImage {
            header,
            z_stream,
            y_streams: streams.collect(),
        })
    }

    pub fn write_to(&self, mut sink: impl Write) -> Result<()> {
        sink.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_from(mut source: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        source.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CodedImage {
        CodedImage {
            header: Header {
                version: FORMAT_VERSION,
                width: 500,
                height: 333,
                lambda_index: 2,
                weight_checksum: 0xdead_beef_0123_4567,
            },
            z_stream: vec![1, 2, 3],
            y_streams: vec![vec![], vec![9; 10]],
        }
    }

    #[test]
    fn round_trip_and_length() {
        let c = sample();
        let b = c.to_bytes();
        assert_eq!(b.len(), c.serialized_len());
        assert_eq!(CodedImage::from_bytes(&b).unwrap(), c);
    }

    #[test]
    fn error_kinds() {
        use crate::error::Error;
        let b = sample().to_bytes();
        let kind = |bytes: &[u8]| match CodedImage::from_bytes(bytes) {
            Err(Error::Bitstream(e)) => e,
            other => panic!("{other:?}"),
        };
        let mut m = b.clone();
        m[0] = b'X';
        assert!(matches!(kind(&m), BitstreamError::BadMagic));
        let mut v = b.clone();
        v[4] = 9;
        assert!(matches!(kind(&v), BitstreamError::UnsupportedVersion(9)));
        assert!(matches!(kind(&b[..b.len() - 1]), BitstreamError::Truncated(_)));
        let mut t = b.clone();
        t[HEADER_LEN + 5] ^= 1;
        assert!(matches!(kind(&t), BitstreamError::IntegrityCheck));
    }
}
