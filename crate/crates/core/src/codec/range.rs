//! Carry-less range coder over 64-bit registers with 16-bit frequencies.
//!
//! The encoder flushes the shortest byte string that pins the final
//! interval; the decoder reads zeros past the end of its input and, on
//! [`RangeDecoder::finish`], checks that it consumed exactly the bytes the
//! encoder must have produced.

use super::lattice::{CdfTable, PRECISION, TOTAL};
use crate::error::{BitstreamError, Result};

const TOP: u64 = 1 << 56;
const BOT: u64 = 1 << 48;

/// Register snapshot shared by both directions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RangeCoderState {
    pub low: u64,
    pub range: u64,
}

impl Default for RangeCoderState {
    fn default() -> Self {
        RangeCoderState {
            low: 0,
            range: u64::MAX,
        }
    }
}

impl RangeCoderState {
    /// Narrows to the sub-interval `[cum, cum + freq)` out of [`TOTAL`].
    #[inline]
    fn narrow(&mut self, cum: u32, freq: u32) {
        let r = self.range >> PRECISION;
        self.low = self.low.wrapping_add(r * cum as u64);
        self.range = r * freq as u64;
    }

    /// Whether the top byte is settled; forces it settled when the range
    /// has collapsed below [`BOT`].
    #[inline]
    fn must_shift(&mut self) -> bool {
        if (self.low ^ self.low.wrapping_add(self.range)) < TOP {
            true
        } else if self.range < BOT {
            self.range = self.low.wrapping_neg() & (BOT - 1);
            true
        } else {
            false
        }
    }

    #[inline]
    fn shift(&mut self) -> u8 {
        let byte = (self.low >> 56) as u8;
        self.low <<= 8;
        self.range <<= 8;
        byte
    }

    /// Shortest big-endian prefix `v` (zero-extended) with
    /// `low <= v < low + range`.
    fn flush_bytes(&self) -> Vec<u8> {
        let low = self.low as u128;
        let end = low + self.range as u128;
        for n in 0..=8u32 {
            let unit = 1u128 << (64 - 8 * n);
            let v = low.div_ceil(unit) * unit;
            if v < end {
                return (0..n).map(|i| (v >> (56 - 8 * i)) as u8).collect();
            }
        }
        unreachable!("an 8-byte value always lies inside a non-empty interval")
    }
}

#[derive(Debug, Default)]
pub struct RangeEncoder {
    state: RangeCoderState,
    out: Vec<u8>,
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn encode(&mut self, cum: u32, freq: u32) {
        debug_assert!(freq > 0 && cum + freq <= TOTAL);
        self.state.narrow(cum, freq);
        while self.state.must_shift() {
            let b = self.state.shift();
            self.out.push(b);
        }
    }

    pub fn encode_symbol(&mut self, table: &CdfTable, symbol: usize) {
        self.encode(table.cum(symbol), table.freq(symbol));
    }

    /// Sixteen equiprobable bits.
    pub fn encode_raw16(&mut self, bits: u16) {
        self.encode(bits as u32, 1);
    }

    pub fn finish(mut self) -> Vec<u8> {
        let tail = self.state.flush_bytes();
        self.out.extend_from_slice(&tail);
        self.out
    }
}

#[derive(Debug)]
pub struct RangeDecoder<'a> {
    state: RangeCoderState,
    code: u64,
    bytes: &'a [u8],
    pos: usize,
    step: u64,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        let mut d = RangeDecoder {
            state: RangeCoderState::default(),
            code: 0,
            bytes,
            pos: 0,
            step: 0,
        };
        for _ in 0..8 {
            d.code = (d.code << 8) | d.next_byte() as u64;
        }
        d
    }

    #[inline]
    fn next_byte(&mut self) -> u8 {
        let b = self.bytes.get(self.pos).copied().unwrap_or(0);
        self.pos += 1;
        b
    }

    /// Cumulative-frequency target of the next symbol.
    #[inline]
    pub fn target(&mut self) -> u32 {
        self.step = self.state.range >> PRECISION;
        let v = self.code.wrapping_sub(self.state.low) / self.step;
        v.min(TOTAL as u64 - 1) as u32
    }

    /// Consumes the symbol occupying `[cum, cum + freq)`; must follow
    /// [`RangeDecoder::target`].
    #[inline]
    pub fn consume(&mut self, cum: u32, freq: u32) {
        self.state.low = self.state.low.wrapping_add(self.step * cum as u64);
        self.state.range = self.step * freq as u64;
        while self.state.must_shift() {
            self.state.shift();
            self.code = (self.code << 8) | self.next_byte() as u64;
        }
    }

    pub fn decode_symbol(&mut self, table: &CdfTable) -> usize {
        let s = table.symbol_for(self.target());
        self.consume(table.cum(s), table.freq(s));
        s
    }

    pub fn decode_raw16(&mut self) -> u16 {
        let v = self.target();
        self.consume(v, 1);
        v as u16
    }

    /// Verifies that the input is exactly as long as the encoder's output.
    pub fn finish(self) -> Result<()> {
        // `pos` counts the eight priming bytes plus one per shift.
        let expected = self.pos - 8 + self.state.flush_bytes().len();
        if self.bytes.len() < expected {
            return Err(BitstreamError::Truncated(format!(
                "substream has {} bytes, the coded symbols need {expected}",
                self.bytes.len()
            ))
            .into());
        }
        if self.bytes.len() > expected {
            return Err(BitstreamError::Corrupt(format!(
                "{} unread bytes after the last symbol",
                self.bytes.len() - expected
            ))
            .into());
        }
        Ok(())
    }
}

/// Codes `symbols[i]` under `cdfs[i]`.
pub fn rc_encode(symbols: &[usize], cdfs: &[&CdfTable]) -> Vec<u8> {
    assert_eq!(symbols.len(), cdfs.len(), "one table per symbol");
    let mut enc = RangeEncoder::new();
    for (&s, t) in symbols.iter().zip(cdfs) {
        enc.encode_symbol(t, s);
    }
    enc.finish()
}

pub fn rc_decode(bytes: &[u8], cdfs: &[&CdfTable]) -> Result<Vec<usize>> {
    let mut dec = RangeDecoder::new(bytes);
    let symbols = cdfs.iter().map(|t| dec.decode_symbol(t)).collect();
    dec.finish()?;
    Ok(symbols)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(n: u32) -> CdfTable {
        let cum = (0..=n).map(|i| i * TOTAL / n).collect();
        CdfTable::from_cumulative(cum).unwrap()
    }

    #[test]
    fn empty_stream() {
        let bytes = rc_encode(&[], &[]);
        assert!(bytes.len() <= 2);
        assert!(rc_decode(&bytes, &[]).unwrap().is_empty());
    }

    #[test]
    fn uniform_round_trip() {
        let t = uniform(7);
        let syms: Vec<usize> = (0..500).map(|i| (i * 5 + i / 3) % 7).collect();
        let tables = vec![&t; syms.len()];
        let bytes = rc_encode(&syms, &tables);
        assert_eq!(rc_decode(&bytes, &tables).unwrap(), syms);
    }

    #[test]
    fn raw_bits_round_trip() {
        let mut enc = RangeEncoder::new();
        for v in [0u16, 1, 0xffff, 0x8000, 12345] {
            enc.encode_raw16(v);
        }
        let bytes = enc.finish();
        let mut dec = RangeDecoder::new(&bytes);
        let got: Vec<u16> = (0..5).map(|_| dec.decode_raw16()).collect();
        assert_eq!(got, [0, 1, 0xffff, 0x8000, 12345]);
        dec.finish().unwrap();
    }

    #[test]
    fn altered_lengths_never_reproduce_the_symbols() {
        let t = uniform(3);
        let syms = vec![2usize; 40];
        let tables = vec![&t; 40];
        let bytes = rc_encode(&syms, &tables);
        for cut in 0..bytes.len() {
            assert!(rc_decode(&bytes[..cut], &tables).ok() != Some(syms.clone()));
        }
        for extra in [0u8, 1, 0xff] {
            let mut long = bytes.clone();
            long.push(extra);
            assert!(rc_decode(&long, &tables).ok() != Some(syms.clone()));
        }
    }
}
