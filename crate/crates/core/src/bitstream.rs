//! The bits-back message: a LIFO stack of fixed-width symbols.
//!
//! Bit `i` of the stack (0 = bottom) lives in bit `i % 64` of word `i / 64`.
//! A symbol is laid down least-significant bit first, so its most
//! significant bit sits on top and a pop reads it back in one pass.
//! Serialized bytes are the little-endian image of those words, truncated
//! to `ceil(bit_length / 8)` with zeroed padding in the last byte.

use crate::error::{Error, Result};
use crate::numerics::{SignVector, SymbolWidth};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BitStack {
    words: Vec<u64>,
    len: usize,
}

impl BitStack {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn bit_length(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Pushes the low `n` bits of `value`; `n <= 64`.
    fn push_bits(&mut self, value: u64, n: usize) {
        debug_assert!(n <= 64);
        if n == 0 {
            return;
        }
        let value = if n == 64 {
            value
        } else {
            value & ((1u64 << n) - 1)
        };
        let word = self.len / 64;
        let offset = self.len % 64;
        if self.words.len() <= word {
            self.words.push(0);
        }
        self.words[word] |= value << offset;
        if offset + n > 64 {
            self.words.push(value >> (64 - offset));
        }
        self.len += n;
    }

    /// Pops the top `n` bits; `n <= 64`.
    fn pop_bits(&mut self, n: usize) -> Result<u64> {
        debug_assert!(n <= 64);
        if self.len < n {
            return Err(Error::Underflow {
                needed: n,
                available: self.len,
            });
        }
        if n == 0 {
            return Ok(0);
        }
        let start = self.len - n;
        let word = start / 64;
        let offset = start % 64;
        let mut value = self.words[word] >> offset;
        if offset + n > 64 {
            value |= self.words[word + 1] << (64 - offset);
        }
        if n < 64 {
            value &= (1u64 << n) - 1;
        }
        self.len = start;
        // keep everything above `len` zeroed so serialization padding is clean
        self.words.truncate(self.len.div_ceil(64));
        if let Some(last) = self.words.last_mut() {
            let used = self.len % 64;
            if used != 0 {
                *last &= (1u64 << used) - 1;
            }
        }
        Ok(value)
    }

    /// Pushes `pattern` as a `width`-bit symbol. Panics if the pattern does
    /// not fit the width.
    pub fn push_symbol(&mut self, pattern: u32, width: SymbolWidth) {
        assert!(
            pattern <= width.max_pattern(),
            "pattern {pattern:#x} does not fit in {} bits",
            width.bits()
        );
        self.push_bits(pattern as u64, width.bits() as usize);
    }

    pub fn pop_symbol(&mut self, width: SymbolWidth) -> Result<u32> {
        self.pop_bits(width.bits() as usize).map(|v| v as u32)
    }

    #[inline]
    pub fn push_half(&mut self, pattern: u16) {
        self.push_bits(pattern as u64, 16);
    }

    #[inline]
    pub fn pop_half(&mut self) -> Result<u16> {
        self.pop_bits(16).map(|v| v as u16)
    }

    /// One bit per sign, +1 as 1 and -1 as 0, first entry pushed first.
    pub fn push_sign_bits(&mut self, signs: &SignVector) {
        for s in signs.iter() {
            self.push_bits((s > 0) as u64, 1);
        }
    }

    /// Inverse of [`push_sign_bits`](Self::push_sign_bits) for `dim` signs.
    pub fn pop_sign_bits(&mut self, dim: usize) -> Result<SignVector> {
        if self.len < dim {
            return Err(Error::Underflow {
                needed: dim,
                available: self.len,
            });
        }
        let mut bits = vec![false; dim];
        for b in bits.iter_mut().rev() {
            *b = self.pop_bits(1)? == 1;
        }
        Ok(SignVector::from_bits(bits))
    }

    pub fn serialize(&self) -> Vec<u8> {
        let n = self.len.div_ceil(8);
        let mut out = Vec::with_capacity(n);
        for w in &self.words {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out.truncate(n);
        out
    }

    /// Rebuilds a stack from its serialized bytes. Trailing bytes beyond
    /// `bit_length` and padding bits are ignored.
    pub fn deserialize(bytes: &[u8], bit_length: u64) -> Result<Self> {
        if bit_length > 8 * bytes.len() as u64 {
            return Err(Error::LengthMismatch {
                bit_length,
                bytes: bytes.len(),
            });
        }
        let len = bit_length as usize;
        let used = &bytes[..len.div_ceil(8)];
        let mut words: Vec<u64> = used
            .chunks(8)
            .map(|c| {
                let mut buf = [0u8; 8];
                buf[..c.len()].copy_from_slice(c);
                u64::from_le_bytes(buf)
            })
            .collect();
        let tail = len % 64;
        if tail != 0 {
            if let Some(last) = words.last_mut() {
                *last &= (1u64 << tail) - 1;
            }
        }
        Ok(Self { words, len })
    }

    /// Appends raw bits on top without symbol framing; `n <= 64`.
    pub(crate) fn append_bits(&mut self, value: u64, n: usize) {
        self.push_bits(value, n);
    }

    /// Reads `n <= 64` raw bits starting at absolute bit `offset`.
    pub(crate) fn read_bits(&self, offset: usize, n: usize) -> u64 {
        assert!(n <= 64 && offset + n <= self.len, "bits outside the stack");
        let mut v = 0u64;
        for i in 0..n {
            let pos = offset + i;
            v |= ((self.words[pos / 64] >> (pos % 64)) & 1) << i;
        }
        v
    }

    /// Drops every bit at or above `len`.
    pub(crate) fn truncate(&mut self, len: usize) {
        if len >= self.len {
            return;
        }
        self.len = len;
        self.words.truncate(len.div_ceil(64));
        if let Some(last) = self.words.last_mut() {
            if !len.is_multiple_of(64) {
                *last &= (1u64 << (len % 64)) - 1;
            }
        }
    }

    /// Overwrites the `width`-bit symbol starting at absolute bit `offset`.
    /// Used to inject corruptions in robustness tests.
    pub fn overwrite_symbol(&mut self, offset: usize, pattern: u32, width: SymbolWidth) {
        let n = width.bits() as usize;
        assert!(offset + n <= self.len, "symbol outside the stack");
        for i in 0..n {
            let pos = offset + i;
            let bit = (pattern >> i) & 1 == 1;
            let mask = 1u64 << (pos % 64);
            if bit {
                self.words[pos / 64] |= mask;
            } else {
                self.words[pos / 64] &= !mask;
            }
        }
    }

    /// Reads the symbol at absolute bit `offset` without popping.
    pub fn peek_symbol(&self, offset: usize, width: SymbolWidth) -> u32 {
        let n = width.bits() as usize;
        assert!(offset + n <= self.len, "symbol outside the stack");
        let mut v = 0u32;
        for i in 0..n {
            let pos = offset + i;
            if (self.words[pos / 64] >> (pos % 64)) & 1 == 1 {
                v |= 1 << i;
            }
        }
        v
    }
}
