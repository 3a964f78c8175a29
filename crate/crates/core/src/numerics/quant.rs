//! Maps between raw stream symbols and real values.
//!
//! Two interpretations exist. Weights travel as IEEE binary16 bit patterns.
//! Symbols popped to build a random symmetric matrix are read as signed
//! fixed point, which is a bijection onto a finite grid and never yields
//! NaN or infinity for any popped pattern.

use half::f16;

use crate::error::{Error, Result};

/// Supported symbol widths in bits.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SymbolWidth {
    W1,
    W16,
    W32,
}

impl SymbolWidth {
    #[inline]
    pub const fn bits(self) -> u32 {
        match self {
            SymbolWidth::W1 => 1,
            SymbolWidth::W16 => 16,
            SymbolWidth::W32 => 32,
        }
    }

    /// Largest pattern representable at this width.
    #[inline]
    pub const fn max_pattern(self) -> u32 {
        match self {
            SymbolWidth::W1 => 1,
            SymbolWidth::W16 => 0xFFFF,
            SymbolWidth::W32 => u32::MAX,
        }
    }
}

impl TryFrom<u32> for SymbolWidth {
    type Error = Error;

    fn try_from(bits: u32) -> Result<Self> {
        match bits {
            1 => Ok(SymbolWidth::W1),
            16 => Ok(SymbolWidth::W16),
            32 => Ok(SymbolWidth::W32),
            other => Err(Error::InvalidConfig(format!(
                "symbol width must be 1, 16 or 32, got {other}"
            ))),
        }
    }
}

/// Two's-complement fixed-point interpretation of 16- or 32-bit symbols
/// covering `[-scale, scale)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymbolCodec {
    width: SymbolWidth,
    scale: f64,
}

impl SymbolCodec {
    pub fn new(width: SymbolWidth, scale: f64) -> Result<Self> {
        if width == SymbolWidth::W1 {
            return Err(Error::InvalidConfig(
                "fixed-point symbols must be 16 or 32 bits wide".into(),
            ));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "scale must be positive, got {scale}"
            )));
        }
        Ok(Self { width, scale })
    }

    pub fn width(&self) -> SymbolWidth {
        self.width
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Value of one grid step.
    #[inline]
    pub fn step(&self) -> f64 {
        self.scale / half_range(self.width)
    }

    /// `scale · signed(pattern) / 2^(width-1)`
    pub fn decode(&self, pattern: u32) -> f64 {
        let signed = match self.width {
            SymbolWidth::W16 => {
                debug_assert!(pattern <= 0xFFFF);
                pattern as u16 as i16 as i64
            }
            _ => pattern as i32 as i64,
        };
        signed as f64 * self.step()
    }

    /// Nearest grid point (ties to even), saturating at the range ends.
    pub fn encode(&self, v: f64) -> u32 {
        let half = half_range(self.width);
        let k = (v / self.step()).round_ties_even().clamp(-half, half - 1.0) as i64;
        (k as u32) & self.width.max_pattern()
    }
}

fn half_range(width: SymbolWidth) -> f64 {
    (1u64 << (width.bits() - 1)) as f64
}

/// Round-to-nearest-even conversion to an IEEE binary16 bit pattern.
#[inline]
pub fn half_encode(v: f64) -> u16 {
    f16::from_f64(v).to_bits()
}

#[inline]
pub fn half_decode(pattern: u16) -> f64 {
    f16::from_bits(pattern).to_f64()
}

/// Snaps a value onto the binary16 grid.
#[inline]
pub fn half_round(v: f64) -> f64 {
    half_decode(half_encode(v))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fx16(scale: f64) -> SymbolCodec {
        SymbolCodec::new(SymbolWidth::W16, scale).unwrap()
    }

    #[test]
    fn fx_decode_examples() {
        assert_eq!(fx16(1.0).decode(0x0000), 0.0);
        assert_eq!(fx16(1.0).decode(0x8000), -1.0);
        assert_eq!(fx16(4.0).decode(0x2000), 1.0);
        assert_eq!(fx16(1.0).decode(0x7FFF), 1.0 - 2f64.powi(-15));
    }

    #[test]
    fn fx_encode_examples() {
        assert_eq!(fx16(1.0).encode(0.0), 0x0000);
        assert_eq!(fx16(1.0).encode(10.0), 0x7FFF);
        assert_eq!(fx16(1.0).encode(-10.0), 0x8000);
        assert_eq!(fx16(1.0).encode(-2f64.powi(-15)), 0xFFFF);
        // half a step rounds to even
        assert_eq!(fx16(1.0).encode(0.5 * 2f64.powi(-15)), 0x0000);
        assert_eq!(fx16(1.0).encode(1.5 * 2f64.powi(-15)), 0x0002);
    }

    #[test]
    fn fx16_exhaustive_bijection() {
        for scale in [1.0, 3.0, 32.0] {
            let c = fx16(scale);
            for p in 0..=0xFFFFu32 {
                assert_eq!(c.encode(c.decode(p)), p, "scale {scale} pattern {p:#06x}");
            }
        }
    }

    #[test]
    fn fx32_round_trips_sampled_patterns() {
        let c = SymbolCodec::new(SymbolWidth::W32, 24.0).unwrap();
        let mut p: u32 = 0x9E37_79B9;
        for _ in 0..100_000 {
            p = p.wrapping_mul(1_664_525).wrapping_add(1_013_904_223);
            assert_eq!(c.encode(c.decode(p)), p);
        }
        assert_eq!(c.encode(c.decode(0x8000_0000)), 0x8000_0000);
        assert_eq!(c.encode(c.decode(0x7FFF_FFFF)), 0x7FFF_FFFF);
    }

    #[test]
    fn fx_encode_error_bound() {
        let c = fx16(2.0);
        let mut v = -2.0;
        while v < 2.0 - c.step() {
            assert!((c.decode(c.encode(v)) - v).abs() <= 2.0 * 2f64.powi(-16));
            v += 0.000_377;
        }
    }

    #[test]
    fn codec_validation() {
        assert!(SymbolCodec::new(SymbolWidth::W1, 1.0).is_err());
        assert!(SymbolCodec::new(SymbolWidth::W16, 0.0).is_err());
        assert!(SymbolWidth::try_from(8).is_err());
        assert_eq!(SymbolWidth::try_from(32).unwrap(), SymbolWidth::W32);
    }

    #[test]
    fn half_constants() {
        assert_eq!(half_encode(1.0), 0x3C00);
        assert_eq!(half_decode(0x3C00), 1.0);
        assert_eq!(half_encode(-2.0), 0xC000);
        assert_eq!(half_decode(0xC000), -2.0);
        assert_eq!(half_encode(65504.0), 0x7BFF);
        assert_eq!(half_encode(1e6), 0x7C00);
    }

    /// Independent oracle: scan every finite binary16 value for the nearest
    /// neighbour, breaking ties towards the even pattern.
    fn nearest_half_by_scan(v: f64) -> u16 {
        let mut best: Option<(f64, u16)> = None;
        for p in 0..=0xFFFFu16 {
            let exp = (p >> 10) & 0x1F;
            if exp == 0x1F {
                continue;
            }
            let d = (half_decode(p) - v).abs();
            best = match best {
                None => Some((d, p)),
                Some((bd, bp)) if d < bd || (d == bd && p & 1 == 0 && bp & 1 == 1) => Some((d, p)),
                keep => keep,
            };
        }
        best.unwrap().1
    }

    #[test]
    fn half_matches_exhaustive_scan() {
        let p = half_encode(0.1);
        assert_eq!(p, nearest_half_by_scan(0.1));
        assert!(((half_decode(p) - 0.1) / 0.1).abs() < 2f64.powi(-10));
        for v in [0.3, -1.0e-5, 3.25, -1234.5678, 6.1e-5, 1.0 + 2f64.powi(-11)] {
            let got = half_encode(v);
            let want = nearest_half_by_scan(v);
            // ±0 both valid nearest points for tiny values; compare values
            assert_eq!(half_decode(got), half_decode(want), "v = {v}");
        }
    }

    #[test]
    fn half_round_trip_on_all_finite_patterns() {
        for p in 0..=0xFFFFu16 {
            let v = half_decode(p);
            if v.is_finite() {
                assert_eq!(half_encode(v), p);
            }
        }
    }
}
