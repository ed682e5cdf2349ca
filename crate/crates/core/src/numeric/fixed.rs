//! Fixed-point images of real-valued parameters.
//!
//! Every committed quantity (weights, updates, Fisher entries) is carried as a
//! signed integer `value` at scale `2^-frac_bits`. Encoding rounds half to even
//! and rejects anything whose integer image reaches `2^40`.

use crate::error::{Error, Result};

/// Fractional bits used for weights and updates.
pub const WEIGHT_FRAC_BITS: u32 = 24;
/// Fractional bits used for Fisher entries.
pub const FISHER_FRAC_BITS: u32 = 20;
/// Integer images satisfy `|value| < 2^RANGE_BITS`.
pub const RANGE_BITS: u32 = 40;

const MIN_FRAC_BITS: u32 = 8;
const MAX_FRAC_BITS: u32 = 30;
const RANGE_LIMIT: i64 = 1 << RANGE_BITS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FixedInt {
    value: i64,
    frac_bits: u32,
}

impl FixedInt {
    /// Wraps an integer image, checking the declared range.
    pub fn from_raw(value: i64, frac_bits: u32) -> Result<Self> {
        check_frac_bits(frac_bits)?;
        if value.unsigned_abs() >= RANGE_LIMIT as u64 {
            return Err(Error::Range {
                coordinate: 0,
                value: value as f64,
                frac_bits,
                range_bits: RANGE_BITS,
            });
        }
        Ok(Self { value, frac_bits })
    }

    pub fn value(self) -> i64 {
        self.value
    }

    pub fn frac_bits(self) -> u32 {
        self.frac_bits
    }

    pub fn decode(self) -> f64 {
        decode_raw(self.value, self.frac_bits)
    }

    /// 8-byte little-endian two's complement.
    pub fn to_le_bytes(self) -> [u8; 8] {
        self.value.to_le_bytes()
    }

    pub fn from_le_bytes(bytes: [u8; 8], frac_bits: u32) -> Result<Self> {
        Self::from_raw(i64::from_le_bytes(bytes), frac_bits)
    }
}

fn check_frac_bits(frac_bits: u32) -> Result<()> {
    if !(MIN_FRAC_BITS..=MAX_FRAC_BITS).contains(&frac_bits) {
        return Err(Error::InvalidArgument(format!(
            "frac_bits {frac_bits} outside [{MIN_FRAC_BITS}, {MAX_FRAC_BITS}]"
        )));
    }
    Ok(())
}

fn encode_at(x: f64, frac_bits: u32, coordinate: usize) -> Result<i64> {
    // Multiplying by a power of two is exact, so the only rounding is the
    // final ties-to-even step.
    let scaled = (x * (frac_bits as f64).exp2()).round_ties_even();
    if !scaled.is_finite() || scaled.abs() >= RANGE_LIMIT as f64 {
        return Err(Error::Range {
            coordinate,
            value: x,
            frac_bits,
            range_bits: RANGE_BITS,
        });
    }
    Ok(scaled as i64)
}

pub fn fx_encode(x: f64, frac_bits: u32) -> Result<FixedInt> {
    check_frac_bits(frac_bits)?;
    Ok(FixedInt {
        value: encode_at(x, frac_bits, 0)?,
        frac_bits,
    })
}

pub fn fx_decode(v: FixedInt) -> f64 {
    v.decode()
}

/// Exact for every image inside the declared range.
pub fn decode_raw(value: i64, frac_bits: u32) -> f64 {
    value as f64 * (-(frac_bits as f64)).exp2()
}

/// Encodes a whole vector; a range error names the first offending index.
pub fn encode_slice(xs: &[f64], frac_bits: u32) -> Result<Vec<i64>> {
    check_frac_bits(frac_bits)?;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| encode_at(x, frac_bits, i))
        .collect()
}

pub fn decode_slice(vs: &[i64], frac_bits: u32) -> Vec<f64> {
    vs.iter().map(|&v| decode_raw(v, frac_bits)).collect()
}

pub fn in_range(value: i64) -> bool {
    value.unsigned_abs() < RANGE_LIMIT as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn encodes_exact_dyadics() {
        assert_eq!(fx_encode(1.5, 16).unwrap().value(), 98304);
        assert_eq!(fx_encode(-0.25, 16).unwrap().value(), -16384);
        // 2^-17 is exactly half a unit at f=16; ties go to the even neighbour 0.
        assert_eq!(fx_encode((-17f64).exp2(), 16).unwrap().value(), 0);
        assert_eq!(fx_encode(3.0 * (-17f64).exp2(), 16).unwrap().value(), 2);
    }

    #[test]
    fn decodes() {
        assert_eq!(FixedInt::from_raw(98304, 16).unwrap().decode(), 1.5);
        assert_eq!(FixedInt::from_raw(0, 16).unwrap().decode(), 0.0);
        assert_eq!(FixedInt::from_raw(-16384, 16).unwrap().decode(), -0.25);
    }

    #[test]
    fn rejects_out_of_range_with_coordinate() {
        let err = encode_slice(&[0.0, 1.0, 70000.0], 24).unwrap_err();
        match err {
            Error::Range { coordinate, .. } => assert_eq!(coordinate, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(fx_encode(f64::NAN, 24).is_err());
        assert!(fx_encode(1.0, 31).is_err());
        assert!(fx_encode(1.0, 7).is_err());
    }

    #[test]
    fn byte_encoding_is_twos_complement() {
        let v = FixedInt::from_raw(-2, 24).unwrap();
        assert_eq!(v.to_le_bytes(), [0xfe, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff, 0xff]);
        assert_eq!(FixedInt::from_le_bytes(v.to_le_bytes(), 24).unwrap(), v);
    }

    #[test]
    fn round_trip_error_bound_100k() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for f in [20u32, 24] {
            let limit = (RANGE_BITS as f64 - f as f64).exp2();
            let half_unit = (-(f as f64) - 1.0).exp2();
            for _ in 0..100_000 {
                let x = rng.gen_range(-limit * 0.999..limit * 0.999);
                let back = fx_encode(x, f).unwrap().decode();
                assert!((back - x).abs() <= half_unit, "{x} -> {back}");
            }
        }
    }

    proptest! {
        #[test]
        fn encoding_is_nearly_additive(a in -1000.0f64..1000.0, b in -1000.0f64..1000.0) {
            let sum = fx_encode(a, 24).unwrap().value() + fx_encode(b, 24).unwrap().value();
            let direct = fx_encode(a + b, 24).unwrap().value();
            prop_assert!((sum - direct).abs() <= 1);
        }

        #[test]
        fn encoding_is_additive_on_dyadics(a in -(1i64 << 35)..(1i64 << 35), b in -(1i64 << 35)..(1i64 << 35)) {
            let (x, y) = (decode_raw(a, 24), decode_raw(b, 24));
            prop_assert_eq!(fx_encode(x, 24).unwrap().value() + fx_encode(y, 24).unwrap().value(),
                fx_encode(x + y, 24).unwrap().value());
        }
    }
}
