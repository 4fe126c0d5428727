//! Prime-field arithmetic for secret sharing.
//!
//! [`FieldElement`] lives in GF(p) with p = 2^256 − 189, large enough that any
//! 128-bit game state embeds without reduction. [`SmallField`] is the same
//! interface over GF(65521), used where a property has to be checked by
//! exhaustion.

use num_bigint::BigUint;
use num_traits::{One, Zero};
use rand::RngCore;
use std::fmt;
use std::sync::OnceLock;
use thiserror::Error;

pub const FIELD_BYTES: usize = 32;

fn modulus() -> &'static BigUint {
    static P: OnceLock<BigUint> = OnceLock::new();
    P.get_or_init(|| (BigUint::one() << 256u32) - BigUint::from(189u32))
}

fn modulus_minus_two() -> &'static BigUint {
    static E: OnceLock<BigUint> = OnceLock::new();
    E.get_or_init(|| modulus() - BigUint::from(2u32))
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FieldError {
    #[error("encoding must be exactly {FIELD_BYTES} bytes, got {0}")]
    BadLength(usize),
    #[error("value is not reduced modulo p")]
    NotCanonical,
}

/// Operations the interpolation code needs from a prime field.
pub trait PrimeField: Clone + PartialEq + Eq + fmt::Debug {
    fn zero() -> Self;
    fn one() -> Self;
    fn from_u64(v: u64) -> Self;
    fn add(&self, rhs: &Self) -> Self;
    fn sub(&self, rhs: &Self) -> Self;
    fn mul(&self, rhs: &Self) -> Self;
    /// Multiplicative inverse; `None` for zero.
    fn inverse(&self) -> Option<Self>;
    fn random(rng: &mut impl RngCore) -> Self;

    fn is_zero(&self) -> bool {
        *self == Self::zero()
    }
}

/// Element of GF(2^256 − 189).
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FieldElement(BigUint);

impl FieldElement {
    pub fn modulus() -> BigUint {
        modulus().clone()
    }

    /// Reduces an arbitrary integer into the field.
    pub fn from_biguint(v: BigUint) -> Self {
        Self(v % modulus())
    }

    pub fn from_u128(v: u128) -> Self {
        Self(BigUint::from(v))
    }

    pub fn as_biguint(&self) -> &BigUint {
        &self.0
    }

    /// Fits in 128 bits (i.e. a fresh game state).
    pub fn to_u128(&self) -> Option<u128> {
        let digits = self.0.to_u64_digits();
        match digits.len() {
            0 => Some(0),
            1 => Some(digits[0] as u128),
            2 => Some(digits[0] as u128 | ((digits[1] as u128) << 64)),
            _ => None,
        }
    }

    /// 32-byte big-endian encoding.
    pub fn to_bytes(&self) -> [u8; FIELD_BYTES] {
        let raw = self.0.to_bytes_be();
        let mut out = [0u8; FIELD_BYTES];
        out[FIELD_BYTES - raw.len()..].copy_from_slice(&raw);
        out
    }

    /// Inverse of [`to_bytes`](Self::to_bytes); rejects values ≥ p.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FieldError> {
        if bytes.len() != FIELD_BYTES {
            return Err(FieldError::BadLength(bytes.len()));
        }
        let v = BigUint::from_bytes_be(bytes);
        if &v >= modulus() {
            return Err(FieldError::NotCanonical);
        }
        Ok(Self(v))
    }
}

impl fmt::Debug for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fe(0x{})", self.0.to_str_radix(16))
    }
}

impl fmt::Display for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "0x{}", self.0.to_str_radix(16))
    }
}

impl PrimeField for FieldElement {
    fn zero() -> Self {
        Self(BigUint::zero())
    }

    fn one() -> Self {
        Self(BigUint::one())
    }

    fn from_u64(v: u64) -> Self {
        Self(BigUint::from(v))
    }

    fn add(&self, rhs: &Self) -> Self {
        let s = &self.0 + &rhs.0;
        if &s >= modulus() {
            Self(s - modulus())
        } else {
            Self(s)
        }
    }

    fn sub(&self, rhs: &Self) -> Self {
        if self.0 >= rhs.0 {
            Self(&self.0 - &rhs.0)
        } else {
            Self(modulus() - (&rhs.0 - &self.0))
        }
    }

    fn mul(&self, rhs: &Self) -> Self {
        Self((&self.0 * &rhs.0) % modulus())
    }

    fn inverse(&self) -> Option<Self> {
        if self.0.is_zero() {
            return None;
        }
        Some(Self(self.0.modpow(modulus_minus_two(), modulus())))
    }

    fn random(rng: &mut impl RngCore) -> Self {
        loop {
            let mut buf = [0u8; FIELD_BYTES];
            rng.fill_bytes(&mut buf);
            let v = BigUint::from_bytes_be(&buf);
            if &v < modulus() {
                return Self(v);
            }
        }
    }
}

/// GF(65521), the largest prime below 2^16.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct SmallField(u32);

impl SmallField {
    pub const P: u32 = 65_521;

    pub fn new(v: u32) -> Self {
        Self(v % Self::P)
    }

    pub fn value(self) -> u32 {
        self.0
    }
}

impl PrimeField for SmallField {
    fn zero() -> Self {
        Self(0)
    }

    fn one() -> Self {
        Self(1)
    }

    fn from_u64(v: u64) -> Self {
        Self((v % Self::P as u64) as u32)
    }

    fn add(&self, rhs: &Self) -> Self {
        Self((self.0 + rhs.0) % Self::P)
    }

    fn sub(&self, rhs: &Self) -> Self {
        Self((self.0 + Self::P - rhs.0) % Self::P)
    }

    fn mul(&self, rhs: &Self) -> Self {
        Self(((self.0 as u64 * rhs.0 as u64) % Self::P as u64) as u32)
    }

    fn inverse(&self) -> Option<Self> {
        if self.0 == 0 {
            return None;
        }
        // Fermat: a^(p-2)
        let (mut base, mut exp, mut acc) = (self.0 as u64, (Self::P - 2) as u64, 1u64);
        let p = Self::P as u64;
        while exp > 0 {
            if exp & 1 == 1 {
                acc = acc * base % p;
            }
            base = base * base % p;
            exp >>= 1;
        }
        Some(Self(acc as u32))
    }

    fn random(rng: &mut impl RngCore) -> Self {
        Self::new(rng.next_u32())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::seeded_rng;

    #[test]
    fn encoding_is_32_byte_big_endian() {
        let one = FieldElement::one();
        let bytes = one.to_bytes();
        assert_eq!(bytes[31], 1);
        assert!(bytes[..31].iter().all(|&b| b == 0));
        assert_eq!(FieldElement::from_bytes(&bytes).unwrap(), one);
    }

    #[test]
    fn rejects_non_canonical_encodings() {
        let p = FieldElement::modulus().to_bytes_be();
        assert_eq!(FieldElement::from_bytes(&p), Err(FieldError::NotCanonical));
        assert_eq!(FieldElement::from_bytes(&[0u8; 31]), Err(FieldError::BadLength(31)));
    }

    #[test]
    fn wraparound_arithmetic() {
        let minus_one = FieldElement::zero().sub(&FieldElement::one());
        assert_eq!(minus_one.add(&FieldElement::one()), FieldElement::zero());
        assert_eq!(minus_one.mul(&minus_one), FieldElement::one());
    }

    #[test]
    fn inverses_multiply_to_one() {
        let mut rng = seeded_rng(1);
        for _ in 0..50 {
            let a = FieldElement::random(&mut rng);
            if a.is_zero() {
                continue;
            }
            assert_eq!(a.mul(&a.inverse().unwrap()), FieldElement::one());
        }
        assert!(FieldElement::zero().inverse().is_none());
    }

    #[test]
    fn u128_states_embed_exactly() {
        let v = u128::MAX;
        let fe = FieldElement::from_u128(v);
        assert_eq!(fe.to_u128(), Some(v));
    }

    #[test]
    fn small_field_inverse_exhaustive_sample() {
        for v in (1..SmallField::P).step_by(97) {
            let a = SmallField::new(v);
            assert_eq!(a.mul(&a.inverse().unwrap()), SmallField::one());
        }
    }
}
