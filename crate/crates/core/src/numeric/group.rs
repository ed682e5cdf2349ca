//! Prime-order group used by the homomorphic commitment backend.
//!
//! The Ristretto group over Curve25519 has order `q = 2^252 + 277423...`,
//! and a canonical 32-byte encoding. Exponents are [`Scalar`]s; signed integers
//! are mapped to `value mod q`.

use std::sync::Arc;

use curve25519_dalek::ristretto::{CompressedRistretto, RistrettoPoint, VartimeRistrettoPrecomputation};
use curve25519_dalek::scalar::Scalar;
use curve25519_dalek::traits::{Identity, VartimeMultiscalarMul, VartimePrecomputedMultiscalarMul};
use sha2::Sha512;

use super::transcript::frame;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GroupElem(RistrettoPoint);

impl GroupElem {
    pub fn identity() -> Self {
        Self(RistrettoPoint::identity())
    }

    /// Deterministic hash-to-group of `(label, index)`.
    pub fn hash_to_group(label: &str, index: u64) -> Self {
        let input = frame(label, &index.to_le_bytes());
        Self(RistrettoPoint::hash_from_bytes::<Sha512>(&input))
    }

    pub fn to_bytes(&self) -> [u8; 32] {
        self.0.compress().to_bytes()
    }

    pub fn from_bytes(bytes: &[u8; 32]) -> Option<Self> {
        CompressedRistretto(*bytes).decompress().map(Self)
    }

    pub fn add(&self, other: &Self) -> Self {
        Self(self.0 + other.0)
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self(self.0 - other.0)
    }

    pub fn neg(&self) -> Self {
        Self(-self.0)
    }

    pub fn mul(&self, k: &Scalar) -> Self {
        Self(self.0 * k)
    }

    /// `Σ scalars[i] · points[i]`.
    pub fn multiscalar_mul(scalars: &[Scalar], points: &[GroupElem]) -> Self {
        debug_assert_eq!(scalars.len(), points.len());
        Self(RistrettoPoint::vartime_multiscalar_mul(
            scalars.iter(),
            points.iter().map(|p| &p.0),
        ))
    }
}

pub fn scalar_from_i64(v: i64) -> Scalar {
    let mag = Scalar::from(v.unsigned_abs());
    if v < 0 {
        -mag
    } else {
        mag
    }
}

pub fn scalar_from_i128(v: i128) -> Scalar {
    let mag = Scalar::from(v.unsigned_abs());
    if v < 0 {
        -mag
    } else {
        mag
    }
}

/// Pedersen generator family `g_0..g_{n-1}, h` derived from a domain label.
#[derive(Clone)]
pub struct Generators {
    pub g: Vec<GroupElem>,
    pub h: GroupElem,
    // tables for g_0.., -g_0.., h
    table: Arc<VartimeRistrettoPrecomputation>,
}

impl std::fmt::Debug for Generators {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Generators").field("g", &self.g).field("h", &self.h).finish_non_exhaustive()
    }
}

impl Generators {
    pub fn new(label: &str, n: usize) -> Self {
        let g: Vec<GroupElem> = (0..n as u64)
            .map(|i| GroupElem::hash_to_group(&format!("{label}/g"), i))
            .collect();
        let h = GroupElem::hash_to_group(&format!("{label}/h"), 0);
        let points: Vec<RistrettoPoint> =
            g.iter().map(|p| p.0).chain(g.iter().map(|p| -p.0)).chain([h.0]).collect();
        let table = Arc::new(VartimeRistrettoPrecomputation::new(points));
        Self { g, h, table }
    }

    /// `blinding · h + Σ values[k] · g_k`.
    pub fn commit(&self, values: &[i64], blinding: &Scalar) -> GroupElem {
        let n = self.g.len();
        assert!(values.len() <= n, "vector longer than generator family");
        // Negative entries go to -g_k so every value scalar stays short.
        let mut scalars = vec![Scalar::ZERO; 2 * n + 1];
        for (k, &v) in values.iter().enumerate() {
            scalars[if v < 0 { n + k } else { k }] = Scalar::from(v.unsigned_abs());
        }
        scalars[2 * n] = *blinding;
        GroupElem(self.table.vartime_multiscalar_mul(&scalars))
    }
}
