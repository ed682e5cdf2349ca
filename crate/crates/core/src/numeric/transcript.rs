//! SHA-256 Fiat–Shamir transcript.
//!
//! Every absorb feeds the frame `len(label):u32 LE ‖ label ‖ len(data):u32 LE ‖ data`
//! into one running hash. A challenge request is itself absorbed before any
//! output is derived, so asking twice with the same label yields fresh values.
//!
//! Integer challenges are read from the stream `SHA-256(seed ‖ counter:u64 LE)`
//! where `seed` is the digest of the state after absorbing the request. Each
//! block yields eight little-endian `u32` words; a word is masked down to the
//! smallest power of two covering `bound` and rejected if it is still `>= bound`.

use curve25519_dalek::scalar::Scalar;
use sha2::{Digest, Sha256, Sha512};

/// Largest admissible bound for [`Transcript::challenge_ints`].
pub const MAX_CHALLENGE_BOUND: u64 = 1 << 20;

#[derive(Clone, Debug)]
pub struct Transcript {
    state: Sha256,
    log: Vec<(String, Vec<u8>)>,
}

impl Default for Transcript {
    fn default() -> Self {
        Self::new()
    }
}

impl Transcript {
    pub fn new() -> Self {
        Self {
            state: Sha256::new(),
            log: Vec::new(),
        }
    }

    pub fn absorb(&mut self, label: &str, data: &[u8]) {
        self.state.update(frame(label, data));
        self.log.push((label.to_owned(), data.to_vec()));
    }

    /// Ordered `(label, bytes)` history.
    pub fn log(&self) -> &[(String, Vec<u8>)] {
        &self.log
    }

    /// Digest of the current state; does not advance it.
    pub fn digest(&self) -> [u8; 32] {
        self.state.clone().finalize().into()
    }

    /// `n` integers uniform in `[0, bound)`.
    ///
    /// Panics if `bound` is zero or above [`MAX_CHALLENGE_BOUND`].
    pub fn challenge_ints(&mut self, label: &str, n: usize, bound: u64) -> Vec<u64> {
        assert!(
            (1..=MAX_CHALLENGE_BOUND).contains(&bound),
            "challenge bound {bound} outside [1, 2^20]"
        );
        let mut request = Vec::with_capacity(12);
        request.extend_from_slice(&(n as u32).to_le_bytes());
        request.extend_from_slice(&bound.to_le_bytes());
        self.absorb(label, &request);
        let seed = self.digest();

        let mask = bound.next_power_of_two() - 1;
        let mut out = Vec::with_capacity(n);
        let mut counter = 0u64;
        while out.len() < n {
            let block: [u8; 32] = Sha256::new()
                .chain_update(seed)
                .chain_update(counter.to_le_bytes())
                .finalize()
                .into();
            counter += 1;
            for word in block.chunks_exact(4) {
                let v = u32::from_le_bytes(word.try_into().unwrap()) as u64 & mask;
                if v < bound {
                    out.push(v);
                    if out.len() == n {
                        break;
                    }
                }
            }
        }
        out
    }

    /// A full-width scalar challenge, reduced from a 512-bit digest.
    pub fn challenge_scalar(&mut self, label: &str) -> Scalar {
        self.absorb(label, b"scalar");
        let seed = self.digest();
        let wide: [u8; 64] = Sha512::new().chain_update(seed).finalize().into();
        Scalar::from_bytes_mod_order_wide(&wide)
    }
}

pub(crate) fn frame(label: &str, data: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + label.len() + data.len());
    out.extend_from_slice(&(label.len() as u32).to_le_bytes());
    out.extend_from_slice(label.as_bytes());
    out.extend_from_slice(&(data.len() as u32).to_le_bytes());
    out.extend_from_slice(data);
    out
}
