//! Fixed-point encoding, the commitment group and the Fiat–Shamir transcript.

pub mod fixed;
pub mod group;
pub mod transcript;

pub use fixed::{
    decode_raw, decode_slice, encode_slice, fx_decode, fx_encode, in_range, FixedInt, FISHER_FRAC_BITS,
    RANGE_BITS, WEIGHT_FRAC_BITS,
};
pub use group::{scalar_from_i128, scalar_from_i64, GroupElem, Generators};
pub use transcript::{Transcript, MAX_CHALLENGE_BOUND};
