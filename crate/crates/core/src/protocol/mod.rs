//! Commit-and-prove verification of an unlearning update.
//!
//! The client commits to its model and its Fisher blocks once. Given a mask
//! from the provider it runs the OBS update, publishes the new model
//! commitment `com_P'` and a [`Proof`] that `com_P'` commits to
//! `w + δ` with `δ` the canonical fixed-point OBS adjustment. Two backends:
//!
//! * [`Backend::Merkle`] opens every touched block of `w`, `w'` and `F`; the
//!   verifier reruns the bit-exact solver. Untouched blocks stay behind
//!   sibling digests.
//! * [`Backend::Pedersen`] keeps `w` and `F` behind per-block and per-row
//!   Pedersen commitments. It reveals `δ`, the pruned weights and `k`
//!   random projections of each touched Fisher block, and checks the
//!   pinning, the commitment homomorphism and a randomized KKT relation.

mod commitment;
pub mod merkle;
mod merkle_backend;
mod pedersen;
mod proof;

use std::fmt;
use std::sync::OnceLock;

pub use commitment::{Commitment, Openings};
pub use proof::{KktOpening, MerkleBlock, Payload, PedersenBlock, Proof, RepresentationProof, Revealed};

use crate::error::{Error, Result};
use crate::nn::{Architecture, Model};
use crate::numeric::{Generators, Transcript};
use crate::obs::{make_partition, BlockPartition, FisherBlocks, UpdateVector};
use crate::unlearn::PruneMask;

pub const DEFAULT_REPETITIONS: u32 = 3;
/// Upper end of the KKT challenge range.
pub const CHALLENGE_BOUND: u64 = 1 << 20;
const PROTOCOL_LABEL: &[u8] = b"edge-unlearn/v1";
const GENERATOR_LABEL: &str = "edge-unlearn/pedersen";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Backend {
    Merkle,
    Pedersen,
}

impl Backend {
    pub fn code(self) -> u8 {
        match self {
            Backend::Merkle => 0,
            Backend::Pedersen => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Backend::Merkle),
            1 => Some(Backend::Pedersen),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Backend::Merkle => "merkle",
            Backend::Pedersen => "pedersen",
        }
    }
}

impl std::str::FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "merkle" => Ok(Backend::Merkle),
            "pedersen" => Ok(Backend::Pedersen),
            other => Err(Error::InvalidArgument(format!("unknown backend `{other}` (expected merkle or pedersen)"))),
        }
    }
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Inputs both parties agree on before any commitment is exchanged.
#[derive(Clone, Debug)]
pub struct PublicParams {
    arch: Architecture,
    partition: BlockPartition,
    repetitions: u32,
    generators: OnceLock<Generators>,
}

impl PublicParams {
    pub fn new(arch: Architecture, block_size: usize, repetitions: u32) -> Result<Self> {
        if !(1..=64).contains(&repetitions) {
            return Err(Error::InvalidArgument(format!("repetitions must be in [1, 64], got {repetitions}")));
        }
        if block_size > 4096 {
            return Err(Error::InvalidArgument(format!("block size {block_size} above 4096")));
        }
        let partition = make_partition(&arch, block_size)?;
        Ok(Self {
            arch,
            partition,
            repetitions,
            generators: OnceLock::new(),
        })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn partition(&self) -> &BlockPartition {
        &self.partition
    }

    pub fn block_size(&self) -> usize {
        self.partition.block_size()
    }

    pub fn repetitions(&self) -> u32 {
        self.repetitions
    }

    pub(crate) fn generators(&self) -> &Generators {
        self.generators
            .get_or_init(|| Generators::new(GENERATOR_LABEL, self.partition.block_size()))
    }

    /// Offset of each Fisher block in the concatenated row-major leaf order.
    pub(crate) fn fisher_offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.partition
            .blocks()
            .iter()
            .map(|b| {
                let o = acc;
                acc += b.len * b.len;
                o
            })
            .collect()
    }

}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RejectReason {
    BadPath,
    BadOpening,
    PinningViolation,
    ResidualExceeded,
    HomomorphismMismatch,
    ChallengeMismatch,
    MalformedPayload,
    /// The verifier's own rerun of the solver disagrees with `w'`.
    RecomputationMismatch,
}

impl RejectReason {
    pub fn name(self) -> &'static str {
        match self {
            RejectReason::BadPath => "bad path",
            RejectReason::BadOpening => "bad opening",
            RejectReason::PinningViolation => "pinning violation",
            RejectReason::ResidualExceeded => "residual exceeded",
            RejectReason::HomomorphismMismatch => "homomorphism mismatch",
            RejectReason::ChallengeMismatch => "challenge mismatch",
            RejectReason::MalformedPayload => "malformed payload",
            RejectReason::RecomputationMismatch => "recomputation mismatch",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Reject {
    pub reason: RejectReason,
    pub detail: String,
}

impl Reject {
    pub(crate) fn new(reason: RejectReason, detail: impl Into<String>) -> Self {
        Self {
            reason,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Reject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.reason.name(), self.detail)
    }
}

impl std::error::Error for Reject {}

/// Everything the prover holds privately.
#[derive(Clone, Copy)]
pub struct Witness<'a> {
    pub pre: &'a Model,
    pub post: &'a Model,
    pub delta: &'a UpdateVector,
    pub fisher: &'a FisherBlocks,
    pub openings: &'a Openings,
}

fn check_model(params: &PublicParams, m: &Model) -> Result<()> {
    if m.architecture() != &params.arch {
        return Err(Error::Inconsistent(format!(
            "model has {} parameters in {} layers, the public architecture differs",
            m.num_params(),
            m.architecture().num_layers()
        )));
    }
    Ok(())
}

fn check_fisher(params: &PublicParams, fb: &FisherBlocks) -> Result<()> {
    if fb.partition() != &params.partition {
        return Err(Error::Inconsistent("Fisher partition differs from the public block partition".into()));
    }
    Ok(())
}

/// Commitment to a model under the backend of `openings`.
pub fn commit_model(params: &PublicParams, m: &Model, openings: &Openings) -> Result<Commitment> {
    check_model(params, m)?;
    match openings.backend() {
        Backend::Merkle => merkle_backend::commit_model(m),
        Backend::Pedersen => pedersen::commit_model(params, m, openings),
    }
}

/// Commitment to Fisher blocks under the backend of `openings`.
pub fn commit_fisher(params: &PublicParams, fb: &FisherBlocks, openings: &Openings) -> Result<Commitment> {
    check_fisher(params, fb)?;
    Ok(match openings.backend() {
        Backend::Merkle => merkle_backend::commit_fisher(fb),
        Backend::Pedersen => pedersen::commit_fisher(params, fb, openings),
    })
}

/// Offline client step: `(com_P, com_H, openings)`.
pub fn client_setup(
    params: &PublicParams,
    m: &Model,
    fb: &FisherBlocks,
    backend: Backend,
    seed: u64,
) -> Result<(Commitment, Commitment, Openings)> {
    let openings = Openings::from_seed(backend, seed);
    let com_p = commit_model(params, m, &openings)?;
    let com_h = commit_fisher(params, fb, &openings)?;
    Ok((com_p, com_h, openings))
}

/// Transcript after the public header.
pub(crate) fn header_transcript(
    params: &PublicParams,
    backend: Backend,
    com_p: &Commitment,
    com_h: &Commitment,
    com_p_post: &Commitment,
    mask: &PruneMask,
) -> Transcript {
    let mut t = Transcript::new();
    t.absorb("protocol", PROTOCOL_LABEL);
    t.absorb("backend", &[backend.code()]);
    let mut dims = Vec::new();
    for l in params.arch.layers() {
        dims.extend_from_slice(&(l.in_dim as u32).to_le_bytes());
        dims.extend_from_slice(&(l.out_dim as u32).to_le_bytes());
        dims.push(l.activation.code());
    }
    t.absorb("architecture", &dims);
    t.absorb("block_size", &(params.block_size() as u32).to_le_bytes());
    let reps = match backend {
        Backend::Merkle => 0,
        Backend::Pedersen => params.repetitions,
    };
    t.absorb("repetitions", &reps.to_le_bytes());
    t.absorb("com_p", &com_p.to_bytes());
    t.absorb("com_h", &com_h.to_bytes());
    t.absorb("com_p_post", &com_p_post.to_bytes());
    t.absorb("mask", &mask.to_bytes());
    t
}

/// Produces the proof and `com_P'`.
///
/// `com_p` and `com_h` must be the commitments the witness opens. The update
/// itself is taken as given: a witness with a wrong `δ` yields a proof the
/// verifier rejects.
pub fn prove(
    params: &PublicParams,
    com_p: &Commitment,
    com_h: &Commitment,
    mask: &PruneMask,
    w: &Witness,
) -> Result<(Proof, Commitment)> {
    check_model(params, w.pre)?;
    check_model(params, w.post)?;
    check_fisher(params, w.fisher)?;
    mask.validate(&params.arch)?;
    let backend = w.openings.backend();
    if com_p.backend() != backend || com_h.backend() != backend {
        return Err(Error::Inconsistent("commitment backends differ from the openings".into()));
    }
    let recovered = UpdateVector::from_models(w.pre, w.post, &params.partition, mask)?;
    if &recovered != w.delta {
        return Err(Error::Inconsistent("update vector does not match the model pair".into()));
    }
    match backend {
        Backend::Merkle => merkle_backend::prove(params, com_p, com_h, mask, w),
        Backend::Pedersen => pedersen::prove(params, com_p, com_h, mask, w),
    }
}

/// Accepts iff `proof` shows `com_p_post` commits to the OBS update of the
/// model in `com_p` under `mask` and the Fisher blocks in `com_h`.
pub fn verify(
    params: &PublicParams,
    com_p: &Commitment,
    com_p_post: &Commitment,
    com_h: &Commitment,
    mask: &PruneMask,
    proof: &Proof,
) -> std::result::Result<(), Reject> {
    let backend = proof.backend();
    for (name, c) in [("com_P", com_p), ("com_P'", com_p_post), ("com_H", com_h)] {
        if c.backend() != backend {
            return Err(Reject::new(
                RejectReason::MalformedPayload,
                format!("{name} is a {} commitment but the proof is {}", c.backend(), backend),
            ));
        }
    }
    if let Err(e) = mask.validate(&params.arch) {
        return Err(Reject::new(RejectReason::MalformedPayload, format!("mask: {e}")));
    }
    if proof.mask_digest != mask.digest() {
        return Err(Reject::new(RejectReason::ChallengeMismatch, "proof was made for a different mask"));
    }
    let t = header_transcript(params, backend, com_p, com_h, com_p_post, mask);
    if proof.header_digest != t.digest() {
        return Err(Reject::new(RejectReason::ChallengeMismatch, "transcript header differs from the public inputs"));
    }
    let touched = params
        .partition
        .touched(mask)
        .map_err(|e| Reject::new(RejectReason::MalformedPayload, e.to_string()))?;
    let got: Vec<usize> = proof.touched_blocks().iter().map(|&b| b as usize).collect();
    if got != touched {
        return Err(Reject::new(
            RejectReason::MalformedPayload,
            format!("proof covers blocks {got:?}, mask touches {touched:?}"),
        ));
    }
    match &proof.payload {
        Payload::Merkle { .. } => merkle_backend::verify(params, com_p, com_p_post, com_h, mask, proof),
        Payload::Pedersen { .. } => pedersen::verify(params, com_p, com_p_post, com_h, mask, proof, t),
    }
}
