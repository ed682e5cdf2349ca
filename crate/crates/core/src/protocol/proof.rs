use std::fs;
use std::path::Path;

use curve25519_dalek::scalar::Scalar;
use serde_json::{json, Value};

use super::merkle::Hash;
use super::Backend;
use crate::codec::{put_i64s, put_u32, Reader};
use crate::error::{Error, Result};
use crate::numeric::GroupElem;

const PROOF_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Proof {
    pub mask_digest: [u8; 32],
    /// Transcript digest after absorbing the public parameters, `com_P`,
    /// `com_H`, `com_P'` and the mask file.
    pub header_digest: [u8; 32],
    /// Randomized-check repetitions; zero for the Merkle backend.
    pub repetitions: u32,
    pub payload: Payload,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    Merkle {
        blocks: Vec<MerkleBlock>,
        /// Frontier shared by `com_P` and `com_P'`.
        model_siblings: Vec<Hash>,
        fisher_siblings: Vec<Hash>,
    },
    Pedersen {
        blocks: Vec<PedersenBlock>,
    },
}

/// Full openings of one touched block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MerkleBlock {
    pub block: u32,
    pub w: Vec<i64>,
    pub w_post: Vec<i64>,
    /// Row-major Fisher block.
    pub fisher: Vec<i64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PedersenBlock {
    pub block: u32,
    pub delta: Vec<i64>,
    /// Pre-update weights at the pruned positions, ascending.
    pub pruned_w: Vec<i64>,
    /// One per repetition.
    pub kkt: Vec<KktOpening>,
    pub rep: RepresentationProof,
}

/// Opening of `Σ_row r_row · C_row` to the projection `s = Σ_row r_row F[row, :]`.
#[derive(Clone, Debug, PartialEq)]
pub struct KktOpening {
    pub s: Vec<i128>,
    pub blinding: Scalar,
}

/// Proof of knowledge of a representation of `C_b − Σ_{p∈P} w_p g_p` over
/// `h` and the unpruned generators.
#[derive(Clone, Debug, PartialEq)]
pub struct RepresentationProof {
    pub commitment: GroupElem,
    pub z_blinding: Scalar,
    /// One response per unpruned position, ascending.
    pub z: Vec<Scalar>,
}

/// One kind of value a proof discloses.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Revealed {
    pub block: Option<u32>,
    pub field: &'static str,
    pub count: usize,
    pub bytes: usize,
}

impl Proof {
    pub fn backend(&self) -> Backend {
        match self.payload {
            Payload::Merkle { .. } => Backend::Merkle,
            Payload::Pedersen { .. } => Backend::Pedersen,
        }
    }

    pub fn touched_blocks(&self) -> Vec<u32> {
        match &self.payload {
            Payload::Merkle { blocks, .. } => blocks.iter().map(|b| b.block).collect(),
            Payload::Pedersen { blocks } => blocks.iter().map(|b| b.block).collect(),
        }
    }

    /// `UPRF` file bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = b"UPRF".to_vec();
        put_u32(&mut out, PROOF_VERSION);
        out.push(self.backend().code());
        out.extend_from_slice(&self.mask_digest);
        out.extend_from_slice(&self.header_digest);
        put_u32(&mut out, self.repetitions);
        let bodies: Vec<Vec<u8>> = match &self.payload {
            Payload::Merkle { blocks, .. } => blocks.iter().map(encode_merkle_block).collect(),
            Payload::Pedersen { blocks } => blocks.iter().map(encode_pedersen_block).collect(),
        };
        put_u32(&mut out, bodies.len() as u32);
        for b in bodies {
            put_u32(&mut out, b.len() as u32);
            out.extend_from_slice(&b);
        }
        if let Payload::Merkle { model_siblings, fisher_siblings, .. } = &self.payload {
            for list in [model_siblings, fisher_siblings] {
                put_u32(&mut out, list.len() as u32);
                for h in list {
                    out.extend_from_slice(h);
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "proof");
        r.expect_magic(b"UPRF")?;
        let version = r.u32()?;
        if version != PROOF_VERSION {
            return r.fail(format!("unsupported version {version}"));
        }
        let code = r.u8()?;
        let Some(backend) = Backend::from_code(code) else {
            return r.fail(format!("unknown backend code {code}"));
        };
        let mask_digest = r.array()?;
        let header_digest = r.array()?;
        let repetitions = r.u32()?;
        if backend == Backend::Pedersen && !(1..=64).contains(&repetitions) {
            return r.fail(format!("repetition count {repetitions} outside [1, 64]"));
        }
        let n = r.count(4)?;
        let mut raw = Vec::with_capacity(n);
        for _ in 0..n {
            let len = r.u32()? as usize;
            raw.push(r.take(len)?);
        }
        let payload = match backend {
            Backend::Merkle => {
                let blocks = raw.into_iter().map(decode_merkle_block).collect::<Result<Vec<_>>>()?;
                let mut lists = Vec::with_capacity(2);
                for _ in 0..2 {
                    let m = r.count(32)?;
                    lists.push((0..m).map(|_| r.array()).collect::<Result<Vec<Hash>>>()?);
                }
                let fisher_siblings = lists.pop().unwrap();
                let model_siblings = lists.pop().unwrap();
                Payload::Merkle {
                    blocks,
                    model_siblings,
                    fisher_siblings,
                }
            }
            Backend::Pedersen => Payload::Pedersen {
                blocks: raw
                    .into_iter()
                    .map(|b| decode_pedersen_block(b, repetitions as usize))
                    .collect::<Result<Vec<_>>>()?,
            },
        };
        r.finish()?;
        Ok(Proof {
            mask_digest,
            header_digest,
            repetitions,
            payload,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Human-readable rendering with the same content as the binary file.
    pub fn to_json(&self) -> Value {
        let payload = match &self.payload {
            Payload::Merkle {
                blocks,
                model_siblings,
                fisher_siblings,
            } => json!({
                "blocks": blocks.iter().map(|b| json!({
                    "block": b.block,
                    "w": b.w,
                    "w_post": b.w_post,
                    "fisher": b.fisher,
                })).collect::<Vec<_>>(),
                "model_siblings": model_siblings.iter().map(hex::encode).collect::<Vec<_>>(),
                "fisher_siblings": fisher_siblings.iter().map(hex::encode).collect::<Vec<_>>(),
            }),
            Payload::Pedersen { blocks } => json!({
                "blocks": blocks.iter().map(|b| json!({
                    "block": b.block,
                    "delta": b.delta,
                    "pruned_w": b.pruned_w,
                    "kkt": b.kkt.iter().map(|k| json!({
                        "s": k.s.iter().map(|v| v.to_string()).collect::<Vec<_>>(),
                        "blinding": hex::encode(k.blinding.as_bytes()),
                    })).collect::<Vec<_>>(),
                    "representation": {
                        "commitment": hex::encode(b.rep.commitment.to_bytes()),
                        "z_blinding": hex::encode(b.rep.z_blinding.as_bytes()),
                        "z": b.rep.z.iter().map(|z| hex::encode(z.as_bytes())).collect::<Vec<_>>(),
                    },
                })).collect::<Vec<_>>(),
            }),
        };
        json!({
            "backend": self.backend().name(),
            "version": PROOF_VERSION,
            "mask_digest": hex::encode(self.mask_digest),
            "header_digest": hex::encode(self.header_digest),
            "repetitions": self.repetitions,
            "payload": payload,
        })
    }

    /// Every value class the proof discloses, with counts and encoded sizes.
    /// Framing (magic, lengths, block ids) is listed under `framing`.
    pub fn revealed(&self) -> Vec<Revealed> {
        let mut out = Vec::new();
        let mut push = |block: Option<u32>, field: &'static str, count: usize, width: usize| {
            out.push(Revealed {
                block,
                field,
                count,
                bytes: count * width,
            })
        };
        push(None, "mask_digest", 1, 32);
        push(None, "header_digest", 1, 32);
        match &self.payload {
            Payload::Merkle {
                blocks,
                model_siblings,
                fisher_siblings,
            } => {
                for b in blocks {
                    push(Some(b.block), "w", b.w.len(), 8);
                    push(Some(b.block), "w_post", b.w_post.len(), 8);
                    push(Some(b.block), "fisher", b.fisher.len(), 8);
                }
                push(None, "model_siblings", model_siblings.len(), 32);
                push(None, "fisher_siblings", fisher_siblings.len(), 32);
            }
            Payload::Pedersen { blocks } => {
                for b in blocks {
                    push(Some(b.block), "delta", b.delta.len(), 8);
                    push(Some(b.block), "pruned_w", b.pruned_w.len(), 8);
                    push(Some(b.block), "kkt_projection", b.kkt.iter().map(|k| k.s.len()).sum(), 16);
                    push(Some(b.block), "kkt_blinding", b.kkt.len(), 32);
                    push(Some(b.block), "representation", 2 + b.rep.z.len(), 32);
                }
            }
        }
        out
    }

    /// Bytes of `to_bytes` not accounted for by [`Proof::revealed`].
    pub fn framing_bytes(&self) -> usize {
        self.to_bytes().len() - self.revealed().iter().map(|r| r.bytes).sum::<usize>()
    }
}

fn encode_merkle_block(b: &MerkleBlock) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * (2 * b.w.len() + b.fisher.len()));
    put_u32(&mut out, b.block);
    put_u32(&mut out, b.w.len() as u32);
    put_i64s(&mut out, &b.w);
    put_i64s(&mut out, &b.w_post);
    put_i64s(&mut out, &b.fisher);
    out
}

fn decode_merkle_block(bytes: &[u8]) -> Result<MerkleBlock> {
    let mut r = Reader::new(bytes, "proof block");
    let block = r.u32()?;
    let len = r.u32()? as usize;
    if len == 0 || len > 4096 {
        return r.fail(format!("block length {len}"));
    }
    let mut read = |n: usize| (0..n).map(|_| r.i64()).collect::<Result<Vec<_>>>();
    let w = read(len)?;
    let w_post = read(len)?;
    let fisher = read(len * len)?;
    r.finish()?;
    Ok(MerkleBlock { block, w, w_post, fisher })
}

fn encode_pedersen_block(b: &PedersenBlock) -> Vec<u8> {
    let mut out = Vec::new();
    put_u32(&mut out, b.block);
    put_u32(&mut out, b.delta.len() as u32);
    put_u32(&mut out, b.pruned_w.len() as u32);
    put_i64s(&mut out, &b.delta);
    put_i64s(&mut out, &b.pruned_w);
    for k in &b.kkt {
        for v in &k.s {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(k.blinding.as_bytes());
    }
    out.extend_from_slice(&b.rep.commitment.to_bytes());
    out.extend_from_slice(b.rep.z_blinding.as_bytes());
    for z in &b.rep.z {
        out.extend_from_slice(z.as_bytes());
    }
    out
}

fn read_scalar(r: &mut Reader) -> Result<Scalar> {
    let b: [u8; 32] = r.array()?;
    Option::from(Scalar::from_canonical_bytes(b)).ok_or_else(|| Error::format("proof block", "non-canonical scalar"))
}

fn decode_pedersen_block(bytes: &[u8], reps: usize) -> Result<PedersenBlock> {
    let mut r = Reader::new(bytes, "proof block");
    let block = r.u32()?;
    let len = r.u32()? as usize;
    let n_pruned = r.u32()? as usize;
    if len == 0 || len > 4096 || n_pruned > len {
        return r.fail(format!("block length {len} with {n_pruned} pruned"));
    }
    let delta = (0..len).map(|_| r.i64()).collect::<Result<Vec<_>>>()?;
    let pruned_w = (0..n_pruned).map(|_| r.i64()).collect::<Result<Vec<_>>>()?;
    let mut kkt = Vec::with_capacity(reps);
    for _ in 0..reps {
        let s = (0..len).map(|_| r.i128()).collect::<Result<Vec<_>>>()?;
        let blinding = read_scalar(&mut r)?;
        kkt.push(KktOpening { s, blinding });
    }
    let cb: [u8; 32] = r.array()?;
    let commitment = GroupElem::from_bytes(&cb).ok_or_else(|| Error::format("proof block", "invalid group element"))?;
    let z_blinding = read_scalar(&mut r)?;
    let z = (0..len - n_pruned).map(|_| read_scalar(&mut r)).collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok(PedersenBlock {
        block,
        delta,
        pruned_w,
        kkt,
        rep: RepresentationProof {
            commitment,
            z_blinding,
            z,
        },
    })
}
