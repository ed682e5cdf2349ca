use curve25519_dalek::scalar::Scalar;
use rayon::prelude::*;
use sha2::{Digest, Sha512};

use super::{
    header_transcript, Backend, Commitment, KktOpening, Openings, Payload, PedersenBlock, Proof, PublicParams, Reject,
    RejectReason, RepresentationProof, Witness, CHALLENGE_BOUND,
};
use crate::error::{Error, Result};
use crate::nn::Model;
use crate::numeric::transcript::frame;
use crate::numeric::{encode_slice, in_range, scalar_from_i128, scalar_from_i64, GroupElem, Transcript, WEIGHT_FRAC_BITS};
use crate::obs::{FisherBlocks, RESIDUAL_TOLERANCE_FX};
use crate::unlearn::PruneMask;

/// Scalar from a 512-bit hash of labelled parts.
fn wide_scalar(parts: &[(&str, &[u8])]) -> Scalar {
    let mut h = Sha512::new();
    for (label, data) in parts {
        h.update(frame(label, data));
    }
    Scalar::from_bytes_mod_order_wide(&h.finalize().into())
}

fn blinding(openings: &Openings, label: &str, index: usize) -> Scalar {
    wide_scalar(&[
        ("edge-unlearn/blinding", openings.seed()),
        (label, &(index as u64).to_le_bytes()),
    ])
}

fn model_blinding(openings: &Openings, block: usize) -> Scalar {
    blinding(openings, "model", block)
}

fn row_blinding(openings: &Openings, row: usize) -> Scalar {
    blinding(openings, "fisher", row)
}

fn elems(c: &Commitment) -> &[GroupElem] {
    match c {
        Commitment::Pedersen { elems } => elems,
        Commitment::Merkle { .. } => unreachable!("backend checked by caller"),
    }
}

fn model_block_commitments(params: &PublicParams, w_fx: &[i64], openings: &Openings) -> Vec<GroupElem> {
    let gens = params.generators();
    params
        .partition()
        .blocks()
        .par_iter()
        .enumerate()
        .map(|(id, b)| gens.commit(&w_fx[b.range()], &model_blinding(openings, id)))
        .collect()
}

pub(super) fn commit_model(params: &PublicParams, m: &Model, openings: &Openings) -> Result<Commitment> {
    let w_fx = encode_slice(&m.params(), WEIGHT_FRAC_BITS)?;
    Ok(Commitment::Pedersen {
        elems: model_block_commitments(params, &w_fx, openings),
    })
}

fn row_commitments(params: &PublicParams, fb: &FisherBlocks, block: usize, openings: &Openings) -> Vec<GroupElem> {
    let gens = params.generators();
    let b = params.partition().block(block);
    fb.fixed(block)
        .chunks(b.len)
        .enumerate()
        .map(|(i, row)| gens.commit(row, &row_blinding(openings, b.start + i)))
        .collect()
}

pub(super) fn commit_fisher(params: &PublicParams, fb: &FisherBlocks, openings: &Openings) -> Commitment {
    let per_block: Vec<Vec<GroupElem>> = (0..params.partition().len())
        .into_par_iter()
        .map(|b| row_commitments(params, fb, b, openings))
        .collect();
    Commitment::Pedersen {
        elems: per_block.concat(),
    }
}

/// KKT challenge for one repetition, zeroed on pruned positions.
fn kkt_challenge(t: &mut Transcript, len: usize, pruned: &[usize]) -> Vec<u64> {
    let mut r = t.challenge_ints("kkt", len, CHALLENGE_BOUND);
    for &k in pruned {
        r[k] = 0;
    }
    r
}

fn absorb_block(t: &mut Transcript, b: &PedersenBlock) {
    t.absorb("block", &b.block.to_le_bytes());
    t.absorb("delta", &i64_bytes(&b.delta));
    t.absorb("pruned_w", &i64_bytes(&b.pruned_w));
}

fn absorb_kkt(t: &mut Transcript, k: &KktOpening) {
    let mut bytes = Vec::with_capacity(16 * k.s.len() + 32);
    for v in &k.s {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes.extend_from_slice(k.blinding.as_bytes());
    t.absorb("kkt_opening", &bytes);
}

fn i64_bytes(vs: &[i64]) -> Vec<u8> {
    vs.iter().flat_map(|v| v.to_le_bytes()).collect()
}

struct BlockWitness {
    id: usize,
    pruned: Vec<usize>,
    w: Vec<i64>,
    fisher: Vec<i64>,
    blinding: Scalar,
}

pub(super) fn prove(
    params: &PublicParams,
    com_p: &Commitment,
    com_h: &Commitment,
    mask: &PruneMask,
    wit: &Witness,
) -> Result<(Proof, Commitment)> {
    let p = params.partition();
    let gens = params.generators();
    let (cp, ch) = (elems(com_p), elems(com_h));
    if cp.len() != p.len() || ch.len() != p.num_params() {
        return Err(Error::Inconsistent("commitment sizes do not match the block partition".into()));
    }
    let w_all = encode_slice(&wit.pre.params(), WEIGHT_FRAC_BITS)?;

    let mut blocks = Vec::new();
    let mut secrets = Vec::new();
    let mut post = cp.to_vec();
    for bd in wit.delta.blocks() {
        let id = bd.block;
        let blk = p.block(id);
        let w = w_all[blk.range()].to_vec();
        let r_b = model_blinding(wit.openings, id);
        if gens.commit(&w, &r_b) != cp[id] {
            return Err(Error::Inconsistent(format!("com_P block {id} does not open to the pre-update model")));
        }
        if row_commitments(params, wit.fisher, id, wit.openings)[..] != ch[blk.range()] {
            return Err(Error::Inconsistent(format!("com_H rows of block {id} do not open to the Fisher block")));
        }
        let w_post: Vec<i64> = w.iter().zip(&bd.delta_fx).map(|(a, d)| a + d).collect();
        post[id] = gens.commit(&w_post, &r_b);
        let pruned = p.local_pruned(id, mask);
        blocks.push(PedersenBlock {
            block: id as u32,
            delta: bd.delta_fx.clone(),
            pruned_w: pruned.iter().map(|&k| w[k]).collect(),
            kkt: Vec::new(),
            rep: RepresentationProof {
                commitment: GroupElem::identity(),
                z_blinding: Scalar::ZERO,
                z: Vec::new(),
            },
        });
        secrets.push(BlockWitness {
            id,
            pruned,
            w,
            fisher: wit.fisher.fixed(id).to_vec(),
            blinding: r_b,
        });
    }
    let com_p_post = Commitment::Pedersen { elems: post };

    let mut t = header_transcript(params, Backend::Pedersen, com_p, com_h, &com_p_post, mask);
    let header_digest = t.digest();
    for b in &blocks {
        absorb_block(&mut t, b);
    }
    for (b, s) in blocks.iter_mut().zip(&secrets) {
        let len = s.w.len();
        let start = p.block(s.id).start;
        for _ in 0..params.repetitions() {
            let r = kkt_challenge(&mut t, len, &s.pruned);
            let mut proj = vec![0i128; len];
            let mut rho = Scalar::ZERO;
            for (row, &rr) in r.iter().enumerate() {
                if rr == 0 {
                    continue;
                }
                for (acc, &f) in proj.iter_mut().zip(&s.fisher[row * len..(row + 1) * len]) {
                    *acc += rr as i128 * f as i128;
                }
                rho += Scalar::from(rr) * row_blinding(wit.openings, start + row);
            }
            let k = KktOpening { s: proj, blinding: rho };
            absorb_kkt(&mut t, &k);
            b.kkt.push(k);
        }
    }

    // Representation proofs over h and the unpruned generators.
    let nonce_seed = t.digest();
    let mut nonces = Vec::with_capacity(secrets.len());
    for (b, s) in blocks.iter_mut().zip(&secrets) {
        let free: Vec<usize> = (0..s.w.len()).filter(|k| !s.pruned.contains(k)).collect();
        let nonce = |i: usize| {
            wide_scalar(&[
                ("edge-unlearn/nonce", wit.openings.seed()),
                ("transcript", &nonce_seed),
                ("block", &(s.id as u64).to_le_bytes()),
                ("index", &(i as u64).to_le_bytes()),
            ])
        };
        let a_r = nonce(usize::MAX);
        let a: Vec<Scalar> = free.iter().map(|&k| nonce(k)).collect();
        let mut scalars = a.clone();
        let mut points: Vec<GroupElem> = free.iter().map(|&k| gens.g[k]).collect();
        scalars.push(a_r);
        points.push(gens.h);
        b.rep.commitment = GroupElem::multiscalar_mul(&scalars, &points);
        nonces.push((a_r, a, free));
    }
    for b in &blocks {
        t.absorb("rep_commit", &b.rep.commitment.to_bytes());
    }
    let c = t.challenge_scalar("rep_challenge");
    for ((b, s), (a_r, a, free)) in blocks.iter_mut().zip(&secrets).zip(nonces) {
        b.rep.z_blinding = a_r + c * s.blinding;
        b.rep.z = a.iter().zip(&free).map(|(a, &k)| a + c * scalar_from_i64(s.w[k])).collect();
    }

    let proof = Proof {
        mask_digest: mask.digest(),
        header_digest,
        repetitions: params.repetitions(),
        payload: Payload::Pedersen { blocks },
    };
    Ok((proof, com_p_post))
}

pub(super) fn verify(
    params: &PublicParams,
    com_p: &Commitment,
    com_p_post: &Commitment,
    com_h: &Commitment,
    mask: &PruneMask,
    proof: &Proof,
    mut t: Transcript,
) -> std::result::Result<(), Reject> {
    let Payload::Pedersen { blocks } = &proof.payload else {
        unreachable!("backend checked by caller")
    };
    let malformed = |d: String| Reject::new(RejectReason::MalformedPayload, d);
    let p = params.partition();
    let gens = params.generators();
    let (cp, cq, ch) = (elems(com_p), elems(com_p_post), elems(com_h));
    if cp.len() != p.len() || cq.len() != p.len() || ch.len() != p.num_params() {
        return Err(malformed("commitment sizes do not match the block partition".into()));
    }
    let reps = params.repetitions();
    if proof.repetitions != reps {
        return Err(malformed(format!("proof has {} repetitions, expected {reps}", proof.repetitions)));
    }

    let mut pruned_sets = Vec::with_capacity(blocks.len());
    for b in blocks {
        let id = b.block as usize;
        let len = p.block(id).len;
        let pruned = p.local_pruned(id, mask);
        if b.delta.len() != len
            || b.pruned_w.len() != pruned.len()
            || b.kkt.len() != reps as usize
            || b.kkt.iter().any(|k| k.s.len() != len)
            || b.rep.z.len() != len - pruned.len()
        {
            return Err(malformed(format!("block {id} payload has the wrong shape")));
        }
        if !b.delta.iter().chain(&b.pruned_w).all(|&v| in_range(v)) {
            return Err(malformed(format!("block {id} carries values outside the fixed-point range")));
        }
        pruned_sets.push(pruned);
    }

    // com_P' = com_P + δ on touched blocks, unchanged elsewhere.
    let mut next = blocks.iter().peekable();
    for id in 0..p.len() {
        let expect = match next.next_if(|b| b.block as usize == id) {
            Some(b) => {
                let len = b.delta.len();
                let scalars: Vec<Scalar> = b.delta.iter().map(|&d| scalar_from_i64(d)).collect();
                cp[id].add(&GroupElem::multiscalar_mul(&scalars, &gens.g[..len]))
            }
            None => cp[id],
        };
        if cq[id] != expect {
            return Err(Reject::new(
                RejectReason::HomomorphismMismatch,
                format!("com_P' block {id} is not com_P block {id} plus the revealed update"),
            ));
        }
    }

    for (b, pruned) in blocks.iter().zip(&pruned_sets) {
        for (&k, &w) in pruned.iter().zip(&b.pruned_w) {
            if b.delta[k] != -w {
                return Err(Reject::new(
                    RejectReason::PinningViolation,
                    format!("block {} position {k}: delta {} does not cancel weight {w}", b.block, b.delta[k]),
                ));
            }
        }
    }

    for b in blocks {
        absorb_block(&mut t, b);
    }
    for (b, pruned) in blocks.iter().zip(&pruned_sets) {
        let id = b.block as usize;
        let blk = p.block(id);
        let rows = &ch[blk.range()];
        let tau = blk.len as i128 * CHALLENGE_BOUND as i128 * RESIDUAL_TOLERANCE_FX;
        for (j, k) in b.kkt.iter().enumerate() {
            let r = kkt_challenge(&mut t, blk.len, pruned);
            // Σ r_row C_row − Σ s_k g_k − ρ h must vanish.
            let mut scalars: Vec<Scalar> = r.iter().map(|&v| Scalar::from(v)).collect();
            let mut points: Vec<GroupElem> = rows.to_vec();
            scalars.extend(k.s.iter().map(|&v| -scalar_from_i128(v)));
            points.extend_from_slice(&gens.g[..blk.len]);
            scalars.push(-k.blinding);
            points.push(gens.h);
            if GroupElem::multiscalar_mul(&scalars, &points) != GroupElem::identity() {
                return Err(Reject::new(
                    RejectReason::BadOpening,
                    format!("block {id} repetition {j}: projection does not open the aggregated row commitment"),
                ));
            }
            absorb_kkt(&mut t, k);
            let dot = k
                .s
                .iter()
                .zip(&b.delta)
                .try_fold(0i128, |acc, (&s, &d)| s.checked_mul(d as i128).and_then(|v| acc.checked_add(v)));
            match dot {
                Some(v) if v.abs() <= tau => {}
                Some(v) => {
                    return Err(Reject::new(
                        RejectReason::ResidualExceeded,
                        format!("block {id} repetition {j}: |<s, delta>| = {} > {tau}", v.abs()),
                    ))
                }
                None => {
                    return Err(Reject::new(
                        RejectReason::ResidualExceeded,
                        format!("block {id} repetition {j}: <s, delta> overflows"),
                    ))
                }
            }
        }
    }

    for b in blocks {
        t.absorb("rep_commit", &b.rep.commitment.to_bytes());
    }
    let c = t.challenge_scalar("rep_challenge");
    for (b, pruned) in blocks.iter().zip(&pruned_sets) {
        let id = b.block as usize;
        let len = p.block(id).len;
        // z_r h + Σ_free z_k g_k − A − c (C_b − Σ_P w_p g_p) must vanish.
        let mut scalars = vec![b.rep.z_blinding, -Scalar::ONE, -c];
        let mut points = vec![gens.h, b.rep.commitment, cp[id]];
        let mut z = b.rep.z.iter();
        let mut pw = b.pruned_w.iter();
        for k in 0..len {
            if pruned.contains(&k) {
                scalars.push(c * scalar_from_i64(*pw.next().unwrap()));
            } else {
                scalars.push(*z.next().unwrap());
            }
            points.push(gens.g[k]);
        }
        if GroupElem::multiscalar_mul(&scalars, &points) != GroupElem::identity() {
            return Err(Reject::new(
                RejectReason::BadOpening,
                format!("block {id}: pruned weights are not openings of com_P"),
            ));
        }
    }
    Ok(())
}
