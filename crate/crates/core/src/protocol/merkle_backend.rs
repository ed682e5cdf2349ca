use std::ops::Range;

use super::merkle::{root_from_openings, MerkleTree};
use super::{header_transcript, Commitment, MerkleBlock, Payload, Proof, PublicParams, Reject, RejectReason, Witness};
use crate::error::{Error, Result};
use crate::nn::Model;
use crate::numeric::{encode_slice, WEIGHT_FRAC_BITS};
use crate::obs::{adjust_block_fixed, FisherBlocks};
use crate::unlearn::PruneMask;

fn model_leaves(m: &Model) -> Result<Vec<i64>> {
    encode_slice(&m.params(), WEIGHT_FRAC_BITS)
}

fn fisher_leaves(fb: &FisherBlocks) -> Vec<i64> {
    (0..fb.partition().len()).flat_map(|b| fb.fixed(b).iter().copied()).collect()
}

pub(super) fn commit_model(m: &Model) -> Result<Commitment> {
    let leaves = model_leaves(m)?;
    Ok(Commitment::Merkle {
        leaves: leaves.len() as u64,
        root: MerkleTree::new(leaves).root(),
    })
}

pub(super) fn commit_fisher(fb: &FisherBlocks) -> Commitment {
    let leaves = fisher_leaves(fb);
    Commitment::Merkle {
        leaves: leaves.len() as u64,
        root: MerkleTree::new(leaves).root(),
    }
}

fn as_merkle(c: &Commitment) -> (u64, [u8; 32]) {
    match c {
        Commitment::Merkle { leaves, root } => (*leaves, *root),
        Commitment::Pedersen { .. } => unreachable!("backend checked by caller"),
    }
}

pub(super) fn prove(
    params: &PublicParams,
    com_p: &Commitment,
    com_h: &Commitment,
    mask: &PruneMask,
    w: &Witness,
) -> Result<(Proof, Commitment)> {
    let p = params.partition();
    let model = MerkleTree::new(model_leaves(w.pre)?);
    let fisher = MerkleTree::new(fisher_leaves(w.fisher));
    let (n, root) = as_merkle(com_p);
    if n as usize != model.len() || root != model.root() {
        return Err(Error::Inconsistent("com_P does not commit to the pre-update model".into()));
    }
    let (hn, hroot) = as_merkle(com_h);
    if hn as usize != fisher.len() || hroot != fisher.root() {
        return Err(Error::Inconsistent("com_H does not commit to the Fisher blocks".into()));
    }

    let offsets = params.fisher_offsets();
    let mut blocks = Vec::new();
    let mut model_ranges: Vec<Range<usize>> = Vec::new();
    let mut fisher_ranges: Vec<Range<usize>> = Vec::new();
    for bd in w.delta.blocks() {
        let blk = p.block(bd.block);
        let wv = model.leaves()[blk.range()].to_vec();
        let w_post = wv.iter().zip(&bd.delta_fx).map(|(a, d)| a + d).collect();
        let h = offsets[bd.block]..offsets[bd.block] + blk.len * blk.len;
        blocks.push(MerkleBlock {
            block: bd.block as u32,
            w: wv,
            w_post,
            fisher: fisher.leaves()[h.clone()].to_vec(),
        });
        model_ranges.push(blk.range());
        fisher_ranges.push(h);
    }

    let (model_siblings, fisher_siblings, com_p_post) = if blocks.is_empty() {
        (Vec::new(), Vec::new(), com_p.clone())
    } else {
        let ms = model.frontier(&model_ranges);
        let fs = fisher.frontier(&fisher_ranges);
        let openings: Vec<(usize, &[i64])> = blocks
            .iter()
            .map(|b| (p.block(b.block as usize).start, b.w_post.as_slice()))
            .collect();
        let post_root = root_from_openings(model.len(), &openings, &ms)
            .ok_or_else(|| Error::Inconsistent("frontier does not fit the updated blocks".into()))?;
        let post = Commitment::Merkle {
            leaves: model.len() as u64,
            root: post_root,
        };
        (ms, fs, post)
    };

    let t = header_transcript(params, super::Backend::Merkle, com_p, com_h, &com_p_post, mask);
    let proof = Proof {
        mask_digest: mask.digest(),
        header_digest: t.digest(),
        repetitions: 0,
        payload: Payload::Merkle {
            blocks,
            model_siblings,
            fisher_siblings,
        },
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
) -> std::result::Result<(), Reject> {
    let Payload::Merkle {
        blocks,
        model_siblings,
        fisher_siblings,
    } = &proof.payload
    else {
        unreachable!("backend checked by caller")
    };
    let malformed = |d: String| Reject::new(RejectReason::MalformedPayload, d);
    let p = params.partition();
    let (n, root) = as_merkle(com_p);
    let (n_post, root_post) = as_merkle(com_p_post);
    let (hn, hroot) = as_merkle(com_h);
    let offsets = params.fisher_offsets();
    let h_total: usize = p.blocks().iter().map(|b| b.len * b.len).sum();
    if n as usize != p.num_params() || n_post != n {
        return Err(malformed(format!("model commitments cover {n} and {n_post} leaves, expected {}", p.num_params())));
    }
    if hn as usize != h_total {
        return Err(malformed(format!("com_H covers {hn} leaves, expected {h_total}")));
    }
    if proof.repetitions != 0 {
        return Err(malformed("merkle proofs carry no repetitions".into()));
    }

    if blocks.is_empty() {
        if !model_siblings.is_empty() || !fisher_siblings.is_empty() {
            return Err(malformed("siblings without opened blocks".into()));
        }
        return if root_post == root {
            Ok(())
        } else {
            Err(Reject::new(RejectReason::BadPath, "empty update but com_P' differs from com_P"))
        };
    }

    for b in blocks {
        let len = p.block(b.block as usize).len;
        if b.w.len() != len || b.w_post.len() != len || b.fisher.len() != len * len {
            return Err(malformed(format!("block {} opening has the wrong length", b.block)));
        }
    }
    let starts: Vec<usize> = blocks.iter().map(|b| p.block(b.block as usize).start).collect();
    let pre: Vec<(usize, &[i64])> = blocks.iter().zip(&starts).map(|(b, &s)| (s, b.w.as_slice())).collect();
    let post: Vec<(usize, &[i64])> = blocks.iter().zip(&starts).map(|(b, &s)| (s, b.w_post.as_slice())).collect();
    if root_from_openings(n as usize, &pre, model_siblings) != Some(root) {
        return Err(Reject::new(RejectReason::BadPath, "pre-update openings do not authenticate against com_P"));
    }
    if root_from_openings(n as usize, &post, model_siblings) != Some(root_post) {
        return Err(Reject::new(RejectReason::BadPath, "updated openings do not authenticate against com_P'"));
    }
    let fis: Vec<(usize, &[i64])> = blocks
        .iter()
        .map(|b| (offsets[b.block as usize], b.fisher.as_slice()))
        .collect();
    if root_from_openings(hn as usize, &fis, fisher_siblings) != Some(hroot) {
        return Err(Reject::new(RejectReason::BadPath, "Fisher openings do not authenticate against com_H"));
    }

    for b in blocks {
        let id = b.block as usize;
        let pruned = p.local_pruned(id, mask);
        if let Some(&k) = pruned.iter().find(|&&k| b.w_post[k] != 0) {
            return Err(Reject::new(
                RejectReason::PinningViolation,
                format!("block {id} position {k} is {} after the update", b.w_post[k]),
            ));
        }
        let delta = adjust_block_fixed(id, &b.w, &b.fisher, &pruned).map_err(|e| match e {
            Error::ResidualExceeded { .. } => Reject::new(RejectReason::ResidualExceeded, e.to_string()),
            other => Reject::new(RejectReason::RecomputationMismatch, format!("block {id}: {other}")),
        })?;
        if let Some(k) = (0..delta.len()).find(|&k| b.w[k].checked_add(delta[k]) != Some(b.w_post[k])) {
            return Err(Reject::new(
                RejectReason::RecomputationMismatch,
                format!("block {id} position {k}: committed update differs from the recomputed one"),
            ));
        }
    }
    Ok(())
}
