//! SHA-256 Merkle tree over 8-byte leaves with multi-range frontier proofs.
//!
//! Leaf hash `H(0x00 ‖ leaf)`, node hash `H(0x01 ‖ left ‖ right)`; an unpaired
//! last node is promoted unchanged. Node `(level, i)` therefore covers leaves
//! `[i·2^level, min((i+1)·2^level, n))`, which lets the tree keep only levels
//! at or above [`CACHED_FROM`] and rebuild lower subtrees on demand.

use std::ops::Range;

use sha2::{Digest, Sha256};

pub type Hash = [u8; 32];

const CACHED_FROM: usize = 5;

pub fn leaf_hash(value: i64) -> Hash {
    Sha256::new().chain_update([0u8]).chain_update(value.to_le_bytes()).finalize().into()
}

pub fn node_hash(left: &Hash, right: &Hash) -> Hash {
    Sha256::new().chain_update([1u8]).chain_update(left).chain_update(right).finalize().into()
}

/// Root of a leaf slice under the promotion rule.
pub fn root_of(leaves: &[i64]) -> Hash {
    let mut level: Vec<Hash> = leaves.iter().map(|&v| leaf_hash(v)).collect();
    assert!(!level.is_empty(), "empty Merkle tree");
    while level.len() > 1 {
        level = parent_level(&level);
    }
    level[0]
}

fn parent_level(level: &[Hash]) -> Vec<Hash> {
    level
        .chunks(2)
        .map(|p| if p.len() == 2 { node_hash(&p[0], &p[1]) } else { p[0] })
        .collect()
}

fn level_len(n: usize, level: usize) -> usize {
    n.div_ceil(1 << level)
}

/// Number of levels above the leaves.
fn height(n: usize) -> usize {
    let mut h = 0;
    while level_len(n, h) > 1 {
        h += 1;
    }
    h
}

pub struct MerkleTree {
    leaves: Vec<i64>,
    /// `upper[k]` holds level `CACHED_FROM + k`.
    upper: Vec<Vec<Hash>>,
}

impl MerkleTree {
    pub fn new(leaves: Vec<i64>) -> Self {
        assert!(!leaves.is_empty(), "empty Merkle tree");
        let mut upper = vec![leaves.chunks(1 << CACHED_FROM).map(root_of).collect::<Vec<_>>()];
        while upper.last().unwrap().len() > 1 {
            let next = parent_level(upper.last().unwrap());
            upper.push(next);
        }
        Self { leaves, upper }
    }

    pub fn len(&self) -> usize {
        self.leaves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.leaves.is_empty()
    }

    pub fn root(&self) -> Hash {
        self.upper.last().unwrap()[0]
    }

    pub fn leaves(&self) -> &[i64] {
        &self.leaves
    }

    pub fn node(&self, level: usize, index: usize) -> Hash {
        if level >= CACHED_FROM {
            return self.upper[level - CACHED_FROM][index];
        }
        let start = index << level;
        let end = ((index + 1) << level).min(self.leaves.len());
        root_of(&self.leaves[start..end])
    }

    /// Sibling digests authenticating the given leaf ranges, in traversal order.
    pub fn frontier(&self, ranges: &[Range<usize>]) -> Vec<Hash> {
        let mut siblings = Vec::new();
        let known: Vec<(usize, Vec<Hash>)> = ranges
            .iter()
            .map(|r| (r.start, self.leaves[r.clone()].iter().map(|&v| leaf_hash(v)).collect()))
            .collect();
        let root = fold(self.len(), known, |level, index| {
            let h = self.node(level, index);
            siblings.push(h);
            Some(h)
        });
        debug_assert_eq!(root, Some(self.root()));
        siblings
    }
}

/// Recomputes the root of an `n`-leaf tree from known runs of leaf hashes and a
/// sibling source queried in canonical order. Runs must be sorted and disjoint.
/// Returns `None` if the source runs dry or the runs are malformed.
pub fn fold<F>(n: usize, runs: Vec<(usize, Vec<Hash>)>, mut sibling: F) -> Option<Hash>
where
    F: FnMut(usize, usize) -> Option<Hash>,
{
    let mut runs = merge(runs, n)?;
    for level in 0..height(n) {
        let len = level_len(n, level);
        let mut next = Vec::with_capacity(runs.len());
        for (start, mut hashes) in runs {
            let mut start = start;
            if start % 2 == 1 {
                hashes.insert(0, sibling(level, start - 1)?);
                start -= 1;
            }
            let end = start + hashes.len();
            if end % 2 == 1 && end < len {
                hashes.push(sibling(level, end)?);
            }
            next.push((start / 2, parent_level(&hashes)));
        }
        runs = merge(next, level_len(n, level + 1))?;
    }
    match runs.as_slice() {
        [(0, h)] if h.len() == 1 => Some(h[0]),
        _ => None,
    }
}

fn merge(runs: Vec<(usize, Vec<Hash>)>, len: usize) -> Option<Vec<(usize, Vec<Hash>)>> {
    let mut out: Vec<(usize, Vec<Hash>)> = Vec::with_capacity(runs.len());
    for (start, hashes) in runs {
        if hashes.is_empty() {
            continue;
        }
        if start + hashes.len() > len {
            return None;
        }
        match out.last_mut() {
            Some((s, h)) if *s + h.len() == start => h.extend(hashes),
            Some((s, h)) if *s + h.len() > start => return None,
            _ => out.push((start, hashes)),
        }
    }
    if out.is_empty() {
        return None;
    }
    Some(out)
}

/// Verifier side of [`MerkleTree::frontier`]: root implied by opened leaf
/// values and the supplied siblings, or `None` if the siblings do not fit.
/// Every sibling must be consumed.
pub fn root_from_openings(n: usize, openings: &[(usize, &[i64])], siblings: &[Hash]) -> Option<Hash> {
    let runs = openings
        .iter()
        .map(|(start, vals)| (*start, vals.iter().map(|&v| leaf_hash(v)).collect()))
        .collect();
    let mut it = siblings.iter();
    let root = fold(n, runs, |_, _| it.next().copied())?;
    it.next().is_none().then_some(root)
}
