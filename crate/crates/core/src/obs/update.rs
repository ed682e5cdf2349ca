use super::fisher::FisherBlocks;
use super::partition::BlockPartition;
use super::solve::adjust_block_fixed;
use crate::error::{Error, Result};
use crate::nn::Model;
use crate::numeric::{decode_raw, decode_slice, encode_slice, WEIGHT_FRAC_BITS};
use crate::unlearn::PruneMask;

/// Weight update restricted to touched blocks, held as fixed-point integers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UpdateVector {
    blocks: Vec<BlockDelta>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockDelta {
    pub block: usize,
    pub delta_fx: Vec<i64>,
}

impl BlockDelta {
    pub fn delta(&self) -> Vec<f64> {
        decode_slice(&self.delta_fx, WEIGHT_FRAC_BITS)
    }
}

impl UpdateVector {
    pub fn blocks(&self) -> &[BlockDelta] {
        &self.blocks
    }

    pub fn block(&self, id: usize) -> Option<&BlockDelta> {
        self.blocks
            .binary_search_by_key(&id, |b| b.block)
            .ok()
            .map(|i| &self.blocks[i])
    }

    pub fn is_zero(&self) -> bool {
        self.blocks.iter().all(|b| b.delta_fx.iter().all(|&v| v == 0))
    }

    /// Full-length real update; zero outside touched blocks.
    pub fn dense(&self, p: &BlockPartition) -> Vec<f64> {
        let mut out = vec![0.0; p.num_params()];
        for b in &self.blocks {
            let start = p.block(b.block).start;
            for (k, &v) in b.delta_fx.iter().enumerate() {
                out[start + k] = decode_raw(v, WEIGHT_FRAC_BITS);
            }
        }
        out
    }

    /// Recovers the update from a model pair produced by [`unlearn_update`].
    ///
    /// Fails unless every untouched block is bit-identical and every touched
    /// block of `post` is exactly representable at [`WEIGHT_FRAC_BITS`].
    pub fn from_models(pre: &Model, post: &Model, p: &BlockPartition, mask: &PruneMask) -> Result<Self> {
        if pre.architecture() != post.architecture() || !p.matches(pre.architecture()) {
            return Err(Error::Inconsistent("models and partition disagree on architecture".into()));
        }
        let (a, b) = (pre.params(), post.params());
        let touched = p.touched(mask)?;
        let mut blocks = Vec::with_capacity(touched.len());
        let mut next = touched.iter().peekable();
        for (id, blk) in p.blocks().iter().enumerate() {
            let r = blk.range();
            if next.peek() == Some(&&id) {
                next.next();
                let w = encode_slice(&a[r.clone()], WEIGHT_FRAC_BITS)?;
                let w2 = encode_slice(&b[r.clone()], WEIGHT_FRAC_BITS)?;
                if decode_slice(&w2, WEIGHT_FRAC_BITS) != b[r.clone()] {
                    return Err(Error::Inconsistent(format!("block {id} of the updated model is not on the fixed-point grid")));
                }
                let delta_fx = w.iter().zip(&w2).map(|(x, y)| y - x).collect();
                blocks.push(BlockDelta { block: id, delta_fx });
            } else if a[r.clone()].iter().zip(&b[r]).any(|(x, y)| x.to_bits() != y.to_bits()) {
                return Err(Error::Inconsistent(format!("untouched block {id} differs between models")));
            }
        }
        Ok(Self { blocks })
    }
}

/// Applies block-wise OBS compensation for a mask.
///
/// Touched blocks become `decode(w_fx + δ_fx)` (masked coordinates land on
/// exactly `0.0`); every other parameter is bit-identical to `m`.
pub fn unlearn_update(m: &Model, fb: &FisherBlocks, mask: &PruneMask) -> Result<(Model, UpdateVector)> {
    let p = fb.partition();
    if !p.matches(m.architecture()) {
        return Err(Error::Inconsistent("Fisher partition does not match the model".into()));
    }
    let mut params = m.params();
    let mut blocks = Vec::new();
    for id in p.touched(mask)? {
        let r = p.block(id).range();
        let w_fx = encode_slice(&params[r.clone()], WEIGHT_FRAC_BITS).map_err(|e| offset_range(e, r.start))?;
        let pruned = p.local_pruned(id, mask);
        let delta_fx = adjust_block_fixed(id, &w_fx, fb.fixed(id), &pruned)?;
        for (k, (w, d)) in w_fx.iter().zip(&delta_fx).enumerate() {
            params[r.start + k] = decode_raw(w + d, WEIGHT_FRAC_BITS);
        }
        blocks.push(BlockDelta { block: id, delta_fx });
    }
    Ok((Model::from_params(m.architecture().clone(), &params)?, UpdateVector { blocks }))
}

fn offset_range(e: Error, start: usize) -> Error {
    match e {
        Error::Range { coordinate, value, frac_bits, range_bits } => Error::Range {
            coordinate: coordinate + start,
            value,
            frac_bits,
            range_bits,
        },
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Architecture, Dataset, Role, Sample};
    use crate::obs::{fisher_blocks, make_partition, obs_adjust, quadratic_value, Damping};
    use crate::unlearn::{apply_mask, MaskScope};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup(dims: &[usize], bs: usize, seed: u64) -> (Model, FisherBlocks) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = Model::random(Architecture::mlp(dims).unwrap(), &mut rng);
        let classes = *dims.last().unwrap();
        let samples = (0..30)
            .map(|i| Sample { x: (0..dims[0]).map(|_| rng.gen_range(-1.0..1.0)).collect(), y: i % classes })
            .collect();
        let d = Dataset::new(samples, classes, Role::Personal).unwrap();
        let p = make_partition(m.architecture(), bs).unwrap();
        let fb = fisher_blocks(&m, &d, &p, Damping::Fixed(0.05)).unwrap();
        (m, fb)
    }

    #[test]
    fn empty_mask_is_identity() {
        let (m, fb) = setup(&[3, 4, 2], 4, 1);
        let (out, delta) = unlearn_update(&m, &fb, &PruneMask::empty()).unwrap();
        assert_eq!(out.to_bytes(), m.to_bytes());
        assert!(delta.blocks().is_empty() && delta.is_zero());
    }

    #[test]
    fn pins_and_leaves_untouched_blocks() {
        let (m, fb) = setup(&[5, 6, 4, 3], 4, 2);
        let arch = m.architecture().clone();
        let mask = PruneMask::from_neurons(&arch, vec![(0, 2), (1, 3)], MaskScope::WithOutgoing, 0.2, 1e-6).unwrap();
        let (out, delta) = unlearn_update(&m, &fb, &mask).unwrap();
        let p = fb.partition();
        let touched = p.touched(&mask).unwrap();
        let (a, b) = (m.params(), out.params());
        for &c in mask.coords() {
            assert_eq!(b[c as usize].to_bits(), 0.0f64.to_bits());
        }
        for (id, blk) in p.blocks().iter().enumerate() {
            if !touched.contains(&id) {
                assert!(blk.range().all(|i| a[i].to_bits() == b[i].to_bits()));
            }
        }
        assert_eq!(delta.blocks().iter().map(|d| d.block).collect::<Vec<_>>(), touched);
        assert_eq!(UpdateVector::from_models(&m, &out, p, &mask).unwrap(), delta);
        // the masked model still differs from a pure mask on unpruned coordinates
        assert_ne!(out, apply_mask(&m, &mask).unwrap());
    }

    #[test]
    fn equals_per_block_composition() {
        let (m, fb) = setup(&[4, 5, 3], 6, 3);
        let arch = m.architecture().clone();
        let mask = PruneMask::from_neurons(&arch, vec![(0, 1), (0, 4)], MaskScope::WithOutgoing, 0.4, 1e-6).unwrap();
        let (out, _) = unlearn_update(&m, &fb, &mask).unwrap();
        let p = fb.partition();
        let mut expect = m.params();
        for (id, blk) in p.blocks().iter().enumerate() {
            let pruned: Vec<usize> = blk.range().filter(|&i| mask.contains(i)).map(|i| i - blk.start).collect();
            if pruned.is_empty() {
                continue;
            }
            let w = &expect[blk.range()];
            let d = obs_adjust(w, fb.dense(id), &pruned).unwrap();
            for (k, v) in d.iter().enumerate() {
                expect[blk.start + k] += v;
            }
        }
        for (i, (got, want)) in out.params().iter().zip(&expect).enumerate() {
            // rounding to 24 fractional bits on touched blocks only
            assert!((got - want).abs() <= 2.0f64.powi(-23), "param {i}: {got} vs {want}");
        }
    }

    #[test]
    fn obs_beats_naive_mask_on_coupled_blocks() {
        let (m, fb) = setup(&[6, 8, 3], 8, 4);
        let arch = m.architecture().clone();
        let mask = PruneMask::from_neurons(&arch, vec![(0, 3)], MaskScope::WithOutgoing, 0.1, 1e-6).unwrap();
        let (_, delta) = unlearn_update(&m, &fb, &mask).unwrap();
        let p = fb.partition();
        let w = m.params();
        for bd in delta.blocks() {
            let blk = p.block(bd.block);
            let pruned = p.local_pruned(bd.block, &mask);
            if pruned.len() == blk.len {
                continue;
            }
            let naive: Vec<f64> = (0..blk.len).map(|k| if pruned.contains(&k) { -w[blk.start + k] } else { 0.0 }).collect();
            let (a, b) = (quadratic_value(fb.dense(bd.block), &bd.delta()), quadratic_value(fb.dense(bd.block), &naive));
            // zero-initialized biases give nothing to compensate
            if b > 0.0 {
                assert!(a < b, "block {}: {a} vs naive {b}", bd.block);
            }
        }
    }

    #[test]
    fn rejects_tampered_models() {
        let (m, fb) = setup(&[3, 4, 2], 4, 5);
        let mask = PruneMask::from_neurons(m.architecture(), vec![(0, 0)], MaskScope::WithOutgoing, 0.25, 1e-6).unwrap();
        let (mut out, _) = unlearn_update(&m, &fb, &mask).unwrap();
        let p = fb.partition().clone();
        let last = m.num_params() - 1;
        *out.param_mut(last).unwrap() += 1e-3;
        assert!(UpdateVector::from_models(&m, &out, &p, &mask).is_err());
        let wrong = make_partition(&Architecture::mlp(&[3, 5, 2]).unwrap(), 4).unwrap();
        assert!(UpdateVector::from_models(&m, &m, &wrong, &mask).is_err());
    }
}
