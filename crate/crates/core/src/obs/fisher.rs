use std::fs;
use std::path::Path;

use super::partition::BlockPartition;
use crate::codec::{put_i64s, put_u32, put_u64, Reader};
use crate::error::{Error, Result};
use crate::nn::{Dataset, Model};
use crate::numeric::{decode_slice, in_range, FISHER_FRAC_BITS};

/// Damping added to every Fisher diagonal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Damping {
    Fixed(f64),
    /// `1e-3 * mean(undamped diagonal)` of each layer, floored at `1e-6`.
    Auto,
}

pub const AUTO_DAMPING_SCALE: f64 = 1e-3;
pub const AUTO_DAMPING_FLOOR: f64 = 1e-6;

/// Damped empirical Fisher restricted to the blocks of a partition.
///
/// `dense[b]` is always the exact decoding of `fixed[b]`, so the committed
/// integers and the matrix the solver sees are the same object.
#[derive(Clone, Debug, PartialEq)]
pub struct FisherBlocks {
    partition: BlockPartition,
    lambdas: Vec<f64>,
    samples: u64,
    dense: Vec<Vec<f64>>,
    fixed: Vec<Vec<i64>>,
}

/// Damped empirical Fisher blocks in `f64`, row-major and symmetric, with the
/// per-layer damping used. [`fisher_blocks`] is this followed by quantization.
pub fn damped_fisher(m: &Model, d: &Dataset, p: &BlockPartition, damping: Damping) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    if d.is_empty() {
        return Err(Error::EmptyDataset(" (Fisher estimation)"));
    }
    if !p.matches(m.architecture()) {
        return Err(Error::Inconsistent("partition does not match the model architecture".into()));
    }
    if let Damping::Fixed(l) = damping {
        if !(l > 0.0 && l.is_finite()) {
            return Err(Error::InvalidArgument(format!("damping must be > 0, got {l}")));
        }
    }

    // Upper triangles of Σ g gᵀ, accumulated sample by sample.
    let mut acc: Vec<Vec<f64>> = p.blocks().iter().map(|b| vec![0.0; b.len * b.len]).collect();
    for s in d.samples() {
        let (_, g) = m.backward(&s.x, s.y)?;
        for (b, a) in p.blocks().iter().zip(acc.iter_mut()) {
            let gb = &g[b.range()];
            for (i, &gi) in gb.iter().enumerate() {
                if gi == 0.0 {
                    continue;
                }
                let row = &mut a[i * b.len..(i + 1) * b.len];
                for j in i..b.len {
                    row[j] += gi * gb[j];
                }
            }
        }
    }

    let n = d.len() as f64;
    let lambdas: Vec<f64> = (0..p.num_layers())
        .map(|l| match damping {
            Damping::Fixed(v) => v,
            Damping::Auto => {
                let (mut sum, mut count) = (0.0, 0usize);
                for (b, a) in p.blocks().iter().zip(&acc).filter(|(b, _)| b.layer == l) {
                    sum += (0..b.len).map(|i| a[i * b.len + i]).sum::<f64>();
                    count += b.len;
                }
                (AUTO_DAMPING_SCALE * sum / n / count as f64).max(AUTO_DAMPING_FLOOR)
            }
        })
        .collect();

    for (b, a) in p.blocks().iter().zip(acc.iter_mut()) {
        let len = b.len;
        for i in 0..len {
            for j in i..len {
                let v = a[i * len + j] / n + if i == j { lambdas[b.layer] } else { 0.0 };
                a[i * len + j] = v;
                a[j * len + i] = v;
            }
        }
    }
    Ok((acc, lambdas))
}

pub fn fisher_blocks(m: &Model, d: &Dataset, p: &BlockPartition, damping: Damping) -> Result<FisherBlocks> {
    let (real, lambdas) = damped_fisher(m, d, p, damping)?;
    let mut fixed = Vec::with_capacity(p.len());
    for (b, a) in p.blocks().iter().zip(&real) {
        let len = b.len;
        let mut out: Vec<i64> = a
            .iter()
            .map(|&v| (v * (1u64 << FISHER_FRAC_BITS) as f64).round_ties_even() as i64)
            .collect();
        // Entry-wise rounding moves eigenvalues by at most len/2 units;
        // the margin keeps the quantized block at least as damped as the real one.
        for i in 0..len {
            out[i * len + i] += len.div_ceil(2) as i64;
        }
        if let Some(pos) = out.iter().position(|&v| !in_range(v)) {
            return Err(Error::Range {
                coordinate: b.start + pos / len,
                value: a[pos],
                frac_bits: FISHER_FRAC_BITS,
                range_bits: crate::numeric::RANGE_BITS,
            });
        }
        fixed.push(out);
    }
    Ok(FisherBlocks::from_parts(p.clone(), lambdas, d.len() as u64, fixed))
}

impl FisherBlocks {
    fn from_parts(partition: BlockPartition, lambdas: Vec<f64>, samples: u64, fixed: Vec<Vec<i64>>) -> Self {
        let dense = fixed.iter().map(|f| decode_slice(f, FISHER_FRAC_BITS)).collect();
        Self {
            partition,
            lambdas,
            samples,
            dense,
            fixed,
        }
    }

    pub fn partition(&self) -> &BlockPartition {
        &self.partition
    }

    /// Damping applied to each layer.
    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn lambda(&self, block: usize) -> f64 {
        self.lambdas[self.partition.block(block).layer]
    }

    pub fn samples(&self) -> u64 {
        self.samples
    }

    /// Row-major `len × len` block in real units.
    pub fn dense(&self, block: usize) -> &[f64] {
        &self.dense[block]
    }

    /// Row-major fixed-point image at [`FISHER_FRAC_BITS`].
    pub fn fixed(&self, block: usize) -> &[i64] {
        &self.fixed[block]
    }

    /// `UFSH` file bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(b"UFSH");
        put_u32(&mut out, FISHER_VERSION);
        self.partition.write(&mut out);
        put_u32(&mut out, self.lambdas.len() as u32);
        for l in &self.lambdas {
            out.extend_from_slice(&l.to_le_bytes());
        }
        put_u64(&mut out, self.samples);
        for ((b, dense), fixed) in self.partition.blocks().iter().zip(&self.dense).zip(&self.fixed) {
            put_u32(&mut out, b.len as u32);
            for v in dense {
                out.extend_from_slice(&v.to_le_bytes());
            }
            put_i64s(&mut out, fixed);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "fisher");
        r.expect_magic(b"UFSH")?;
        let version = r.u32()?;
        if version != FISHER_VERSION {
            return r.fail(format!("unsupported version {version}"));
        }
        let partition = BlockPartition::read(&mut r)?;
        let n_lambdas = r.count(8)?;
        if n_lambdas != partition.num_layers() {
            return r.fail(format!("{n_lambdas} damping values for {} layers", partition.num_layers()));
        }
        let lambdas = (0..n_lambdas).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let samples = r.u64()?;
        let mut fixed = Vec::with_capacity(partition.len());
        for b in partition.blocks() {
            let len = r.u32()? as usize;
            if len != b.len {
                return r.fail(format!("block at {} has length {len}, expected {}", b.start, b.len));
            }
            let dense = (0..len * len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            let ints = (0..len * len).map(|_| r.i64()).collect::<Result<Vec<_>>>()?;
            if decode_slice(&ints, FISHER_FRAC_BITS) != dense {
                return r.fail(format!("block at {}: real entries disagree with the fixed-point image", b.start));
            }
            if ints.iter().any(|&v| !in_range(v)) {
                return r.fail(format!("block at {}: fixed-point entry out of range", b.start));
            }
            for i in 0..len {
                for j in 0..i {
                    if ints[i * len + j] != ints[j * len + i] {
                        return r.fail(format!("block at {} is not symmetric", b.start));
                    }
                }
            }
            fixed.push(ints);
        }
        r.finish()?;
        Ok(Self::from_parts(partition, lambdas, samples, fixed))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Replaces one block's fixed-point image; used to build tampered inputs.
    #[doc(hidden)]
    pub fn with_block(mut self, block: usize, fixed: Vec<i64>) -> Self {
        self.dense[block] = decode_slice(&fixed, FISHER_FRAC_BITS);
        self.fixed[block] = fixed;
        self
    }
}

const FISHER_VERSION: u32 = 1;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Architecture, Role, Sample};
    use crate::obs::make_partition;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const UNIT: f64 = 1.0 / (1u64 << FISHER_FRAC_BITS) as f64;

    fn random_setup(dims: &[usize], n: usize, seed: u64) -> (Model, Dataset) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = Architecture::mlp(dims).unwrap();
        let m = Model::random(arch, &mut rng);
        let classes = *dims.last().unwrap();
        let samples = (0..n)
            .map(|i| Sample { x: (0..dims[0]).map(|_| rng.gen_range(-1.0..1.0)).collect(), y: i % classes })
            .collect();
        (m, Dataset::new(samples, classes, Role::Personal).unwrap())
    }

    /// Materializes every per-sample gradient and forms full outer products,
    /// then reads off the diagonal blocks.
    fn brute_force(m: &Model, d: &Dataset, p: &BlockPartition, lambda: f64) -> Vec<DMatrix<f64>> {
        let n = m.num_params();
        let mut full = DMatrix::<f64>::zeros(n, n);
        for s in d.samples() {
            let g = nalgebra::DVector::from_vec(m.backward(&s.x, s.y).unwrap().1);
            full += &g * g.transpose();
        }
        full /= d.len() as f64;
        p.blocks()
            .iter()
            .map(|b| full.view((b.start, b.start), (b.len, b.len)).into_owned() + DMatrix::identity(b.len, b.len) * lambda)
            .collect()
    }

    #[test]
    fn matches_outer_product_oracle() {
        let (m, d) = random_setup(&[2, 3, 2], 5, 3);
        let p = make_partition(m.architecture(), 4).unwrap();
        let fb = fisher_blocks(&m, &d, &p, Damping::Fixed(1e-3)).unwrap();
        let oracle = brute_force(&m, &d, &p, 1e-3);
        for (id, o) in oracle.iter().enumerate() {
            let len = p.block(id).len;
            let margin = len.div_ceil(2) as f64 * UNIT;
            for i in 0..len {
                for j in 0..len {
                    let want = o[(i, j)] + if i == j { margin } else { 0.0 };
                    let got = fb.dense(id)[i * len + j];
                    // quantization to 20 fractional bits dominates
                    assert!((got - want).abs() <= 0.5 * UNIT + 1e-12, "block {id} ({i},{j}): {got} vs {want}");
                }
            }
        }
    }

    #[test]
    fn zero_gradients_give_damping_only() {
        // Zero weights and zero inputs: only the output bias receives gradient.
        let arch = Architecture::mlp(&[2, 3, 2]).unwrap();
        let m = Model::zeros(arch);
        let d = Dataset::new(vec![Sample { x: vec![0.0, 0.0], y: 0 }], 2, Role::Personal).unwrap();
        let p = make_partition(m.architecture(), 4).unwrap();
        let fb = fisher_blocks(&m, &d, &p, Damping::Fixed(0.25)).unwrap();
        // layer 0 has 9 params and no gradient at all
        for id in 0..3 {
            let len = p.block(id).len;
            for i in 0..len {
                for j in 0..len {
                    let want = if i == j { 0.25 + len.div_ceil(2) as f64 * UNIT } else { 0.0 };
                    assert_eq!(fb.dense(id)[i * len + j], want);
                }
            }
        }
    }

    #[test]
    fn single_sample_is_rank_one_plus_damping() {
        let (m, d) = random_setup(&[3, 4, 3], 1, 8);
        let p = make_partition(m.architecture(), 5).unwrap();
        let fb = fisher_blocks(&m, &d, &p, Damping::Fixed(0.5)).unwrap();
        let g = m.backward(&d.samples()[0].x, d.samples()[0].y).unwrap().1;
        for (id, b) in p.blocks().iter().enumerate() {
            for i in 0..b.len {
                for j in 0..b.len {
                    let want = g[b.start + i] * g[b.start + j] + if i == j { 0.5 + b.len.div_ceil(2) as f64 * UNIT } else { 0.0 };
                    assert!((fb.dense(id)[i * b.len + j] - want).abs() <= 0.5 * UNIT);
                }
            }
        }
    }

    #[test]
    fn symmetric_and_damped() {
        let (m, d) = random_setup(&[6, 8, 4], 40, 9);
        let p = make_partition(m.architecture(), 8).unwrap();
        let fb = fisher_blocks(&m, &d, &p, Damping::Auto).unwrap();
        for (id, b) in p.blocks().iter().enumerate() {
            let f = DMatrix::from_row_slice(b.len, b.len, fb.dense(id));
            assert_eq!(f, f.transpose());
            let min_eig = f.symmetric_eigenvalues().min();
            assert!(min_eig >= fb.lambda(id) - 1e-12, "block {id}: {min_eig} < {}", fb.lambda(id));
        }
        assert!(fb.lambdas().iter().all(|&l| l >= AUTO_DAMPING_FLOOR));
    }

    #[test]
    fn errors() {
        let (m, d) = random_setup(&[2, 3, 2], 4, 1);
        let p = make_partition(m.architecture(), 4).unwrap();
        let empty = Dataset::new(vec![], 2, Role::Personal).unwrap();
        assert!(fisher_blocks(&m, &empty, &p, Damping::Auto).is_err());
        assert!(fisher_blocks(&m, &d, &p, Damping::Fixed(0.0)).is_err());
        let other = make_partition(&Architecture::mlp(&[2, 4, 2]).unwrap(), 4).unwrap();
        assert!(fisher_blocks(&m, &d, &other, Damping::Auto).is_err());
    }

    #[test]
    fn file_round_trips() {
        let (m, d) = random_setup(&[3, 5, 2], 10, 2);
        let p = make_partition(m.architecture(), 7).unwrap();
        let fb = fisher_blocks(&m, &d, &p, Damping::Auto).unwrap();
        let bytes = fb.to_bytes();
        assert_eq!(FisherBlocks::from_bytes(&bytes).unwrap(), fb);
        let mut bad = bytes.clone();
        let last = bad.len() - 1;
        bad[last] ^= 0x40;
        assert!(FisherBlocks::from_bytes(&bad).is_err());
        assert!(FisherBlocks::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
