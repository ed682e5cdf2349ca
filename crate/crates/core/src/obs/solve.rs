use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::numeric::{decode_slice, in_range, FISHER_FRAC_BITS, WEIGHT_FRAC_BITS};

/// Bound on `|(F δ)_j|` for unpruned `j`, in real units.
pub const RESIDUAL_TOLERANCE: f64 = 1.0 / (1u64 << 20) as f64;

/// [`RESIDUAL_TOLERANCE`] at the combined Fisher × weight scale `2^-44`.
pub const RESIDUAL_TOLERANCE_FX: i128 = 1 << (FISHER_FRAC_BITS + WEIGHT_FRAC_BITS - 20);

/// Minimizes `½ δᵀ F δ` subject to `w_i + δ_i = 0` for every pruned `i`.
///
/// `f` is a row-major positive definite `len × len` matrix. Uses
/// `δ = -F⁻¹E (EᵀF⁻¹E)⁻¹ w_P`; pruned coordinates are then set to exactly `-w_i`.
pub fn obs_adjust(w: &[f64], f: &[f64], pruned: &[usize]) -> Result<Vec<f64>> {
    let len = w.len();
    if f.len() != len * len {
        return Err(Error::Dimension {
            expected: len * len,
            got: f.len(),
        });
    }
    if let Some(&bad) = pruned.iter().find(|&&p| p >= len) {
        return Err(Error::InvalidArgument(format!("pruned index {bad} outside block of {len}")));
    }
    let mut delta = vec![0.0; len];
    if pruned.is_empty() {
        return Ok(delta);
    }
    if pruned.len() < len {
        let chol = DMatrix::from_row_slice(len, len, f)
            .cholesky()
            .ok_or_else(|| Error::Solver("Fisher block is not positive definite".into()))?;
        let mut e = DMatrix::<f64>::zeros(len, pruned.len());
        for (c, &p) in pruned.iter().enumerate() {
            e[(p, c)] = 1.0;
        }
        let x = chol.solve(&e);
        let s = DMatrix::from_fn(pruned.len(), pruned.len(), |i, j| {
            0.5 * (x[(pruned[i], j)] + x[(pruned[j], i)])
        });
        let wp = DVector::from_iterator(pruned.len(), pruned.iter().map(|&p| w[p]));
        let mu = s
            .cholesky()
            .ok_or_else(|| Error::Solver("pinned sub-system is singular".into()))?
            .solve(&wp);
        let d = -(x * mu);
        delta.copy_from_slice(d.as_slice());
    }
    for &p in pruned {
        delta[p] = -w[p];
    }
    Ok(delta)
}

/// `½ δᵀ F δ`.
pub fn quadratic_value(f: &[f64], delta: &[f64]) -> f64 {
    let len = delta.len();
    let mut total = 0.0;
    for i in 0..len {
        let row: f64 = (0..len).map(|j| f[i * len + j] * delta[j]).sum();
        total += delta[i] * row;
    }
    0.5 * total
}

/// Largest `|Σ_k F[j,k] δ[k]|` over unpruned `j`, exact in integers.
pub fn kkt_residual_fx(f_fx: &[i64], delta_fx: &[i64], pruned: &[usize]) -> i128 {
    let len = delta_fx.len();
    (0..len)
        .filter(|j| !pruned.contains(j))
        .map(|j| {
            f_fx[j * len..(j + 1) * len]
                .iter()
                .zip(delta_fx)
                .map(|(&a, &b)| a as i128 * b as i128)
                .sum::<i128>()
                .abs()
        })
        .max()
        .unwrap_or(0)
}

/// Canonical fixed-point compensation for one block.
///
/// Decodes `w_fx` and `f_fx`, solves in double precision, rounds to
/// [`WEIGHT_FRAC_BITS`] and pins `δ_fx[p] = -w_fx[p]`. The result is rejected
/// unless the integer KKT residual is within [`RESIDUAL_TOLERANCE_FX`]. Prover
/// and verifier both call this, so its output is the reference.
pub fn adjust_block_fixed(block: usize, w_fx: &[i64], f_fx: &[i64], pruned: &[usize]) -> Result<Vec<i64>> {
    let w = decode_slice(w_fx, WEIGHT_FRAC_BITS);
    let f = decode_slice(f_fx, FISHER_FRAC_BITS);
    let delta = obs_adjust(&w, &f, pruned)?;
    let scale = (1u64 << WEIGHT_FRAC_BITS) as f64;
    let mut delta_fx = Vec::with_capacity(delta.len());
    for (k, &d) in delta.iter().enumerate() {
        let v = if pruned.contains(&k) {
            -w_fx[k]
        } else {
            let q = (d * scale).round_ties_even();
            if !q.is_finite() || !in_range(q as i64) || !in_range(w_fx[k] + q as i64) {
                return Err(Error::Solver(format!("update at position {k} of block {block} leaves the fixed-point range")));
            }
            q as i64
        };
        delta_fx.push(v);
    }
    let residual = kkt_residual_fx(f_fx, &delta_fx, pruned);
    if residual > RESIDUAL_TOLERANCE_FX {
        return Err(Error::ResidualExceeded {
            block,
            residual,
            tolerance: RESIDUAL_TOLERANCE_FX,
        });
    }
    Ok(delta_fx)
}
