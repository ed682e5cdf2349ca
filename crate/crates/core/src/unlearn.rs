//! Provider-side mask construction: activation importance, forget/retain score
//! ratio, top-k neuron selection and expansion to weight coordinates.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::codec::{put_u32, put_u64, Reader};
use crate::error::{Error, Result};
use crate::nn::{Architecture, Dataset, Model};

pub const DEFAULT_EPSILON: f64 = 1e-6;

/// Mean absolute post-activation of each neuron of one hidden layer.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuronImportance {
    pub layer: usize,
    pub values: Vec<f64>,
}

pub fn importance(m: &Model, d: &Dataset, layer: usize) -> Result<NeuronImportance> {
    let arch = m.architecture();
    if !arch.is_hidden(layer) {
        return Err(Error::InvalidArgument(format!(
            "layer {layer} is not a hidden layer"
        )));
    }
    if d.is_empty() {
        return Err(Error::EmptyDataset(" (importance)"));
    }
    let width = arch.layers()[layer].out_dim;
    let mut sums = vec![0.0; width];
    for s in d.samples() {
        let pass = m.forward(&s.x)?;
        for (acc, a) in sums.iter_mut().zip(pass.layer(layer)) {
            *acc += a.abs();
        }
    }
    let n = d.len() as f64;
    Ok(NeuronImportance {
        layer,
        values: sums.into_iter().map(|v| v / n).collect(),
    })
}

/// `forget[n] / (retain[n] + epsilon)` for every neuron.
pub fn score(forget: &NeuronImportance, retain: &NeuronImportance, epsilon: f64) -> Result<Vec<f64>> {
    if forget.values.len() != retain.values.len() || forget.layer != retain.layer {
        return Err(Error::Dimension {
            expected: forget.values.len(),
            got: retain.values.len(),
        });
    }
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be > 0, got {epsilon}")));
    }
    Ok(forget
        .values
        .iter()
        .zip(&retain.values)
        .map(|(f, r)| f / (r + epsilon))
        .collect())
}

/// Scores of one hidden layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerScores {
    pub layer: usize,
    pub scores: Vec<f64>,
}

/// Which parameters a pruned neuron owns.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MaskScope {
    /// Incoming weight row and bias. Enough to silence the neuron.
    Incoming,
    /// Incoming row, bias and the outgoing weight column in the next layer.
    /// The column is dead once the neuron is silenced; pinning it lets the
    /// compensation step reroute the lost contribution through the downstream
    /// neurons' other inputs.
    #[default]
    WithOutgoing,
}

impl MaskScope {
    fn code(self) -> u8 {
        match self {
            MaskScope::Incoming => 0,
            MaskScope::WithOutgoing => 1,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(MaskScope::Incoming),
            1 => Some(MaskScope::WithOutgoing),
            _ => None,
        }
    }
}

/// The unlearning request: pruned neurons and the exact parameter coordinates
/// they own under its [`MaskScope`].
#[derive(Clone, Debug, PartialEq)]
pub struct PruneMask {
    neurons: Vec<(u32, u32)>,
    scope: MaskScope,
    coords: Vec<u64>,
    fraction: f64,
    epsilon: f64,
}

/// Number of neurons pruned from a layer of `width` at `fraction`.
pub fn prune_count(width: usize, fraction: f64) -> usize {
    ((fraction * width as f64).ceil() as usize).clamp(1, width)
}

pub fn select_mask(
    arch: &Architecture,
    scores: &[LayerScores],
    scope: MaskScope,
    fraction: f64,
    epsilon: f64,
) -> Result<PruneMask> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("empty target layer set".into()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("fraction {fraction} outside (0, 1]")));
    }
    let mut neurons = Vec::new();
    for ls in scores {
        if !arch.is_hidden(ls.layer) {
            return Err(Error::InvalidArgument(format!("layer {} is not hidden", ls.layer)));
        }
        let width = arch.layers()[ls.layer].out_dim;
        if ls.scores.len() != width {
            return Err(Error::Dimension {
                expected: width,
                got: ls.scores.len(),
            });
        }
        let mut order: Vec<usize> = (0..width).collect();
        // Highest score first, ties toward the lower neuron index.
        order.sort_by(|&a, &b| ls.scores[b].total_cmp(&ls.scores[a]).then(a.cmp(&b)));
        let k = prune_count(width, fraction);
        neurons.extend(order[..k].iter().map(|&n| (ls.layer as u32, n as u32)));
    }
    PruneMask::from_neurons(arch, neurons, scope, fraction, epsilon)
}

impl PruneMask {
    /// Builds a mask from an explicit neuron set, expanding it to coordinates.
    pub fn from_neurons(
        arch: &Architecture,
        mut neurons: Vec<(u32, u32)>,
        scope: MaskScope,
        fraction: f64,
        epsilon: f64,
    ) -> Result<Self> {
        neurons.sort_unstable();
        neurons.dedup();
        let mut coords = Vec::new();
        for &(layer, neuron) in &neurons {
            let (l, n) = (layer as usize, neuron as usize);
            if !arch.is_hidden(l) || n >= arch.layers()[l].out_dim {
                return Err(Error::InvalidArgument(format!(
                    "neuron ({layer}, {neuron}) is not a hidden neuron"
                )));
            }
            coords.extend(neuron_coords(arch, l, n, scope).into_iter().map(|c| c as u64));
        }
        coords.sort_unstable();
        coords.dedup();
        Ok(Self {
            neurons,
            scope,
            coords,
            fraction,
            epsilon,
        })
    }

    pub fn empty() -> Self {
        Self {
            neurons: Vec::new(),
            scope: MaskScope::default(),
            coords: Vec::new(),
            fraction: 0.0,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn neurons(&self) -> &[(u32, u32)] {
        &self.neurons
    }

    /// Sorted, duplicate-free flat parameter indices.
    pub fn coords(&self) -> &[u64] {
        &self.coords
    }

    pub fn scope(&self) -> MaskScope {
        self.scope
    }

    pub fn fraction(&self) -> f64 {
        self.fraction
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.coords.binary_search(&(index as u64)).is_ok()
    }

    /// Masked coordinates inside `[start, end)`.
    pub fn coords_in(&self, start: usize, end: usize) -> &[u64] {
        let lo = self.coords.partition_point(|&c| c < start as u64);
        let hi = self.coords.partition_point(|&c| c < end as u64);
        &self.coords[lo..hi]
    }

    /// Pruned coordinates over all parameters of the layers they fall in.
    pub fn parameter_fraction(&self, arch: &Architecture) -> f64 {
        let mut layers: Vec<usize> = Vec::new();
        for &c in &self.coords {
            if let Some(l) = (0..arch.num_layers()).find(|&l| arch.layer_range(l).contains(&(c as usize))) {
                if !layers.contains(&l) {
                    layers.push(l);
                }
            }
        }
        let total: usize = layers.iter().map(|&l| arch.layers()[l].num_params()).sum();
        if total == 0 {
            0.0
        } else {
            self.coords.len() as f64 / total as f64
        }
    }

    /// `UMSK` file bytes; this exact byte string is what the provider sends.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(40 + 8 * self.neurons.len() + 8 * self.coords.len());
        out.extend_from_slice(b"UMSK");
        put_u32(&mut out, MASK_VERSION);
        out.extend_from_slice(&self.fraction.to_le_bytes());
        out.extend_from_slice(&self.epsilon.to_le_bytes());
        out.push(self.scope.code());
        put_u32(&mut out, self.neurons.len() as u32);
        for &(l, n) in &self.neurons {
            put_u32(&mut out, l);
            put_u32(&mut out, n);
        }
        put_u64(&mut out, self.coords.len() as u64);
        for &c in &self.coords {
            put_u64(&mut out, c);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "mask");
        r.expect_magic(b"UMSK")?;
        let version = r.u32()?;
        if version != MASK_VERSION {
            return r.fail(format!("unsupported version {version}"));
        }
        let fraction = r.f64()?;
        let epsilon = r.f64()?;
        let code = r.u8()?;
        let Some(scope) = MaskScope::from_code(code) else {
            return r.fail(format!("unknown mask scope {code}"));
        };
        let n = r.count(8)?;
        let mut neurons = Vec::with_capacity(n);
        for _ in 0..n {
            neurons.push((r.u32()?, r.u32()?));
        }
        let m = r.u64()? as usize;
        if m.saturating_mul(8) > r.remaining() {
            return r.fail(format!("coordinate count {m} exceeds payload"));
        }
        let mut coords = Vec::with_capacity(m);
        for _ in 0..m {
            coords.push(r.u64()?);
        }
        r.finish()?;
        if !neurons.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::format("mask", "neuron list not strictly sorted"));
        }
        if !coords.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::format("mask", "coordinate list not strictly sorted"));
        }
        Ok(Self {
            neurons,
            scope,
            coords,
            fraction,
            epsilon,
        })
    }

    /// Checks that the coordinate list is exactly the expansion of the neuron set.
    pub fn validate(&self, arch: &Architecture) -> Result<()> {
        let expected = Self::from_neurons(arch, self.neurons.clone(), self.scope, self.fraction, self.epsilon)?;
        if expected.coords != self.coords {
            return Err(Error::Inconsistent(
                "mask coordinates are not the expansion of its neuron set".into(),
            ));
        }
        Ok(())
    }

    pub fn digest(&self) -> [u8; 32] {
        Sha256::digest(self.to_bytes()).into()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

const MASK_VERSION: u32 = 1;

fn neuron_coords(arch: &Architecture, layer: usize, neuron: usize, scope: MaskScope) -> Vec<usize> {
    let spec = arch.layers()[layer];
    let off = arch.layer_offset(layer);
    let mut out: Vec<usize> = (off + neuron * spec.in_dim..off + (neuron + 1) * spec.in_dim).collect();
    out.push(off + spec.out_dim * spec.in_dim + neuron);
    if scope == MaskScope::WithOutgoing {
        let next = arch.layers()[layer + 1];
        let next_off = arch.layer_offset(layer + 1);
        out.extend((0..next.out_dim).map(|o| next_off + o * next.in_dim + neuron));
    }
    out
}

/// Zeroes every masked coordinate; all other parameters are untouched.
pub fn apply_mask(m: &Model, mask: &PruneMask) -> Result<Model> {
    let n = m.num_params() as u64;
    if let Some(&bad) = mask.coords().iter().find(|&&c| c >= n) {
        return Err(Error::InvalidArgument(format!(
            "mask coordinate {bad} out of range for {n} parameters"
        )));
    }
    let mut out = m.clone();
    for &c in mask.coords() {
        *out.param_mut(c as usize).unwrap() = 0.0;
    }
    Ok(out)
}
