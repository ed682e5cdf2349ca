//! Layered feed-forward network with hand-written backpropagation.
//!
//! Parameters are addressed by one flat index: layer-major; within a layer the
//! weight matrix row-major (`out × in`), followed by the layer's biases.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    None,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 1,
            Activation::None => 0,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::None),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }
}

/// Shape of one layer, without parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LayerSpec {
    pub out_dim: usize,
    pub in_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn num_params(&self) -> usize {
        self.out_dim * self.in_dim + self.out_dim
    }
}

/// Architecture descriptor: the public shape both provider and client agree on.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Architecture {
    layers: Vec<LayerSpec>,
}

impl Architecture {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("architecture has no layers".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::Dimension {
                    expected: pair[0].out_dim,
                    got: pair[1].in_dim,
                });
            }
        }
        if layers.iter().any(|l| l.out_dim == 0 || l.in_dim == 0) {
            return Err(Error::InvalidArgument("zero-width layer".into()));
        }
        if layers.last().unwrap().activation != Activation::None {
            return Err(Error::InvalidArgument(
                "last layer must emit logits (activation none)".into(),
            ));
        }
        Ok(Self { layers })
    }

    /// ReLU on every hidden layer, logits on the last.
    pub fn mlp(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidArgument("need at least input and output dims".into()));
        }
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|l| LayerSpec {
                in_dim: dims[l],
                out_dim: dims[l + 1],
                activation: if l + 1 == n { Activation::None } else { Activation::Relu },
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(LayerSpec::num_params).sum()
    }

    /// First flat index of layer `l`.
    pub fn layer_offset(&self, l: usize) -> usize {
        self.layers[..l].iter().map(LayerSpec::num_params).sum()
    }

    pub fn layer_range(&self, l: usize) -> std::ops::Range<usize> {
        let start = self.layer_offset(l);
        start..start + self.layers[l].num_params()
    }

    pub fn is_hidden(&self, l: usize) -> bool {
        l < self.layers.len() && self.layers[l].activation != Activation::None
    }

    pub fn flat_index(&self, loc: ParamLoc) -> Option<usize> {
        match loc {
            ParamLoc::Weight { layer, row, col } => {
                let spec = self.layers.get(layer)?;
                (row < spec.out_dim && col < spec.in_dim)
                    .then(|| self.layer_offset(layer) + row * spec.in_dim + col)
            }
            ParamLoc::Bias { layer, row } => {
                let spec = self.layers.get(layer)?;
                (row < spec.out_dim)
                    .then(|| self.layer_offset(layer) + spec.out_dim * spec.in_dim + row)
            }
        }
    }

    pub fn locate(&self, index: usize) -> Option<ParamLoc> {
        let mut offset = 0;
        for (layer, spec) in self.layers.iter().enumerate() {
            let n = spec.num_params();
            if index < offset + n {
                let local = index - offset;
                let weights = spec.out_dim * spec.in_dim;
                return Some(if local < weights {
                    ParamLoc::Weight {
                        layer,
                        row: local / spec.in_dim,
                        col: local % spec.in_dim,
                    }
                } else {
                    ParamLoc::Bias {
                        layer,
                        row: local - weights,
                    }
                });
            }
            offset += n;
        }
        None
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamLoc {
    Weight { layer: usize, row: usize, col: usize },
    Bias { layer: usize, row: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    /// Row-major `out × in`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn affine(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        let n_in = self.spec.in_dim;
        for (o, b) in self.bias.iter().enumerate() {
            let row = &self.weights[o * n_in..(o + 1) * n_in];
            let dot: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum();
            out.push(dot + b);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    arch: Architecture,
    layers: Vec<Layer>,
}

/// Post-activation output of every layer; the last entry is the logits.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardPass {
    pub activations: Vec<Vec<f64>>,
}

impl ForwardPass {
    pub fn logits(&self) -> &[f64] {
        self.activations.last().unwrap()
    }

    pub fn layer(&self, l: usize) -> &[f64] {
        &self.activations[l]
    }
}

impl Model {
    pub fn zeros(arch: Architecture) -> Self {
        let layers = arch
            .layers()
            .iter()
            .map(|&spec| Layer {
                spec,
                weights: vec![0.0; spec.out_dim * spec.in_dim],
                bias: vec![0.0; spec.out_dim],
            })
            .collect();
        Self { arch, layers }
    }

    /// He-normal weights, zero biases.
    pub fn random<R: Rng>(arch: Architecture, rng: &mut R) -> Self {
        let mut m = Self::zeros(arch);
        for layer in &mut m.layers {
            let std = (2.0 / layer.spec.in_dim as f64).sqrt();
            let normal = Normal::new(0.0, std).unwrap();
            for w in &mut layer.weights {
                *w = normal.sample(rng);
            }
        }
        m
    }

    pub fn from_params(arch: Architecture, params: &[f64]) -> Result<Self> {
        let mut m = Self::zeros(arch);
        m.set_params(params)?;
        Ok(m)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer_mut(&mut self, l: usize) -> &mut Layer {
        &mut self.layers[l]
    }

    pub fn num_params(&self) -> usize {
        self.arch.num_params()
    }

    /// Canonical flat parameter vector.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for layer in &self.layers {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::Dimension {
                expected: self.num_params(),
                got: params.len(),
            });
        }
        let mut rest = params;
        for layer in &mut self.layers {
            let (w, tail) = rest.split_at(layer.weights.len());
            let (b, tail) = tail.split_at(layer.bias.len());
            layer.weights.copy_from_slice(w);
            layer.bias.copy_from_slice(b);
            rest = tail;
        }
        Ok(())
    }

    pub fn param(&self, index: usize) -> Option<f64> {
        match self.arch.locate(index)? {
            ParamLoc::Weight { layer, row, col } => {
                Some(self.layers[layer].weights[row * self.layers[layer].spec.in_dim + col])
            }
            ParamLoc::Bias { layer, row } => Some(self.layers[layer].bias[row]),
        }
    }

    pub fn param_mut(&mut self, index: usize) -> Option<&mut f64> {
        match self.arch.locate(index)? {
            ParamLoc::Weight { layer, row, col } => {
                let n_in = self.layers[layer].spec.in_dim;
                Some(&mut self.layers[layer].weights[row * n_in + col])
            }
            ParamLoc::Bias { layer, row } => Some(&mut self.layers[layer].bias[row]),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardPass> {
        if x.len() != self.arch.input_dim() {
            return Err(Error::Dimension {
                expected: self.arch.input_dim(),
                got: x.len(),
            });
        }
        let mut activations = Vec::with_capacity(self.layers.len());
        let mut input: &[f64] = x;
        for layer in &self.layers {
            let mut z = Vec::with_capacity(layer.spec.out_dim);
            layer.affine(input, &mut z);
            if layer.spec.activation == Activation::Relu {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            activations.push(z);
            input = activations.last().unwrap();
        }
        Ok(ForwardPass { activations })
    }

    /// Index of the largest logit; ties go to the lowest class.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(self.forward(x)?.logits()))
    }

    /// Cross-entropy loss and its gradient in canonical flat order.
    pub fn backward(&self, x: &[f64], y: usize) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.num_params()];
        let loss = self.backprop(x, y, |l, deltas, input| {
            let spec = self.layers[l].spec;
            let off = self.arch.layer_offset(l);
            let weights = spec.out_dim * spec.in_dim;
            for (o, &d) in deltas.iter().enumerate() {
                if d != 0.0 {
                    let row = &mut grad[off + o * spec.in_dim..off + (o + 1) * spec.in_dim];
                    for (g, &v) in row.iter_mut().zip(input) {
                        *g = d * v;
                    }
                }
                grad[off + weights + o] = d;
            }
        })?;
        Ok((loss, grad))
    }

    /// One plain SGD step on a single sample; layers with `trainable[l] == false`
    /// are left untouched. Returns the pre-step loss.
    pub fn sgd_step(&mut self, x: &[f64], y: usize, lr: f64, trainable: &[bool]) -> Result<f64> {
        let mut updates: Vec<(usize, Vec<f64>, Vec<f64>)> = Vec::new();
        let loss = self.backprop(x, y, |l, deltas, input| {
            if trainable.get(l).copied().unwrap_or(false) {
                updates.push((l, deltas.to_vec(), input.to_vec()));
            }
        })?;
        for (l, deltas, input) in updates {
            let layer = &mut self.layers[l];
            let n_in = layer.spec.in_dim;
            for (o, &d) in deltas.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let step = lr * d;
                for (w, &v) in layer.weights[o * n_in..(o + 1) * n_in].iter_mut().zip(&input) {
                    *w -= step * v;
                }
                layer.bias[o] -= step;
            }
        }
        Ok(loss)
    }

    /// Shared backward sweep. `sink(layer, dL/dz, layer_input)` is called from the
    /// last layer down to the first.
    fn backprop<F>(&self, x: &[f64], y: usize, mut sink: F) -> Result<f64>
    where
        F: FnMut(usize, &[f64], &[f64]),
    {
        let n_classes = self.arch.output_dim();
        if y >= n_classes {
            return Err(Error::InvalidArgument(format!(
                "label {y} >= class count {n_classes}"
            )));
        }
        let pass = self.forward(x)?;
        let probs = softmax(pass.logits());
        let loss = -log_softmax_at(pass.logits(), y);

        let mut deltas = probs;
        deltas[y] -= 1.0;
        for l in (0..self.layers.len()).rev() {
            let input: &[f64] = if l == 0 { x } else { &pass.activations[l - 1] };
            sink(l, &deltas, input);
            if l == 0 {
                break;
            }
            let layer = &self.layers[l];
            let n_in = layer.spec.in_dim;
            let mut prev = vec![0.0; n_in];
            for (o, &d) in deltas.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (p, &w) in prev.iter_mut().zip(&layer.weights[o * n_in..(o + 1) * n_in]) {
                    *p += d * w;
                }
            }
            if self.layers[l - 1].spec.activation == Activation::Relu {
                for (p, &a) in prev.iter_mut().zip(&pass.activations[l - 1]) {
                    if a <= 0.0 {
                        *p = 0.0;
                    }
                }
            }
            deltas = prev;
        }
        Ok(loss)
    }

    /// `UNLM` model file.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + 9 * self.layers.len() + 8 * self.num_params());
        out.extend_from_slice(b"UNLM");
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for layer in &self.layers {
            out.extend_from_slice(&(layer.spec.out_dim as u32).to_le_bytes());
            out.extend_from_slice(&(layer.spec.in_dim as u32).to_le_bytes());
            out.push(layer.spec.activation.code());
        }
        for p in self.params() {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = crate::codec::Reader::new(bytes, "model");
        r.expect_magic(b"UNLM")?;
        let version = r.u32()?;
        if version != MODEL_VERSION {
            return Err(Error::format("model", format!("unsupported version {version}")));
        }
        let n_layers = r.u32()? as usize;
        let mut specs = Vec::with_capacity(n_layers.min(1024));
        for _ in 0..n_layers {
            let out_dim = r.u32()? as usize;
            let in_dim = r.u32()? as usize;
            let code = r.u8()?;
            let activation = Activation::from_code(code)
                .ok_or_else(|| Error::format("model", format!("unknown activation code {code}")))?;
            specs.push(LayerSpec {
                out_dim,
                in_dim,
                activation,
            });
        }
        let arch = Architecture::new(specs)?;
        let n = arch.num_params();
        let mut params = Vec::with_capacity(n);
        for _ in 0..n {
            params.push(r.f64()?);
        }
        r.finish()?;
        Model::from_params(arch, &params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

const MODEL_VERSION: u32 = 1;

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

fn log_softmax_at(logits: &[f64], y: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    logits[y] - lse
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_two_two() -> Model {
        let arch = Architecture::mlp(&[2, 2, 2]).unwrap();
        let mut m = Model::zeros(arch);
        m.layers[0].weights = vec![1.0, 0.0, 0.0, 1.0];
        m.layers[1].weights = vec![1.0, 1.0, 1.0, -1.0];
        m
    }

    #[test]
    fn zero_model_gives_uniform_softmax() {
        let m = Model::zeros(Architecture::mlp(&[3, 4, 5]).unwrap());
        let pass = m.forward(&[0.3, -1.0, 2.0]).unwrap();
        assert!(pass.logits().iter().all(|&z| z == 0.0));
        assert!(softmax(pass.logits()).iter().all(|&p| (p - 0.2).abs() < 1e-15));
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let arch = Architecture::new(vec![LayerSpec { out_dim: 3, in_dim: 3, activation: Activation::None }]).unwrap();
        let mut m = Model::zeros(arch);
        m.layers[0].weights = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        assert_eq!(m.forward(&[0.5, -2.0, 7.0]).unwrap().logits(), &[0.5, -2.0, 7.0]);
    }

    #[test]
    fn hand_computed_two_two_two() {
        // hidden = relu((1, -2)) = (1, 0); logits = (1+0, 1-0) = (1, 1)
        let pass = two_two_two().forward(&[1.0, -2.0]).unwrap();
        assert_eq!(pass.layer(0), &[1.0, 0.0]);
        assert_eq!(pass.logits(), &[1.0, 1.0]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let m = two_two_two();
        assert!(matches!(m.forward(&[1.0]), Err(Error::Dimension { expected: 2, got: 1 })));
        assert!(m.backward(&[1.0, 2.0, 3.0], 0).is_err());
    }

    #[test]
    fn zero_input_gives_zero_first_layer_weight_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = Model::random(Architecture::mlp(&[4, 5, 3]).unwrap(), &mut rng);
        for y in 0..3 {
            let (_, g) = m.backward(&[0.0; 4], y).unwrap();
            assert!(g[..20].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn saturated_logits_have_vanishing_gradient() {
        let arch = Architecture::new(vec![LayerSpec { out_dim: 3, in_dim: 2, activation: Activation::None }]).unwrap();
        let mut m = Model::zeros(arch);
        m.layers[0].bias = vec![-40.0, 40.0, -40.0];
        let (loss, g) = m.backward(&[0.7, -0.2], 1).unwrap();
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-6, "{norm}");
        assert!(loss < 1e-6);
    }

    #[test]
    fn flat_index_is_a_bijection() {
        let arch = Architecture::mlp(&[3, 4, 2]).unwrap();
        assert_eq!(arch.num_params(), 3 * 4 + 4 + 4 * 2 + 2);
        for i in 0..arch.num_params() {
            let loc = arch.locate(i).unwrap();
            assert_eq!(arch.flat_index(loc), Some(i));
        }
        assert_eq!(arch.locate(arch.num_params()), None);
        assert_eq!(arch.flat_index(ParamLoc::Bias { layer: 0, row: 0 }), Some(12));
        assert_eq!(arch.flat_index(ParamLoc::Weight { layer: 1, row: 0, col: 0 }), Some(16));
    }

    #[test]
    fn params_round_trip_through_accessors() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = Model::random(Architecture::mlp(&[3, 4, 2]).unwrap(), &mut rng);
        let p = m.params();
        for (i, &v) in p.iter().enumerate() {
            assert_eq!(m.param(i), Some(v));
        }
        assert_eq!(Model::from_params(m.architecture().clone(), &p).unwrap(), m);
    }

    #[test]
    fn architecture_validation() {
        assert!(Architecture::new(vec![LayerSpec { out_dim: 2, in_dim: 2, activation: Activation::Relu }]).is_err());
        assert!(Architecture::new(vec![
            LayerSpec { out_dim: 2, in_dim: 2, activation: Activation::Relu },
            LayerSpec { out_dim: 2, in_dim: 3, activation: Activation::None },
        ])
        .is_err());
    }

    #[test]
    fn model_file_round_trips_and_rejects_garbage() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = Model::random(Architecture::mlp(&[5, 3, 2]).unwrap(), &mut rng);
        let bytes = m.to_bytes();
        assert_eq!(&bytes[..4], b"UNLM");
        assert_eq!(Model::from_bytes(&bytes).unwrap(), m);
        assert!(Model::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Model::from_bytes(&bad).is_err());
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }
}
