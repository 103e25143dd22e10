//! Multi-layer encoder and its two decoders.
//!
//! The encoder is an ordinary perceptron: `z_ℓ = W_ℓ′ x_ℓ` and
//! `x_{ℓ+1} = λ_{ℓ+1}(z_ℓ + b_ℓ)`, with a linear top layer whose output
//! `z_top = z_L` is the feature.
//!
//! The D-PBN decoder walks back down the stack solving `γ_ℓ(h_ℓ) = t_ℓ` at
//! every layer and handing `W_ℓ h_ℓ − b_{ℓ−1}` to the layer below. Because
//! every hidden activation is the MaxEnt activation of the next layer's
//! input range, no activation ever needs to be inverted. The conventional
//! (AEC) decoder reuses the transposed weights with a per-layer scale and
//! reconstruction bias.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::activation::{validate_range, ActivationKind, DataRange};
use crate::error::{Error, Result};
use crate::linop::{DenseMatrix, LinearMap};
use crate::saddle::{lambda_of_adjoint, solve_saddle_from, SaddleOptions, SaddleResult};

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub map: LinearMap,
    /// Added after the linear transformation (length M).
    pub bias: Vec<f64>,
    /// Output activation; `None` on the top layer.
    pub out_activation: Option<ActivationKind>,
    /// AEC reconstruction scale `s`.
    pub recon_scale: f64,
    /// AEC reconstruction bias (length N).
    pub recon_bias: Vec<f64>,
}

impl Layer {
    pub fn new(map: LinearMap, out_activation: Option<ActivationKind>) -> Self {
        let (n, m) = (map.n_in(), map.n_out());
        Self { map, bias: vec![0.0; m], out_activation, recon_scale: 1.0, recon_bias: vec![0.0; n] }
    }

    pub fn n_in(&self) -> usize {
        self.map.n_in()
    }

    pub fn n_out(&self) -> usize {
        self.map.n_out()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    input_kind: ActivationKind,
}

/// Intermediate values of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodeTrace {
    /// `x_ℓ`, the input of every layer; `inputs[0]` is the data vector.
    pub inputs: Vec<Vec<f64>>,
    /// `z_ℓ = W_ℓ′ x_ℓ` for every layer.
    pub pre_activations: Vec<Vec<f64>>,
    /// `z_ℓ + b_ℓ` for every layer below the top.
    pub biased: Vec<Vec<f64>>,
    pub z_top: Vec<f64>,
}

/// Outcome of a D-PBN back-projection.
#[derive(Clone, Debug, PartialEq)]
pub struct DpbnReconstruction {
    /// `None` when any layer failed.
    pub x_bar: Option<Vec<f64>>,
    /// Saddle solve of each layer, indexed bottom-up; `None` for layers
    /// below a failure, which are never reached.
    pub solves: Vec<Option<SaddleResult>>,
}

impl DpbnReconstruction {
    pub fn failed(&self) -> bool {
        self.x_bar.is_none()
    }

    /// Saddle points of every layer, bottom-up, when all layers succeeded.
    pub fn saddle_points(&self) -> Option<Vec<Vec<f64>>> {
        self.solves.iter().map(|s| s.as_ref().map(|r| r.h.clone())).collect()
    }
}

impl Network {
    /// Assembles a network, checking the dimension chain and that exactly
    /// the non-top layers carry an output activation.
    pub fn new(input_kind: ActivationKind, layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidNetwork("a network needs at least one layer".into()));
        }
        let last = layers.len() - 1;
        for (i, layer) in layers.iter().enumerate() {
            let (n, m) = (layer.n_in(), layer.n_out());
            if m > n {
                return Err(Error::InvalidNetwork(format!("layer {i} expands {n} -> {m}")));
            }
            if layer.bias.len() != m || layer.recon_bias.len() != n {
                return Err(Error::InvalidNetwork(format!("layer {i} bias lengths do not match {n}x{m}")));
            }
            if i > 0 && layers[i - 1].n_out() != n {
                return Err(Error::InvalidNetwork(format!(
                    "layer {i} expects {n} inputs but layer {} emits {}",
                    i - 1,
                    layers[i - 1].n_out()
                )));
            }
            match (i == last, layer.out_activation) {
                (true, Some(_)) => return Err(Error::InvalidNetwork("the top layer must have a linear output".into())),
                (false, None) => {
                    return Err(Error::InvalidNetwork(format!(
                        "layer {i} needs an output activation matching the input range of layer {}",
                        i + 1
                    )))
                }
                _ => {}
            }
        }
        Ok(Self { layers, input_kind })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_kind(&self) -> ActivationKind {
        self.input_kind
    }

    pub fn input_range(&self) -> DataRange {
        self.input_kind.range()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].n_in()
    }

    pub fn feature_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].n_out()
    }

    /// MaxEnt kind of layer `l`'s input: the network input kind for the
    /// bottom layer, otherwise the output activation of the layer below.
    pub fn layer_input_kind(&self, l: usize) -> ActivationKind {
        if l == 0 {
            self.input_kind
        } else {
            self.layers[l - 1].out_activation.expect("validated at construction")
        }
    }

    pub fn encode(&self, x: &[f64]) -> Result<EncodeTrace> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension { expected: self.input_dim(), got: x.len() });
        }
        if let Err(v) = validate_range(self.input_range(), x) {
            let i = v.indices[0];
            return Err(Error::OutOfRange { range: v.range, value: x[i] });
        }
        let mut inputs = vec![x.to_vec()];
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut biased = Vec::with_capacity(self.layers.len() - 1);
        for layer in &self.layers {
            let z = layer.map.forward(inputs.last().unwrap())?;
            if let Some(kind) = layer.out_activation {
                let zb: Vec<f64> = z.iter().zip(&layer.bias).map(|(a, b)| a + b).collect();
                let next = zb.iter().map(|&v| kind.lambda(v)).collect::<Result<Vec<_>>>()?;
                biased.push(zb);
                inputs.push(next);
            }
            pre_activations.push(z);
        }
        let z_top = pre_activations.last().unwrap().clone();
        Ok(EncodeTrace { inputs, pre_activations, biased, z_top })
    }

    /// The top-layer feature of `x`.
    pub fn feature(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.encode(x)?.z_top)
    }

    /// D-PBN back-projection of a feature, starting every saddle solve
    /// from the default point.
    pub fn reconstruct_dpbn(&self, z_top: &[f64], opts: &SaddleOptions) -> Result<DpbnReconstruction> {
        self.reconstruct_dpbn_from(z_top, None, opts)
    }

    /// D-PBN back-projection with optional per-layer warm starts
    /// (indexed bottom-up).
    pub fn reconstruct_dpbn_from(
        &self,
        z_top: &[f64],
        warm: Option<&[Vec<f64>]>,
        opts: &SaddleOptions,
    ) -> Result<DpbnReconstruction> {
        if z_top.len() != self.feature_dim() {
            return Err(Error::Dimension { expected: self.feature_dim(), got: z_top.len() });
        }
        let n_layers = self.layers.len();
        let mut solves: Vec<Option<SaddleResult>> = vec![None; n_layers];
        let mut target = z_top.to_vec();
        for l in (0..n_layers).rev() {
            let layer = &self.layers[l];
            let kind = self.layer_input_kind(l);
            let h0 = warm.and_then(|w| w.get(l)).map(Vec::as_slice);
            let result = solve_saddle_from(&layer.map, kind, &target, h0, opts)?;
            let failed = result.failed;
            let h = result.h.clone();
            solves[l] = Some(result);
            if failed {
                return Ok(DpbnReconstruction { x_bar: None, solves });
            }
            if l == 0 {
                let x_bar = lambda_of_adjoint(&layer.map, kind, &h);
                let x_bar = x_bar.iter().all(|v| v.is_finite()).then_some(x_bar);
                return Ok(DpbnReconstruction { x_bar, solves });
            }
            let a = layer.map.adjoint(&h)?;
            target = a.iter().zip(&self.layers[l - 1].bias).map(|(a, b)| a - b).collect();
        }
        unreachable!("loop returns at the bottom layer")
    }

    /// Conventional tied-weight reconstruction:
    /// `u_{ℓ−1} = λ_ℓ(s_ℓ W_ℓ u_ℓ + c_ℓ)`.
    pub fn decode_aec(&self, z_top: &[f64]) -> Result<Vec<f64>> {
        if z_top.len() != self.feature_dim() {
            return Err(Error::Dimension { expected: self.feature_dim(), got: z_top.len() });
        }
        if let Some(bad) = z_top.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(*bad));
        }
        let mut u = z_top.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let kind = self.layer_input_kind(l);
            let wu = layer.map.adjoint(&u)?;
            u = wu
                .iter()
                .zip(&layer.recon_bias)
                .map(|(&v, &c)| kind.lambda(layer.recon_scale * v + c))
                .collect::<Result<Vec<_>>>()?;
        }
        Ok(u)
    }
}

/// Shape of a network to initialize.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkConfig {
    pub input_dim: usize,
    /// Output width of every layer, bottom-up (e.g. `[48, 24]`).
    pub nodes: Vec<usize>,
    /// MaxEnt kind of every layer's input, bottom-up. `kinds[0]` is the
    /// data kind and `kinds[ℓ]` the output activation of layer `ℓ − 1`.
    pub kinds: Vec<ActivationKind>,
    /// Multiplier on the default `1/√N` weight scale.
    pub init_scale: f64,
}

impl NetworkConfig {
    /// Every layer uses the same MaxEnt kind, as in the layered experiments.
    pub fn matched(input_dim: usize, nodes: Vec<usize>, kind: ActivationKind) -> Self {
        let kinds = vec![kind; nodes.len()];
        Self { input_dim, nodes, kinds, init_scale: 1.0 }
    }
}

/// Random weights `N(0, init_scale² / N_ℓ)`, zero biases, unit
/// reconstruction scale. Deterministic in `seed`.
pub fn init_params(config: &NetworkConfig, seed: u64) -> Result<Network> {
    if config.nodes.is_empty() || config.input_dim == 0 {
        return Err(Error::InvalidNetwork("need an input dimension and at least one layer".into()));
    }
    if config.kinds.len() != config.nodes.len() {
        return Err(Error::InvalidNetwork(format!(
            "{} layers but {} activation kinds",
            config.nodes.len(),
            config.kinds.len()
        )));
    }
    if !(config.init_scale.is_finite() && config.init_scale > 0.0) {
        return Err(Error::InvalidArgument(format!("init_scale must be positive, got {}", config.init_scale)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(config.nodes.len());
    let mut n = config.input_dim;
    for (l, &m) in config.nodes.iter().enumerate() {
        if m == 0 || m > n {
            return Err(Error::InvalidNetwork(format!("layer {l} maps {n} -> {m}")));
        }
        let normal = Normal::new(0.0, config.init_scale / (n as f64).sqrt()).expect("positive std dev");
        let data: Vec<f64> = (0..n * m).map(|_| normal.sample(&mut rng)).collect();
        let out = config.kinds.get(l + 1).copied();
        layers.push(Layer::new(LinearMap::Dense(DenseMatrix::new(n, m, data)?), out));
        n = m;
    }
    Network::new(config.kinds[0], layers)
}
