//! Reconstruction-error training for both decoders.
//!
//! The loss is the mean-square visible reconstruction error, averaged over
//! the N coordinates and over the samples whose reconstruction succeeded.
//! Samples whose D-PBN back-projection fails are dropped from both the sum
//! and the count.
//!
//! Gradients through a saddle solve `W′λ(W h) = t` are taken either
//! implicitly at the fixed point (one extra SPD solve with the final
//! Jacobian) or by back-propagating through the last `k` Newton updates,
//! restarted from a detached iterate.

use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::activation::ActivationKind;
use crate::error::{Error, Result};
use crate::linop::{DenseMatrix, LinearMap};
use crate::network::{init_params, EncodeTrace, Network, NetworkConfig};
use crate::saddle::{solve_saddle_traced, InnerSolver, Linearization, SaddleOptions, SolveTrace, SpdSystem};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Decoder {
    Dpbn,
    Aec,
}

impl Decoder {
    pub fn name(self) -> &'static str {
        match self {
            Decoder::Dpbn => "dpbn",
            Decoder::Aec => "aec",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GradMode {
    /// Differentiate the converged fixed point.
    #[default]
    ImplicitAdjoint,
    /// Back-propagate through the last `k` Newton updates.
    UnrolledLastK(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Weight decay on the weight matrices.
    pub l2_weight: f64,
    pub grad_mode: GradMode,
    pub seed: u64,
    /// Evaluate every this many epochs (the final epoch is always evaluated).
    pub eval_every: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            momentum: 0.9,
            batch_size: 32,
            epochs: 10,
            l2_weight: 0.0,
            grad_mode: GradMode::ImplicitAdjoint,
            seed: 0,
            eval_every: 1,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.eval_every == 0 {
            return bad("batch_size, epochs and eval_every must be positive".into());
        }
        if !(self.l2_weight >= 0.0) {
            return bad(format!("l2_weight must be nonnegative, got {}", self.l2_weight));
        }
        if self.grad_mode == GradMode::UnrolledLastK(0) {
            return bad("unrolled gradient needs k >= 1".into());
        }
        Ok(())
    }
}

/// Gradient of one layer's parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGradients {
    /// Row-major N × M, matching the weight layout.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub recon_scale: f64,
    pub recon_bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradients>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        let layers = net
            .layers()
            .iter()
            .map(|l| LayerGradients {
                weights: vec![0.0; l.n_in() * l.n_out()],
                bias: vec![0.0; l.n_out()],
                recon_scale: 0.0,
                recon_bias: vec![0.0; l.n_in()],
            })
            .collect();
        Self { layers }
    }

    fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            axpy(1.0, &b.weights, &mut a.weights);
            axpy(1.0, &b.bias, &mut a.bias);
            a.recon_scale += b.recon_scale;
            axpy(1.0, &b.recon_bias, &mut a.recon_bias);
        }
    }

    fn scale(&mut self, c: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|v| *v *= c);
            l.bias.iter_mut().for_each(|v| *v *= c);
            l.recon_scale *= c;
            l.recon_bias.iter_mut().for_each(|v| *v *= c);
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| {
                l.weights.iter().chain(&l.bias).chain(&l.recon_bias).map(|v| v * v).sum::<f64>()
                    + l.recon_scale * l.recon_scale
            })
            .sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).chain(&l.recon_bias).chain(std::iter::once(&l.recon_scale)))
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.recon_scale.is_finite() && l.weights.iter().chain(&l.bias).chain(&l.recon_bias).all(|v| v.is_finite())
        })
    }
}

/// Masked loss of a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchLoss {
    pub mse: f64,
    /// `true` where the sample reconstructed successfully.
    pub mask: Vec<bool>,
}

impl BatchLoss {
    pub fn successes(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

fn axpy(c: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += c * xi;
    }
}

/// `g[n, j] += c · u[n] · v[j]` for a row-major N × M block.
fn add_outer(g: &mut [f64], c: f64, u: &[f64], v: &[f64]) {
    let m = v.len();
    for (row, &un) in g.chunks_exact_mut(m).zip(u) {
        let s = c * un;
        if s != 0.0 {
            for (gj, &vj) in row.iter_mut().zip(v) {
                *gj += s * vj;
            }
        }
    }
}

fn dense_of(map: &LinearMap) -> Result<&DenseMatrix> {
    map.as_dense().ok_or_else(|| Error::InvalidNetwork("gradients are only available for dense weight matrices".into()))
}

/// Per-sample forward pass of a decoder with everything the backward pass
/// needs.
enum DecoderPass {
    Dpbn {
        /// Saddle targets `t_ℓ` (bottom-up).
        targets: Vec<Vec<f64>>,
        /// Saddle points `h_ℓ`.
        points: Vec<Vec<f64>>,
        traces: Vec<SolveTrace>,
    },
    Aec {
        /// `u_ℓ`: decoder input of every layer, `u_L = z_top` last.
        inputs: Vec<Vec<f64>>,
        /// `W_ℓ u_ℓ` before scale and bias.
        projected: Vec<Vec<f64>>,
        /// `s_ℓ W_ℓ u_ℓ + c_ℓ`.
        pre: Vec<Vec<f64>>,
    },
}

struct SamplePass {
    trace: EncodeTrace,
    recon: Vec<f64>,
    decoder: DecoderPass,
}

/// Outcome of one sample: squared error and unscaled gradient of
/// `‖x − x̂‖²`, or `None` when reconstruction failed.
struct SampleOutcome {
    sq_err: f64,
    grads: Option<Gradients>,
    warm: Option<Vec<Vec<f64>>>,
}

fn forward_sample(
    net: &Network,
    x: &[f64],
    decoder: Decoder,
    opts: &SaddleOptions,
    warm: Option<&[Vec<f64>]>,
) -> Result<Option<SamplePass>> {
    let trace = net.encode(x)?;
    match decoder {
        Decoder::Aec => {
            let n_layers = net.layers().len();
            let mut inputs = vec![Vec::new(); n_layers + 1];
            let mut projected = vec![Vec::new(); n_layers];
            let mut pre = vec![Vec::new(); n_layers];
            inputs[n_layers] = trace.z_top.clone();
            for l in (0..n_layers).rev() {
                let layer = &net.layers()[l];
                let kind = net.layer_input_kind(l);
                let wu = layer.map.adjoint(&inputs[l + 1])?;
                let p: Vec<f64> = wu.iter().zip(&layer.recon_bias).map(|(&v, &c)| layer.recon_scale * v + c).collect();
                let u = match p.iter().map(|&v| kind.lambda(v)).collect::<Result<Vec<_>>>() {
                    Ok(u) => u,
                    Err(Error::Domain { .. }) => return Ok(None),
                    Err(e) => return Err(e),
                };
                inputs[l] = u;
                projected[l] = wu;
                pre[l] = p;
            }
            let recon = inputs[0].clone();
            Ok(Some(SamplePass { trace, recon, decoder: DecoderPass::Aec { inputs, projected, pre } }))
        }
        Decoder::Dpbn => {
            let n_layers = net.layers().len();
            let mut targets = vec![Vec::new(); n_layers];
            let mut points = vec![Vec::new(); n_layers];
            let mut traces: Vec<SolveTrace> = (0..n_layers).map(|_| SolveTrace::default()).collect();
            let mut target = trace.z_top.clone();
            let mut recon = Vec::new();
            for l in (0..n_layers).rev() {
                let layer = &net.layers()[l];
                let kind = net.layer_input_kind(l);
                let h0 = warm.and_then(|w| w.get(l)).map(Vec::as_slice);
                let (result, solve_trace) = solve_saddle_traced(&layer.map, kind, &target, h0, opts)?;
                if result.failed {
                    return Ok(None);
                }
                let a = layer.map.adjoint(&result.h)?;
                targets[l] = std::mem::take(&mut target);
                points[l] = result.h;
                traces[l] = solve_trace;
                if l == 0 {
                    recon = match a.iter().map(|&v| kind.lambda(v)).collect::<Result<Vec<_>>>() {
                        Ok(r) => r,
                        Err(_) => return Ok(None),
                    };
                } else {
                    target = a.iter().zip(&net.layers()[l - 1].bias).map(|(a, b)| a - b).collect();
                }
            }
            Ok(Some(SamplePass { trace, recon, decoder: DecoderPass::Dpbn { targets, points, traces } }))
        }
    }
}

/// Gradient of a saddle point `h(W, t)` pulled back from `g_h`.
/// Returns `∂/∂t` and accumulates `∂/∂W` into `g_w`.
#[allow(clippy::too_many_arguments)]
fn saddle_backward(
    map: &LinearMap,
    kind: ActivationKind,
    h: &[f64],
    target: &[f64],
    trace: &SolveTrace,
    g_h: &[f64],
    mode: GradMode,
    g_w: &mut [f64],
) -> Result<Option<Vec<f64>>> {
    dense_of(map)?;
    let n = map.n_in();
    match mode {
        GradMode::ImplicitAdjoint => {
            let Ok(lin) = Linearization::at(map, kind, target, h.to_vec()) else { return Ok(None) };
            let Some(w) = SpdSystem::new(map, &lin.dlam, InnerSolver::DirectCholesky).and_then(|s| s.solve(g_h)) else {
                return Ok(None);
            };
            // ∂/∂W of −w′ W′ λ(W h) = −(λ w′ + (λ′ ⊙ W w) h′)
            let mut ww = vec![0.0; n];
            map.adjoint_into(&w, &mut ww);
            add_outer(g_w, -1.0, &lin.lam, &w);
            let dww: Vec<f64> = ww.iter().zip(&lin.dlam).map(|(a, b)| a * b).collect();
            add_outer(g_w, -1.0, &dww, h);
            Ok(Some(w))
        }
        GradMode::UnrolledLastK(k) => {
            // Start from the iterate k steps back, but never before a damped
            // step, and replay exactly k undamped Newton updates.
            let last = trace.iterates.len() - 1;
            let trailing_full = trace.step_scales.iter().rev().take_while(|&&s| s == 1.0).count();
            let start = last - trailing_full.min(k);
            let mut current = trace.iterates.get(start).cloned().unwrap_or_else(|| h.to_vec());
            let mut steps = Vec::with_capacity(k);
            for _ in 0..k {
                let Ok(lin) = Linearization::at(map, kind, target, current) else { return Ok(None) };
                let Some(system) = SpdSystem::new(map, &lin.dlam, InnerSolver::DirectCholesky) else {
                    return Ok(None);
                };
                let Some(delta) = system.solve(&lin.r) else { return Ok(None) };
                current = lin.h.iter().zip(&delta).map(|(a, b)| a + b).collect();
                drop(system);
                steps.push((lin, delta));
            }
            let mut g = g_h.to_vec();
            let mut g_t = vec![0.0; target.len()];
            let mut p = vec![0.0; n];
            let mut q = vec![0.0; n];
            for (lin, delta) in steps.iter().rev() {
                let Some(w) = SpdSystem::new(map, &lin.dlam, InnerSolver::DirectCholesky).and_then(|s| s.solve(&g))
                else {
                    return Ok(None);
                };
                axpy(1.0, &w, &mut g_t);
                map.adjoint_into(&w, &mut p);
                map.adjoint_into(delta, &mut q);
                let mut g_a = vec![0.0; n];
                for i in 0..n {
                    let third = kind.lambda_second(lin.a[i])?;
                    g_a[i] = -lin.dlam[i] * p[i] - p[i] * q[i] * third;
                }
                add_outer(g_w, -1.0, &lin.lam, &w);
                let dq: Vec<f64> = q.iter().zip(&lin.dlam).map(|(a, b)| a * b).collect();
                add_outer(g_w, -1.0, &dq, &w);
                let dp: Vec<f64> = p.iter().zip(&lin.dlam).map(|(a, b)| a * b).collect();
                add_outer(g_w, -1.0, &dp, delta);
                add_outer(g_w, 1.0, &g_a, &lin.h);
                let mut back = vec![0.0; g.len()];
                map.forward_into(&g_a, &mut back);
                axpy(1.0, &back, &mut g);
            }
            Ok(Some(g_t))
        }
    }
}

/// Back-propagates `g_ztop` through the encoder.
fn encoder_backward(net: &Network, trace: &EncodeTrace, g_ztop: Vec<f64>, grads: &mut Gradients) -> Result<()> {
    let mut g_z = g_ztop;
    for l in (0..net.layers().len()).rev() {
        let layer = &net.layers()[l];
        add_outer(&mut grads.layers[l].weights, 1.0, &trace.inputs[l], &g_z);
        if l == 0 {
            break;
        }
        let g_x = layer.map.adjoint(&g_z)?;
        let kind = net.layer_input_kind(l);
        let mut g_pre = Vec::with_capacity(g_x.len());
        for (gx, &pre) in g_x.iter().zip(&trace.biased[l - 1]) {
            g_pre.push(gx * kind.lambda_prime(pre)?);
        }
        axpy(1.0, &g_pre, &mut grads.layers[l - 1].bias);
        g_z = g_pre;
    }
    Ok(())
}

fn backward_sample(net: &Network, pass: &SamplePass, x: &[f64], mode: GradMode) -> Result<Option<Gradients>> {
    let mut grads = Gradients::zeros_like(net);
    let g_recon: Vec<f64> = pass.recon.iter().zip(x).map(|(r, x)| 2.0 * (r - x)).collect();
    let n_layers = net.layers().len();
    let g_ztop = match &pass.decoder {
        DecoderPass::Aec { inputs, projected, pre } => {
            let mut g_u = g_recon;
            for l in 0..n_layers {
                let layer = &net.layers()[l];
                let kind = net.layer_input_kind(l);
                let mut g_pre = Vec::with_capacity(g_u.len());
                for (gu, &p) in g_u.iter().zip(&pre[l]) {
                    g_pre.push(gu * kind.lambda_prime(p)?);
                }
                let lg = &mut grads.layers[l];
                axpy(1.0, &g_pre, &mut lg.recon_bias);
                lg.recon_scale += g_pre.iter().zip(&projected[l]).map(|(a, b)| a * b).sum::<f64>();
                add_outer(&mut lg.weights, layer.recon_scale, &g_pre, &inputs[l + 1]);
                let mut g_next = layer.map.forward(&g_pre)?;
                g_next.iter_mut().for_each(|v| *v *= layer.recon_scale);
                g_u = g_next;
            }
            g_u
        }
        DecoderPass::Dpbn { targets, points, traces } => {
            let kind0 = net.layer_input_kind(0);
            let a0 = net.layers()[0].map.adjoint(&points[0])?;
            let mut g_a = Vec::with_capacity(a0.len());
            for (g, &a) in g_recon.iter().zip(&a0) {
                g_a.push(g * kind0.lambda_prime(a)?);
            }
            let mut g_t = Vec::new();
            for l in 0..n_layers {
                let layer = &net.layers()[l];
                let h = &points[l];
                add_outer(&mut grads.layers[l].weights, 1.0, &g_a, h);
                let g_h = layer.map.forward(&g_a)?;
                let Some(gt) = saddle_backward(
                    &layer.map,
                    net.layer_input_kind(l),
                    h,
                    &targets[l],
                    &traces[l],
                    &g_h,
                    mode,
                    &mut grads.layers[l].weights,
                )?
                else {
                    return Ok(None);
                };
                if l + 1 < n_layers {
                    axpy(-1.0, &gt, &mut grads.layers[l].bias);
                    g_a = gt;
                } else {
                    g_t = gt;
                }
            }
            g_t
        }
    };
    encoder_backward(net, &pass.trace, g_ztop, &mut grads)?;
    Ok(Some(grads))
}

fn squared_error(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn run_sample(
    net: &Network,
    x: &[f64],
    decoder: Decoder,
    opts: &SaddleOptions,
    warm: Option<&[Vec<f64>]>,
    grad_mode: Option<GradMode>,
) -> Result<Option<SampleOutcome>> {
    let Some(pass) = forward_sample(net, x, decoder, opts, warm)? else { return Ok(None) };
    let sq_err = squared_error(&pass.recon, x);
    if !sq_err.is_finite() {
        return Ok(None);
    }
    let grads = match grad_mode {
        Some(mode) => match backward_sample(net, &pass, x, mode)? {
            Some(g) => Some(g),
            None => return Ok(None),
        },
        None => None,
    };
    let warm = match &pass.decoder {
        DecoderPass::Dpbn { points, .. } => Some(points.clone()),
        DecoderPass::Aec { .. } => None,
    };
    Ok(Some(SampleOutcome { sq_err, grads, warm }))
}

fn run_batch<X: AsRef<[f64]> + Sync>(
    net: &Network,
    batch: &[X],
    decoder: Decoder,
    opts: &SaddleOptions,
    warm: Option<&[Option<Vec<Vec<f64>>>]>,
    grad_mode: Option<GradMode>,
) -> Result<Vec<Option<SampleOutcome>>> {
    batch
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let w = warm.and_then(|w| w[i].as_deref());
            run_sample(net, x.as_ref(), decoder, opts, w, grad_mode)
        })
        .collect()
}

fn summarize(outcomes: &[Option<SampleOutcome>], n: usize) -> Result<(BatchLoss, usize)> {
    if outcomes.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mask: Vec<bool> = outcomes.iter().map(Option::is_some).collect();
    let count = mask.iter().filter(|&&m| m).count();
    if count == 0 {
        return Err(Error::AllSamplesFailed(outcomes.len()));
    }
    let total: f64 = outcomes.iter().flatten().map(|o| o.sq_err).sum();
    Ok((BatchLoss { mse: total / (n * count) as f64, mask }, count))
}

/// Masked mean-square reconstruction error of a batch.
pub fn batch_loss<X: AsRef<[f64]> + Sync>(
    net: &Network,
    batch: &[X],
    decoder: Decoder,
    opts: &SaddleOptions,
) -> Result<BatchLoss> {
    let outcomes = run_batch(net, batch, decoder, opts, None, None)?;
    Ok(summarize(&outcomes, net.input_dim())?.0)
}

/// Masked loss and its exact gradient with respect to every parameter.
pub fn gradients<X: AsRef<[f64]> + Sync>(
    net: &Network,
    batch: &[X],
    decoder: Decoder,
    grad_mode: GradMode,
    opts: &SaddleOptions,
) -> Result<(BatchLoss, Gradients)> {
    let outcomes = run_batch(net, batch, decoder, opts, None, Some(grad_mode))?;
    let (loss, count) = summarize(&outcomes, net.input_dim())?;
    Ok((loss, reduce_gradients(net, &outcomes, count)))
}

fn reduce_gradients(net: &Network, outcomes: &[Option<SampleOutcome>], count: usize) -> Gradients {
    let mut total = Gradients::zeros_like(net);
    for g in outcomes.iter().flatten().filter_map(|o| o.grads.as_ref()) {
        total.add_assign(g);
    }
    total.scale(1.0 / (net.input_dim() * count) as f64);
    total
}

/// Mean-square error and sampling efficiency over a dataset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Evaluation {
    /// MSE over the successfully reconstructed samples (NaN if none).
    pub mse: f64,
    pub sampling_efficiency: f64,
}

/// Cold-start evaluation of a decoder over a dataset.
pub fn evaluate<X: AsRef<[f64]> + Sync>(
    net: &Network,
    data: &[X],
    decoder: Decoder,
    opts: &SaddleOptions,
) -> Result<Evaluation> {
    if data.is_empty() {
        return Ok(Evaluation { mse: f64::NAN, sampling_efficiency: 0.0 });
    }
    let outcomes = run_batch(net, data, decoder, opts, None, None)?;
    let count = outcomes.iter().filter(|o| o.is_some()).count();
    let total: f64 = outcomes.iter().flatten().map(|o| o.sq_err).sum();
    let mse = if count == 0 { f64::NAN } else { total / (net.input_dim() * count) as f64 };
    Ok(Evaluation { mse, sampling_efficiency: count as f64 / data.len() as f64 })
}

/// Fraction of samples whose full D-PBN back-projection succeeds at every
/// layer.
pub fn sampling_efficiency<X: AsRef<[f64]> + Sync>(net: &Network, data: &[X], opts: &SaddleOptions) -> Result<f64> {
    if data.is_empty() {
        return Ok(0.0);
    }
    let ok: Vec<bool> = data
        .par_iter()
        .map(|x| Ok(!net.reconstruct_dpbn(&net.feature(x.as_ref())?, opts)?.failed()))
        .collect::<Result<_>>()?;
    Ok(ok.iter().filter(|&&b| b).count() as f64 / data.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train: Evaluation,
    pub test: Evaluation,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub decoder: Decoder,
    pub epochs: Vec<EpochRecord>,
    pub model: Network,
}

impl TrainReport {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

struct Momentum {
    layers: Vec<LayerGradients>,
}

fn sgd_step(net: &mut Network, grads: &Gradients, velocity: &mut Momentum, hyper: &Hyperparams) {
    let (lr, mu, l2) = (hyper.learning_rate, hyper.momentum, hyper.l2_weight);
    for ((layer, g), v) in net.layers_mut().iter_mut().zip(&grads.layers).zip(&mut velocity.layers) {
        let w = layer.map.as_dense_mut().expect("checked before training").data_mut();
        for ((wi, gi), vi) in w.iter_mut().zip(&g.weights).zip(&mut v.weights) {
            *vi = mu * *vi - lr * (gi + l2 * *wi);
            *wi += *vi;
        }
        for ((bi, gi), vi) in layer.bias.iter_mut().zip(&g.bias).zip(&mut v.bias) {
            *vi = mu * *vi - lr * gi;
            *bi += *vi;
        }
        v.recon_scale = mu * v.recon_scale - lr * g.recon_scale;
        layer.recon_scale += v.recon_scale;
        for ((ci, gi), vi) in layer.recon_bias.iter_mut().zip(&g.recon_bias).zip(&mut v.recon_bias) {
            *vi = mu * *vi - lr * gi;
            *ci += *vi;
        }
    }
}

fn parameters_finite(net: &Network) -> bool {
    net.layers().iter().all(|l| {
        l.recon_scale.is_finite()
            && l.bias.iter().chain(&l.recon_bias).all(|v| v.is_finite())
            && l.map.as_dense().is_none_or(|m| m.data().iter().all(|v| v.is_finite()))
    })
}

fn check_trainable(net: &Network, data: &[Vec<f64>], what: &str) -> Result<()> {
    if net.layers().iter().any(|l| l.map.as_dense().is_none()) {
        return Err(Error::InvalidNetwork("training requires dense weight matrices".into()));
    }
    for (i, x) in data.iter().enumerate() {
        if x.len() != net.input_dim() {
            return Err(Error::InvalidArgument(format!(
                "{what} sample {i} has length {}, network expects {}",
                x.len(),
                net.input_dim()
            )));
        }
    }
    Ok(())
}

/// Trains with SGD and momentum over shuffled minibatches.
pub fn train(
    net: Network,
    train_set: &[Vec<f64>],
    test_set: &[Vec<f64>],
    hyper: &Hyperparams,
    decoder: Decoder,
    opts: &SaddleOptions,
) -> Result<TrainReport> {
    train_with_callback(net, train_set, test_set, hyper, decoder, opts, |_| {})
}

/// [`train`] with a hook called after every evaluated epoch.
pub fn train_with_callback(
    mut net: Network,
    train_set: &[Vec<f64>],
    test_set: &[Vec<f64>],
    hyper: &Hyperparams,
    decoder: Decoder,
    opts: &SaddleOptions,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    hyper.validate()?;
    opts.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyBatch);
    }
    check_trainable(&net, train_set, "training")?;
    check_trainable(&net, test_set, "test")?;

    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut velocity = Momentum { layers: Gradients::zeros_like(&net).layers };
    let mut warm: Vec<Option<Vec<Vec<f64>>>> = vec![None; train_set.len()];
    let mut epochs = Vec::new();
    let started = Instant::now();

    let n_batches = train_set.len().div_ceil(hyper.batch_size);
    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut rng);
        for (b, idx) in order.chunks(hyper.batch_size).enumerate() {
            let batch: Vec<&[f64]> = idx.iter().map(|&i| train_set[i].as_slice()).collect();
            let batch_warm: Vec<Option<Vec<Vec<f64>>>> = idx.iter().map(|&i| warm[i].clone()).collect();
            let outcomes = match run_batch(&net, &batch, decoder, opts, Some(&batch_warm), Some(hyper.grad_mode)) {
                Ok(o) => o,
                Err(Error::NonFinite(v)) => return Err(Error::Diverged { epoch, batch: b, loss: v }),
                Err(e) => return Err(e),
            };
            for (&i, o) in idx.iter().zip(&outcomes) {
                warm[i] = o.as_ref().and_then(|o| o.warm.clone());
            }
            let (loss, count) = match summarize(&outcomes, net.input_dim()) {
                Ok(v) => v,
                Err(Error::AllSamplesFailed(n)) => {
                    warn!("epoch {epoch} batch {b}: all {n} samples failed, skipping update");
                    continue;
                }
                Err(e) => return Err(e),
            };
            let grads = reduce_gradients(&net, &outcomes, count);
            if !loss.mse.is_finite() || !grads.is_finite() {
                return Err(Error::Diverged { epoch, batch: b, loss: loss.mse });
            }
            sgd_step(&mut net, &grads, &mut velocity, hyper);
            if !parameters_finite(&net) {
                return Err(Error::Diverged { epoch, batch: b, loss: loss.mse });
            }
        }
        if epoch % hyper.eval_every == 0 || epoch == hyper.epochs {
            let diverged = |e| match e {
                Error::NonFinite(v) => Error::Diverged { epoch, batch: n_batches, loss: v },
                e => e,
            };
            let train_eval = evaluate(&net, train_set, decoder, opts).map_err(diverged)?;
            let test_eval = evaluate(&net, test_set, decoder, opts).map_err(diverged)?;
            let record =
                EpochRecord { epoch, train: train_eval, test: test_eval, seconds: started.elapsed().as_secs_f64() };
            info!(
                "{} epoch {epoch}: train mse {:.6} (eff {:.3}), test mse {:.6} (eff {:.3})",
                decoder.name(),
                record.train.mse,
                record.train.sampling_efficiency,
                record.test.mse,
                record.test.sampling_efficiency
            );
            on_epoch(&record);
            epochs.push(record);
        }
    }
    Ok(TrainReport { decoder, epochs, model: net })
}

/// Restarts allowed when a multi-layer D-PBN starts with poor sampling
/// efficiency.
pub const MAX_INIT_RESTARTS: usize = 3;

/// Sets every hidden bias to minus the mean of its pre-activation over
/// `data`, so hidden units start centred on the data.
pub fn centre_hidden_biases(net: &Network, data: &[Vec<f64>]) -> Result<Network> {
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut layers = net.layers().to_vec();
    for l in 0..layers.len() - 1 {
        let current = Network::new(net.input_kind(), layers.clone())?;
        let traces = data.par_iter().map(|x| current.encode(x)).collect::<Result<Vec<_>>>()?;
        let mut mean = vec![0.0; layers[l].n_out()];
        for t in &traces {
            axpy(1.0, &t.pre_activations[l], &mut mean);
        }
        layers[l].bias = mean.iter().map(|v| -v / data.len() as f64).collect();
    }
    Network::new(net.input_kind(), layers)
}

/// Initializes a network for training.
///
/// A multi-layer D-PBN whose sampling efficiency on `train_set` is below
/// one half first gets its hidden biases centred on the data
/// ([`centre_hidden_biases`]); if that is not enough it is re-initialized
/// with half the weight scale, at most [`MAX_INIT_RESTARTS`] times.
pub fn initial_network(
    config: &NetworkConfig,
    seed: u64,
    decoder: Decoder,
    train_set: &[Vec<f64>],
    opts: &SaddleOptions,
) -> Result<Network> {
    let mut cfg = config.clone();
    let mut net = init_params(&cfg, seed)?;
    if decoder != Decoder::Dpbn || cfg.nodes.len() < 2 {
        return Ok(net);
    }
    for restart in 0..=MAX_INIT_RESTARTS {
        if restart > 0 {
            cfg.init_scale *= 0.5;
            info!("restart {restart}: weight scale {}", cfg.init_scale);
            net = init_params(&cfg, seed)?;
        }
        let eff = sampling_efficiency(&net, train_set, opts)?;
        if eff >= 0.5 {
            return Ok(net);
        }
        let centred = centre_hidden_biases(&net, train_set)?;
        let centred_eff = sampling_efficiency(&centred, train_set, opts)?;
        info!("initial sampling efficiency {eff:.3}; {centred_eff:.3} with centred hidden biases");
        if centred_eff >= 0.5 || restart == MAX_INIT_RESTARTS {
            if centred_eff < 0.5 {
                warn!("initial sampling efficiency {centred_eff:.3} still below 0.5 after {restart} restarts");
            }
            return Ok(centred);
        }
    }
    unreachable!("the last restart returns")
}
