//! Independent oracles and helpers shared by the integration tests.
#![allow(dead_code)]

use dpbn_core::network::{Layer, Network};
use dpbn_core::training::{batch_loss, gradients, Decoder, GradMode, Gradients};
use dpbn_core::{ActivationKind, DataRange, LinearMap, SaddleOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A random vector strictly inside `range`, away from the boundaries.
pub fn in_range(rng: &mut ChaCha8Rng, range: DataRange, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| match range {
            DataRange::UnitInterval => rng.random_range(0.1..0.9),
            DataRange::Positives => rng.random_range(0.2..2.5),
            DataRange::Reals => rng.random_range(-2.0..2.0),
        })
        .collect()
}

/// Adaptive Simpson integration with Richardson correction.
pub fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    #[allow(clippy::too_many_arguments)]
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// Mean and variance of the prior behind `kind` at natural parameter `a`,
/// written out per variant from the density definitions.
pub fn oracle_moments(kind: ActivationKind, a: f64) -> (f64, f64) {
    // log-density up to a constant, and a finite interval holding the mass
    let (log_p, lo, hi, peak): (Box<dyn Fn(f64) -> f64>, f64, f64, f64) = match kind {
        ActivationKind::Linear { sigma_sq } => {
            let (mu, s) = (sigma_sq * a, sigma_sq.sqrt());
            (Box::new(move |x| a * x - x * x / (2.0 * sigma_sq)), mu - 40.0 * s, mu + 40.0 * s, mu)
        }
        ActivationKind::TruncGauss { sigma_sq } => {
            let mu = sigma_sq * a;
            (
                Box::new(move |x| a * x - x * x / (2.0 * sigma_sq)),
                0.0,
                mu.max(0.0) + 40.0 * sigma_sq.sqrt(),
                mu.max(0.0),
            )
        }
        ActivationKind::Exponential => (Box::new(move |x| a * x), 0.0, 60.0 / -a, 0.0),
        ActivationKind::Ted => (Box::new(move |x| a * x), 0.0, 1.0, if a > 0.0 { 1.0 } else { 0.0 }),
    };
    let shift = log_p(peak);
    let w = |x: f64| (log_p(x) - shift).exp();
    // Break the interval into pieces scaled to the density's width so the
    // adaptive rule cannot step over the mass.
    let width = match kind {
        ActivationKind::Linear { sigma_sq } | ActivationKind::TruncGauss { sigma_sq } => {
            sigma_sq.sqrt().min(1.0 / a.abs().max(1e-9))
        }
        _ => (1.0 / a.abs().max(1e-9)).min(hi - lo),
    };
    let pieces = (((hi - lo) / width).ceil() as usize).clamp(1, 4000);
    let h = (hi - lo) / pieces as f64;
    let integrate = |g: &dyn Fn(f64) -> f64| {
        (0..pieces).map(|i| simpson(g, lo + i as f64 * h, lo + (i + 1) as f64 * h, 1e-15)).sum::<f64>()
    };
    let z = integrate(&|x| w(x));
    let mean = integrate(&|x| x * w(x)) / z;
    let var = integrate(&|x| (x - mean) * (x - mean) * w(x)) / z;
    (mean, var)
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
pub fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        let (top, rest) = a.split_at_mut(col + 1);
        let pivot = &top[col];
        for (r, row) in rest.iter_mut().enumerate() {
            let f = row[col] / pivot[col];
            for (x, p) in row[col..].iter_mut().zip(&pivot[col..]) {
                *x -= f * p;
            }
            b[col + 1 + r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Minimum-norm `x` with `W′ x = z`: `x = W (W′W)⁻¹ z`.
pub fn min_norm_solution(w: &[f64], n: usize, m: usize, z: &[f64]) -> Vec<f64> {
    let gram: Vec<Vec<f64>> =
        (0..m).map(|i| (0..m).map(|j| (0..n).map(|k| w[k * m + i] * w[k * m + j]).sum()).collect()).collect();
    let c = solve_dense(gram, z.to_vec());
    (0..n).map(|k| (0..m).map(|j| w[k * m + j] * c[j]).sum()).collect()
}

/// Which parameter a finite difference perturbs.
#[derive(Clone, Copy, Debug)]
pub enum Param {
    Weight(usize, usize),
    Bias(usize, usize),
    ReconScale(usize),
    ReconBias(usize, usize),
}

pub fn params_of(net: &Network) -> Vec<Param> {
    let mut out = Vec::new();
    for (l, layer) in net.layers().iter().enumerate() {
        out.extend((0..layer.n_in() * layer.n_out()).map(|i| Param::Weight(l, i)));
        out.extend((0..layer.n_out()).map(|i| Param::Bias(l, i)));
        out.push(Param::ReconScale(l));
        out.extend((0..layer.n_in()).map(|i| Param::ReconBias(l, i)));
    }
    out
}

pub fn with_layers(net: &Network, f: impl FnOnce(&mut Vec<Layer>)) -> Network {
    let mut layers = net.layers().to_vec();
    f(&mut layers);
    Network::new(net.input_kind(), layers).unwrap()
}

pub fn nudge(net: &Network, p: Param, delta: f64) -> Network {
    with_layers(net, |layers| match p {
        Param::Weight(l, i) => layers[l].map.as_dense_mut().unwrap().data_mut()[i] += delta,
        Param::Bias(l, i) => layers[l].bias[i] += delta,
        Param::ReconScale(l) => layers[l].recon_scale += delta,
        Param::ReconBias(l, i) => layers[l].recon_bias[i] += delta,
    })
}

pub fn grad_of(g: &Gradients, p: Param) -> f64 {
    match p {
        Param::Weight(l, i) => g.layers[l].weights[i],
        Param::Bias(l, i) => g.layers[l].bias[i],
        Param::ReconScale(l) => g.layers[l].recon_scale,
        Param::ReconBias(l, i) => g.layers[l].recon_bias[i],
    }
}

pub fn block_name(p: Param) -> String {
    match p {
        Param::Weight(l, _) => format!("W{l}"),
        Param::Bias(l, _) => format!("b{l}"),
        Param::ReconScale(l) => format!("s{l}"),
        Param::ReconBias(l, _) => format!("c{l}"),
    }
}

/// Central finite differences of the batch loss for every parameter.
pub fn fd_gradient(
    net: &Network,
    batch: &[Vec<f64>],
    decoder: Decoder,
    opts: &SaddleOptions,
    step: f64,
) -> Vec<(Param, f64)> {
    params_of(net)
        .into_iter()
        .map(|p| {
            let up = batch_loss(&nudge(net, p, step), batch, decoder, opts).unwrap().mse;
            let down = batch_loss(&nudge(net, p, -step), batch, decoder, opts).unwrap().mse;
            (p, (up - down) / (2.0 * step))
        })
        .collect()
}

/// Worst per-block relative error `‖g − fd‖ / ‖fd‖` (absolute when the
/// block's finite difference is negligible).
pub fn worst_block_error(g: &Gradients, fd: &[(Param, f64)]) -> (String, f64) {
    use std::collections::BTreeMap;
    let mut blocks: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    for &(p, v) in fd {
        let e = blocks.entry(block_name(p)).or_default();
        e.0 += (grad_of(g, p) - v).powi(2);
        e.1 += v * v;
    }
    blocks
        .into_iter()
        .map(|(k, (diff, norm))| (k, diff.sqrt() / norm.sqrt().max(1e-6)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
}

pub fn tight() -> SaddleOptions {
    SaddleOptions { residual_tol: 1e-13, fail_tol: 1e-8, ..Default::default() }
}

pub fn batch_for(net: &Network, seed: u64, size: usize) -> Vec<Vec<f64>> {
    let mut r = rng(seed);
    (0..size).map(|_| in_range(&mut r, net.input_range(), net.input_dim())).collect()
}

/// `size` in-range samples whose D-PBN reconstruction succeeds.
pub fn feasible_batch(net: &Network, seed: u64, size: usize, opts: &SaddleOptions) -> Vec<Vec<f64>> {
    let batch: Vec<Vec<f64>> = batch_for(net, seed, 50 * size)
        .into_iter()
        .filter(|x| !net.reconstruct_dpbn(&net.feature(x).unwrap(), opts).unwrap().failed())
        .take(size)
        .collect();
    assert_eq!(batch.len(), size, "not enough feasible samples");
    batch
}

/// Worst block error of the analytic gradient against central differences
/// on a two-sample feasible batch.
pub fn check_fd(net: &Network, decoder: Decoder, mode: GradMode, seed: u64) -> (String, f64) {
    let opts = tight();
    let batch = feasible_batch(net, seed, 2, &opts);
    let (loss, g) = gradients(net, &batch, decoder, mode, &opts).unwrap();
    assert_eq!(loss.successes(), 2, "{decoder:?} sample failed");
    let fd = fd_gradient(net, &batch, decoder, &opts, 1e-5);
    worst_block_error(&g, &fd)
}

fn midpoint(range: DataRange) -> f64 {
    match range {
        DataRange::Reals => 0.0,
        DataRange::Positives => 1.0,
        DataRange::UnitInterval => 0.5,
    }
}

/// A small random dense network with nonzero biases and reconstruction
/// parameters. Hidden biases cancel the image of the range midpoint, so
/// hidden activations start near the middle of their range and the
/// back-projected targets stay feasible.
pub fn small_net(kind: ActivationKind, dims: &[usize], seed: u64, scale: f64) -> Network {
    let mut r = rng(seed);
    let mut layers = Vec::new();
    for l in 0..dims.len() - 1 {
        let (n, m) = (dims[l], dims[l + 1]);
        let s = scale / (n as f64).sqrt();
        let w: Vec<f64> = (0..n * m).map(|_| r.random_range(-s..s) * 3f64.sqrt()).collect();
        let out = (l + 2 < dims.len()).then_some(kind);
        let map = LinearMap::dense(n, m, w).unwrap();
        let centre = map.forward(&vec![midpoint(kind.range()); n]).unwrap();
        let mut layer = Layer::new(map, out);
        layer.bias = centre.iter().map(|c| r.random_range(-0.2..0.2) - c).collect();
        layer.recon_scale = r.random_range(0.6..1.4);
        layer.recon_bias = (0..n).map(|_| r.random_range(-0.2..0.2)).collect();
        layers.push(layer);
    }
    Network::new(kind, layers).unwrap()
}

/// One pass/fail line per acceptance criterion.
pub fn report(id: &str, name: &str, pass: bool, detail: &str) {
    println!("[{}] criterion {id}: {name} | {detail}", if pass { "PASS" } else { "FAIL" });
}
