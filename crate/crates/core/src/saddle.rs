//! The reconstruction non-linearity `γ(h) = W′ λ(W h)` and its inverse.
//!
//! Solving `γ(h) = z` gives the saddle point `h`; the MaxEnt conditional
//! mean of the input given the feature `z` is then `x̄ = λ(W h)`. The
//! Jacobian `J(h) = W′ diag(λ′(W h)) W` is symmetric positive definite, so
//! the solve is a damped Newton iteration with a Cholesky or conjugate
//! gradient inner solve.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::activation::ActivationKind;
use crate::error::{Error, Result};
use crate::linop::{dot, LinearMap};

/// Feature dimensions up to this size use a dense Cholesky inner solve
/// when [`InnerSolver::Auto`] is selected.
pub const AUTO_CHOLESKY_MAX_DIM: usize = 512;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum InnerSolver {
    /// Cholesky for `M ≤ 512`, preconditioned conjugate gradient above.
    #[default]
    Auto,
    DirectCholesky,
    ConjugateGradient {
        tol: f64,
        max_iters: usize,
    },
}

const DEFAULT_CG: InnerSolver = InnerSolver::ConjugateGradient { tol: 1e-11, max_iters: 5000 };

#[derive(Clone, Debug, PartialEq)]
pub struct SaddleOptions {
    pub max_iters: usize,
    /// Converged when `‖γ(h) − z‖∞ ≤ residual_tol`.
    pub residual_tol: f64,
    /// Failed when the final residual exceeds `fail_tol`.
    pub fail_tol: f64,
    pub initial_step: f64,
    pub backtrack_factor: f64,
    pub max_backtracks: usize,
    pub inner_solver: InnerSolver,
}

impl Default for SaddleOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            residual_tol: 1e-9,
            fail_tol: 1e-6,
            initial_step: 1.0,
            backtrack_factor: 0.5,
            max_backtracks: 30,
            inner_solver: InnerSolver::Auto,
        }
    }
}

impl SaddleOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(format!("saddle options: {msg}")));
        if self.max_iters == 0 {
            return bad("max_iters must be positive");
        }
        if !(self.residual_tol > 0.0 && self.fail_tol > 0.0) {
            return bad("tolerances must be positive");
        }
        if self.residual_tol >= self.fail_tol {
            return bad("residual_tol must be smaller than fail_tol");
        }
        if !(self.initial_step > 0.0 && self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return bad("damping needs initial_step > 0 and 0 < backtrack_factor < 1");
        }
        Ok(())
    }

    fn resolved_inner(&self, m: usize) -> InnerSolver {
        match self.inner_solver {
            InnerSolver::Auto if m <= AUTO_CHOLESKY_MAX_DIM => InnerSolver::DirectCholesky,
            InnerSolver::Auto => DEFAULT_CG,
            other => other,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SaddleResult {
    pub h: Vec<f64>,
    pub residual_inf: f64,
    pub iterations: usize,
    pub converged: bool,
    pub failed: bool,
}

/// Residual history and accepted iterates of one solve.
#[derive(Clone, Debug, Default)]
pub struct SolveTrace {
    /// `‖γ(h) − z‖∞` at the start and after every accepted step.
    pub residuals: Vec<f64>,
    /// Every iterate, starting with `h₀`.
    pub iterates: Vec<Vec<f64>>,
    /// Step scale accepted for each Newton step (1.0 = undamped).
    pub step_scales: Vec<f64>,
}

/// `γ(h) = W′ λ(W h)`.
pub fn gamma(map: &LinearMap, kind: ActivationKind, h: &[f64]) -> Result<Vec<f64>> {
    check_len(map.n_out(), h.len())?;
    let a = map.adjoint(h)?;
    let lam = apply_lambda(kind, &a)?;
    map.forward(&lam)
}

/// `J(h) v = W′ diag(λ′(W h)) W v`.
pub fn jacobian_apply(map: &LinearMap, kind: ActivationKind, h: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    check_len(map.n_out(), h.len())?;
    check_len(map.n_out(), v.len())?;
    let a = map.adjoint(h)?;
    let mut wv = map.adjoint(v)?;
    for (i, (x, &ai)) in wv.iter_mut().zip(&a).enumerate() {
        *x *= kind.lambda_prime(ai).map_err(|e| exp_domain(e, i, ai))?;
    }
    map.forward(&wv)
}

/// Element-wise λ, reporting the offending coordinate on a domain error.
pub fn apply_lambda(kind: ActivationKind, a: &[f64]) -> Result<Vec<f64>> {
    a.iter().enumerate().map(|(i, &ai)| kind.lambda(ai).map_err(|e| exp_domain(e, i, ai))).collect()
}

fn exp_domain(e: Error, index: usize, value: f64) -> Error {
    match e {
        Error::Domain { kind: "exponential", .. } => Error::ExponentialDomain { index, value },
        other => other,
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| if x.is_nan() { f64::NAN } else { m.max(x.abs()) })
}

/// Everything the Newton iteration needs at one iterate.
pub(crate) struct Linearization {
    pub h: Vec<f64>,
    /// `W h`
    pub a: Vec<f64>,
    pub lam: Vec<f64>,
    pub dlam: Vec<f64>,
    /// `z − γ(h)`
    pub r: Vec<f64>,
    pub res: f64,
}

impl Linearization {
    pub(crate) fn at(map: &LinearMap, kind: ActivationKind, z: &[f64], h: Vec<f64>) -> Result<Self> {
        let mut a = vec![0.0; map.n_in()];
        map.adjoint_into(&h, &mut a);
        let mut lam = Vec::with_capacity(a.len());
        let mut dlam = Vec::with_capacity(a.len());
        for (i, &ai) in a.iter().enumerate() {
            let (l, d) = kind.lambda_and_prime(ai).map_err(|e| exp_domain(e, i, ai))?;
            lam.push(l);
            dlam.push(d);
        }
        let mut r = vec![0.0; z.len()];
        map.forward_into(&lam, &mut r);
        for (ri, zi) in r.iter_mut().zip(z) {
            *ri = zi - *ri;
        }
        let res = inf_norm(&r);
        Ok(Self { h, a, lam, dlam, r, res })
    }
}

/// A symmetric positive definite system `W′ diag(d) W`, ready to solve.
pub(crate) enum SpdSystem<'a> {
    Factored(Cholesky<f64, Dyn>),
    MatrixFree { map: &'a LinearMap, d: &'a [f64], precond: Vec<f64>, tol: f64, max_iters: usize },
}

impl<'a> SpdSystem<'a> {
    pub(crate) fn new(map: &'a LinearMap, d: &'a [f64], inner: InnerSolver) -> Option<Self> {
        match inner {
            InnerSolver::ConjugateGradient { tol, max_iters } => {
                let precond: Vec<f64> = map.weighted_gram_diagonal(d).iter().map(|v| 1.0 / v).collect();
                if precond.iter().any(|p| !p.is_finite() || *p <= 0.0) {
                    return None;
                }
                Some(SpdSystem::MatrixFree { map, d, precond, tol, max_iters })
            }
            _ => {
                let j: DMatrix<f64> = map.weighted_gram(d);
                Cholesky::new(j).map(SpdSystem::Factored)
            }
        }
    }

    pub(crate) fn solve(&self, rhs: &[f64]) -> Option<Vec<f64>> {
        let x = match self {
            SpdSystem::Factored(chol) => chol.solve(&DVector::from_column_slice(rhs)).as_slice().to_vec(),
            SpdSystem::MatrixFree { map, d, precond, tol, max_iters } => {
                preconditioned_cg(map, d, precond, rhs, *tol, *max_iters)?
            }
        };
        x.iter().all(|v| v.is_finite()).then_some(x)
    }
}

fn preconditioned_cg(
    map: &LinearMap,
    d: &[f64],
    precond: &[f64],
    b: &[f64],
    tol: f64,
    max_iters: usize,
) -> Option<Vec<f64>> {
    let m = b.len();
    let mut wide = vec![0.0; map.n_in()];
    let mut apply = |v: &[f64], out: &mut [f64]| {
        map.adjoint_into(v, &mut wide);
        for (w, dn) in wide.iter_mut().zip(d) {
            *w *= dn;
        }
        map.forward_into(&wide, out);
    };
    let b_norm = dot(b, b).sqrt();
    let mut x = vec![0.0; m];
    if b_norm == 0.0 {
        return Some(x);
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(precond).map(|(a, p)| a * p).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; m];
    for _ in 0..max_iters {
        apply(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return None;
        }
        let alpha = rz / pap;
        for i in 0..m {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if dot(&r, &r).sqrt() <= tol * b_norm {
            return Some(x);
        }
        for i in 0..m {
            z[i] = r[i] * precond[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..m {
            p[i] = z[i] + beta * p[i];
        }
    }
    // Inexact steps are still usable by the outer iteration.
    Some(x)
}

/// Default starting point. Zero everywhere except for the exponential
/// kind, which needs `W h < 0`; there the least-squares solution of
/// `W h = −1` is used.
fn initial_point(map: &LinearMap, kind: ActivationKind, opts: &SaddleOptions) -> Option<Vec<f64>> {
    let m = map.n_out();
    if !matches!(kind, ActivationKind::Exponential) {
        return Some(vec![0.0; m]);
    }
    let ones = vec![1.0; map.n_in()];
    let mut rhs = vec![0.0; m];
    map.forward_into(&ones, &mut rhs);
    rhs.iter_mut().for_each(|v| *v = -*v);
    let system = SpdSystem::new(map, &ones, opts.resolved_inner(m))?;
    let h = system.solve(&rhs)?;
    let mut a = vec![0.0; map.n_in()];
    map.adjoint_into(&h, &mut a);
    a.iter().all(|&v| v < 0.0).then_some(h)
}

/// Solves `γ(h) = z` starting from the default initial point.
pub fn solve_saddle(map: &LinearMap, kind: ActivationKind, z: &[f64], opts: &SaddleOptions) -> Result<SaddleResult> {
    solve_saddle_from(map, kind, z, None, opts)
}

/// Solves `γ(h) = z` from a warm start `h0` (or the default start).
pub fn solve_saddle_from(
    map: &LinearMap,
    kind: ActivationKind,
    z: &[f64],
    h0: Option<&[f64]>,
    opts: &SaddleOptions,
) -> Result<SaddleResult> {
    solve_impl(map, kind, z, h0, opts, None)
}

/// Like [`solve_saddle_from`], also recording every iterate.
pub fn solve_saddle_traced(
    map: &LinearMap,
    kind: ActivationKind,
    z: &[f64],
    h0: Option<&[f64]>,
    opts: &SaddleOptions,
) -> Result<(SaddleResult, SolveTrace)> {
    let mut trace = SolveTrace::default();
    let result = solve_impl(map, kind, z, h0, opts, Some(&mut trace))?;
    Ok((result, trace))
}

fn solve_impl(
    map: &LinearMap,
    kind: ActivationKind,
    z: &[f64],
    h0: Option<&[f64]>,
    opts: &SaddleOptions,
    mut trace: Option<&mut SolveTrace>,
) -> Result<SaddleResult> {
    let m = map.n_out();
    check_len(m, z.len())?;
    if let Some(h0) = h0 {
        check_len(m, h0.len())?;
    }
    if let Some(bad) = z.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(*bad));
    }
    let failed = |h: Vec<f64>, res: f64, iterations: usize| SaddleResult {
        h,
        residual_inf: res,
        iterations,
        converged: false,
        failed: true,
    };

    let start = match h0 {
        Some(h) => h.to_vec(),
        None => match initial_point(map, kind, opts) {
            Some(h) => h,
            None => return Ok(failed(vec![0.0; m], f64::INFINITY, 0)),
        },
    };
    let mut point = match Linearization::at(map, kind, z, start.clone()) {
        Ok(p) if p.res.is_finite() => p,
        _ => return Ok(failed(start, f64::INFINITY, 0)),
    };
    if let Some(t) = trace.as_deref_mut() {
        t.residuals.push(point.res);
        t.iterates.push(point.h.clone());
    }

    let inner = opts.resolved_inner(m);
    let mut iterations = 0;
    while point.res > opts.residual_tol && iterations < opts.max_iters {
        let Some(delta) = SpdSystem::new(map, &point.dlam, inner).and_then(|s| s.solve(&point.r)) else {
            break;
        };
        let mut scale = opts.initial_step;
        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            let trial: Vec<f64> = point.h.iter().zip(&delta).map(|(h, d)| h + scale * d).collect();
            if let Ok(p) = Linearization::at(map, kind, z, trial) {
                if p.res < point.res {
                    accepted = Some(p);
                    break;
                }
            }
            scale *= opts.backtrack_factor;
        }
        let Some(next) = accepted else { break };
        point = next;
        iterations += 1;
        if let Some(t) = trace.as_deref_mut() {
            t.residuals.push(point.res);
            t.iterates.push(point.h.clone());
            t.step_scales.push(scale);
        }
    }

    let converged = point.res <= opts.residual_tol;
    Ok(SaddleResult {
        residual_inf: point.res,
        iterations,
        converged,
        failed: !(point.res <= opts.fail_tol),
        h: point.h,
    })
}

/// MaxEnt conditional-mean reconstruction `x̄ = λ(W h)` of the input
/// behind feature `z`.
///
/// The solver outcome is returned alongside; on a failed solve `x̄` is
/// still `λ(W h)` at the last iterate (NaN where λ is undefined).
pub fn reconstruct_from_feature(
    map: &LinearMap,
    kind: ActivationKind,
    z: &[f64],
    opts: &SaddleOptions,
) -> Result<(Vec<f64>, SaddleResult)> {
    let result = solve_saddle(map, kind, z, opts)?;
    let x_bar = lambda_of_adjoint(map, kind, &result.h);
    Ok((x_bar, result))
}

pub(crate) fn lambda_of_adjoint(map: &LinearMap, kind: ActivationKind, h: &[f64]) -> Vec<f64> {
    let mut a = vec![0.0; map.n_in()];
    map.adjoint_into(h, &mut a);
    a.iter().map(|&v| kind.lambda(v).unwrap_or(f64::NAN)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linop::DenseMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pair() -> LinearMap {
        LinearMap::dense(2, 1, vec![1.0, 1.0]).unwrap()
    }

    fn random_map(rng: &mut ChaCha8Rng, n: usize, m: usize) -> LinearMap {
        let s = 1.0 / (n as f64).sqrt();
        LinearMap::dense(n, m, (0..n * m).map(|_| rng.random_range(-1.0..1.0) * s * 3f64.sqrt()).collect()).unwrap()
    }

    #[test]
    fn gamma_examples() {
        assert_eq!(gamma(&pair(), ActivationKind::linear(), &[2.0]).unwrap(), vec![4.0]);
        assert_eq!(gamma(&pair(), ActivationKind::Ted, &[0.0]).unwrap(), vec![1.0]);
        let id = LinearMap::Dense(DenseMatrix::identity(3));
        let h = [0.3, -1.0, 2.0];
        let g = gamma(&id, ActivationKind::trunc_gauss(), &h).unwrap();
        for (gi, hi) in g.iter().zip(h) {
            assert_eq!(*gi, ActivationKind::trunc_gauss().lambda(hi).unwrap());
        }
    }

    #[test]
    fn gamma_reports_exponential_domain() {
        let err = gamma(&pair(), ActivationKind::Exponential, &[0.5]).unwrap_err();
        assert!(matches!(err, Error::ExponentialDomain { index: 0, .. }));
    }

    #[test]
    fn linear_pair_solution() {
        let opts = SaddleOptions::default();
        let (x_bar, r) = reconstruct_from_feature(&pair(), ActivationKind::linear(), &[4.0], &opts).unwrap();
        assert!(r.converged && !r.failed);
        assert!((r.h[0] - 2.0).abs() < 1e-12);
        assert!((x_bar[0] - 2.0).abs() < 1e-12 && (x_bar[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ted_pair_symmetric_solution() {
        let (x_bar, r) =
            reconstruct_from_feature(&pair(), ActivationKind::Ted, &[1.0], &SaddleOptions::default()).unwrap();
        assert!(r.converged);
        assert!(r.h[0].abs() < 1e-12);
        assert_eq!(r.iterations, 0);
        assert!((x_bar[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn random_feasible_instance_converges() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for kind in
            [ActivationKind::Ted, ActivationKind::trunc_gauss(), ActivationKind::Exponential, ActivationKind::linear()]
        {
            let mut map = random_map(&mut rng, 50, 10);
            if kind == ActivationKind::Exponential {
                // A constant column makes W h < 0 attainable.
                let w = map.as_dense_mut().unwrap().data_mut();
                w.chunks_exact_mut(10).for_each(|row| row[0] = 0.2);
            }
            let x: Vec<f64> = (0..50)
                .map(|_| match kind.range() {
                    crate::activation::DataRange::UnitInterval => rng.random_range(0.01..0.99),
                    crate::activation::DataRange::Positives => rng.random_range(0.01..3.0),
                    crate::activation::DataRange::Reals => rng.random_range(-3.0..3.0),
                })
                .collect();
            let z = map.forward(&x).unwrap();
            let r = solve_saddle(&map, kind, &z, &SaddleOptions::default()).unwrap();
            assert!(r.converged, "{kind}: {r:?}");
            assert!(r.iterations <= 50);
            assert!(r.residual_inf <= 1e-9);
        }
    }

    #[test]
    fn warm_start_converges_immediately() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let map = random_map(&mut rng, 30, 6);
        let x: Vec<f64> = (0..30).map(|_| rng.random_range(0.05..0.95)).collect();
        let z = map.forward(&x).unwrap();
        let opts = SaddleOptions::default();
        let first = solve_saddle(&map, ActivationKind::Ted, &z, &opts).unwrap();
        let second = solve_saddle_from(&map, ActivationKind::Ted, &z, Some(&first.h), &opts).unwrap();
        assert!(second.converged && second.iterations <= 2);
    }

    #[test]
    fn cg_and_cholesky_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let map = random_map(&mut rng, 40, 8);
        let x: Vec<f64> = (0..40).map(|_| rng.random_range(0.05..0.95)).collect();
        let z = map.forward(&x).unwrap();
        let chol = SaddleOptions { inner_solver: InnerSolver::DirectCholesky, ..Default::default() };
        let cg = SaddleOptions {
            inner_solver: InnerSolver::ConjugateGradient { tol: 1e-12, max_iters: 500 },
            ..Default::default()
        };
        let a = solve_saddle(&map, ActivationKind::Ted, &z, &chol).unwrap();
        let b = solve_saddle(&map, ActivationKind::Ted, &z, &cg).unwrap();
        assert!(a.converged && b.converged);
        for (p, q) in a.h.iter().zip(&b.h) {
            assert!((p - q).abs() < 1e-7);
        }
    }

    #[test]
    fn infeasible_feature_fails_without_panicking() {
        // Both coordinates of x lie in (0, 1), so z = x1 + x2 < 2 is required.
        let r = solve_saddle(&pair(), ActivationKind::Ted, &[3.0], &SaddleOptions::default()).unwrap();
        assert!(r.failed && !r.converged);
    }

    #[test]
    fn rejects_bad_options_and_inputs() {
        let opts = SaddleOptions { residual_tol: 1e-5, fail_tol: 1e-6, ..Default::default() };
        assert!(opts.validate().is_err());
        assert!(SaddleOptions::default().validate().is_ok());
        assert!(solve_saddle(&pair(), ActivationKind::Ted, &[f64::NAN], &SaddleOptions::default()).is_err());
        assert!(solve_saddle(&pair(), ActivationKind::Ted, &[1.0, 2.0], &SaddleOptions::default()).is_err());
    }
}
