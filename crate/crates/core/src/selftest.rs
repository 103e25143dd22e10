//! Built-in numerical self checks.
//!
//! The activation checks compare λ and λ′ with the mean and variance of the
//! corresponding prior computed by adaptive Gauss–Kronrod quadrature; the
//! saddle checks solve random feasible systems and verify the residual.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::activation::{ActivationKind, DataRange};
use crate::error::Result;
use crate::linop::LinearMap;
use crate::saddle::{solve_saddle, SaddleOptions};

/// Relative tolerance of the oracle comparisons.
pub const ORACLE_TOL: f64 = 1e-6;

/// The activation functions being checked. Tests inject faulty versions.
pub trait ActivationUnderTest: Sync {
    fn lambda(&self, kind: ActivationKind, a: f64) -> Result<f64>;
    fn lambda_prime(&self, kind: ActivationKind, a: f64) -> Result<f64>;
}

/// The library's own activations.
pub struct Builtin;

impl ActivationUnderTest for Builtin {
    fn lambda(&self, kind: ActivationKind, a: f64) -> Result<f64> {
        kind.lambda(a)
    }

    fn lambda_prime(&self, kind: ActivationKind, a: f64) -> Result<f64> {
        kind.lambda_prime(a)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckFailure {
    pub check: String,
    pub detail: String,
}

impl fmt::Display for CheckFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.check, self.detail)
    }
}

/// One row of an activation table.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TableRow {
    pub a: f64,
    pub lambda: f64,
    pub lambda_prime: f64,
}

#[derive(Clone, Debug)]
pub struct SelftestReport {
    pub checks_run: usize,
    pub failures: Vec<CheckFailure>,
    pub tables: Vec<(ActivationKind, Vec<TableRow>)>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// The four activation variants with default parameters.
pub fn all_kinds() -> [ActivationKind; 4] {
    [ActivationKind::linear(), ActivationKind::trunc_gauss(), ActivationKind::Exponential, ActivationKind::Ted]
}

/// Grid over [−30, 30] (Exponential: [−30, −1e−3]) with extra points around
/// the small-argument series cutover.
pub fn activation_grid(kind: ActivationKind) -> Vec<f64> {
    let mut grid: Vec<f64> = (0..=240).map(|i| -30.0 + 0.25 * i as f64).collect();
    grid.extend([-2e-3, -9.99e-4, -5e-4, -1e-5, 1e-5, 5e-4, 9.99e-4, 2e-3, -0.7, 0.7]);
    if matches!(kind, ActivationKind::Exponential) {
        grid.retain(|&a| a <= -1e-3);
        grid.push(-1e-3);
    }
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

#[allow(clippy::excessive_precision)]
const GK_NODES: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
#[allow(clippy::excessive_precision)]
const GK_WEIGHTS: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
#[allow(clippy::excessive_precision)]
const GAUSS_WEIGHTS: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

/// 15-point Kronrod estimate and its difference from the embedded 7-point
/// Gauss rule.
fn gk15(f: &impl Fn(f64) -> f64, lo: f64, hi: f64) -> (f64, f64) {
    let c = 0.5 * (lo + hi);
    let h = 0.5 * (hi - lo);
    let fc = f(c);
    let mut kronrod = GK_WEIGHTS[7] * fc;
    let mut gauss = GAUSS_WEIGHTS[3] * fc;
    for i in 0..7 {
        let x = h * GK_NODES[i];
        let s = f(c - x) + f(c + x);
        kronrod += GK_WEIGHTS[i] * s;
        if i % 2 == 1 {
            gauss += GAUSS_WEIGHTS[i / 2] * s;
        }
    }
    (kronrod * h, (kronrod - gauss).abs() * h)
}

/// Globally adaptive Gauss–Kronrod integration of `f` over `[lo, hi]`:
/// the interval with the largest error estimate is bisected until the
/// total estimated error is below `rel_tol` times the integral.
pub fn integrate(f: impl Fn(f64) -> f64, lo: f64, hi: f64, rel_tol: f64) -> f64 {
    const MAX_INTERVALS: usize = 4000;
    let mut parts = vec![(lo, hi, gk15(&f, lo, hi))];
    loop {
        let total: f64 = parts.iter().map(|p| p.2 .0).sum();
        let error: f64 = parts.iter().map(|p| p.2 .1).sum();
        if error <= rel_tol * total.abs() || parts.len() >= MAX_INTERVALS {
            return total;
        }
        let worst = (0..parts.len()).max_by(|&i, &j| parts[i].2 .1.total_cmp(&parts[j].2 .1)).unwrap();
        let (a, b, _) = parts.swap_remove(worst);
        let m = 0.5 * (a + b);
        parts.push((a, m, gk15(&f, a, m)));
        parts.push((m, b, gk15(&f, m, b)));
    }
}

/// Mean and variance of the prior `∝ exp(a x + b x²)` on the range of
/// `kind`, by quadrature.
pub fn prior_moments(kind: ActivationKind, a: f64) -> (f64, f64) {
    let s2 = kind.sigma_sq();
    let b = kind.quadratic_coefficient() / s2;
    let (lo, hi) = match kind.range() {
        DataRange::UnitInterval => (0.0, 1.0),
        DataRange::Positives if b == 0.0 => (0.0, 60.0 / -a),
        DataRange::Positives => (0.0, (s2 * a).max(0.0) + 40.0 * s2.sqrt()),
        DataRange::Reals => (s2 * a - 40.0 * s2.sqrt(), s2 * a + 40.0 * s2.sqrt()),
    };
    let exponent = |x: f64| a * x + b * x * x;
    let vertex = if b < 0.0 { (-a / (2.0 * b)).clamp(lo, hi) } else { lo };
    let shift = exponent(lo).max(exponent(hi)).max(exponent(vertex));
    let w = |x: f64| (exponent(x) - shift).exp();
    // Split at the mode so the adaptive rule sees the peak.
    let split = |g: &dyn Fn(f64) -> f64| {
        let mut pts = vec![lo, hi, vertex];
        if b == 0.0 {
            let width = 1.0 / a.abs().max(1.0);
            pts.extend([lo + width, hi - width]);
        }
        pts.retain(|p| (lo..=hi).contains(p));
        pts.sort_by(f64::total_cmp);
        pts.dedup();
        pts.windows(2).map(|p| integrate(g, p[0], p[1], 1e-13)).sum::<f64>()
    };
    let mass = split(&|x| w(x));
    let mean = split(&|x| x * w(x)) / mass;
    let var = split(&|x| (x - mean) * (x - mean) * w(x)) / mass;
    (mean, var)
}

fn rel_err(got: f64, want: f64) -> f64 {
    // The floor keeps a zero mean (Linear at a = 0) comparable.
    (got - want).abs() / want.abs().max(1e-8)
}

/// Compares λ and λ′ with the quadrature moments over each kind's grid.
pub fn check_activations(imp: &dyn ActivationUnderTest) -> (usize, Vec<CheckFailure>) {
    let mut failures = Vec::new();
    let mut runs = 0;
    for kind in all_kinds() {
        let name = kind.name().to_uppercase();
        for a in activation_grid(kind) {
            let (mean, var) = prior_moments(kind, a);
            for (what, got, want) in
                [("mean", imp.lambda(kind, a), mean), ("derivative", imp.lambda_prime(kind, a), var)]
            {
                runs += 1;
                let check = format!("{name} {what} check");
                match got {
                    Ok(v) if rel_err(v, want) <= ORACLE_TOL => {}
                    Ok(v) => failures.push(CheckFailure {
                        check,
                        detail: format!("a = {a}: got {v:.12e}, quadrature gives {want:.12e}"),
                    }),
                    Err(e) => failures.push(CheckFailure { check, detail: format!("a = {a}: {e}") }),
                }
            }
        }
    }
    (runs, failures)
}

/// A random `n × m` map and an in-range `x`, so `z = W′x` is feasible.
/// Exponential instances get a constant column so that `W h < 0` has a
/// solution.
pub fn random_feasible_instance(
    rng: &mut ChaCha8Rng,
    kind: ActivationKind,
    n: usize,
    m: usize,
) -> (LinearMap, Vec<f64>) {
    let s = (3.0 / n as f64).sqrt();
    let mut data: Vec<f64> = (0..n * m).map(|_| rng.random_range(-s..s)).collect();
    if matches!(kind, ActivationKind::Exponential) {
        for row in data.chunks_exact_mut(m) {
            row[0] = 1.0 / (n as f64).sqrt();
        }
    }
    let x = (0..n)
        .map(|_| match kind.range() {
            DataRange::UnitInterval => rng.random_range(0.02..0.98),
            DataRange::Positives => rng.random_range(0.05..4.0),
            DataRange::Reals => rng.random_range(-4.0..4.0),
        })
        .collect();
    (LinearMap::dense(n, m, data).expect("consistent shape"), x)
}

/// Solves `instances` random feasible systems per kind (N ≤ 64, M ≤ 16).
pub fn check_saddle_roundtrip(instances: usize, seed: u64) -> (usize, Vec<CheckFailure>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opts = SaddleOptions::default();
    let mut failures = Vec::new();
    let mut runs = 0;
    for kind in all_kinds() {
        for i in 0..instances {
            let m = rng.random_range(1..=16);
            let n = rng.random_range(m + 1..=64);
            let (map, x) = random_feasible_instance(&mut rng, kind, n, m);
            let z = map.forward(&x).expect("dimensions match");
            runs += 1;
            let check = format!("{} saddle round trip", kind.name().to_uppercase());
            match solve_saddle(&map, kind, &z, &opts) {
                Ok(r) if r.converged && r.residual_inf <= 1e-9 && r.iterations <= 50 => {}
                Ok(r) => failures.push(CheckFailure {
                    check,
                    detail: format!(
                        "instance {i} ({n}x{m}): residual {:.3e} after {} iterations",
                        r.residual_inf, r.iterations
                    ),
                }),
                Err(e) => failures.push(CheckFailure { check, detail: format!("instance {i} ({n}x{m}): {e}") }),
            }
        }
    }
    (runs, failures)
}

/// `a, λ(a), λ′(a)` over the kind's grid.
pub fn lambda_table(imp: &dyn ActivationUnderTest, kind: ActivationKind) -> Vec<TableRow> {
    let mut grid = activation_grid(kind);
    if !matches!(kind, ActivationKind::Exponential) && !grid.contains(&0.0) {
        grid.push(0.0);
        grid.sort_by(f64::total_cmp);
    }
    grid.into_iter()
        .filter_map(|a| {
            Some(TableRow { a, lambda: imp.lambda(kind, a).ok()?, lambda_prime: imp.lambda_prime(kind, a).ok()? })
        })
        .collect()
}

/// Renders a table as CSV, optionally prefixed with the kind column.
pub fn table_csv(kind: Option<ActivationKind>, rows: &[TableRow]) -> String {
    let mut out = String::new();
    for r in rows {
        if let Some(k) = kind {
            out.push_str(k.name());
            out.push(',');
        }
        out.push_str(&format!("{},{:.17e},{:.17e}\n", r.a, r.lambda, r.lambda_prime));
    }
    out
}

/// Default number of random saddle instances per kind.
pub const SADDLE_INSTANCES: usize = 200;

pub fn run_selftest(imp: &dyn ActivationUnderTest) -> SelftestReport {
    let (n1, mut failures) = check_activations(imp);
    let (n2, f2) = check_saddle_roundtrip(SADDLE_INSTANCES, 0x5eed);
    failures.extend(f2);
    let tables = all_kinds().into_iter().map(|k| (k, lambda_table(imp, k))).collect();
    SelftestReport { checks_run: n1 + n2, failures, tables }
}
