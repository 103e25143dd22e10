//! MaxEnt activation functions.
//!
//! Each [`ActivationKind`] is the mean `λ(a)` of a one-parameter exponential
//! family `p(x; a) ∝ exp(a x + b x²)` supported on a fixed data range:
//!
//! | kind          | range    | b    | λ(a)                          |
//! |---------------|----------|------|-------------------------------|
//! | `Linear`      | ℝ        | −½   | σ² a                          |
//! | `TruncGauss`  | (0, ∞)   | −½   | σ² a + σ φ(σa) / Φ(σa)        |
//! | `Exponential` | (0, ∞)   | 0    | −1 / a                        |
//! | `Ted`         | (0, 1)   | 0    | eᵃ / (eᵃ − 1) − 1 / a         |
//!
//! `λ′(a)` is the variance of the same distribution and `λ″(a)` its third
//! central moment, so both are available in closed form as well.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;

use crate::error::{Error, Result};

/// Default interior margin used by [`validate_range`].
pub const DEFAULT_RANGE_EPSILON: f64 = 1e-12;

/// Below this |a| the TED functions switch to their Taylor series.
const TED_SERIES_CUTOFF: f64 = 1e-3;

/// Below this |a| the TED third moment uses its Taylor series.
const TED_THIRD_SERIES_CUTOFF: f64 = 1.0;

/// Below this u = σa the truncated-Gaussian Mills ratio uses a continued
/// fraction for the scaled complementary error function.
const MILLS_CF_CUTOFF: f64 = -5.0;

/// Per-coordinate support of a data vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DataRange {
    /// ℝ
    Reals,
    /// (0, ∞)
    Positives,
    /// (0, 1)
    UnitInterval,
}

impl DataRange {
    pub fn contains(self, x: f64, eps: f64) -> bool {
        match self {
            DataRange::Reals => x.is_finite(),
            DataRange::Positives => x.is_finite() && x > eps,
            DataRange::UnitInterval => x > eps && x < 1.0 - eps,
        }
    }

    /// The MaxEnt activation conventionally paired with this range
    /// (`TruncGauss` for positives, as used for neural network layers).
    pub fn default_kind(self) -> ActivationKind {
        match self {
            DataRange::Reals => ActivationKind::linear(),
            DataRange::Positives => ActivationKind::trunc_gauss(),
            DataRange::UnitInterval => ActivationKind::Ted,
        }
    }
}

impl fmt::Display for DataRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataRange::Reals => "(-inf, inf)",
            DataRange::Positives => "(0, inf)",
            DataRange::UnitInterval => "(0, 1)",
        })
    }
}

/// A MaxEnt prior / activation pair.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum ActivationKind {
    Linear {
        sigma_sq: f64,
    },
    TruncGauss {
        sigma_sq: f64,
    },
    Exponential,
    /// Truncated exponential distribution on (0, 1).
    #[default]
    Ted,
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActivationKind::Linear { sigma_sq } => write!(f, "linear(sigma_sq={sigma_sq})"),
            ActivationKind::TruncGauss { sigma_sq } => write!(f, "truncgauss(sigma_sq={sigma_sq})"),
            ActivationKind::Exponential => f.write_str("exponential"),
            ActivationKind::Ted => f.write_str("ted"),
        }
    }
}

impl ActivationKind {
    pub fn linear() -> Self {
        ActivationKind::Linear { sigma_sq: 1.0 }
    }

    pub fn trunc_gauss() -> Self {
        ActivationKind::TruncGauss { sigma_sq: 1.0 }
    }

    /// Builds a kind and checks `sigma_sq > 0` where it applies.
    pub fn with_sigma_sq(self, sigma_sq: f64) -> Result<Self> {
        if !(sigma_sq.is_finite() && sigma_sq > 0.0) {
            return Err(Error::InvalidArgument(format!("sigma_sq must be positive and finite, got {sigma_sq}")));
        }
        Ok(match self {
            ActivationKind::Linear { .. } => ActivationKind::Linear { sigma_sq },
            ActivationKind::TruncGauss { .. } => ActivationKind::TruncGauss { sigma_sq },
            other => other,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Linear { .. } => "linear",
            ActivationKind::TruncGauss { .. } => "truncgauss",
            ActivationKind::Exponential => "exponential",
            ActivationKind::Ted => "ted",
        }
    }

    /// σ², or 1.0 for kinds without a variance parameter.
    pub fn sigma_sq(self) -> f64 {
        match self {
            ActivationKind::Linear { sigma_sq } | ActivationKind::TruncGauss { sigma_sq } => sigma_sq,
            _ => 1.0,
        }
    }

    pub fn range(self) -> DataRange {
        match self {
            ActivationKind::Linear { .. } => DataRange::Reals,
            ActivationKind::TruncGauss { .. } | ActivationKind::Exponential => DataRange::Positives,
            ActivationKind::Ted => DataRange::UnitInterval,
        }
    }

    /// Quadratic coefficient `b` of the exponent of the prior.
    pub fn quadratic_coefficient(self) -> f64 {
        match self {
            ActivationKind::Linear { .. } | ActivationKind::TruncGauss { .. } => -0.5,
            ActivationKind::Exponential | ActivationKind::Ted => 0.0,
        }
    }

    fn check(self, a: f64) -> Result<()> {
        if !a.is_finite() {
            return Err(Error::NonFinite(a));
        }
        if matches!(self, ActivationKind::Exponential) && a >= 0.0 {
            return Err(Error::Domain { kind: self.name(), a });
        }
        Ok(())
    }

    /// λ(a), the mean of the prior.
    pub fn lambda(self, a: f64) -> Result<f64> {
        self.check(a)?;
        Ok(match self {
            ActivationKind::Linear { sigma_sq } => sigma_sq * a,
            ActivationKind::TruncGauss { sigma_sq } => {
                let sigma = sigma_sq.sqrt();
                let u = sigma * a;
                sigma * (u + mills_ratio(u))
            }
            ActivationKind::Exponential => -1.0 / a,
            ActivationKind::Ted => ted_mean(a),
        })
    }

    /// λ′(a), the variance of the prior.
    pub fn lambda_prime(self, a: f64) -> Result<f64> {
        self.check(a)?;
        Ok(match self {
            ActivationKind::Linear { sigma_sq } => sigma_sq,
            ActivationKind::TruncGauss { sigma_sq } => {
                let u = sigma_sq.sqrt() * a;
                let m = mills_ratio(u);
                sigma_sq * (1.0 - m * (u + m))
            }
            ActivationKind::Exponential => 1.0 / (a * a),
            ActivationKind::Ted => ted_variance(a),
        })
    }

    /// λ″(a), the third central moment of the prior.
    pub fn lambda_second(self, a: f64) -> Result<f64> {
        self.check(a)?;
        Ok(match self {
            ActivationKind::Linear { .. } => 0.0,
            ActivationKind::TruncGauss { sigma_sq } => {
                let sigma = sigma_sq.sqrt();
                let u = sigma * a;
                let m = mills_ratio(u);
                let v = u + m;
                sigma_sq * sigma * m * (v * v + m * v - 1.0)
            }
            ActivationKind::Exponential => -2.0 / (a * a * a),
            ActivationKind::Ted => ted_third_moment(a),
        })
    }

    /// `(λ(a), λ′(a))` in one call.
    pub fn lambda_and_prime(self, a: f64) -> Result<(f64, f64)> {
        self.check(a)?;
        Ok(match self {
            ActivationKind::Linear { sigma_sq } => (sigma_sq * a, sigma_sq),
            ActivationKind::TruncGauss { sigma_sq } => {
                let sigma = sigma_sq.sqrt();
                let u = sigma * a;
                let m = mills_ratio(u);
                let v = u + m;
                (sigma * v, sigma_sq * (1.0 - m * v))
            }
            ActivationKind::Exponential => (-1.0 / a, 1.0 / (a * a)),
            ActivationKind::Ted => (ted_mean(a), ted_variance(a)),
        })
    }

    /// Solves `λ(a) = y` for `a`. `y` must lie strictly inside the range.
    pub fn lambda_inv(self, y: f64) -> Result<f64> {
        if !y.is_finite() {
            return Err(Error::NonFinite(y));
        }
        if !self.range().contains(y, 0.0) {
            return Err(Error::OutOfRange { range: self.range(), value: y });
        }
        match self {
            ActivationKind::Linear { sigma_sq } => Ok(y / sigma_sq),
            ActivationKind::Exponential => Ok(-1.0 / y),
            ActivationKind::TruncGauss { .. } | ActivationKind::Ted => Ok(invert_monotone(self, y)),
        }
    }
}

/// Free-function form of [`ActivationKind::lambda`].
pub fn lambda(kind: ActivationKind, a: f64) -> Result<f64> {
    kind.lambda(a)
}

/// Free-function form of [`ActivationKind::lambda_prime`].
pub fn lambda_prime(kind: ActivationKind, a: f64) -> Result<f64> {
    kind.lambda_prime(a)
}

/// Free-function form of [`ActivationKind::lambda_inv`].
pub fn lambda_inv(kind: ActivationKind, y: f64) -> Result<f64> {
    kind.lambda_inv(y)
}

/// Coordinates of a vector that fall outside a data range.
#[derive(Clone, Debug, PartialEq)]
pub struct RangeViolation {
    pub range: DataRange,
    pub indices: Vec<usize>,
}

impl fmt::Display for RangeViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} coordinate(s) outside {}", self.indices.len(), self.range)?;
        let shown: Vec<String> = self.indices.iter().take(8).map(|i| i.to_string()).collect();
        write!(f, " at index {}", shown.join(", "))?;
        if self.indices.len() > 8 {
            f.write_str(", ...")?;
        }
        Ok(())
    }
}

impl std::error::Error for RangeViolation {}

/// Checks every coordinate lies strictly inside `range`, with the default
/// epsilon margin at closed boundaries.
pub fn validate_range(range: DataRange, x: &[f64]) -> Result<(), RangeViolation> {
    validate_range_with(range, x, DEFAULT_RANGE_EPSILON)
}

pub fn validate_range_with(range: DataRange, x: &[f64], eps: f64) -> Result<(), RangeViolation> {
    let indices: Vec<usize> = x.iter().enumerate().filter(|(_, &v)| !range.contains(v, eps)).map(|(i, _)| i).collect();
    if indices.is_empty() {
        Ok(())
    } else {
        Err(RangeViolation { range, indices })
    }
}

/// φ(u) / Φ(u) for the standard normal.
pub fn mills_ratio(u: f64) -> f64 {
    if u < MILLS_CF_CUTOFF {
        // Φ(u) = ½ erfcx(x) e^{-x²} with x = -u/√2, so φ/Φ = √2 / K(x) where
        // erfcx(x) = K(x)/√π and K is the continued fraction
        // x + (1/2)/(x + 1/(x + (3/2)/(x + ...))).
        let x = -u / SQRT_2;
        let mut t = x;
        for k in (1..=80).rev() {
            t = x + 0.5 * k as f64 / t;
        }
        SQRT_2 * t
    } else {
        let pdf = (-0.5 * u * u).exp() / (2.0 * PI).sqrt();
        let cdf = 0.5 * libm::erfc(-u / SQRT_2);
        pdf / cdf
    }
}

// Coefficients B_2n / (2n)! of λ(a) − ½ = Σ B_2n a^(2n−1) / (2n)!.
const TED_SERIES: [f64; 12] = [
    1.0 / 12.0,
    -1.0 / 720.0,
    1.0 / 30240.0,
    -1.0 / 1209600.0,
    1.0 / 47900160.0,
    -691.0 / 1307674368000.0,
    1.0 / 74724249600.0,
    -3617.0 / 10670622842880000.0,
    43867.0 / 798.0 / 6402373705728000.0,
    -174611.0 / 330.0 / 2432902008176640000.0,
    854513.0 / 138.0 / 1124000727777607680000.0,
    -236364091.0 / 2730.0 / 620448401733239439360000.0,
];

fn ted_mean(a: f64) -> f64 {
    if a.abs() < TED_SERIES_CUTOFF {
        let a2 = a * a;
        return 0.5 + a / 12.0 - a * a2 / 720.0;
    }
    // 1/(1 − e^{−a}) − 1/a; stable for both signs via expm1.
    1.0 / (-(-a).exp_m1()) - 1.0 / a
}

fn ted_variance(a: f64) -> f64 {
    let b = a.abs();
    if b < TED_SERIES_CUTOFF {
        return 1.0 / 12.0 - a * a / 240.0;
    }
    let e = (-b).exp();
    let d = -(-b).exp_m1();
    1.0 / (b * b) - e / (d * d)
}

fn ted_third_moment(a: f64) -> f64 {
    let b = a.abs();
    let value = if b < TED_THIRD_SERIES_CUTOFF {
        // d²/da² of the mean series.
        let mut sum = 0.0;
        let mut pow = b; // b^(2n−3) starting at n = 2
        for (i, c) in TED_SERIES.iter().enumerate().skip(1) {
            let n = (i + 1) as f64;
            sum += c * (2.0 * n - 1.0) * (2.0 * n - 2.0) * pow;
            pow *= b * b;
        }
        sum
    } else {
        let e = (-b).exp();
        let d = -(-b).exp_m1();
        -2.0 / (b * b * b) + e * (1.0 + e) / (d * d * d)
    };
    if a < 0.0 {
        -value
    } else {
        value
    }
}

/// Safeguarded Newton/bisection on a strictly increasing λ.
fn invert_monotone(kind: ActivationKind, y: f64) -> f64 {
    let f = |a: f64| kind.lambda(a).expect("finite argument");
    let mut lo = -1.0;
    while f(lo) > y {
        lo *= 2.0;
    }
    let mut hi = 1.0;
    while f(hi) < y {
        hi *= 2.0;
    }
    let tol = 1e-15 * y.abs().max(1.0);
    let mut a = 0.5 * (lo + hi);
    for _ in 0..400 {
        let (value, slope) = kind.lambda_and_prime(a).expect("finite argument");
        let r = value - y;
        if r.abs() <= tol {
            return a;
        }
        if r > 0.0 {
            hi = a;
        } else {
            lo = a;
        }
        let newton = a - r / slope;
        a = if newton > lo && newton < hi && newton.is_finite() { newton } else { 0.5 * (lo + hi) };
        if hi - lo <= f64::EPSILON * a.abs().max(1e-300) {
            break;
        }
    }
    a
}
