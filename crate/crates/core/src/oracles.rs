//! Exact finite-horizon moments of the partition function.
//!
//! Second moments come from the many-to-two formula: ordered pairs of
//! distinct leaves whose ancestors split at time `s` appear at rate
//! `K·e^{2t-s}`, and the pair expectation depends on `s` only through the
//! shared variance `V = tA(s/t)`.

use std::f64::consts::{LN_2, PI};
use std::fmt;

use num_complex::Complex64;
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::partition::{ComplexTemperature, PHASE_FACTOR};
use crate::phases::{self, EnvelopeSpec};
use crate::speedfn::{SpeedForm, SpeedFunction, DEFAULT_GRID_N};

/// Integration is carried out in `u = t - s` when `A'(1)` exceeds this.
pub const SUBSTITUTION_SLOPE: f64 = 10.0;

/// Levels of geometric panel refinement towards `s = t`.
const GEOMETRIC_LEVELS: i32 = 24;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureSpec {
    pub rel_tol: f64,
    pub max_depth: u32,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            rel_tol: 1e-9,
            max_depth: 40,
        }
    }
}

impl QuadratureSpec {
    pub fn new(rel_tol: f64, max_depth: u32) -> Result<Self> {
        if !(rel_tol > 0.0) {
            return Err(Error::Domain(format!("rel_tol must be positive, got {rel_tol}")));
        }
        Ok(Self { rel_tol, max_depth })
    }
}

/// The moment is finite for every `t` but grows without bound as `t → ∞`.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceWarning {
    pub reason: String,
}

impl fmt::Display for DivergenceWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "divergent as t grows: {}", self.reason)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecondMoment {
    pub value: f64,
    /// Contribution of `k = k'`.
    pub diagonal: f64,
    /// Contribution of ordered pairs of distinct leaves.
    pub off_diagonal: f64,
    pub warning: Option<DivergenceWarning>,
}

/// `E[X_{β,ρ}(t)] = e^{t(1+(σ²-τ²)/2)} e^{i·ρστt}`.
pub fn first_moment(beta: ComplexTemperature, rho: f64, t: f64) -> Complex64 {
    first_moment_with_phase_factor(beta, rho, t, PHASE_FACTOR)
}

/// As [`first_moment`] with the phase `factor·ρστt`.
pub fn first_moment_with_phase_factor(beta: ComplexTemperature, rho: f64, t: f64, factor: f64) -> Complex64 {
    let (s, tau) = (beta.sigma, beta.tau);
    Complex64::from_polar(
        (t * (1.0 + (s * s - tau * tau) / 2.0)).exp(),
        factor * rho * s * tau * t,
    )
}

/// `log E[e^{σ(x+x') + iτ(y-y')}]` for two leaves at horizon `t` whose
/// shared ancestry carries variance `v`.
///
/// Kept in the unsimplified form: the `x`-driven part of `y - y'` and the
/// `z`-driven part contribute `ρ²τ²R` and `(1-ρ²)τ²R` separately, with
/// `R = t - v`. Their sum no longer depends on `ρ`.
pub fn pair_log_expectation(beta: ComplexTemperature, rho: f64, t: f64, v: f64) -> f64 {
    let (s2, t2) = (beta.sigma * beta.sigma, beta.tau * beta.tau);
    let r = t - v;
    let rho2 = rho * rho;
    2.0 * s2 * v + (s2 - rho2 * t2) * r - (1.0 - rho2) * t2 * r
}

/// `E|N_{τ,σ}(t)|²` with `N = e^{-t(1/2+σ²)} X`.
pub fn second_moment_abs(
    speed: &SpeedFunction,
    beta: ComplexTemperature,
    rho: f64,
    t: f64,
    k: f64,
    quad: QuadratureSpec,
) -> Result<SecondMoment> {
    let sigma_e_sq = check_inputs(speed, t)?;
    let q = beta.sigma * beta.sigma + beta.tau * beta.tau;
    let warning = if q * sigma_e_sq <= 1.0 {
        Some(DivergenceWarning {
            reason: format!("(σ²+τ²)σ_e² = {} <= 1", q * sigma_e_sq),
        })
    } else if q <= 1.0 {
        Some(DivergenceWarning {
            reason: format!("σ²+τ² = {q} <= 1"),
        })
    } else {
        None
    };
    let log_norm = -t * (1.0 + 2.0 * beta.sigma * beta.sigma);
    assemble(speed, beta, rho, t, k, log_norm, quad, warning)
}

/// `lim_{t→∞} E|N_{τ,σ}(t)|² = 1 + K/((σ²+τ²)σ_e² - 1)`, diagonal included.
pub fn second_moment_abs_limit(speed: &SpeedFunction, beta: ComplexTemperature, k: f64) -> Result<f64> {
    let sigma_e_sq = speed.sigma_e_sq().finite()?;
    let d = (beta.sigma * beta.sigma + beta.tau * beta.tau) * sigma_e_sq - 1.0;
    if !(d > 0.0) {
        return Err(Error::Domain(format!("(σ²+τ²)σ_e² - 1 = {d} is not positive")));
    }
    Ok(1.0 + k / d)
}

/// `E|X e^{-t(1+(σ²-τ²)/2)}|²`, the second moment of the B1-normalized sum.
pub fn second_moment_b1_normalized(
    speed: &SpeedFunction,
    beta: ComplexTemperature,
    rho: f64,
    t: f64,
    k: f64,
    quad: QuadratureSpec,
) -> Result<SecondMoment> {
    check_inputs(speed, t)?;
    let q = beta.sigma * beta.sigma + beta.tau * beta.tau;
    let warning = (q >= 1.0).then(|| DivergenceWarning {
        reason: format!("σ²+τ² = {q} >= 1"),
    });
    let log_norm = -t * (2.0 + beta.sigma * beta.sigma - beta.tau * beta.tau);
    assemble(speed, beta, rho, t, k, log_norm, quad, warning)
}

fn check_inputs(speed: &SpeedFunction, t: f64) -> Result<f64> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("horizon must be non-negative, got {t}")));
    }
    let sigma_e_sq = speed.sigma_e_sq().finite()?;
    let report = speed.validate(DEFAULT_GRID_N, false)?;
    if !report.is_valid() {
        return Err(Error::Domain(format!("speed function fails validation: {report}")));
    }
    Ok(sigma_e_sq)
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    speed: &SpeedFunction,
    beta: ComplexTemperature,
    rho: f64,
    t: f64,
    k: f64,
    log_norm: f64,
    quad: QuadratureSpec,
    warning: Option<DivergenceWarning>,
) -> Result<SecondMoment> {
    // E n(t) · E e^{2σx} = e^t e^{2σ²t}, which is the pair kernel at v = t.
    let diagonal = (t + pair_log_expectation(beta, rho, t, t) + log_norm).exp();
    let off_diagonal = if t == 0.0 || k == 0.0 {
        0.0
    } else {
        let integrand = OffDiagonal {
            speed,
            beta,
            rho,
            t,
            log_k: k.ln(),
            log_norm,
        };
        match speed.form() {
            SpeedForm::PiecewiseLinear { knots } if !speed.is_identity() => integrand.exact_piecewise(knots),
            _ => integrand.simpson(quad),
        }
    };
    Ok(SecondMoment {
        value: diagonal + off_diagonal,
        diagonal,
        off_diagonal,
        warning,
    })
}

struct OffDiagonal<'a> {
    speed: &'a SpeedFunction,
    beta: ComplexTemperature,
    rho: f64,
    t: f64,
    log_k: f64,
    log_norm: f64,
}

impl OffDiagonal<'_> {
    /// Log of `K e^{2t-s} E[pair] · |normalizer|²` at split time `s`.
    #[inline]
    fn log_at(&self, s: f64) -> f64 {
        let v = self.speed.variance_profile_unchecked(s, self.t);
        self.log_k + 2.0 * self.t - s + pair_log_expectation(self.beta, self.rho, self.t, v) + self.log_norm
    }

    /// Piecewise-linear `A` makes the log-integrand affine on each segment,
    /// so each segment integrates in closed form.
    fn exact_piecewise(&self, knots: &[(f64, f64)]) -> f64 {
        knots
            .windows(2)
            .map(|w| {
                let (s0, s1) = (w[0].0 * self.t, w[1].0 * self.t);
                let (l0, l1) = (self.log_at(s0), self.log_at(s1));
                let d = l1 - l0;
                let factor = if d.abs() < 1e-300 { 1.0 } else { d.exp_m1() / d };
                l0.exp() * (s1 - s0) * factor
            })
            .sum()
    }

    fn simpson(&self, quad: QuadratureSpec) -> f64 {
        let t = self.t;
        let substitute = self.speed.sigma_e_sq().finite().is_ok_and(|e| e > SUBSTITUTION_SLOPE);
        // Panels in the distance d from the peak end s = t: geometric near
        // d = 0, then at most unit width.
        let mut breaks: Vec<f64> = (1..=GEOMETRIC_LEVELS)
            .rev()
            .map(|j| t * (-j as f64 * LN_2).exp())
            .collect();
        breaks.insert(0, 0.0);
        let unit = t.ceil() as usize;
        for i in 1..=unit {
            breaks.push(t * i as f64 / unit as f64);
        }
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        let f = |d: f64| -> f64 {
            if substitute {
                self.log_at(t - d).exp()
            } else {
                self.log_at(d).exp()
            }
        };
        let panels: Vec<(f64, f64)> = if substitute {
            breaks.windows(2).map(|w| (w[0], w[1])).collect()
        } else {
            // Same panels, mirrored into the s coordinate.
            let mut p: Vec<(f64, f64)> = breaks.windows(2).map(|w| (t - w[1], t - w[0])).collect();
            p.reverse();
            p
        };
        let coarse: Vec<[f64; 4]> = panels
            .iter()
            .map(|&(a, b)| {
                let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
                [fa, fm, fb, (b - a) / 6.0 * (fa + 4.0 * fm + fb)]
            })
            .collect();
        let total: f64 = coarse.iter().map(|c| c[3].abs()).sum();
        let floor = quad.rel_tol * total / panels.len() as f64 * 1e-3;
        panels
            .iter()
            .zip(&coarse)
            .map(|(&(a, b), c)| {
                let eps = (quad.rel_tol * c[3].abs()).max(floor);
                adaptive_simpson(&f, a, b, c[0], c[1], c[2], c[3], eps, quad.max_depth)
            })
            .sum()
    }
}

#[allow(clippy::too_many_arguments)]
fn adaptive_simpson<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    eps: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * eps {
        return left + right + delta / 15.0;
    }
    adaptive_simpson(f, a, m, fa, flm, fm, left, 0.5 * eps, depth - 1)
        + adaptive_simpson(f, m, b, fm, frm, fb, right, 0.5 * eps, depth - 1)
}

/// `log Φ̄(x)` for the standard normal tail, accurate far into the tail.
pub fn log_normal_tail(x: f64) -> f64 {
    if x < 30.0 {
        (0.5 * erfc(x / std::f64::consts::SQRT_2)).ln()
    } else {
        // Asymptotic series: φ(x)/x · (1 - 1/x² + 3/x⁴ - 15/x⁶)
        let x2 = x * x;
        -0.5 * x2 - 0.5 * (2.0 * PI).ln() - x.ln() + (1.0 - 1.0 / x2 + 3.0 / (x2 * x2) - 15.0 / (x2 * x2 * x2)).ln()
    }
}

/// `min(1, Σ_{j=1}^{⌊t⌋} e^j Φ̄(U_{A,γ}(j) / √(tA(j/t))))`, the union
/// bound on some particle exceeding the envelope at an integer time.
pub fn envelope_union_bound(speed: &SpeedFunction, spec: EnvelopeSpec, t: f64) -> Result<f64> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("horizon must be positive, got {t}")));
    }
    let mut sum = 0.0;
    for j in 1..=(t.floor() as u64) {
        let s = j as f64;
        let v = speed.variance_profile_unchecked(s, t);
        if v <= 0.0 {
            // The position is exactly 0, below the positive envelope.
            continue;
        }
        let u = phases::envelope_u(s, t, speed, spec)?;
        sum += (s + log_normal_tail(u / v.sqrt())).exp();
    }
    Ok(sum.min(1.0))
}
