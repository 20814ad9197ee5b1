//! Phase classification of `β = σ + iτ`, the limiting log-partition
//! function, the maximum centering `m(t)` and the upper envelope.

use std::f64::consts::{FRAC_1_SQRT_2, SQRT_2};
use std::fmt;

use crate::error::{Error, Result};
use crate::partition::ComplexTemperature;
use crate::speedfn::SpeedFunction;

pub const DEFAULT_BOUNDARY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    B1,
    B2,
    B3,
    Boundary,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::B1 => "B1",
            Phase::B2 => "B2",
            Phase::B3 => "B3",
            Phase::Boundary => "Boundary",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseLabel {
    pub label: Phase,
    pub predicted_limit: f64,
}

/// Open region containing `β`, ignoring boundaries (ties go to B1).
pub fn region(beta: ComplexTemperature) -> Phase {
    let (s, t) = (beta.sigma.abs(), beta.tau.abs());
    if 2.0 * s * s > 1.0 && s + t > SQRT_2 {
        Phase::B2
    } else if 2.0 * s * s < 1.0 && s * s + t * t > 1.0 {
        Phase::B3
    } else {
        Phase::B1
    }
}

/// `lim (1/t) log |X_β(t)|` given by the formula of `phase`.
pub fn limit_formula(phase: Phase, beta: ComplexTemperature) -> f64 {
    let (s, t) = (beta.sigma, beta.tau);
    match phase {
        Phase::B1 => 1.0 + 0.5 * (s * s - t * t),
        Phase::B2 => SQRT_2 * s.abs(),
        Phase::B3 => 0.5 + s * s,
        Phase::Boundary => limit_formula(region(beta), beta),
    }
}

fn dist_to_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let u = (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0);
    let (cx, cy) = (a.0 + u * dx, a.1 + u * dy);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

/// Euclidean distance in the `(σ, τ)` plane to the nearest phase boundary:
/// the arc `σ²+τ²=1, 2σ² ≤ 1` (B1|B3), the lines `|σ| = 1/√2, |τ| ≥ 1/√2`
/// (B2|B3), and the segments `|σ|+|τ| = √2, |σ| ≥ 1/√2` (B1|B2).
pub fn boundary_distance(beta: ComplexTemperature) -> f64 {
    // Everything is symmetric under σ → -σ and τ → -τ.
    let p = (beta.sigma.abs(), beta.tau.abs());
    let triple = (FRAC_1_SQRT_2, FRAC_1_SQRT_2);

    let r = p.0.hypot(p.1);
    let arc = if p.1 >= p.0 {
        (r - 1.0).abs()
    } else {
        // Below the diagonal the nearest arc point is its end.
        ((p.0 - triple.0).powi(2) + (p.1 - triple.1).powi(2)).sqrt()
    };
    let vertical = if p.1 >= FRAC_1_SQRT_2 {
        (p.0 - FRAC_1_SQRT_2).abs()
    } else {
        ((p.0 - triple.0).powi(2) + (p.1 - triple.1).powi(2)).sqrt()
    };
    let diagonal = dist_to_segment(p, triple, (SQRT_2, 0.0));
    arc.min(vertical).min(diagonal)
}

pub fn classify(beta: ComplexTemperature, tol: f64) -> PhaseLabel {
    let open = region(beta);
    let predicted_limit = limit_formula(open, beta);
    let label = if boundary_distance(beta) <= tol {
        Phase::Boundary
    } else {
        open
    };
    PhaseLabel { label, predicted_limit }
}

/// `m(t) = √2 t - (1/(2√2)) log t`.
pub fn m_of_t(t: f64) -> Result<f64> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("m(t) needs t > 0, got {t}")));
    }
    Ok(SQRT_2 * t - t.ln() / (2.0 * SQRT_2))
}

/// `m_A(s) = √(2 s tA(s/t)) - √(tA(s/t)) / (2√(2s)) · log s`, with `m_A(0) = 0`.
pub fn m_a(s: f64, t: f64, a: &SpeedFunction) -> Result<f64> {
    if !(t > 0.0) || !(0.0..=t).contains(&s) {
        return Err(Error::Domain(format!("m_A needs 0 <= s <= t, got s={s}, t={t}")));
    }
    Ok(m_a_unchecked(s, t, a))
}

#[inline]
pub(crate) fn m_a_unchecked(s: f64, t: f64, a: &SpeedFunction) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    let v = a.variance_profile_unchecked(s, t);
    (2.0 * s * v).sqrt() - v.sqrt() / (2.0 * (2.0 * s).sqrt()) * s.ln()
}

/// Shape parameters `(γ, C)` of the upper envelope.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeSpec {
    pub gamma: f64,
    pub c: f64,
}

impl EnvelopeSpec {
    pub fn new(gamma: f64, c: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::Domain(format!("envelope gamma must lie in (0, 1), got {gamma}")));
        }
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::Domain(format!("envelope C must be positive, got {c}")));
        }
        if gamma >= 0.5 {
            log::warn!("envelope gamma = {gamma} >= 1/2: the crossing bound is not expected to be small");
        }
        Ok(Self { gamma, c })
    }
}

/// `U_{A,γ}(s) = m_A(s) + (max(C, min(tA(s/t), t - tA(s/t))))^γ`.
pub fn envelope_u(s: f64, t: f64, a: &SpeedFunction, spec: EnvelopeSpec) -> Result<f64> {
    if !(t > 0.0) || !(0.0..=t).contains(&s) {
        return Err(Error::Domain(format!("envelope needs 0 <= s <= t, got s={s}, t={t}")));
    }
    Ok(envelope_u_unchecked(s, t, a, spec))
}

#[inline]
pub(crate) fn envelope_u_unchecked(s: f64, t: f64, a: &SpeedFunction, spec: EnvelopeSpec) -> f64 {
    let v = a.variance_profile_unchecked(s, t);
    m_a_unchecked(s, t, a) + envelope_clamp(v, t, spec.c).powf(spec.gamma)
}

/// `max(C, min(v, t - v))`.
#[inline]
pub fn envelope_clamp(v: f64, t: f64, c: f64) -> f64 {
    v.min(t - v).max(c)
}
