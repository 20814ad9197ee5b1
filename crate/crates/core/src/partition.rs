//! Overflow-safe complex partition sums and their phase-specific
//! normalizations.

use std::fmt;

use num_complex::Complex64;

use crate::branching::OffspringDistribution;
use crate::error::Result;
use crate::field::{run_replica, ReplicaPlan};
use crate::phases;
use crate::speedfn::SpeedFunction;

/// Multiplier of `iρστt` in the first-moment phase. The Gaussian
/// characteristic functional gives `E e^{σx+iτy} = e^{t((σ²-τ²)/2 + iρστ)}`,
/// so the martingale normalization uses factor 1; the alternative value 2 is
/// kept selectable so tests can show that it is rejected.
pub const PHASE_FACTOR: f64 = 1.0;

/// The mantissa may drift within `[2^-256, 2^256]` before renormalization.
const BAND_LOG2: i32 = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexTemperature {
    pub sigma: f64,
    pub tau: f64,
}

impl ComplexTemperature {
    pub const fn new(sigma: f64, tau: f64) -> Self {
        Self { sigma, tau }
    }

    pub fn is_finite(&self) -> bool {
        self.sigma.is_finite() && self.tau.is_finite()
    }

    pub fn conj(self) -> Self {
        Self::new(self.sigma, -self.tau)
    }
}

impl fmt::Display for ComplexTemperature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{:+}i", self.sigma, self.tau)
    }
}

/// Sum of complex exponentials held as `mantissa · e^{log_scale}`.
///
/// The mantissa is carried as Neumaier-compensated real and imaginary
/// components and is brought back into `[2^-256, 2^256]` by exact powers of
/// two whenever it leaves that band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledComplex {
    log_scale: f64,
    re: f64,
    re_err: f64,
    im: f64,
    im_err: f64,
}

impl Default for ScaledComplex {
    fn default() -> Self {
        Self::zero()
    }
}

#[inline]
fn neumaier(sum: &mut f64, err: &mut f64, x: f64) {
    let t = *sum + x;
    if sum.abs() >= x.abs() {
        *err += (*sum - t) + x;
    } else {
        *err += (x - t) + *sum;
    }
    *sum = t;
}

impl ScaledComplex {
    pub const fn zero() -> Self {
        Self {
            log_scale: f64::NEG_INFINITY,
            re: 0.0,
            re_err: 0.0,
            im: 0.0,
            im_err: 0.0,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.log_scale == f64::NEG_INFINITY || (self.re + self.re_err == 0.0 && self.im + self.im_err == 0.0)
    }

    /// Adds `e^{exponent}`.
    #[inline]
    pub fn accumulate(&mut self, exponent: Complex64) {
        let (s, c) = exponent.im.sin_cos();
        self.add_exp_polar(exponent.re, c, s);
    }

    /// Adds `e^{log_mag}·(cos + i·sin)` where `(cos, sin)` is a unit vector
    /// computed by the caller (so it can be shared across temperatures).
    #[inline]
    pub fn add_exp_polar(&mut self, log_mag: f64, cos: f64, sin: f64) {
        if log_mag == f64::NEG_INFINITY {
            return;
        }
        if self.log_scale == f64::NEG_INFINITY {
            self.log_scale = log_mag;
            self.re = cos;
            self.im = sin;
            return;
        }
        let mut d = log_mag - self.log_scale;
        if d > BAND_LOG2 as f64 * std::f64::consts::LN_2 {
            let k = (d / std::f64::consts::LN_2).ceil() as i32;
            self.shift_pow2(k);
            d = log_mag - self.log_scale;
        }
        let m = d.exp();
        neumaier(&mut self.re, &mut self.re_err, m * cos);
        neumaier(&mut self.im, &mut self.im_err, m * sin);
        let mag = self.re.abs().max(self.im.abs());
        if mag > 2f64.powi(BAND_LOG2) || (mag < 2f64.powi(-BAND_LOG2) && mag > 0.0) {
            self.renormalize();
        }
    }

    /// Adds another scaled sum.
    pub fn merge(&mut self, other: &ScaledComplex) {
        if other.log_scale == f64::NEG_INFINITY {
            return;
        }
        let (re, im) = (other.re + other.re_err, other.im + other.im_err);
        let mag = re.hypot(im);
        if mag == 0.0 {
            return;
        }
        self.add_exp_polar(other.log_scale + mag.ln(), re / mag, im / mag);
    }

    /// Multiplies the mantissa by `2^-k` and compensates in the scale.
    fn shift_pow2(&mut self, k: i32) {
        let f = 2f64.powi(-k);
        self.re *= f;
        self.re_err *= f;
        self.im *= f;
        self.im_err *= f;
        self.log_scale += k as f64 * std::f64::consts::LN_2;
    }

    fn renormalize(&mut self) {
        let mag = (self.re + self.re_err).abs().max((self.im + self.im_err).abs());
        if mag == 0.0 || !mag.is_finite() {
            return;
        }
        let k = mag.log2().floor() as i32;
        self.shift_pow2(k);
    }

    fn mantissa_raw(&self) -> Complex64 {
        Complex64::new(self.re + self.re_err, self.im + self.im_err)
    }

    /// `ln |value|`; `-inf` for an exact zero.
    pub fn log_abs(&self) -> f64 {
        if self.log_scale == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        let m = self.mantissa_raw().norm();
        if m == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.log_scale + m.ln()
        }
    }

    pub fn phase(&self) -> f64 {
        self.mantissa_raw().arg()
    }

    /// Canonical form `(log_scale, mantissa)` with `|mantissa| ∈ [1, 2)`, or
    /// `(-inf, 0)` for zero.
    pub fn canonical(&self) -> (f64, Complex64) {
        let m = self.mantissa_raw();
        let mag = m.norm();
        if self.log_scale == f64::NEG_INFINITY || mag == 0.0 {
            return (f64::NEG_INFINITY, Complex64::new(0.0, 0.0));
        }
        let k = mag.log2().floor();
        let mut mant = m * 2f64.powf(-k);
        let mut scale = self.log_scale + k * std::f64::consts::LN_2;
        // Guard the [1, 2) boundary against rounding of log2.
        if mant.norm() >= 2.0 {
            mant /= 2.0;
            scale += std::f64::consts::LN_2;
        } else if mant.norm() < 1.0 {
            mant *= 2.0;
            scale -= std::f64::consts::LN_2;
        }
        (scale, mant)
    }

    /// `value · e^{log_factor + i·phase_shift}` as an ordinary complex
    /// number. Underflow gives an exact zero.
    pub fn scaled(&self, log_factor: f64, phase_shift: f64) -> Complex64 {
        if self.log_scale == f64::NEG_INFINITY {
            return Complex64::new(0.0, 0.0);
        }
        let f = (self.log_scale + log_factor).exp();
        if f == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        self.mantissa_raw() * f * Complex64::from_polar(1.0, phase_shift)
    }

    pub fn to_complex(&self) -> Complex64 {
        self.scaled(0.0, 0.0)
    }
}

/// Exponential growth rate `1 + (σ²-τ²)/2` of `|E X(t)|`.
pub fn b1_log_rate(beta: ComplexTemperature) -> f64 {
    1.0 + 0.5 * (beta.sigma * beta.sigma - beta.tau * beta.tau)
}

/// `X · e^{-t(1 + (σ²-τ²)/2) - i·PHASE_FACTOR·ρστt}`.
pub fn normalize_b1(x: &ScaledComplex, beta: ComplexTemperature, rho: f64, t: f64) -> Complex64 {
    normalize_b1_with_phase_factor(x, beta, rho, t, PHASE_FACTOR)
}

pub fn normalize_b1_with_phase_factor(
    x: &ScaledComplex,
    beta: ComplexTemperature,
    rho: f64,
    t: f64,
    phase_factor: f64,
) -> Complex64 {
    x.scaled(-t * b1_log_rate(beta), -phase_factor * rho * beta.sigma * beta.tau * t)
}

/// `X · e^{-σ m(t)}`.
pub fn normalize_b2(x: &ScaledComplex, sigma: f64, t: f64) -> Result<Complex64> {
    let m = phases::m_of_t(t)?;
    Ok(x.scaled(-sigma * m, 0.0))
}

/// `N(t) = X · e^{-t(1/2 + σ²)}`.
pub fn normalize_b3(x: &ScaledComplex, sigma: f64, t: f64) -> Complex64 {
    x.scaled(-t * (0.5 + sigma * sigma), 0.0)
}

/// One draw of the standard-BBM martingale `M_{σ,τ}(t)` at correlation `ρ`,
/// using replica `replica_index` of stream `seed`.
pub fn martingale_bbm(
    sigma: f64,
    tau: f64,
    rho: f64,
    t: f64,
    dist: &OffspringDistribution,
    seed: u64,
    replica_index: u64,
) -> Result<Complex64> {
    let beta = ComplexTemperature::new(sigma, tau);
    if t == 0.0 {
        return Ok(Complex64::new(1.0, 0.0));
    }
    let plan = ReplicaPlan::new(SpeedFunction::identity(), dist.clone(), t, rho)?.with_betas(vec![beta]);
    let out = run_replica(&plan, seed, replica_index)?;
    Ok(normalize_b1(&out.sums[0], beta, rho, t))
}
