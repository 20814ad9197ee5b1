//! Speed functions: the variance profile `A: [0,1] -> [0,1]` of the field.
//!
//! Two forms are supported. The exponential family
//! `A(x) = (e^{ax} - 1) / (e^a - 1)` has closed-form endpoint slopes; the
//! piecewise-linear form is the interchange representation used by config
//! files (`pwl:0,0;0.5,0.4;1,1`).

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Default validation grid size.
pub const DEFAULT_GRID_N: usize = 1024;
/// Tolerance on `A(0) = 0` and `A(1) = 1`.
pub const ENDPOINT_TOL: f64 = 1e-12;
/// Step used for the numerical endpoint slope sanity check.
pub const SLOPE_CHECK_STEP: f64 = 1e-4;
/// Relative tolerance of the endpoint slope sanity check.
pub const SLOPE_CHECK_REL_TOL: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub enum SpeedForm {
    ExpFamily { a: f64 },
    PiecewiseLinear { knots: Vec<(f64, f64)> },
}

/// Value of `A'(1)`. The infinite case is allowed by the model but refused by
/// the moment oracles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EndSlope {
    Finite(f64),
    Infinite,
}

impl EndSlope {
    pub fn finite(self) -> Result<f64> {
        match self {
            EndSlope::Finite(v) => Ok(v),
            EndSlope::Infinite => Err(Error::InfiniteEndSlope),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeedFunction {
    form: SpeedForm,
    sigma_b_sq: f64,
    sigma_e_sq: EndSlope,
    identity: bool,
}

impl SpeedFunction {
    /// `A(x) = (e^{ax} - 1)/(e^a - 1)`; `a = 0` is the limit `A(x) = x`.
    pub fn exp_family(a: f64) -> Result<Self> {
        if !a.is_finite() {
            return Err(Error::Domain(format!("exp family parameter must be finite, got {a}")));
        }
        let (sigma_b_sq, sigma_e_sq) = if a == 0.0 {
            (1.0, 1.0)
        } else {
            let d = a.exp_m1();
            (a / d, a * a.exp() / d)
        };
        Ok(Self {
            form: SpeedForm::ExpFamily { a },
            sigma_b_sq,
            sigma_e_sq: EndSlope::Finite(sigma_e_sq),
            identity: a == 0.0,
        })
    }

    /// Piecewise-linear interpolation through `knots`, which must start at
    /// `x = 0`, end at `x = 1`, and be strictly increasing in `x` (a repeated
    /// `x` would encode a jump, which is not supported).
    pub fn piecewise_linear(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::MalformedKnots(format!(
                "need at least two knots, got {}",
                knots.len()
            )));
        }
        for &(x, y) in &knots {
            if !x.is_finite() || !y.is_finite() {
                return Err(Error::MalformedKnots(format!("non-finite knot ({x}, {y})")));
            }
        }
        for w in knots.windows(2) {
            let (x0, x1) = (w[0].0, w[1].0);
            if x1 == x0 {
                return Err(Error::MalformedKnots(format!(
                    "repeated x = {x0} (jumps are not supported)"
                )));
            }
            if x1 < x0 {
                return Err(Error::MalformedKnots(format!(
                    "x not strictly increasing: {x0} then {x1}"
                )));
            }
        }
        let first = knots[0];
        let last = knots[knots.len() - 1];
        if first.0 != 0.0 || last.0 != 1.0 {
            return Err(Error::MalformedKnots(format!(
                "knots must span [0, 1], got [{}, {}]",
                first.0, last.0
            )));
        }
        let n = knots.len();
        let sigma_b_sq = (knots[1].1 - knots[0].1) / (knots[1].0 - knots[0].0);
        let sigma_e_sq = (knots[n - 1].1 - knots[n - 2].1) / (knots[n - 1].0 - knots[n - 2].0);
        let identity = n == 2 && first.1 == 0.0 && last.1 == 1.0;
        Ok(Self {
            form: SpeedForm::PiecewiseLinear { knots },
            sigma_b_sq,
            sigma_e_sq: EndSlope::Finite(sigma_e_sq),
            identity,
        })
    }

    /// `A(x) = x`, standard branching Brownian motion.
    pub fn identity() -> Self {
        Self::piecewise_linear(vec![(0.0, 0.0), (1.0, 1.0)]).expect("identity knots are well formed")
    }

    /// Overrides the endpoint slopes, e.g. to flag `A'(1) = +inf` for a
    /// profile whose slope the piecewise form cannot express.
    pub fn with_end_slopes(mut self, sigma_b_sq: f64, sigma_e_sq: EndSlope) -> Self {
        self.sigma_b_sq = sigma_b_sq;
        self.sigma_e_sq = sigma_e_sq;
        self
    }

    pub fn form(&self) -> &SpeedForm {
        &self.form
    }

    /// `A'(0)`.
    pub fn sigma_b_sq(&self) -> f64 {
        self.sigma_b_sq
    }

    pub fn sigma_b(&self) -> f64 {
        self.sigma_b_sq.sqrt()
    }

    /// `A'(1)`.
    pub fn sigma_e_sq(&self) -> EndSlope {
        self.sigma_e_sq
    }

    /// True when `A(x) = x` exactly; the variance profile is then `s` itself.
    pub fn is_identity(&self) -> bool {
        self.identity
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::Domain(format!("A(x) needs x in [0, 1], got {x}")));
        }
        Ok(self.eval_unchecked(x))
    }

    /// `A(x)` without the domain check; `x` is clamped into `[0, 1]`.
    #[inline]
    pub fn eval_unchecked(&self, x: f64) -> f64 {
        let x = x.clamp(0.0, 1.0);
        if self.identity {
            return x;
        }
        match &self.form {
            SpeedForm::ExpFamily { a } => (a * x).exp_m1() / a.exp_m1(),
            SpeedForm::PiecewiseLinear { knots } => {
                let i = knots.partition_point(|&(kx, _)| kx <= x);
                if i == 0 {
                    return knots[0].1;
                }
                if i >= knots.len() {
                    return knots[knots.len() - 1].1;
                }
                let (x0, y0) = knots[i - 1];
                let (x1, y1) = knots[i];
                y0 + (x - x0) * (y1 - y0) / (x1 - x0)
            }
        }
    }

    /// `Σ²(s) = t·A(s/t)`, the variance of a particle position at time `s`
    /// when the horizon is `t`.
    pub fn variance_profile(&self, s: f64, t: f64) -> Result<f64> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::Domain(format!("horizon must be positive, got {t}")));
        }
        if !(0.0..=t).contains(&s) {
            return Err(Error::Domain(format!("time {s} outside [0, {t}]")));
        }
        Ok(self.variance_profile_unchecked(s, t))
    }

    #[inline]
    pub fn variance_profile_unchecked(&self, s: f64, t: f64) -> f64 {
        if self.identity {
            return s.clamp(0.0, t);
        }
        if s >= t {
            return t;
        }
        t * self.eval_unchecked(s / t)
    }

    /// Smallest `s` with `t·A(s/t) = v`, found by bisection so that
    /// `|t·A(s/t) - v| <= 1e-10·t`. Flat spans resolve to their left end.
    pub fn inverse_variance_profile(&self, v: f64, t: f64) -> Result<f64> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::Domain(format!("horizon must be positive, got {t}")));
        }
        if v > t {
            return Err(Error::NotAttained { value: v, horizon: t });
        }
        if !(v >= 0.0) {
            return Err(Error::Domain(format!("variance must be non-negative, got {v}")));
        }
        if v == 0.0 {
            return Ok(0.0);
        }
        Ok(self.bisect(v, t))
    }

    fn bisect(&self, v: f64, t: f64) -> f64 {
        // Invariant: profile(lo) < v <= profile(hi).
        let (mut lo, mut hi) = (0.0_f64, t);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.variance_profile_unchecked(mid, t) < v {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        hi
    }

    /// Checks the weak-correlation conditions on a uniform grid of `grid_n`
    /// intervals (plus the knots, for piecewise input). Strict mode also
    /// requires `A(x) < x` on the interior.
    pub fn validate(&self, grid_n: usize, strict: bool) -> Result<ValidationReport> {
        if grid_n < 2 {
            return Err(Error::Domain(format!("grid_n must be at least 2, got {grid_n}")));
        }
        let mut report = ValidationReport::default();

        let a0 = self.eval_unchecked(0.0);
        if a0.abs() > ENDPOINT_TOL {
            report.violations.push(Violation::StartNotZero { value: a0 });
        }
        let a1 = self.eval_unchecked(1.0);
        if (a1 - 1.0).abs() > ENDPOINT_TOL {
            report.violations.push(Violation::EndNotOne { value: a1 });
        }

        let mut xs: Vec<f64> = (0..=grid_n).map(|i| i as f64 / grid_n as f64).collect();
        if let SpeedForm::PiecewiseLinear { knots } = &self.form {
            xs.extend(knots.iter().map(|k| k.0));
            xs.sort_by(f64::total_cmp);
            xs.dedup();
        }
        let values: Vec<f64> = xs.iter().map(|&x| self.eval_unchecked(x)).collect();

        if let Some(i) = values
            .iter()
            .position(|v| !(-ENDPOINT_TOL..=1.0 + ENDPOINT_TOL).contains(v))
        {
            report.violations.push(Violation::OutOfRange {
                x: xs[i],
                value: values[i],
            });
        }

        let worst_drop = (1..values.len())
            .map(|i| (i, values[i - 1] - values[i]))
            .filter(|&(_, d)| d > 0.0)
            .max_by(|a, b| a.1.total_cmp(&b.1));
        if let Some((i, _)) = worst_drop {
            report.violations.push(Violation::Decreasing {
                x: xs[i],
                value: values[i],
            });
        }

        if strict {
            let worst = xs
                .iter()
                .zip(&values)
                .filter(|(x, _)| **x > 0.0 && **x < 1.0)
                .map(|(&x, &v)| (x, v, v - x))
                .filter(|&(_, _, excess)| excess >= 0.0)
                .max_by(|a, b| a.2.total_cmp(&b.2));
            if let Some((x, value, _)) = worst {
                report.violations.push(Violation::NotBelowDiagonal { x, value });
            }
        }

        let h = SLOPE_CHECK_STEP;
        let numeric_b = (self.eval_unchecked(h) - a0) / h;
        if !slope_close(numeric_b, self.sigma_b_sq) {
            report.violations.push(Violation::StartSlopeMismatch {
                declared: self.sigma_b_sq,
                numeric: numeric_b,
            });
        }
        match self.sigma_e_sq {
            EndSlope::Finite(declared) => {
                let numeric_e = (a1 - self.eval_unchecked(1.0 - h)) / h;
                if !slope_close(numeric_e, declared) {
                    report.violations.push(Violation::EndSlopeMismatch {
                        declared,
                        numeric: numeric_e,
                    });
                }
            }
            EndSlope::Infinite => report
                .notes
                .push("A'(1) flagged infinite; moment oracles unavailable".into()),
        }
        Ok(report)
    }
}

fn slope_close(numeric: f64, declared: f64) -> bool {
    if declared == 0.0 {
        numeric.abs() <= SLOPE_CHECK_REL_TOL
    } else {
        ((numeric - declared) / declared).abs() <= SLOPE_CHECK_REL_TOL
    }
}

impl fmt::Display for SpeedFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.form {
            SpeedForm::ExpFamily { a } => write!(f, "exp:{a}"),
            SpeedForm::PiecewiseLinear { knots } => {
                write!(f, "pwl:")?;
                for (i, (x, y)) in knots.iter().enumerate() {
                    if i > 0 {
                        write!(f, ";")?;
                    }
                    write!(f, "{x},{y}")?;
                }
                Ok(())
            }
        }
    }
}

impl FromStr for SpeedFunction {
    type Err = Error;

    /// Parses `exp:<a>`, `pwl:x0,y0;x1,y1;...` or `identity`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "identity" || s == "bbm" {
            return Ok(Self::identity());
        }
        let (kind, body) = s
            .split_once(':')
            .ok_or_else(|| Error::Domain(format!("speed function '{s}': expected exp:<a> or pwl:<knots>")))?;
        match kind.trim() {
            "exp" => {
                let a: f64 = body
                    .trim()
                    .parse()
                    .map_err(|_| Error::Domain(format!("bad exp parameter '{body}'")))?;
                Self::exp_family(a)
            }
            "pwl" => {
                let mut knots = Vec::new();
                for pair in body.split(';').map(str::trim).filter(|p| !p.is_empty()) {
                    let (x, y) = pair
                        .split_once(',')
                        .ok_or_else(|| Error::MalformedKnots(format!("knot '{pair}' is not x,y")))?;
                    let x: f64 = x
                        .trim()
                        .parse()
                        .map_err(|_| Error::MalformedKnots(format!("bad x in '{pair}'")))?;
                    let y: f64 = y
                        .trim()
                        .parse()
                        .map_err(|_| Error::MalformedKnots(format!("bad y in '{pair}'")))?;
                    knots.push((x, y));
                }
                Self::piecewise_linear(knots)
            }
            other => Err(Error::Domain(format!("unknown speed function kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    StartNotZero { value: f64 },
    EndNotOne { value: f64 },
    OutOfRange { x: f64, value: f64 },
    Decreasing { x: f64, value: f64 },
    NotBelowDiagonal { x: f64, value: f64 },
    StartSlopeMismatch { declared: f64, numeric: f64 },
    EndSlopeMismatch { declared: f64, numeric: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::StartNotZero { value } => write!(f, "A(0)=0 fails: A(0)={value}"),
            Violation::EndNotOne { value } => write!(f, "A(1)=1 fails: A(1)={value}"),
            Violation::OutOfRange { x, value } => write!(f, "A(x) in [0,1] fails at x={x}: A(x)={value}"),
            Violation::Decreasing { x, value } => write!(f, "A non-decreasing fails at x={x}: A(x)={value}"),
            Violation::NotBelowDiagonal { x, value } => write!(f, "A(x)<x fails at x={x}: A(x)={value}"),
            Violation::StartSlopeMismatch { declared, numeric } => {
                write!(f, "A'(0) mismatch: declared {declared}, numeric {numeric}")
            }
            Violation::EndSlopeMismatch { declared, numeric } => {
                write!(f, "A'(1) mismatch: declared {declared}, numeric {numeric}")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub notes: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_valid() {
            return write!(f, "valid");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp3() -> SpeedFunction {
        SpeedFunction::exp_family(3.0).unwrap()
    }

    #[test]
    fn exp_family_endpoints_and_midpoint() {
        let a = exp3();
        assert_eq!(a.eval(0.0).unwrap(), 0.0);
        assert!((a.eval(1.0).unwrap() - 1.0).abs() < 1e-15);
        let direct = (1.5_f64.exp() - 1.0) / (3.0_f64.exp() - 1.0);
        assert!((a.eval(0.5).unwrap() - direct).abs() < 1e-14);
        assert!((a.eval(0.5).unwrap() - 0.18243).abs() < 1e-5);
    }

    #[test]
    fn exp_family_slopes() {
        let a = exp3();
        let e3 = 3.0_f64.exp();
        assert!((a.sigma_b_sq() - 3.0 / (e3 - 1.0)).abs() < 1e-9);
        assert!((a.sigma_e_sq().finite().unwrap() - 3.0 * e3 / (e3 - 1.0)).abs() < 1e-9);
        assert!((a.sigma_b_sq() - 0.157187).abs() < 1e-6);
        assert!((a.sigma_e_sq().finite().unwrap() - 3.157187).abs() < 1e-6);
    }

    #[test]
    fn eval_rejects_outside_unit_interval() {
        assert!(matches!(exp3().eval(1.5), Err(Error::Domain(_))));
        assert!(matches!(exp3().eval(-0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn variance_profile_examples() {
        let a = exp3();
        assert_eq!(a.variance_profile(6.0, 6.0).unwrap(), 6.0);
        assert_eq!(a.variance_profile(0.0, 6.0).unwrap(), 0.0);
        assert!((a.variance_profile(3.0, 6.0).unwrap() - 1.0946).abs() < 1e-4);
        assert!(a.variance_profile(7.0, 6.0).is_err());
    }

    #[test]
    fn inverse_variance_profile_examples() {
        let a = exp3();
        assert_eq!(a.inverse_variance_profile(0.0, 6.0).unwrap(), 0.0);
        assert!((a.inverse_variance_profile(6.0, 6.0).unwrap() - 6.0).abs() < 1e-9);
        let v = a.variance_profile(3.0, 6.0).unwrap();
        assert!((a.inverse_variance_profile(v, 6.0).unwrap() - 3.0).abs() < 1e-8 * 6.0);
        assert!((a.inverse_variance_profile(1.0946, 6.0).unwrap() - 3.0).abs() < 1e-3);
        assert!(matches!(
            a.inverse_variance_profile(6.5, 6.0),
            Err(Error::NotAttained { .. })
        ));
    }

    #[test]
    fn inverse_resolves_flat_span_to_left_end() {
        let a = SpeedFunction::piecewise_linear(vec![(0.0, 0.0), (0.4, 0.2), (0.6, 0.2), (1.0, 1.0)]).unwrap();
        let s = a.inverse_variance_profile(2.0, 10.0).unwrap();
        assert!((s - 4.0).abs() < 1e-9, "got {s}");
    }

    #[test]
    fn validate_exp_family_strict_is_clean() {
        let report = exp3().validate(100, true).unwrap();
        assert!(report.is_valid(), "{:?}", report.violations);
        assert!(exp3().validate(DEFAULT_GRID_N, true).unwrap().is_valid());
    }

    #[test]
    fn validate_identity_strict_vs_nonstrict() {
        let id = SpeedFunction::identity();
        let strict = id.validate(DEFAULT_GRID_N, true).unwrap();
        assert_eq!(strict.violations.len(), 1);
        assert!(matches!(strict.violations[0], Violation::NotBelowDiagonal { .. }));
        assert!(strict.violations[0].to_string().contains("A(x)<x fails"));
        assert!(id.validate(DEFAULT_GRID_N, false).unwrap().is_valid());
    }

    #[test]
    fn validate_reports_offending_knot() {
        let a = SpeedFunction::piecewise_linear(vec![(0.0, 0.0), (0.5, 0.6), (1.0, 1.0)]).unwrap();
        let report = a.validate(100, true).unwrap();
        let hit = report
            .violations
            .iter()
            .find_map(|v| match v {
                Violation::NotBelowDiagonal { x, .. } => Some(*x),
                _ => None,
            })
            .expect("diagonal violation");
        assert_eq!(hit, 0.5);
    }

    #[test]
    fn validate_flags_decrease_and_endpoints() {
        let a = SpeedFunction::piecewise_linear(vec![(0.0, 0.0), (0.5, 0.4), (0.7, 0.3), (1.0, 1.0)]).unwrap();
        let report = a.validate(64, true).unwrap();
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::Decreasing { .. })));

        let b = SpeedFunction::piecewise_linear(vec![(0.0, 0.1), (1.0, 0.9)]).unwrap();
        let report = b.validate(64, false).unwrap();
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::StartNotZero { .. })));
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::EndNotOne { .. })));
    }

    #[test]
    fn validate_flags_wrong_declared_slopes() {
        let a = exp3().with_end_slopes(0.5, EndSlope::Finite(3.157187));
        let report = a.validate(64, true).unwrap();
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::StartSlopeMismatch { .. })));
    }

    #[test]
    fn validate_needs_grid() {
        assert!(exp3().validate(1, true).is_err());
    }

    #[test]
    fn malformed_knots_rejected() {
        assert!(matches!(
            SpeedFunction::piecewise_linear(vec![(0.0, 0.0), (0.6, 0.3), (0.5, 0.4), (1.0, 1.0)]),
            Err(Error::MalformedKnots(_))
        ));
        assert!(matches!(
            SpeedFunction::piecewise_linear(vec![(0.0, 0.0), (0.5, 0.1), (0.5, 0.4), (1.0, 1.0)]),
            Err(Error::MalformedKnots(_))
        ));
        assert!(matches!(
            SpeedFunction::piecewise_linear(vec![(0.1, 0.0), (1.0, 1.0)]),
            Err(Error::MalformedKnots(_))
        ));
    }

    #[test]
    fn parse_round_trip() {
        let a: SpeedFunction = "exp:3.0".parse().unwrap();
        assert_eq!(a, exp3());
        let p: SpeedFunction = "pwl:0,0;0.5,0.4;1,1".parse().unwrap();
        assert_eq!(p.to_string(), "pwl:0,0;0.5,0.4;1,1");
        assert_eq!(p.to_string().parse::<SpeedFunction>().unwrap(), p);
        assert!((p.sigma_b_sq() - 0.8).abs() < 1e-15);
        assert!((p.sigma_e_sq().finite().unwrap() - 1.2).abs() < 1e-12);
        assert!("cubic:1".parse::<SpeedFunction>().is_err());
        assert!("pwl:0,0;1".parse::<SpeedFunction>().is_err());
    }

    #[test]
    fn infinite_end_slope_refused() {
        let a = exp3().with_end_slopes(exp3().sigma_b_sq(), EndSlope::Infinite);
        assert_eq!(a.sigma_e_sq().finite(), Err(Error::InfiniteEndSlope));
    }

    #[test]
    fn identity_profile_is_exact() {
        let id = SpeedFunction::identity();
        for s in [0.1, 0.3, 1.7, 5.55] {
            assert_eq!(id.variance_profile(s, 7.0).unwrap(), s);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn inverse_round_trip(a in 0.5f64..6.0, frac in 0.0f64..1.0, t in 0.5f64..30.0) {
                let sf = SpeedFunction::exp_family(a).unwrap();
                let s = frac * t;
                let v = sf.variance_profile(s, t).unwrap();
                let back = sf.inverse_variance_profile(v, t).unwrap();
                prop_assert!((back - s).abs() <= 1e-8 * t);
            }

            #[test]
            fn eval_monotone(mut xs in proptest::collection::vec(0.0f64..=1.0, 2..50), a in -4.0f64..6.0) {
                let sf = SpeedFunction::exp_family(a).unwrap();
                xs.sort_by(f64::total_cmp);
                let vals: Vec<f64> = xs.iter().map(|&x| sf.eval(x).unwrap()).collect();
                for w in vals.windows(2) {
                    prop_assert!(w[0] <= w[1]);
                }
            }
        }
    }
}
