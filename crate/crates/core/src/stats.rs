//! Estimators and checks applied to merged replica samples.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Minimum sample size for the isotropy and Gaussianity checks.
pub const MIN_DISTRIBUTION_SAMPLES: usize = 100;

/// Mixed moments `E[N^a N̄^b]` that vanish for a rotation-invariant law.
pub const MIXED_MOMENTS: [(u32, u32); 4] = [(1, 0), (2, 0), (2, 1), (3, 1)];

/// A value with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

impl Estimate {
    /// `(value - target) / stderr`.
    pub fn z(&self, target: f64) -> f64 {
        (self.value - target) / self.stderr
    }
}

/// Sample mean and `√(s²/n)`; the error is NaN for fewer than two values.
pub fn mean_estimate<I>(values: I) -> Estimate
where
    I: IntoIterator<Item = f64>,
    I::IntoIter: Clone,
{
    let it = values.into_iter();
    let (n, sum) = it.clone().fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    let n = n as f64;
    let mean = sum / n;
    let ss: f64 = it.map(|v| (v - mean) * (v - mean)).sum();
    Estimate {
        value: mean,
        stderr: if n > 1.0 {
            (ss / (n * (n - 1.0))).sqrt()
        } else {
            f64::NAN
        },
    }
}

/// Unbiased sample variance `Σ|w - w̄|²/(n-1)` with a delta-method error.
pub fn variance_estimate(samples: &[Complex64]) -> Result<Estimate> {
    check_len(samples.len(), 3)?;
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<Complex64>() / n;
    let d2: Vec<f64> = samples.iter().map(|w| (w - mean).norm_sqr()).collect();
    let var = d2.iter().sum::<f64>() / (n - 1.0);
    let spread = mean_estimate(d2.iter().copied());
    Ok(Estimate {
        value: var,
        stderr: spread.stderr,
    })
}

/// Linear-interpolated quantile of unsorted data, `q` in `[0, 1]`.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

fn check_len(got: usize, needed: usize) -> Result<()> {
    if got < needed {
        return Err(Error::TooFewSamples { needed, got });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentSummary {
    pub n: usize,
    pub mean: Complex64,
    pub abs2_mean: f64,
    pub abs4_mean: f64,
    pub stderr_mean: f64,
    /// Jackknife.
    pub stderr_abs2: f64,
}

/// Leave-one-out standard error of `stat(Σa, Σb, n)` given per-sample terms.
fn jackknife<F: Fn(f64, f64, f64) -> f64>(a: &[f64], b: &[f64], stat: F) -> f64 {
    let n = a.len() as f64;
    let (sa, sb) = (a.iter().sum::<f64>(), b.iter().sum::<f64>());
    let loo: Vec<f64> = a.iter().zip(b).map(|(x, y)| stat(sa - x, sb - y, n - 1.0)).collect();
    let mean = loo.iter().sum::<f64>() / n;
    ((n - 1.0) / n * loo.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()).sqrt()
}

pub fn summarize(samples: &[Complex64]) -> Result<MomentSummary> {
    check_len(samples.len(), 2)?;
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<Complex64>() / n;
    let abs2: Vec<f64> = samples.iter().map(|w| w.norm_sqr()).collect();
    let abs2_mean = abs2.iter().sum::<f64>() / n;
    let abs4_mean = abs2.iter().map(|a| a * a).sum::<f64>() / n;
    let ss: f64 = samples.iter().map(|w| (w - mean).norm_sqr()).sum();
    let stderr_abs2 = jackknife(&abs2, &abs2, |s, _, m| s / m);
    Ok(MomentSummary {
        n: samples.len(),
        mean,
        abs2_mean,
        abs4_mean,
        stderr_mean: (ss / (n * (n - 1.0))).sqrt(),
        stderr_abs2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixedMoment {
    pub a: u32,
    pub b: u32,
    pub value: Complex64,
    /// `|value| / stderr`
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsotropyReport {
    /// Kuiper test of `arg(N)/(2π)` against the uniform law.
    pub phase_uniformity_p: f64,
    pub mixed: Vec<MixedMoment>,
}

impl IsotropyReport {
    pub fn max_mixed_z(&self) -> f64 {
        self.mixed.iter().map(|m| m.z).fold(0.0, f64::max)
    }
}

pub fn isotropy_tests(samples: &[Complex64]) -> Result<IsotropyReport> {
    check_len(samples.len(), MIN_DISTRIBUTION_SAMPLES)?;
    let mut u: Vec<f64> = samples.iter().map(|w| (w.arg() + PI) / (2.0 * PI)).collect();
    let mixed = MIXED_MOMENTS
        .iter()
        .map(|&(a, b)| {
            let w: Vec<Complex64> = samples.iter().map(|v| v.powu(a) * v.conj().powu(b)).collect();
            let n = w.len() as f64;
            let mean = w.iter().sum::<Complex64>() / n;
            let ss: f64 = w.iter().map(|x| (x - mean).norm_sqr()).sum();
            let stderr = (ss / (n * (n - 1.0))).sqrt();
            MixedMoment {
                a,
                b,
                value: mean,
                z: if stderr > 0.0 {
                    mean.norm() / stderr
                } else {
                    f64::INFINITY
                },
            }
        })
        .collect();
    u.sort_by(f64::total_cmp);
    Ok(IsotropyReport {
        phase_uniformity_p: kuiper_p_value(&u),
        mixed,
    })
}

/// Kuiper's `V = D⁺ + D⁻` against U(0,1) for sorted `u`, with the
/// Stephens finite-sample correction. `V` is invariant under cyclic shifts,
/// so the p-value does not depend on a fixed rotation of the phases.
fn kuiper_p_value(u: &[f64]) -> f64 {
    let n = u.len() as f64;
    let (mut d_plus, mut d_minus) = (0.0_f64, 0.0_f64);
    for (i, &x) in u.iter().enumerate() {
        d_plus = d_plus.max((i + 1) as f64 / n - x);
        d_minus = d_minus.max(x - i as f64 / n);
    }
    let v = d_plus + d_minus;
    let sn = n.sqrt();
    let lambda = (sn + 0.155 + 0.24 / sn) * v;
    kuiper_q(lambda)
}

/// `Q(λ) = 2 Σ_{j≥1} (4j²λ² - 1) e^{-2j²λ²}`.
fn kuiper_q(lambda: f64) -> f64 {
    if lambda < 0.4 {
        return 1.0;
    }
    let l2 = lambda * lambda;
    let mut sum = 0.0;
    for j in 1..=100 {
        let j2 = (j * j) as f64;
        let term = (4.0 * j2 * l2 - 1.0) * (-2.0 * j2 * l2).exp();
        sum += term;
        if term.abs() <= 1e-16 * sum.abs() {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// `mean|N|⁴ / (mean|N|²)²` with a jackknife standard error.
pub fn gaussianity_ratio(samples: &[Complex64]) -> Result<Estimate> {
    check_len(samples.len(), MIN_DISTRIBUTION_SAMPLES)?;
    let abs2: Vec<f64> = samples.iter().map(|w| w.norm_sqr()).collect();
    let abs4: Vec<f64> = abs2.iter().map(|a| a * a).collect();
    let ratio = |s4: f64, s2: f64, n: f64| (s4 / n) / ((s2 / n) * (s2 / n));
    let n = samples.len() as f64;
    Ok(Estimate {
        value: ratio(abs4.iter().sum(), abs2.iter().sum(), n),
        stderr: jackknife(&abs4, &abs2, ratio),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root mean square residual.
    pub resid: f64,
}

/// Ordinary least squares of `value` against `t`.
pub fn slope_fit(pairs: &[(f64, f64)]) -> Result<LineFit> {
    let mut ts: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    if ts.len() < 3 {
        return Err(Error::DegenerateDesign(format!(
            "need at least 3 distinct t, got {}",
            ts.len()
        )));
    }
    let n = pairs.len() as f64;
    let mt = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mv = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pairs.iter().map(|p| (p.0 - mt) * (p.0 - mt)).sum();
    let sxy: f64 = pairs.iter().map(|p| (p.0 - mt) * (p.1 - mv)).sum();
    let slope = sxy / sxx;
    let intercept = mv - slope * mt;
    let rss: f64 = pairs
        .iter()
        .map(|p| {
            let r = p.1 - (intercept + slope * p.0);
            r * r
        })
        .sum();
    Ok(LineFit {
        slope,
        intercept,
        resid: (rss / n).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phases::m_of_t;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// Isotropic complex Gaussian with `E|Z|² = 1`.
    fn gaussian_fixture(n: usize, seed: u64) -> Vec<Complex64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        (0..n)
            .map(|_| {
                let (a, b): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
                c(s * a, s * b)
            })
            .collect()
    }

    #[test]
    fn summarize_examples() {
        let s = summarize(&[c(1.0, 0.0); 5]).unwrap();
        assert_eq!(
            (s.mean, s.abs2_mean, s.stderr_mean, s.stderr_abs2),
            (c(1.0, 0.0), 1.0, 0.0, 0.0)
        );
        let s = summarize(&[c(1.0, 0.0), c(-1.0, 0.0)]).unwrap();
        assert_eq!((s.mean, s.abs2_mean), (c(0.0, 0.0), 1.0));
        let s = summarize(&[c(1.0, 0.0), c(0.0, 1.0), c(-1.0, 0.0), c(0.0, -1.0)]).unwrap();
        assert_eq!((s.mean, s.abs2_mean, s.abs4_mean), (c(0.0, 0.0), 1.0, 1.0));
        assert_eq!(
            summarize(&[c(1.0, 0.0)]),
            Err(Error::TooFewSamples { needed: 2, got: 1 })
        );
    }

    #[test]
    fn jackknife_abs2_matches_analytic_error() {
        let n = 10_000;
        let mut within = 0;
        for seed in 0..50 {
            let s = summarize(&gaussian_fixture(n, seed)).unwrap();
            if (s.stderr_abs2 / (1.0 / (n as f64).sqrt()) - 1.0).abs() < 0.2 {
                within += 1;
            }
        }
        assert_eq!(within, 50);
    }

    #[test]
    fn isotropic_null_passes() {
        let mut ok = 0;
        for seed in 0..100 {
            let r = isotropy_tests(&gaussian_fixture(2000, 1000 + seed)).unwrap();
            if r.max_mixed_z() <= 3.0 {
                ok += 1;
            }
        }
        assert!(ok >= 98, "{ok}");
    }

    #[test]
    fn real_positive_samples_fail_uniformity() {
        let s: Vec<Complex64> = (1..=500).map(|k| c(k as f64, 0.0)).collect();
        assert!(isotropy_tests(&s).unwrap().phase_uniformity_p < 1e-6);
    }

    #[test]
    fn uniformity_is_rotation_invariant() {
        let s = gaussian_fixture(1500, 7);
        let p = isotropy_tests(&s).unwrap().phase_uniformity_p;
        for theta in [0.3, 1.7, -2.9] {
            let r = Complex64::from_polar(1.0, theta);
            let rotated: Vec<Complex64> = s.iter().map(|w| w * r).collect();
            let q = isotropy_tests(&rotated).unwrap().phase_uniformity_p;
            assert!((p - q).abs() < 1e-9, "{p} vs {q}");
        }
    }

    #[test]
    fn distribution_checks_need_samples() {
        let s = gaussian_fixture(99, 1);
        assert!(matches!(isotropy_tests(&s), Err(Error::TooFewSamples { .. })));
        assert!(matches!(gaussianity_ratio(&s), Err(Error::TooFewSamples { .. })));
    }

    #[test]
    fn gaussianity_examples() {
        let g = gaussianity_ratio(&gaussian_fixture(20_000, 3)).unwrap();
        assert!((g.value - 2.0).abs() <= 3.0 * g.stderr, "{g:?}");
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ring: Vec<Complex64> = (0..500)
            .map(|_| Complex64::from_polar(1.0, rng.random_range(0.0..std::f64::consts::TAU)))
            .collect();
        let r = gaussianity_ratio(&ring).unwrap();
        assert!((r.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn slope_fit_examples() {
        let f = slope_fit(&[(1.0, 3.0), (2.0, 5.0), (4.0, 9.0)]).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-12 && (f.intercept - 1.0).abs() < 1e-12 && f.resid < 1e-12);
        let f = slope_fit(&[(1.0, 4.0), (2.0, 4.0), (3.0, 4.0)]).unwrap();
        assert!(f.slope.abs() < 1e-12);
        let pts: Vec<(f64, f64)> = [50.0, 100.0, 200.0].iter().map(|&t| (t, m_of_t(t).unwrap())).collect();
        assert!((slope_fit(&pts).unwrap().slope - std::f64::consts::SQRT_2).abs() < 0.02);
        assert!(matches!(
            slope_fit(&[(1.0, 1.0), (1.0, 2.0), (2.0, 3.0)]),
            Err(Error::DegenerateDesign(_))
        ));
    }

    #[test]
    fn quantiles() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(quantile(&[0.0, 10.0], 0.25), 2.5);
    }

    proptest! {
        #[test]
        fn summarize_is_permutation_invariant(
            v in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 2..60),
            seed in any::<u64>(),
        ) {
            let s: Vec<Complex64> = v.iter().map(|&(a, b)| c(a, b)).collect();
            let mut shuffled = s.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in (1..shuffled.len()).rev() {
                shuffled.swap(i, rng.random_range(0..=i));
            }
            let (x, y) = (summarize(&s).unwrap(), summarize(&shuffled).unwrap());
            prop_assert!((x.mean - y.mean).norm() <= 1e-12);
            prop_assert!((x.abs2_mean - y.abs2_mean).abs() <= 1e-12 * x.abs2_mean.max(1.0));
            prop_assert!((x.abs4_mean - y.abs4_mean).abs() <= 1e-12 * x.abs4_mean.max(1.0));
            prop_assert!((x.stderr_abs2 - y.stderr_abs2).abs() <= 1e-9 * x.stderr_abs2.max(1.0));
            prop_assert!(x.abs4_mean >= x.abs2_mean * x.abs2_mean * (1.0 - 1e-12));
        }
    }
}
