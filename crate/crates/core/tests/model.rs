//! Statistical checks of the tree and field samplers against exact laws.

use crem_core::branching::{traverse, EventKind, TreeEvent};
use crem_core::field::leaf_covariance_estimate;
use crem_core::oracles::{first_moment, second_moment_b1_normalized};
use crem_core::partition::{martingale_bbm, normalize_b1};
use crem_core::rng::{replica_rng, StreamKind};
use crem_core::stats::{mean_estimate, slope_fit, summarize, variance_estimate};
use crem_core::{
    ensemble, ComplexTemperature, OffspringDistribution, QuadratureSpec, ReplicaPlan, SpeedFunction,
    DEFAULT_POPULATION_CAP,
};

fn exp3() -> SpeedFunction {
    SpeedFunction::exp_family(3.0).unwrap()
}

fn leaf_counts(t: f64, replicas: u64, seed: u64) -> Vec<f64> {
    let dist = OffspringDistribution::binary();
    (0..replicas)
        .map(|i| {
            let mut rng = replica_rng(seed, i, StreamKind::Tree);
            traverse(&dist, t, DEFAULT_POPULATION_CAP, &mut rng, &mut |_| {}).unwrap() as f64
        })
        .collect()
}

#[test]
fn mean_population_is_exponential() {
    for &t in &[2.0, 4.0, 6.0, 256f64.ln()] {
        let est = mean_estimate(leaf_counts(t, 10_000, 17));
        assert!(est.z(t.exp()).abs() <= 3.0, "t={t}: {est:?} vs {}", t.exp());
    }
}

#[test]
fn general_offspring_population_is_exponential() {
    let dist: OffspringDistribution = "0.25,0.5,0.25".parse().unwrap();
    let counts: Vec<f64> = (0..10_000)
        .map(|i| {
            let mut rng = replica_rng(3, i, StreamKind::Tree);
            traverse(&dist, 4.0, DEFAULT_POPULATION_CAP, &mut rng, &mut |_| {}).unwrap() as f64
        })
        .collect();
    assert!(mean_estimate(counts).z(4f64.exp()).abs() <= 3.0);
}

/// Asymptotic Kolmogorov p-value with Stephens' correction.
fn ks_p_value(sorted_u: &[f64]) -> f64 {
    let n = sorted_u.len() as f64;
    let d = sorted_u
        .iter()
        .enumerate()
        .map(|(i, &u)| ((i + 1) as f64 / n - u).max(u - i as f64 / n))
        .fold(0.0, f64::max);
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    let mut p = 0.0;
    for j in 1..=100 {
        let sign = if j % 2 == 1 { 1.0 } else { -1.0 };
        p += sign * (-2.0 * (j * j) as f64 * lambda * lambda).exp();
    }
    (2.0 * p).clamp(0.0, 1.0)
}

#[test]
fn branch_gaps_are_unit_exponential() {
    // Along the first root-to-leaf path of each tree, a gap starting at s is
    // observed only if it ends before t, so its law is Exp(1) truncated at
    // t - s. The probability integral transform of that law is uniform.
    let t = 6.0;
    let dist = OffspringDistribution::binary();
    let mut u = Vec::new();
    for i in 0..3000 {
        let mut rng = replica_rng(21, i, StreamKind::Tree);
        let mut start = 0.0;
        let mut done = false;
        let mut gaps = Vec::new();
        traverse(&dist, t, DEFAULT_POPULATION_CAP, &mut rng, &mut |e: TreeEvent| {
            if done {
                return;
            }
            match e.kind {
                EventKind::Branch { .. } => {
                    let w: f64 = e.time - start;
                    gaps.push((-w).exp_m1() / (-(t - start)).exp_m1());
                    start = e.time;
                }
                EventKind::Leaf => done = true,
            }
        })
        .unwrap();
        u.extend(gaps);
    }
    u.sort_by(f64::total_cmp);
    let p = ks_p_value(&u);
    assert!(u.len() > 10_000);
    assert!(p > 0.01, "p = {p}");
}

#[test]
fn leaf_variance_and_cross_covariance() {
    let dist = OffspringDistribution::binary();
    let t = 6.0;
    let zero = leaf_covariance_estimate(&exp3(), &dist, t, 0.0, 10_000, 20, 31, 1).unwrap();
    assert!(zero.var_x.z(t).abs() <= 3.0, "{:?}", zero.var_x);
    assert!(zero.cov_xy.z(0.0).abs() <= 3.0, "{:?}", zero.cov_xy);
    let half = leaf_covariance_estimate(&exp3(), &dist, t, 0.5, 10_000, 20, 32, 1).unwrap();
    assert!(half.cov_xy.z(3.0).abs() <= 3.0, "{:?}", half.cov_xy);
    // Leaves that split at the root are independent.
    let root = &half.bins[0];
    assert!(root.predicted < 0.2);
    assert!((root.empirical.value - root.predicted).abs() <= 3.0 * root.empirical.stderr);
}

#[test]
fn cross_covariance_is_linear_in_rho() {
    let dist = OffspringDistribution::binary();
    let t = 6.0;
    let points: Vec<(f64, f64)> = [-1.0, -0.5, 0.0, 0.5, 1.0]
        .iter()
        .enumerate()
        .map(|(i, &rho)| {
            let est = leaf_covariance_estimate(&exp3(), &dist, t, rho, 10_000, 20, 40 + i as u64, 1).unwrap();
            (rho, est.cov_xy.value / t)
        })
        .collect();
    let fit = slope_fit(&points).unwrap();
    assert!((fit.slope - 1.0).abs() <= 0.05, "{fit:?}");
}

#[test]
fn b1_normalized_sum_has_mean_one() {
    let beta = ComplexTemperature::new(0.3, 0.4);
    let (rho, t) = (0.5, 6.0);
    let plan = ReplicaPlan::new(exp3(), OffspringDistribution::binary(), t, rho)
        .unwrap()
        .with_betas(vec![beta]);
    let (outs, overflowed) = ensemble::completed(ensemble::run_ensemble(&plan, 11, 10_000, 1).unwrap()).unwrap();
    assert_eq!(overflowed, 0);
    let draws: Vec<_> = outs.iter().map(|o| normalize_b1(&o.sums[0], beta, rho, t)).collect();
    let s = summarize(&draws).unwrap();
    assert!((s.mean - 1.0).norm() <= 3.0 * s.stderr_mean, "{s:?}");
    // Same check through the unnormalized first moment.
    let raw: Vec<_> = outs
        .iter()
        .map(|o| o.sums[0].to_complex() / first_moment(beta, rho, t))
        .collect();
    assert!((summarize(&raw).unwrap().mean - s.mean).norm() < 1e-9);
}

#[test]
fn bbm_martingale_variance_stabilizes() {
    let dist = OffspringDistribution::binary();
    let mut variances = Vec::new();
    for &t in &[6.0, 8.0, 10.0] {
        let draws: Vec<_> = (0..4000)
            .map(|i| martingale_bbm(0.3, 0.3, 0.0, t, &dist, 5, i).unwrap())
            .collect();
        let var = variance_estimate(&draws).unwrap();
        let oracle = second_moment_b1_normalized(
            &SpeedFunction::identity(),
            ComplexTemperature::new(0.3, 0.3),
            0.0,
            t,
            2.0,
            QuadratureSpec::default(),
        )
        .unwrap();
        assert!(
            (var.value - (oracle.value - 1.0)).abs() <= 3.0 * var.stderr,
            "t={t}: {var:?} vs {}",
            oracle.value - 1.0
        );
        variances.push(var.value);
    }
    for w in variances.windows(2) {
        let r = w[1] / w[0];
        assert!((0.8..=1.25).contains(&r), "{variances:?}");
    }
}
