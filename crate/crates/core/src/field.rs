//! Correlated Gaussian fields `(X, Y)` along a streaming tree traversal.
//!
//! Each edge segment `[s0, s1]` receives independent Gaussian increments of
//! variance `tA(s1/t) - tA(s0/t)`. The same standard normals, scaled by
//! `σ_b √(s1 - s0)`, drive a coupled standard BBM `x̃`. The imaginary driver
//! is `y = ρx + √(1-ρ²) z` with `z` an independent copy of the field.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::branching::{traverse, EventKind, OffspringDistribution, TreeEvent, TreeVisitor, DEFAULT_POPULATION_CAP};
use crate::error::{Error, Result};
use crate::partition::{ComplexTemperature, ScaledComplex};
use crate::phases::{self, EnvelopeSpec};
use crate::rng::{replica_rng, ReplicaRng, StreamKind};
use crate::speedfn::SpeedFunction;
use crate::stats::{mean_estimate, Estimate};

/// Spacing of the time grid used for envelope checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub step: f64,
}

impl GridSpec {
    /// `min(0.05·t, 0.25)`.
    pub fn default_for(t: f64) -> Self {
        Self {
            step: (0.05 * t).min(0.25),
        }
    }
}

/// Envelope monitoring: one crossing flag per spec.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeMonitor {
    pub specs: Vec<EnvelopeSpec>,
    pub grid: GridSpec,
    /// Also check at every branch time, not only on the grid and at `t`.
    pub at_branch_times: bool,
}

/// Collect leaves with `x - m(t) >= -depth` and cluster them by common
/// ancestry later than `t - window`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnapshotSpec {
    pub depth: f64,
    pub window: f64,
}

impl SnapshotSpec {
    /// Window `√t`.
    pub fn with_default_window(depth: f64, t: f64) -> Self {
        Self {
            depth,
            window: t.sqrt(),
        }
    }
}

/// Everything one replica computes. Sinks are declared here, up front.
#[derive(Debug, Clone)]
pub struct ReplicaPlan {
    pub speed: SpeedFunction,
    pub offspring: OffspringDistribution,
    pub t: f64,
    pub rho: f64,
    /// Partition sums of the CREM field.
    pub betas: Vec<ComplexTemperature>,
    /// Partition sums of the coupled `σ_b`-scaled standard BBM at the same temperatures.
    pub coupled: bool,
    pub envelope: Option<EnvelopeMonitor>,
    pub snapshot: Option<SnapshotSpec>,
    /// Reservoir-sample two distinct leaves.
    pub sample_pair: bool,
    pub cap: u64,
}

impl ReplicaPlan {
    pub fn new(speed: SpeedFunction, offspring: OffspringDistribution, t: f64, rho: f64) -> Result<Self> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::Domain(format!("horizon must be positive, got {t}")));
        }
        if !(-1.0..=1.0).contains(&rho) {
            return Err(Error::Domain(format!("rho must lie in [-1, 1], got {rho}")));
        }
        Ok(Self {
            speed,
            offspring,
            t,
            rho,
            betas: Vec::new(),
            coupled: false,
            envelope: None,
            snapshot: None,
            sample_pair: false,
            cap: DEFAULT_POPULATION_CAP,
        })
    }

    pub fn with_betas(mut self, betas: Vec<ComplexTemperature>) -> Self {
        self.betas = betas;
        self
    }

    pub fn with_coupled(mut self, coupled: bool) -> Self {
        self.coupled = coupled;
        self
    }

    pub fn with_envelope(mut self, monitor: EnvelopeMonitor) -> Self {
        self.envelope = Some(monitor);
        self
    }

    pub fn with_snapshot(mut self, snapshot: SnapshotSpec) -> Self {
        self.snapshot = Some(snapshot);
        self
    }

    pub fn with_pair_sample(mut self, on: bool) -> Self {
        self.sample_pair = on;
        self
    }

    pub fn with_cap(mut self, cap: u64) -> Self {
        self.cap = cap;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtremalSnapshot {
    /// `x_k(t) - m(t)` for every leaf at least `-depth`, in depth-first order.
    pub points: Vec<f64>,
    /// Index sets into `points`; two points share a cluster iff their leaves
    /// branched after `t - window`.
    pub clusters: Vec<Vec<usize>>,
}

/// Field values at one leaf.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeafValue {
    pub x: f64,
    pub y: f64,
}

/// Two distinct uniformly chosen leaves and the time of their most recent
/// common ancestor. `uniform` is one of the two chosen by a fair coin, hence
/// itself a uniform leaf.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeafPair {
    pub first: LeafValue,
    pub second: LeafValue,
    pub branch_time: f64,
    pub uniform: LeafValue,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaOutput {
    pub replica_index: u64,
    pub n_t: u64,
    pub max_x: f64,
    pub max_x_minus_m: f64,
    /// Aligned with `ReplicaPlan::betas`.
    pub sums: Vec<ScaledComplex>,
    /// Aligned with `ReplicaPlan::betas`; empty unless `coupled`.
    pub coupled_sums: Vec<ScaledComplex>,
    /// Aligned with the envelope specs; empty without a monitor.
    pub envelope_crossed: Vec<bool>,
    pub snapshot: Option<ExtremalSnapshot>,
    /// `None` when not requested or when the tree has a single leaf.
    pub pair: Option<LeafPair>,
}

#[derive(Debug, Clone, Copy)]
struct PathState {
    s: f64,
    /// `tA(s/t)`
    v: f64,
    x: f64,
    x_tilde: f64,
    z: f64,
    z_tilde: f64,
    cluster: u32,
    node: u64,
}

/// Partition sums at many temperatures, sharing `cos/sin(τy)` across
/// temperatures with equal `τ`.
struct PartitionBank {
    sigmas: Vec<f64>,
    tau_index: Vec<usize>,
    taus: Vec<f64>,
    cis: Vec<(f64, f64)>,
    sums: Vec<ScaledComplex>,
}

impl PartitionBank {
    fn new(betas: &[ComplexTemperature]) -> Self {
        let mut taus: Vec<f64> = Vec::new();
        let mut lookup: HashMap<u64, usize> = HashMap::new();
        let tau_index = betas
            .iter()
            .map(|b| {
                *lookup.entry(b.tau.to_bits()).or_insert_with(|| {
                    taus.push(b.tau);
                    taus.len() - 1
                })
            })
            .collect();
        Self {
            sigmas: betas.iter().map(|b| b.sigma).collect(),
            tau_index,
            cis: vec![(1.0, 0.0); taus.len()],
            taus,
            sums: vec![ScaledComplex::zero(); betas.len()],
        }
    }

    #[inline]
    fn add_leaf(&mut self, x: f64, y: f64) {
        for (c, &tau) in self.cis.iter_mut().zip(&self.taus) {
            let (s, co) = (tau * y).sin_cos();
            *c = (co, s);
        }
        for ((sum, &sigma), &ti) in self.sums.iter_mut().zip(&self.sigmas).zip(&self.tau_index) {
            let (co, s) = self.cis[ti];
            sum.add_exp_polar(sigma * x, co, s);
        }
    }
}

struct EnvelopeState {
    specs: Vec<EnvelopeSpec>,
    step: f64,
    at_branch_times: bool,
    /// Grid times `k·step` for `k = 1..`, strictly below `t`.
    grid_times: Vec<f64>,
    grid_v: Vec<f64>,
    /// `[spec][k]`
    grid_u: Vec<Vec<f64>>,
    /// `U(t)` per spec.
    final_u: Vec<f64>,
    crossed: Vec<bool>,
}

impl EnvelopeState {
    fn new(monitor: &EnvelopeMonitor, speed: &SpeedFunction, t: f64) -> Result<Self> {
        if !(monitor.grid.step > 0.0) || monitor.grid.step > t {
            return Err(Error::Domain(format!(
                "grid step must lie in (0, t], got {}",
                monitor.grid.step
            )));
        }
        let step = monitor.grid.step;
        let mut grid_times = Vec::new();
        let mut k = 1u64;
        loop {
            let g = k as f64 * step;
            // Points within rounding of t are the final checkpoint.
            if g >= t * (1.0 - 1e-12) {
                break;
            }
            grid_times.push(g);
            k += 1;
        }
        let grid_v = grid_times
            .iter()
            .map(|&g| speed.variance_profile_unchecked(g, t))
            .collect();
        let grid_u = monitor
            .specs
            .iter()
            .map(|&spec| {
                grid_times
                    .iter()
                    .map(|&g| phases::envelope_u_unchecked(g, t, speed, spec))
                    .collect()
            })
            .collect();
        let final_u = monitor
            .specs
            .iter()
            .map(|&spec| phases::envelope_u_unchecked(t, t, speed, spec))
            .collect();
        Ok(Self {
            specs: monitor.specs.clone(),
            step,
            at_branch_times: monitor.at_branch_times,
            grid_times,
            grid_v,
            grid_u,
            final_u,
            crossed: vec![false; monitor.specs.len()],
        })
    }

    #[inline]
    fn check_grid(&mut self, k: usize, x: f64) {
        for (flag, u) in self.crossed.iter_mut().zip(&self.grid_u) {
            if x > u[k] {
                *flag = true;
            }
        }
    }

    #[inline]
    fn check_final(&mut self, x: f64) {
        for (flag, &u) in self.crossed.iter_mut().zip(&self.final_u) {
            if x > u {
                *flag = true;
            }
        }
    }

    fn check_at(&mut self, s: f64, t: f64, speed: &SpeedFunction, x: f64) {
        for (flag, &spec) in self.crossed.iter_mut().zip(&self.specs) {
            if !*flag && x > phases::envelope_u_unchecked(s, t, speed, spec) {
                *flag = true;
            }
        }
    }
}

struct SnapshotState {
    cut: f64,
    threshold: f64,
    m_t: f64,
    points: Vec<f64>,
    labels: Vec<u32>,
}

#[derive(Clone)]
struct LeafRecord {
    value: LeafValue,
    /// Node ids and times of the branch points above the leaf.
    path: Vec<(u64, f64)>,
}

struct PairState {
    rng: ReplicaRng,
    seen: u64,
    slots: [Option<LeafRecord>; 2],
}

impl PairState {
    fn offer(&mut self, value: LeafValue, stack: &[PathState]) {
        let record = || LeafRecord {
            value,
            path: stack[1..].iter().map(|p| (p.node, p.s)).collect(),
        };
        let i = self.seen;
        self.seen += 1;
        if i < 2 {
            self.slots[i as usize] = Some(record());
        } else {
            let j = self.rng.random_range(0..=i);
            if j < 2 {
                self.slots[j as usize] = Some(record());
            }
        }
    }

    fn finish(mut self) -> Option<LeafPair> {
        let (a, b) = (self.slots[0].take()?, self.slots[1].take()?);
        let branch_time = a
            .path
            .iter()
            .zip(&b.path)
            .take_while(|(p, q)| p.0 == q.0)
            .last()
            .map_or(0.0, |(p, _)| p.1);
        let uniform = if self.rng.random::<bool>() { a.value } else { b.value };
        Some(LeafPair {
            first: a.value,
            second: b.value,
            branch_time,
            uniform,
        })
    }
}

struct Simulator<'p> {
    plan: &'p ReplicaPlan,
    rng: ReplicaRng,
    stack: Vec<PathState>,
    next_node: u64,
    next_cluster: u32,
    draw_z: bool,
    sigma_b: f64,
    rho_perp: f64,
    max_x: f64,
    bank: PartitionBank,
    coupled_bank: Option<PartitionBank>,
    envelope: Option<EnvelopeState>,
    snapshot: Option<SnapshotState>,
    pair: Option<PairState>,
}

impl<'p> Simulator<'p> {
    /// Moves `state` from its time to `s1`, checking the envelope at
    /// interior grid points.
    #[inline]
    fn advance(&mut self, state: &mut PathState, s1: f64) {
        let t = self.plan.t;
        if let Some(env) = self.envelope.as_mut() {
            // One slot early guards against rounding in the division.
            let mut k = ((state.s / env.step).floor() as usize).saturating_sub(1);
            // grid_times[k] = (k+1)·step
            while k < env.grid_times.len() && env.grid_times[k] < s1 {
                let g = env.grid_times[k];
                if g > state.s {
                    let v = env.grid_v[k];
                    step_state(
                        &mut self.rng,
                        state,
                        g,
                        v,
                        self.sigma_b,
                        self.draw_z,
                        self.plan.speed.is_identity(),
                    );
                    env.check_grid(k, state.x);
                }
                k += 1;
            }
        }
        let v1 = self.plan.speed.variance_profile_unchecked(s1, t);
        step_state(
            &mut self.rng,
            state,
            s1,
            v1,
            self.sigma_b,
            self.draw_z,
            self.plan.speed.is_identity(),
        );
    }

    fn leaf(&mut self, state: &PathState) {
        let x = state.x;
        if x > self.max_x {
            self.max_x = x;
        }
        let y = self.plan.rho * x + self.rho_perp * state.z;
        self.bank.add_leaf(x, y);
        if let Some(bank) = self.coupled_bank.as_mut() {
            let y_tilde = self.plan.rho * state.x_tilde + self.rho_perp * state.z_tilde;
            bank.add_leaf(state.x_tilde, y_tilde);
        }
        if let Some(env) = self.envelope.as_mut() {
            env.check_final(x);
        }
        if let Some(snap) = self.snapshot.as_mut() {
            let d = x - snap.m_t;
            if d >= snap.threshold {
                snap.points.push(d);
                snap.labels.push(state.cluster);
            }
        }
        if let Some(pair) = self.pair.as_mut() {
            pair.offer(LeafValue { x, y }, &self.stack);
        }
    }
}

#[inline]
fn step_state(
    rng: &mut ReplicaRng,
    state: &mut PathState,
    s1: f64,
    v1: f64,
    sigma_b: f64,
    draw_z: bool,
    identity: bool,
) {
    let dv = (v1 - state.v).max(0.0);
    let ds = s1 - state.s;
    let g: f64 = rng.sample(StandardNormal);
    let sd = dv.sqrt();
    // For A(x) = x and σ_b = 1 both scales are the same float, so x ≡ x̃.
    let sd_tilde = if identity { sigma_b * sd } else { sigma_b * ds.sqrt() };
    state.x += sd * g;
    state.x_tilde += sd_tilde * g;
    if draw_z {
        let h: f64 = rng.sample(StandardNormal);
        state.z += sd * h;
        state.z_tilde += sd_tilde * h;
    }
    state.s = s1;
    state.v = v1;
}

impl<'p> TreeVisitor for Simulator<'p> {
    fn visit(&mut self, event: TreeEvent) {
        self.stack.truncate(event.path_depth + 1);
        let mut state = self.stack[event.path_depth];
        let s0 = state.s;
        self.advance(&mut state, event.time);
        if let Some(snap) = &self.snapshot {
            if s0 <= snap.cut && snap.cut < event.time {
                state.cluster = self.next_cluster;
                self.next_cluster += 1;
            }
        }
        match event.kind {
            EventKind::Branch { .. } => {
                if let Some(env) = self.envelope.as_mut() {
                    if env.at_branch_times {
                        env.check_at(event.time, self.plan.t, &self.plan.speed, state.x);
                    }
                }
                state.node = self.next_node;
                self.next_node += 1;
                self.stack.push(state);
            }
            EventKind::Leaf => self.leaf(&state),
        }
    }
}

/// Simulates one replica on the streams of `(seed, replica_index)`.
pub fn run_replica(plan: &ReplicaPlan, seed: u64, replica_index: u64) -> Result<ReplicaOutput> {
    let mut out = run_replica_with_rng(
        plan,
        replica_rng(seed, replica_index, StreamKind::Tree),
        replica_rng(seed, replica_index, StreamKind::Field),
        replica_rng(seed, replica_index, StreamKind::Selection),
    )?;
    out.replica_index = replica_index;
    Ok(out)
}

/// Single pass over one tree; every sink sees every leaf exactly once.
pub fn run_replica_with_rng(
    plan: &ReplicaPlan,
    mut tree_rng: ReplicaRng,
    field_rng: ReplicaRng,
    selection_rng: ReplicaRng,
) -> Result<ReplicaOutput> {
    let t = plan.t;
    let m_t = phases::m_of_t(t)?;
    let envelope = plan
        .envelope
        .as_ref()
        .map(|m| EnvelopeState::new(m, &plan.speed, t))
        .transpose()?;
    let snapshot = plan.snapshot.map(|spec| SnapshotState {
        cut: t - spec.window,
        threshold: -spec.depth,
        m_t,
        points: Vec::new(),
        labels: Vec::new(),
    });
    let root = PathState {
        s: 0.0,
        v: 0.0,
        x: 0.0,
        x_tilde: 0.0,
        z: 0.0,
        z_tilde: 0.0,
        cluster: 0,
        node: 0,
    };
    let mut stack = Vec::with_capacity(64);
    stack.push(root);
    let mut sim = Simulator {
        plan,
        rng: field_rng,
        stack,
        next_node: 1,
        next_cluster: 1,
        draw_z: plan.rho.abs() < 1.0,
        sigma_b: plan.speed.sigma_b(),
        rho_perp: (1.0 - plan.rho * plan.rho).max(0.0).sqrt(),
        max_x: f64::NEG_INFINITY,
        bank: PartitionBank::new(&plan.betas),
        coupled_bank: plan.coupled.then(|| PartitionBank::new(&plan.betas)),
        envelope,
        snapshot,
        pair: plan.sample_pair.then_some(PairState {
            rng: selection_rng,
            seen: 0,
            slots: [None, None],
        }),
    };
    let n_t = traverse(&plan.offspring, t, plan.cap, &mut tree_rng, &mut sim)?;

    let snapshot = sim.snapshot.take().map(|s| {
        let mut order: HashMap<u32, usize> = HashMap::new();
        let mut clusters: Vec<Vec<usize>> = Vec::new();
        for (i, label) in s.labels.iter().enumerate() {
            let c = *order.entry(*label).or_insert_with(|| {
                clusters.push(Vec::new());
                clusters.len() - 1
            });
            clusters[c].push(i);
        }
        ExtremalSnapshot {
            points: s.points,
            clusters,
        }
    });
    let pair = sim.pair.take().and_then(PairState::finish);
    Ok(ReplicaOutput {
        replica_index: 0,
        n_t,
        max_x: sim.max_x,
        max_x_minus_m: sim.max_x - m_t,
        sums: sim.bank.sums,
        coupled_sums: sim.coupled_bank.map(|b| b.sums).unwrap_or_default(),
        envelope_crossed: sim.envelope.map(|e| e.crossed).unwrap_or_default(),
        snapshot,
        pair,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceBin {
    pub d_lo: f64,
    pub d_hi: f64,
    pub count: usize,
    /// Mean of `x_i x_j` over pairs in the bin.
    pub empirical: Estimate,
    /// Mean of `tA(d/t)` over the same pairs.
    pub predicted: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    pub var_x: Estimate,
    pub cov_xy: Estimate,
    pub bins: Vec<CovarianceBin>,
    /// Replicas whose tree had a single leaf.
    pub degenerate: usize,
    pub overflowed: usize,
}

/// One pair of distinct uniform leaves per replica; pair products binned by
/// branch time over `[0, t]`. The field mean is zero, so raw products are
/// covariance samples.
#[allow(clippy::too_many_arguments)]
pub fn leaf_covariance_estimate(
    speed: &SpeedFunction,
    dist: &OffspringDistribution,
    t: f64,
    rho: f64,
    replicas: u64,
    bins: usize,
    seed: u64,
    workers: usize,
) -> Result<CovarianceEstimate> {
    if replicas < 100 {
        return Err(Error::TooFewSamples {
            needed: 100,
            got: replicas as usize,
        });
    }
    let plan = ReplicaPlan::new(speed.clone(), dist.clone(), t, rho)?.with_pair_sample(true);
    let (outputs, overflowed) =
        crate::ensemble::completed(crate::ensemble::run_ensemble(&plan, seed, replicas, workers)?)?;
    let pairs: Vec<LeafPair> = outputs.iter().filter_map(|o| o.pair).collect();
    let degenerate = outputs.len() - pairs.len();
    if pairs.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: pairs.len(),
        });
    }
    let var_x = mean_estimate(pairs.iter().map(|p| p.uniform.x * p.uniform.x));
    let cov_xy = mean_estimate(pairs.iter().map(|p| p.uniform.x * p.uniform.y));
    let width = t / bins as f64;
    let mut binned: Vec<Vec<(f64, f64)>> = vec![Vec::new(); bins];
    for p in &pairs {
        let b = ((p.branch_time / width) as usize).min(bins - 1);
        binned[b].push((
            p.first.x * p.second.x,
            speed.variance_profile_unchecked(p.branch_time, t),
        ));
    }
    let bins = binned
        .into_iter()
        .enumerate()
        .map(|(b, samples)| CovarianceBin {
            d_lo: b as f64 * width,
            d_hi: (b + 1) as f64 * width,
            count: samples.len(),
            empirical: mean_estimate(samples.iter().map(|s| s.0)),
            predicted: samples.iter().map(|s| s.1).sum::<f64>() / samples.len() as f64,
        })
        .collect();
    Ok(CovarianceEstimate {
        var_x,
        cov_xy,
        bins,
        degenerate,
        overflowed,
    })
}

/// Crossing indicators per replica and spec, from one pass per replica.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossingEstimate {
    pub specs: Vec<EnvelopeSpec>,
    /// `crossed[replica][spec]`
    pub crossed: Vec<Vec<bool>>,
    pub overflowed: usize,
}

impl CrossingEstimate {
    pub fn p_hat(&self, spec: usize) -> Estimate {
        mean_estimate(self.crossed.iter().map(|c| c[spec] as u8 as f64))
    }

    /// Standard error of `p_hat(i) - p_hat(j)` over the shared replicas.
    pub fn joint_stderr(&self, i: usize, j: usize) -> f64 {
        mean_estimate(self.crossed.iter().map(|c| c[i] as u8 as f64 - c[j] as u8 as f64)).stderr
    }
}

/// Fraction of replicas in which some particle exceeds `U_{A,γ}` at a
/// checked time, for several envelopes at once.
#[allow(clippy::too_many_arguments)]
pub fn envelope_crossing_probability(
    speed: &SpeedFunction,
    dist: &OffspringDistribution,
    t: f64,
    specs: &[EnvelopeSpec],
    grid: GridSpec,
    at_branch_times: bool,
    replicas: u64,
    seed: u64,
    workers: usize,
) -> Result<CrossingEstimate> {
    let plan = ReplicaPlan::new(speed.clone(), dist.clone(), t, 0.0)?.with_envelope(EnvelopeMonitor {
        specs: specs.to_vec(),
        grid,
        at_branch_times,
    });
    let (outputs, overflowed) =
        crate::ensemble::completed(crate::ensemble::run_ensemble(&plan, seed, replicas, workers)?)?;
    Ok(CrossingEstimate {
        specs: specs.to_vec(),
        crossed: outputs.into_iter().map(|o| o.envelope_crossed).collect(),
        overflowed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp3() -> SpeedFunction {
        SpeedFunction::exp_family(3.0).unwrap()
    }

    fn plan(speed: SpeedFunction, t: f64, rho: f64, betas: &[(f64, f64)]) -> ReplicaPlan {
        ReplicaPlan::new(speed, OffspringDistribution::binary(), t, rho)
            .unwrap()
            .with_betas(betas.iter().map(|&(s, tau)| ComplexTemperature::new(s, tau)).collect())
    }

    #[test]
    fn zero_temperature_counts_leaves() {
        let p = plan(exp3(), 5.0, 0.3, &[(0.0, 0.0)]);
        for i in 0..20 {
            let out = run_replica(&p, 4, i).unwrap();
            let z = out.sums[0].to_complex();
            assert!((z.re - out.n_t as f64).abs() <= 1e-12 * out.n_t as f64);
            assert_eq!(z.im, 0.0);
        }
    }

    #[test]
    fn identity_speed_couples_bitwise() {
        let p = plan(SpeedFunction::identity(), 4.0, 0.6, &[(0.7, 0.4), (1.3, -0.2)]).with_coupled(true);
        for i in 0..20 {
            let out = run_replica(&p, 9, i).unwrap();
            assert_eq!(out.sums, out.coupled_sums);
        }
        let p = plan(exp3(), 4.0, 0.6, &[(0.7, 0.4)]).with_coupled(true);
        let out = run_replica(&p, 9, 0).unwrap();
        assert_ne!(out.sums, out.coupled_sums);
    }

    #[test]
    fn conjugating_tau_conjugates_sum() {
        let p = plan(exp3(), 5.0, 0.4, &[(0.5, 0.9), (0.5, -0.9)]);
        for i in 0..10 {
            let out = run_replica(&p, 2, i).unwrap();
            let (a, b) = (out.sums[0].to_complex(), out.sums[1].to_complex());
            assert_eq!(a.re.to_bits(), b.re.to_bits());
            assert_eq!(a.im.to_bits(), (-b.im).to_bits());
        }
    }

    #[test]
    fn full_correlation_uses_x_for_y() {
        // ρ = 1 and ρ = -1 draw no z, so they share x and give conjugate sums.
        let betas = [(0.2, 1.1)];
        let a = run_replica(&plan(exp3(), 5.0, 1.0, &betas), 3, 1).unwrap();
        let b = run_replica(&plan(exp3(), 5.0, -1.0, &betas), 3, 1).unwrap();
        let (za, zb) = (a.sums[0].to_complex(), b.sums[0].to_complex());
        assert!((za - zb.conj()).norm() <= 1e-12 * za.norm());
        assert_eq!(a.max_x, b.max_x);
    }

    #[test]
    fn replicas_are_deterministic_and_independent_of_sinks() {
        let p = plan(exp3(), 5.0, 0.5, &[(0.3, 0.4)]).with_pair_sample(true);
        assert_eq!(run_replica(&p, 1, 7).unwrap(), run_replica(&p, 1, 7).unwrap());
        let bare = plan(exp3(), 5.0, 0.5, &[(0.3, 0.4)]);
        let (x, y) = (run_replica(&p, 1, 7).unwrap(), run_replica(&bare, 1, 7).unwrap());
        assert_eq!(x.sums, y.sums);
        assert_eq!(x.n_t, y.n_t);
    }

    #[test]
    fn envelope_grid_points_do_not_change_leaf_law_bookkeeping() {
        let spec = EnvelopeSpec::new(0.3, 1e6).unwrap();
        let p = plan(exp3(), 6.0, 0.0, &[]).with_envelope(EnvelopeMonitor {
            specs: vec![spec],
            grid: GridSpec::default_for(6.0),
            at_branch_times: true,
        });
        for i in 0..20 {
            let out = run_replica(&p, 5, i).unwrap();
            assert_eq!(out.envelope_crossed, vec![false]);
        }
    }

    #[test]
    fn leaf_above_envelope_is_flagged() {
        let low = EnvelopeSpec::new(0.01, 1e-3).unwrap();
        let t = 6.0;
        let p = plan(exp3(), t, 0.0, &[]).with_envelope(EnvelopeMonitor {
            specs: vec![low],
            grid: GridSpec { step: 1.0 },
            at_branch_times: false,
        });
        let u_t = phases::envelope_u(t, t, &exp3(), low).unwrap();
        let mut above = 0;
        for i in 0..50 {
            let out = run_replica(&p, 5, i).unwrap();
            if out.max_x > u_t {
                above += 1;
                assert!(out.envelope_crossed[0]);
            }
        }
        assert!(above > 0);
    }

    #[test]
    fn grid_step_must_fit_horizon() {
        let p = plan(exp3(), 2.0, 0.0, &[]).with_envelope(EnvelopeMonitor {
            specs: vec![EnvelopeSpec::new(0.3, 5.0).unwrap()],
            grid: GridSpec { step: 3.0 },
            at_branch_times: false,
        });
        assert!(matches!(run_replica(&p, 0, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn snapshot_is_a_partition_above_threshold() {
        let p = plan(exp3(), 7.0, 0.0, &[]).with_snapshot(SnapshotSpec::with_default_window(4.0, 7.0));
        for i in 0..10 {
            let out = run_replica(&p, 8, i).unwrap();
            let snap = out.snapshot.unwrap();
            assert!(snap.points.iter().all(|&d| d >= -4.0));
            let mut seen: Vec<usize> = snap.clusters.iter().flatten().copied().collect();
            seen.sort_unstable();
            assert_eq!(seen, (0..snap.points.len()).collect::<Vec<_>>());
            if let Some(best) = snap.points.iter().copied().reduce(f64::max) {
                assert_eq!(best, out.max_x_minus_m);
            }
        }
    }

    #[test]
    fn whole_tree_is_one_cluster_when_window_covers_it() {
        let p = plan(exp3(), 4.0, 0.0, &[]).with_snapshot(SnapshotSpec {
            depth: 1e9,
            window: 10.0,
        });
        let out = run_replica(&p, 8, 3).unwrap();
        let snap = out.snapshot.unwrap();
        assert_eq!(snap.points.len() as u64, out.n_t);
        assert_eq!(snap.clusters.len(), 1);
    }

    #[test]
    fn pair_is_distinct_and_in_range() {
        let p = plan(exp3(), 4.0, 0.5, &[]).with_pair_sample(true);
        for i in 0..50 {
            let out = run_replica(&p, 6, i).unwrap();
            match out.pair {
                None => assert_eq!(out.n_t, 1),
                Some(pair) => {
                    assert!((0.0..4.0).contains(&pair.branch_time));
                    assert!(pair.uniform == pair.first || pair.uniform == pair.second);
                }
            }
        }
    }

    #[test]
    fn plan_rejects_bad_inputs() {
        let s = exp3();
        let d = OffspringDistribution::binary();
        assert!(ReplicaPlan::new(s.clone(), d.clone(), 0.0, 0.0).is_err());
        assert!(ReplicaPlan::new(s, d, 1.0, 1.5).is_err());
    }

    #[test]
    fn overflow_propagates() {
        let p = plan(exp3(), 12.0, 0.0, &[(0.0, 0.0)]).with_cap(50);
        assert_eq!(run_replica(&p, 0, 0), Err(Error::PopulationOverflow { cap: 50 }));
    }
}
