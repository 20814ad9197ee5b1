//! Continuous-time supercritical Galton-Watson trees, generated depth first
//! as an event stream. Only the current root-to-node path is held in memory.

use std::str::FromStr;

use rand::Rng;
use rand_distr::Exp1;

use crate::error::{Error, Result};

/// Default cap on the number of leaves of one replica.
pub const DEFAULT_POPULATION_CAP: u64 = 1 << 27;

const MOMENT_TOL: f64 = 1e-12;

/// Offspring law `(p_1, p_2, ..., p_max)`, with mean exactly 2 and no death.
#[derive(Debug, Clone, PartialEq)]
pub struct OffspringDistribution {
    probabilities: Vec<f64>,
    cumulative: Vec<f64>,
    k: f64,
}

impl OffspringDistribution {
    /// Binary branching, `p_2 = 1`.
    pub fn binary() -> Self {
        Self::new(vec![0.0, 1.0]).expect("binary branching is valid")
    }

    /// `probabilities[i]` is `p_{i+1}`.
    pub fn new(probabilities: Vec<f64>) -> Result<Self> {
        if probabilities.is_empty() {
            return Err(Error::InvalidOffspring("empty probability list".into()));
        }
        if let Some(p) = probabilities.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::InvalidOffspring(format!("probability {p} is not in [0, 1]")));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > MOMENT_TOL {
            return Err(Error::InvalidOffspring(format!("probabilities sum to {total}, not 1")));
        }
        let mean: f64 = probabilities.iter().enumerate().map(|(i, p)| (i + 1) as f64 * p).sum();
        if (mean - 2.0).abs() > MOMENT_TOL {
            return Err(Error::InvalidOffspring(format!("mean offspring is {mean}, must be 2")));
        }
        let k = probabilities
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let c = (i + 1) as f64;
                c * (c - 1.0) * p
            })
            .sum();
        let mut acc = 0.0;
        let cumulative = probabilities
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(Self {
            probabilities,
            cumulative,
            k,
        })
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    pub fn mean(&self) -> f64 {
        self.probabilities
            .iter()
            .enumerate()
            .map(|(i, p)| (i + 1) as f64 * p)
            .sum()
    }

    /// `K = Σ k(k-1) p_k`.
    pub fn second_factorial_moment(&self) -> f64 {
        self.k
    }

    pub fn is_binary(&self) -> bool {
        self.probabilities.len() == 2 && self.probabilities[1] == 1.0
    }

    pub fn max_children(&self) -> u32 {
        self.probabilities.len() as u32
    }

    pub fn sample_children<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        if self.is_binary() {
            return 2;
        }
        let u: f64 = rng.random();
        let i = self.cumulative.partition_point(|&c| c <= u);
        (i.min(self.probabilities.len() - 1) + 1) as u32
    }
}

impl FromStr for OffspringDistribution {
    type Err = Error;

    /// `binary`, or a comma list `p_1,p_2,...,p_max`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "binary" {
            return Ok(Self::binary());
        }
        let probabilities = s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::InvalidOffspring(format!("bad probability '{p}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(probabilities)
    }
}

impl std::fmt::Display for OffspringDistribution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_binary() {
            return write!(f, "binary");
        }
        for (i, p) in self.probabilities.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{p}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventKind {
    Branch { children: u32 },
    Leaf,
}

/// One node of the depth-first stream. `path_depth` counts the branch
/// events strictly above this node, so the node's incoming edge starts at
/// the `path_depth`-th branch point of the current path (the root for 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeEvent {
    pub kind: EventKind,
    pub time: f64,
    pub path_depth: usize,
}

pub trait TreeVisitor {
    fn visit(&mut self, event: TreeEvent);
}

impl<F: FnMut(TreeEvent)> TreeVisitor for F {
    fn visit(&mut self, event: TreeEvent) {
        self(event)
    }
}

/// Generates a tree up to horizon `t` and streams its events depth first.
/// Returns the number of leaves `n(t)`.
pub fn traverse<R, V>(dist: &OffspringDistribution, t: f64, cap: u64, rng: &mut R, visitor: &mut V) -> Result<u64>
where
    R: Rng + ?Sized,
    V: TreeVisitor + ?Sized,
{
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!(
            "horizon must be non-negative and finite, got {t}"
        )));
    }
    // (branch time, children still to be generated)
    let mut pending: Vec<(f64, u32)> = Vec::new();
    let mut start = 0.0_f64;
    let mut leaves = 0_u64;
    loop {
        let depth = pending.len();
        let wait: f64 = rng.sample(Exp1);
        let time = start + wait;
        if time >= t {
            leaves += 1;
            if leaves > cap {
                return Err(Error::PopulationOverflow { cap });
            }
            visitor.visit(TreeEvent {
                kind: EventKind::Leaf,
                time: t,
                path_depth: depth,
            });
            loop {
                match pending.last_mut() {
                    None => return Ok(leaves),
                    Some((branch_time, remaining)) if *remaining > 0 => {
                        *remaining -= 1;
                        start = *branch_time;
                        break;
                    }
                    Some(_) => {
                        pending.pop();
                    }
                }
            }
        } else {
            let children = dist.sample_children(rng);
            visitor.visit(TreeEvent {
                kind: EventKind::Branch { children },
                time,
                path_depth: depth,
            });
            pending.push((time, children - 1));
            start = time;
        }
    }
}
