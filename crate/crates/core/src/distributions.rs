//! Empirical distributions, merged support pools, pairwise cost matrices and
//! an exact order-1 Wasserstein distance between finite point clouds.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, WrhtError};

/// Tolerance on the total mass of an empirical distribution.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// Norm used for transport costs and nearest-support lookups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    L1,
    #[default]
    L2,
    Linf,
}

impl NormKind {
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        let diffs = a.iter().zip(b).map(|(x, y)| (x - y).abs());
        match self {
            NormKind::L1 => diffs.sum(),
            NormKind::L2 => diffs.map(|d| d * d).sum::<f64>().sqrt(),
            NormKind::Linf => diffs.fold(0.0, f64::max),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            NormKind::L1 => "l1",
            NormKind::L2 => "l2",
            NormKind::Linf => "linf",
        }
    }
}

impl fmt::Display for NormKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NormKind {
    type Err = WrhtError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "l1" => Ok(NormKind::L1),
            "l2" => Ok(NormKind::L2),
            "linf" => Ok(NormKind::Linf),
            other => Err(WrhtError::InvalidInput(format!(
                "unknown norm '{other}' (expected l1, l2 or linf)"
            ))),
        }
    }
}

/// A weighted point cloud in R^d.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDistribution {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl EmpiricalDistribution {
    pub fn new(points: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(WrhtError::InvalidInput("empirical distribution has no points".into()));
        }
        if points.len() != weights.len() {
            return Err(WrhtError::InvalidInput(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        let d = points[0].len();
        if d == 0 {
            return Err(WrhtError::InvalidInput("points must have dimension >= 1".into()));
        }
        if let Some(p) = points.iter().find(|p| p.len() != d) {
            return Err(WrhtError::DimensionMismatch { left: d, right: p.len() });
        }
        if points.iter().flatten().any(|x| !x.is_finite()) {
            return Err(WrhtError::InvalidInput("non-finite coordinate".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(WrhtError::InvalidInput("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(WrhtError::InvalidInput(format!("weights sum to {total}, expected 1")));
        }
        Ok(Self { points, weights })
    }

    /// Equal mass 1/n on every sample; duplicates keep their own atom.
    pub fn uniform(points: Vec<Vec<f64>>) -> Result<Self> {
        let n = points.len().max(1);
        let w = 1.0 / n as f64;
        Self::new(points, vec![w; n])
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }
}

/// Which empirical distribution contributed a pool point (and which side of
/// the test a transport plan belongs to).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    First,
    Second,
}

/// The concatenated support of two empirical distributions, first sample
/// first. Duplicate points are kept at their own indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportPool {
    points: Vec<Vec<f64>>,
    n1: usize,
    n2: usize,
}

impl SupportPool {
    pub fn from_parts(points: Vec<Vec<f64>>, n1: usize, n2: usize) -> Result<Self> {
        if points.len() != n1 + n2 || points.is_empty() {
            return Err(WrhtError::InvalidInput(format!(
                "pool of {} points does not match n1={n1}, n2={n2}",
                points.len()
            )));
        }
        let d = points[0].len();
        if let Some(p) = points.iter().find(|p| p.len() != d) {
            return Err(WrhtError::DimensionMismatch { left: d, right: p.len() });
        }
        Ok(Self { points, n1, n2 })
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn n1(&self) -> usize {
        self.n1
    }

    pub fn n2(&self) -> usize {
        self.n2
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn label(&self, index: usize) -> Side {
        if index < self.n1 {
            Side::First
        } else {
            Side::Second
        }
    }

    pub fn labels(&self) -> Vec<Side> {
        (0..self.len()).map(|i| self.label(i)).collect()
    }
}

pub fn merge_supports(q1: &EmpiricalDistribution, q2: &EmpiricalDistribution) -> Result<SupportPool> {
    if q1.dim() != q2.dim() {
        return Err(WrhtError::DimensionMismatch { left: q1.dim(), right: q2.dim() });
    }
    let points = q1.points().iter().chain(q2.points()).cloned().collect();
    SupportPool::from_parts(points, q1.len(), q2.len())
}

/// Dense symmetric matrix of pairwise pool distances.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    n: usize,
    entries: Vec<f64>,
    norm: NormKind,
}

impl CostMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn norm(&self) -> NormKind {
        self.norm
    }

    #[inline]
    pub fn get(&self, l: usize, m: usize) -> f64 {
        self.entries[l * self.n + m]
    }

    #[inline]
    pub fn row(&self, l: usize) -> &[f64] {
        &self.entries[l * self.n..(l + 1) * self.n]
    }
}

pub fn cost_matrix(pool: &SupportPool, norm: NormKind) -> CostMatrix {
    let n = pool.len();
    let pts = pool.points();
    let mut entries = vec![0.0; n * n];
    for l in 0..n {
        for m in (l + 1)..n {
            let c = norm.distance(&pts[l], &pts[m]);
            entries[l * n + m] = c;
            entries[m * n + l] = c;
        }
    }
    CostMatrix { n, entries, norm }
}

/// Exact order-1 Wasserstein distance between two weighted point clouds.
///
/// Solves the transportation problem by successive shortest paths with
/// Dijkstra on reduced costs (Johnson potentials) over the bipartite
/// residual graph. Flows are real valued, so each augmentation saturates a
/// supply, a demand or a reverse arc.
pub fn wasserstein_distance(
    p: &EmpiricalDistribution,
    q: &EmpiricalDistribution,
    norm: NormKind,
) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(WrhtError::DimensionMismatch { left: p.dim(), right: q.dim() });
    }
    let cost: Vec<Vec<f64>> = p
        .points()
        .iter()
        .map(|a| q.points().iter().map(|b| norm.distance(a, b)).collect())
        .collect();
    let (value, _) = min_cost_transport(p.weights(), q.weights(), &cost);
    Ok(value)
}

/// Residual capacities at or below this are treated as zero.
const FLOW_EPS: f64 = 1e-15;

/// Min-cost transport between `supply` and `demand` under `cost`
/// (`supply.len()` x `demand.len()`). Returns the optimal cost and flow.
pub fn min_cost_transport(supply: &[f64], demand: &[f64], cost: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>) {
    let n = supply.len();
    let m = demand.len();
    let source = 0;
    let sink = n + m + 1;
    let nodes = n + m + 2;
    let left = |i: usize| 1 + i;
    let right = |j: usize| 1 + n + j;

    let mut flow = vec![vec![0.0; m]; n];
    let mut sent = vec![0.0; n];
    let mut recv = vec![0.0; m];
    let mut potential = vec![0.0; nodes];
    let target = supply.iter().sum::<f64>().min(demand.iter().sum::<f64>());
    let mut shipped = 0.0;

    let mut dist = vec![f64::INFINITY; nodes];
    let mut prev = vec![usize::MAX; nodes];
    let mut done = vec![false; nodes];
    let max_rounds = 4 * (n + m + 2) * (n + m + 2);

    for _ in 0..max_rounds {
        if target - shipped <= 1e-14 {
            break;
        }
        dist.fill(f64::INFINITY);
        prev.fill(usize::MAX);
        done.fill(false);
        dist[source] = 0.0;

        loop {
            let mut u = usize::MAX;
            let mut best = f64::INFINITY;
            for v in 0..nodes {
                if !done[v] && dist[v] < best {
                    best = dist[v];
                    u = v;
                }
            }
            if u == usize::MAX {
                break;
            }
            done[u] = true;
            let relax = |v: usize, c: f64, dist: &mut Vec<f64>, prev: &mut Vec<usize>| {
                let reduced = (c + potential[u] - potential[v]).max(0.0);
                let cand = dist[u] + reduced;
                if cand < dist[v] {
                    dist[v] = cand;
                    prev[v] = u;
                }
            };
            if u == source {
                for i in 0..n {
                    if supply[i] - sent[i] > FLOW_EPS {
                        relax(left(i), 0.0, &mut dist, &mut prev);
                    }
                }
            } else if u == sink {
                for j in 0..m {
                    if recv[j] > FLOW_EPS {
                        relax(right(j), 0.0, &mut dist, &mut prev);
                    }
                }
            } else if u <= n {
                let i = u - 1;
                for j in 0..m {
                    relax(right(j), cost[i][j], &mut dist, &mut prev);
                }
                if sent[i] > FLOW_EPS {
                    relax(source, 0.0, &mut dist, &mut prev);
                }
            } else {
                let j = u - 1 - n;
                for i in 0..n {
                    if flow[i][j] > FLOW_EPS {
                        relax(left(i), -cost[i][j], &mut dist, &mut prev);
                    }
                }
                if demand[j] - recv[j] > FLOW_EPS {
                    relax(sink, 0.0, &mut dist, &mut prev);
                }
            }
        }

        if !dist[sink].is_finite() {
            break;
        }
        let cap_dist = dist[sink];
        for v in 0..nodes {
            potential[v] += dist[v].min(cap_dist);
        }

        // Walk the path back from the sink to find the bottleneck.
        let mut bottleneck = target - shipped;
        let mut v = sink;
        while v != source {
            let u = prev[v];
            let cap = residual(u, v, n, supply, demand, &sent, &recv, &flow);
            bottleneck = bottleneck.min(cap);
            v = u;
        }
        if bottleneck <= FLOW_EPS {
            break;
        }
        let mut v = sink;
        while v != source {
            let u = prev[v];
            push(u, v, n, bottleneck, &mut sent, &mut recv, &mut flow);
            v = u;
        }
        shipped += bottleneck;
    }

    let total = flow
        .iter()
        .zip(cost)
        .map(|(fr, cr)| fr.iter().zip(cr).map(|(f, c)| f * c).sum::<f64>())
        .sum::<f64>();
    (total.max(0.0), flow)
}

#[allow(clippy::too_many_arguments)]
fn residual(
    u: usize,
    v: usize,
    n: usize,
    supply: &[f64],
    demand: &[f64],
    sent: &[f64],
    recv: &[f64],
    flow: &[Vec<f64>],
) -> f64 {
    let m = demand.len();
    let sink = n + m + 1;
    match (u, v) {
        (0, v) => supply[v - 1] - sent[v - 1],
        (u, 0) => sent[u - 1],
        (u, v) if v == sink => demand[u - 1 - n] - recv[u - 1 - n],
        (u, v) if u == sink => recv[v - 1 - n],
        (u, _) if u <= n => f64::INFINITY,
        (u, v) => flow[v - 1][u - 1 - n],
    }
}

fn push(
    u: usize,
    v: usize,
    n: usize,
    amount: f64,
    sent: &mut [f64],
    recv: &mut [f64],
    flow: &mut [Vec<f64>],
) {
    let m = recv.len();
    let sink = n + m + 1;
    match (u, v) {
        (0, v) => sent[v - 1] += amount,
        (u, 0) => sent[u - 1] -= amount,
        (u, v) if v == sink => recv[u - 1 - n] += amount,
        (u, v) if u == sink => recv[v - 1 - n] -= amount,
        (u, v) if u <= n => flow[u - 1][v - 1 - n] += amount,
        (u, v) => {
            let f = &mut flow[v - 1][u - 1 - n];
            *f = (*f - amount).max(0.0);
        }
    }
}
