//! Robust detectors built from a least favorable pair.
//!
//! A [`DetectorModel`] stores the detector value at every pool point and
//! extends it to arbitrary observations through the nearest pool point.
//! The decision rule accepts the first hypothesis when the value is `>= 0`.

use std::fmt::Write as _;

use crate::distributions::{NormKind, SupportPool};
use crate::error::{Result, WrhtError};
use crate::lfd::{LfdProblem, LfdSolution};
use crate::psi::{PsiFamily, PsiKind};

/// First line of a serialized detector.
pub const FILE_HEADER: &str = "wrht-detector v1";

/// Allowed deviation of a weight vector's sum from 1 in [`risk_phi`].
pub const WEIGHT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    pool: SupportPool,
    phi: Vec<f64>,
    family: PsiFamily,
    p1: Vec<f64>,
    p2: Vec<f64>,
    norm: NormKind,
}

impl DetectorModel {
    /// Detector for the LFD masses of `solution` on `pool`. Points where
    /// both masses vanish get value 0.
    pub fn build(pool: &SupportPool, solution: &LfdSolution, family: PsiFamily, norm: NormKind) -> Result<Self> {
        Self::from_masses(pool.clone(), solution.p1.clone(), solution.p2.clone(), family, norm)
    }

    /// Shorthand for [`build`](Self::build) with the problem's pool, family and norm.
    pub fn from_problem(problem: &LfdProblem, solution: &LfdSolution) -> Result<Self> {
        Self::build(problem.pool(), solution, problem.family(), problem.costs().norm())
    }

    pub fn from_masses(pool: SupportPool, p1: Vec<f64>, p2: Vec<f64>, family: PsiFamily, norm: NormKind) -> Result<Self> {
        if p1.len() != pool.len() {
            return Err(WrhtError::DimensionMismatch { left: pool.len(), right: p1.len() });
        }
        if p2.len() != pool.len() {
            return Err(WrhtError::DimensionMismatch { left: pool.len(), right: p2.len() });
        }
        let phi = p1
            .iter()
            .zip(&p2)
            .map(|(a, b)| family.detector_value(a.max(0.0), b.max(0.0)))
            .collect::<Result<Vec<f64>>>()?;
        Ok(Self { pool, phi, family, p1, p2, norm })
    }

    pub fn pool(&self) -> &SupportPool {
        &self.pool
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn family(&self) -> PsiFamily {
        self.family
    }

    pub fn p1(&self) -> &[f64] {
        &self.p1
    }

    pub fn p2(&self) -> &[f64] {
        &self.p2
    }

    pub fn norm(&self) -> NormKind {
        self.norm
    }

    pub fn dim(&self) -> usize {
        self.pool.dim()
    }

    /// Index of the pool point nearest to `x`; ties go to the lowest index.
    pub fn nearest(&self, x: &[f64]) -> Result<usize> {
        if x.len() != self.dim() {
            return Err(WrhtError::DimensionMismatch { left: self.dim(), right: x.len() });
        }
        let mut best = (0, f64::INFINITY);
        for (m, point) in self.pool.points().iter().enumerate() {
            let d = self.norm.distance(point, x);
            if d < best.1 {
                best = (m, d);
            }
        }
        Ok(best.0)
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        Ok(self.phi[self.nearest(x)?])
    }

    /// Accepts the first hypothesis iff `evaluate(x) >= 0`.
    pub fn accepts_first(&self, x: &[f64]) -> Result<bool> {
        Ok(self.evaluate(x)? >= 0.0)
    }

    /// Risk of this detector when the two hypotheses put masses `q1`, `q2`
    /// on the pool points.
    pub fn risk_on_pool(&self, q1: &[f64], q2: &[f64]) -> Result<f64> {
        if q1.len() != self.phi.len() || q2.len() != self.phi.len() {
            return Err(WrhtError::DimensionMismatch { left: self.phi.len(), right: q1.len().max(q2.len()) });
        }
        let under1: Vec<(f64, f64)> = self.phi.iter().copied().zip(q1.iter().copied()).collect();
        let under2: Vec<(f64, f64)> = self.phi.iter().copied().zip(q2.iter().copied()).collect();
        risk_phi(self.family, &under1, &under2)
    }

    /// Flat text form: header, family, norm, dimension, a count line
    /// `n1+n2 n1 n2`, then one line per pool point with its coordinates,
    /// `p1`, `p2` and detector value.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{FILE_HEADER}");
        let _ = writeln!(out, "{}", self.family.kind);
        let _ = writeln!(out, "{}", self.norm);
        let _ = writeln!(out, "{}", self.dim());
        let _ = writeln!(out, "{} {} {}", self.pool.len(), self.pool.n1(), self.pool.n2());
        for (m, point) in self.pool.points().iter().enumerate() {
            let fields: Vec<String> = point
                .iter()
                .chain([&self.p1[m], &self.p2[m], &self.phi[m]])
                .map(|v| format!("{v:.16e}"))
                .collect();
            let _ = writeln!(out, "{}", fields.join(" "));
        }
        out
    }

    /// Parses [`to_text`](Self::to_text) output. Stored detector values
    /// must agree with the ones recomputed from `p1`, `p2`.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
        let mut next = |what: &str| -> Result<(usize, &str)> {
            lines.next().ok_or_else(|| WrhtError::Parse(format!("detector file ends before {what}")))
        };
        let bad = |line: usize, msg: String| WrhtError::Parse(format!("line {line}: {msg}"));

        let (line, header) = next("header")?;
        if header != FILE_HEADER {
            return Err(bad(line, format!("expected '{FILE_HEADER}', found '{header}'")));
        }
        let (line, family) = next("family")?;
        let kind: PsiKind = family.parse().map_err(|e: WrhtError| bad(line, e.to_string()))?;
        let (line, norm) = next("norm")?;
        let norm: NormKind = norm.parse().map_err(|e: WrhtError| bad(line, e.to_string()))?;
        let (line, dim) = next("dimension")?;
        let dim: usize = dim.parse().map_err(|_| bad(line, format!("invalid dimension '{dim}'")))?;
        let (line, counts) = next("point counts")?;
        let counts: Vec<usize> = counts
            .split_whitespace()
            .map(|c| c.parse().map_err(|_| bad(line, format!("invalid count '{c}'"))))
            .collect::<Result<_>>()?;
        let [total, n1, n2] = counts[..] else {
            return Err(bad(line, "expected 'n1+n2 n1 n2'".into()));
        };
        if total != n1 + n2 {
            return Err(bad(line, format!("{total} != {n1} + {n2}")));
        }

        let family = PsiFamily::new(kind);
        let mut points = Vec::with_capacity(total);
        let (mut p1, mut p2, mut phi) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..total {
            let (line, row) = next("all points are read")?;
            let values: Vec<f64> = row
                .split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|_| bad(line, format!("invalid number '{v}'"))))
                .collect::<Result<_>>()?;
            if values.len() != dim + 3 {
                return Err(bad(line, format!("expected {} fields, found {}", dim + 3, values.len())));
            }
            points.push(values[..dim].to_vec());
            p1.push(values[dim]);
            p2.push(values[dim + 1]);
            phi.push(values[dim + 2]);
        }
        if let Ok((line, _)) = next("") {
            return Err(bad(line, "unexpected trailing content".into()));
        }

        let pool = SupportPool::from_parts(points, n1, n2)?;
        let model = Self::from_masses(pool, p1, p2, family, norm)?;
        for (m, (stored, computed)) in phi.iter().zip(&model.phi).enumerate() {
            if (stored - computed).abs() > 1e-12 * (1.0 + computed.abs()) {
                return Err(WrhtError::Parse(format!(
                    "point {m}: stored detector value {stored} does not match masses ({computed})"
                )));
            }
        }
        Ok(model)
    }
}

fn weighted_sum(family: PsiFamily, values: &[(f64, f64)], sign: f64, which: &str) -> Result<f64> {
    let total: f64 = values.iter().map(|(_, w)| w).sum();
    if (total - 1.0).abs() > WEIGHT_TOL {
        return Err(WrhtError::InvalidInput(format!("{which} weights sum to {total}, expected 1")));
    }
    if values.iter().any(|(v, w)| !v.is_finite() || !w.is_finite() || *w < 0.0) {
        return Err(WrhtError::InvalidInput(format!("{which} values must be finite with nonnegative weights")));
    }
    Ok(values.iter().map(|(v, w)| w * family.ell(sign * v)).sum())
}

/// Detector risk `E_P1[l(-phi)] + E_P2[l(phi)]` from `(phi value, weight)`
/// pairs drawn under each hypothesis.
pub fn risk_phi(family: PsiFamily, under_p1: &[(f64, f64)], under_p2: &[(f64, f64)]) -> Result<f64> {
    Ok(weighted_sum(family, under_p1, -1.0, "first")? + weighted_sum(family, under_p2, 1.0, "second")?)
}

/// Bound on the worst-case error probability: `psi(epsilon)` for
/// `0 < epsilon < 1/2`.
pub fn risk_bound(family: PsiFamily, epsilon: f64) -> Result<f64> {
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(WrhtError::Domain(format!("epsilon must lie in (0, 1/2), got {epsilon}")));
    }
    family.psi(epsilon)
}
