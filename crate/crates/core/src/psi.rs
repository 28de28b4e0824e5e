//! Generating functions, their auxiliary functions and the optimal detector
//! rules.
//!
//! Each family pairs a convex surrogate `ell` of the 0-1 loss with
//!
//! ```text
//! psi(p)  = min_t [ p * ell(t) + (1 - p) * ell(-t) ]
//! h(a, b) = (a + b) * psi(a / (a + b))
//! ```
//!
//! `h` is the per-atom objective maximized by the LFD solver, and the sum of
//! `h` over a pair of distributions equals `2 * (1 - divergence)`.

use std::f64::consts::LN_2;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, WrhtError};

/// Log-ratio detector values are clamped to `[-CLAMP_CAP, CLAMP_CAP]`.
pub const CLAMP_CAP: f64 = 50.0;

/// Default sharpness of the smoothed hinge auxiliary function.
pub const DEFAULT_SMOOTHING_MU: f64 = 200.0;

/// Slack accepted above the theoretical maximum objective of 2.
pub const OBJECTIVE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PsiKind {
    /// `ell(t) = exp(t)`; squared Hellinger.
    Exp,
    /// `ell(t) = log2(1 + exp(t))`; Jensen-Shannon in bits.
    Log,
    /// `ell(t) = (t + 1)_+^2`; triangle discrimination.
    Quad,
    /// `ell(t) = (t + 1)_+`; total variation.
    Hinge,
}

impl PsiKind {
    pub const ALL: [PsiKind; 4] = [PsiKind::Exp, PsiKind::Log, PsiKind::Quad, PsiKind::Hinge];

    pub fn as_str(self) -> &'static str {
        match self {
            PsiKind::Exp => "exp",
            PsiKind::Log => "log",
            PsiKind::Quad => "quad",
            PsiKind::Hinge => "hinge",
        }
    }
}

impl fmt::Display for PsiKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PsiKind {
    type Err = WrhtError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "exp" => Ok(PsiKind::Exp),
            "log" => Ok(PsiKind::Log),
            "quad" => Ok(PsiKind::Quad),
            "hinge" => Ok(PsiKind::Hinge),
            other => Err(WrhtError::InvalidInput(format!(
                "unknown family '{other}' (expected exp, log, quad or hinge)"
            ))),
        }
    }
}

/// A generating-function family plus the hinge smoothing parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsiFamily {
    pub kind: PsiKind,
    /// Only read by [`PsiKind::Hinge`].
    pub smoothing_mu: f64,
}

impl From<PsiKind> for PsiFamily {
    fn from(kind: PsiKind) -> Self {
        Self::new(kind)
    }
}

impl FromStr for PsiFamily {
    type Err = WrhtError;

    fn from_str(s: &str) -> Result<Self> {
        s.parse::<PsiKind>().map(Self::new)
    }
}

impl fmt::Display for PsiFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.kind.fmt(f)
    }
}

fn check_nonneg(a: f64, b: f64) -> Result<()> {
    if a.is_nan() || b.is_nan() || a < 0.0 || b < 0.0 {
        return Err(WrhtError::Domain(format!("masses must be nonnegative, got ({a}, {b})")));
    }
    Ok(())
}

/// `x log x` with the convention `0 log 0 = 0`.
fn xlogx(x: f64) -> f64 {
    if x > 0.0 {
        x * x.ln()
    } else {
        0.0
    }
}

impl PsiFamily {
    pub fn new(kind: PsiKind) -> Self {
        Self { kind, smoothing_mu: DEFAULT_SMOOTHING_MU }
    }

    pub fn with_smoothing(kind: PsiKind, smoothing_mu: f64) -> Result<Self> {
        if !(smoothing_mu.is_finite() && smoothing_mu > 0.0) {
            return Err(WrhtError::InvalidInput(format!("smoothing mu must be positive, got {smoothing_mu}")));
        }
        Ok(Self { kind, smoothing_mu })
    }

    pub fn ell(&self, t: f64) -> f64 {
        match self.kind {
            PsiKind::Exp => t.exp(),
            // log2(1 + e^t), written to avoid overflow for large t.
            PsiKind::Log => {
                if t > 0.0 {
                    (t + (-t).exp().ln_1p()) / LN_2
                } else {
                    t.exp().ln_1p() / LN_2
                }
            }
            PsiKind::Quad => {
                let u = (t + 1.0).max(0.0);
                u * u
            }
            PsiKind::Hinge => (t + 1.0).max(0.0),
        }
    }

    pub fn psi(&self, p: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&p) {
            return Err(WrhtError::Domain(format!("psi is defined on [0, 1], got {p}")));
        }
        Ok(self.psi_exact(p))
    }

    fn psi_exact(&self, p: f64) -> f64 {
        let q = 1.0 - p;
        match self.kind {
            PsiKind::Exp => 2.0 * (p * q).sqrt(),
            PsiKind::Log => -(xlogx(p) + xlogx(q)) / LN_2,
            PsiKind::Quad => 4.0 * p * q,
            PsiKind::Hinge => 2.0 * p.min(q),
        }
    }

    /// Smooth surrogate used by gradient-based solvers. Identical to `psi`
    /// except for the hinge family, where
    /// `psi_mu(p) = -(2/mu) log(exp(-mu p) + exp(-mu (1 - p)))`.
    pub fn psi_smooth(&self, p: f64) -> f64 {
        match self.kind {
            PsiKind::Hinge => {
                let mu = self.smoothing_mu;
                let gap = (1.0 - 2.0 * p).abs();
                2.0 * p.min(1.0 - p) - (2.0 / mu) * (-mu * gap).exp().ln_1p()
            }
            _ => self.psi_exact(p),
        }
    }

    fn psi_smooth_derivative(&self, p: f64) -> f64 {
        let q = 1.0 - p;
        match self.kind {
            PsiKind::Exp => (q - p) / (p * q).sqrt(),
            PsiKind::Log => (q / p).log2(),
            PsiKind::Quad => 4.0 * (q - p),
            PsiKind::Hinge => 2.0 * (0.5 * self.smoothing_mu * (q - p)).tanh(),
        }
    }

    /// `h(a, b) = (a + b) psi(a / (a + b))`, with `h(0, 0) = 0`.
    pub fn pointwise_objective(&self, a: f64, b: f64) -> Result<f64> {
        check_nonneg(a, b)?;
        Ok(self.h(a, b))
    }

    /// Unchecked `h` for callers that already guarantee `a, b >= 0`.
    #[inline]
    pub(crate) fn h(&self, a: f64, b: f64) -> f64 {
        let s = a + b;
        if s <= 0.0 {
            return 0.0;
        }
        match self.kind {
            PsiKind::Exp => 2.0 * (a * b).sqrt(),
            PsiKind::Log => -(xlogx(a / s) * s + xlogx(b / s) * s) / LN_2,
            PsiKind::Quad => 4.0 * a * b / s,
            PsiKind::Hinge => 2.0 * a.min(b),
        }
    }

    /// `h` built on [`psi_smooth`](Self::psi_smooth).
    #[inline]
    pub fn h_smooth(&self, a: f64, b: f64) -> f64 {
        match self.kind {
            PsiKind::Hinge => {
                let s = a + b;
                if s <= 0.0 {
                    0.0
                } else {
                    s * self.psi_smooth(a / s)
                }
            }
            _ => self.h(a, b),
        }
    }

    /// Gradient of the (smoothed) pointwise objective:
    /// `(psi(r) + (1 - r) psi'(r), psi(r) - r psi'(r))` with `r = a / (a + b)`.
    ///
    /// Components may be infinite on the boundary `a = 0` or `b = 0` for the
    /// exp and log families.
    pub fn pointwise_grad(&self, a: f64, b: f64) -> Result<(f64, f64)> {
        check_nonneg(a, b)?;
        if a + b <= 0.0 {
            return Err(WrhtError::Domain("gradient undefined at (0, 0)".into()));
        }
        Ok(self.grad_unchecked(a, b))
    }

    #[inline]
    pub(crate) fn grad_unchecked(&self, a: f64, b: f64) -> (f64, f64) {
        let s = a + b;
        match self.kind {
            PsiKind::Exp => ((b / a).sqrt(), (a / b).sqrt()),
            PsiKind::Log => ((s / a).log2(), (s / b).log2()),
            PsiKind::Quad => {
                let (ra, rb) = (a / s, b / s);
                (4.0 * rb * rb, 4.0 * ra * ra)
            }
            PsiKind::Hinge => {
                let r = a / s;
                let v = self.psi_smooth(r);
                let d = self.psi_smooth_derivative(r);
                (v + (1.0 - r) * d, v - r * d)
            }
        }
    }

    /// Optimal detector value at an atom carrying LFD masses `(p1, p2)`.
    /// Positive values favor the first hypothesis.
    pub fn detector_value(&self, p1: f64, p2: f64) -> Result<f64> {
        check_nonneg(p1, p2)?;
        if p1 + p2 <= 0.0 {
            return Ok(0.0);
        }
        let v = match self.kind {
            PsiKind::Exp => 0.5 * (p1.ln() - p2.ln()),
            PsiKind::Log => p1.ln() - p2.ln(),
            PsiKind::Quad => (p1 - p2) / (p1 + p2),
            PsiKind::Hinge => {
                if p1 > p2 {
                    1.0
                } else if p1 < p2 {
                    -1.0
                } else {
                    0.0
                }
            }
        };
        Ok(v.clamp(-CLAMP_CAP, CLAMP_CAP))
    }

    /// Maps an LFD objective value to the family's divergence, `1 - value / 2`.
    pub fn divergence_of_value(&self, value: f64) -> Result<f64> {
        if !(0.0..=2.0 + OBJECTIVE_TOL).contains(&value) {
            return Err(WrhtError::Infeasible(format!(
                "objective {value} outside [0, 2]; the solver produced an infeasible point"
            )));
        }
        Ok(1.0 - value / 2.0)
    }
}
