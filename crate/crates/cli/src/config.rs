//! Run configuration: defaults, flat `key = value` files and overrides.

use std::fs;
use std::path::Path;

use wrht_core::lfd::SolverConfig;
use wrht_core::psi::DEFAULT_SMOOTHING_MU;
use wrht_core::{CalibrationConfig, NormKind, PsiFamily, PsiKind, SimulationConfig};

use crate::error::{CliError, CliResult};

/// Every key accepted in a config file or by `--set`.
pub const KEYS: &[&str] = &[
    "family",
    "mu",
    "norm",
    "theta",
    "theta1",
    "theta2",
    "auto_theta",
    "max_iters",
    "gap_tol",
    "seed",
    "header",
    "alpha",
    "alphas",
    "threshold",
    "threshold_reps",
    "null_len",
    "truth",
    "ridge",
    "window",
    "bootstrap_reps",
    "confidence",
    "divergence_tol",
    "theta_grid",
    "runs",
    "d",
    "shift",
    "pre_len",
    "post_len",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub kind: PsiKind,
    pub smoothing_mu: f64,
    pub norm: NormKind,
    pub theta1: f64,
    pub theta2: f64,
    /// Whether a radius was given explicitly.
    pub theta_set: bool,
    pub auto_theta: bool,
    pub seed: u64,
    pub header: bool,
    /// False alarm level for `detect` and `baseline` thresholds.
    pub alpha: f64,
    pub threshold: Option<f64>,
    pub threshold_reps: usize,
    /// Length of the simulated pre-change runs behind a threshold; defaults
    /// to the truth index, or the stream length.
    pub null_len: Option<usize>,
    pub truth: Option<usize>,
    pub ridge: Option<f64>,
    pub solver: SolverConfig,
    pub calibration: CalibrationConfig,
    pub simulation: SimulationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            kind: PsiKind::Log,
            smoothing_mu: DEFAULT_SMOOTHING_MU,
            norm: NormKind::L2,
            theta1: 0.1,
            theta2: 0.1,
            theta_set: false,
            auto_theta: false,
            seed: 0,
            header: false,
            alpha: 0.05,
            threshold: None,
            threshold_reps: 500,
            null_len: None,
            truth: None,
            ridge: None,
            solver: SolverConfig::default(),
            calibration: CalibrationConfig::default(),
            simulation: SimulationConfig::default(),
        }
    }
}

fn invalid(key: &str, value: &str, what: &str) -> CliError {
    CliError::Io(format!("config key '{key}': expected {what}, got '{value}'"))
}

fn parse_f64(key: &str, value: &str) -> CliResult<f64> {
    value.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| invalid(key, value, "a number"))
}

fn parse_usize(key: &str, value: &str) -> CliResult<usize> {
    value.parse().map_err(|_| invalid(key, value, "a nonnegative integer"))
}

fn parse_bool(key: &str, value: &str) -> CliResult<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(invalid(key, value, "true or false")),
    }
}

fn is_none(value: &str) -> bool {
    value.is_empty() || value.eq_ignore_ascii_case("none")
}

fn parse_list(key: &str, value: &str) -> CliResult<Vec<f64>> {
    value.split(',').map(|v| parse_f64(key, v.trim())).collect()
}

impl RunConfig {
    pub fn family(&self) -> CliResult<PsiFamily> {
        PsiFamily::with_smoothing(self.kind, self.smoothing_mu).map_err(CliError::from)
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let value = value.trim();
        match key.trim() {
            "family" => self.kind = value.parse().map_err(|_| invalid(key, value, "exp, log, quad or hinge"))?,
            "mu" => self.smoothing_mu = parse_f64(key, value)?,
            "norm" => self.norm = value.parse().map_err(|_| invalid(key, value, "l1, l2 or linf"))?,
            "theta" => {
                let t = parse_f64(key, value)?;
                self.theta1 = t;
                self.theta2 = t;
                self.theta_set = true;
            }
            "theta1" => {
                self.theta1 = parse_f64(key, value)?;
                self.theta_set = true;
            }
            "theta2" => {
                self.theta2 = parse_f64(key, value)?;
                self.theta_set = true;
            }
            "auto_theta" => self.auto_theta = parse_bool(key, value)?,
            "max_iters" => {
                let n = parse_usize(key, value)?;
                self.solver.max_iters = n;
                self.calibration.solver.max_iters = n;
                self.simulation.solver.max_iters = n;
            }
            "gap_tol" => {
                let g = parse_f64(key, value)?;
                self.solver.gap_tol = g;
                self.calibration.solver.gap_tol = g;
                self.simulation.solver.gap_tol = g;
            }
            "seed" => self.seed = value.parse().map_err(|_| invalid(key, value, "an unsigned integer"))?,
            "header" => self.header = parse_bool(key, value)?,
            "alpha" => self.alpha = parse_f64(key, value)?,
            "alphas" => self.simulation.alphas = parse_list(key, value)?,
            "threshold" => self.threshold = if is_none(value) { None } else { Some(parse_f64(key, value)?) },
            "threshold_reps" => self.threshold_reps = parse_usize(key, value)?,
            "null_len" => self.null_len = if is_none(value) { None } else { Some(parse_usize(key, value)?) },
            "truth" => self.truth = if is_none(value) { None } else { Some(parse_usize(key, value)?) },
            "ridge" => self.ridge = if is_none(value) { None } else { Some(parse_f64(key, value)?) },
            "window" => {
                let n = parse_usize(key, value)?;
                self.calibration.window = n;
                self.simulation.window = n;
            }
            "bootstrap_reps" => self.calibration.bootstrap_reps = parse_usize(key, value)?,
            "confidence" => self.calibration.confidence = parse_f64(key, value)?,
            "divergence_tol" => self.calibration.divergence_tol = parse_f64(key, value)?,
            "theta_grid" => self.calibration.theta_grid = parse_list(key, value)?,
            "runs" => self.simulation.runs = parse_usize(key, value)?,
            "d" => self.simulation.d = parse_usize(key, value)?,
            "shift" => self.simulation.shift = parse_f64(key, value)?,
            "pre_len" => self.simulation.pre_len = parse_usize(key, value)?,
            "post_len" => self.simulation.post_len = parse_usize(key, value)?,
            other => return Err(CliError::Io(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Applies a flat config file: one `key = value` per line, `#` starts
    /// a comment.
    pub fn apply_text(&mut self, text: &str) -> CliResult<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Io(format!("config line {}: expected key = value", i + 1)))?;
            self.set(key, value).map_err(|e| CliError::Io(format!("config line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> CliResult<()> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.apply_text(&text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }

    /// Copies the shared settings into the calibration and simulation
    /// configurations.
    pub fn finalize(&mut self) -> CliResult<()> {
        let family = self.family()?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(CliError::Io(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if self.threshold_reps == 0 {
            return Err(CliError::Io("threshold_reps must be positive".into()));
        }
        self.calibration.seed = self.seed;
        self.calibration.norm = self.norm;
        let sim = &mut self.simulation;
        sim.family = family;
        sim.norm = self.norm;
        sim.seed = self.seed;
        sim.calibration = self.calibration.clone();
        sim.threshold_reps = self.threshold_reps;
        sim.hotelling_ridge = self.ridge;
        sim.theta = if self.theta_set && !self.auto_theta { Some(self.theta1) } else { None };
        Ok(())
    }
}
