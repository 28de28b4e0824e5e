//! Change detection harness.
//!
//! Radius calibration by bootstrap, a CUSUM monitor driven by a robust
//! detector, a Hotelling T² chart, thresholds set by Monte Carlo control of
//! the false alarm rate, and a Gaussian mean-shift stream generator.
//!
//! Randomness always comes from [`seeded_rng`], one ChaCha stream per
//! (seed, purpose, index), so replicates do not perturb each other and
//! results do not depend on thread scheduling.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detector::DetectorModel;
use crate::distributions::{EmpiricalDistribution, NormKind};
use crate::error::{Result, WrhtError};
use crate::lfd::{solve, solve_warm, LfdProblem, SolverConfig};
use crate::psi::{PsiFamily, PsiKind};

pub type Sample = Vec<f64>;

const STREAM_BOOTSTRAP: u64 = 1 << 32;
const STREAM_TRAIN: u64 = 2 << 32;
const STREAM_REFERENCE: u64 = 3 << 32;
const STREAM_TEST: u64 = 4 << 32;
const STREAM_NULL: u64 = 5 << 32;
const STREAM_PILOT: u64 = 6 << 32;

/// ChaCha8 generator for stream `stream` of `seed`.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn check_samples(samples: &[Sample]) -> Result<usize> {
    let d = samples.first().map(Vec::len).ok_or_else(|| WrhtError::InvalidInput("no samples".into()))?;
    for s in samples {
        if s.len() != d {
            return Err(WrhtError::DimensionMismatch { left: d, right: s.len() });
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(WrhtError::InvalidInput("samples must be finite".into()));
        }
    }
    Ok(d)
}

/// Upper empirical quantile: the order statistic `ceil(level * n)`
/// (1-based) of `values`.
pub fn upper_quantile(values: &[f64], level: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(WrhtError::InvalidInput("quantile of an empty sample".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = ((level * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    Ok(sorted[k - 1])
}

// ---------------------------------------------------------------------------
// Radius calibration

pub fn default_theta_grid() -> Vec<f64> {
    vec![0.0, 0.05, 0.1, 0.2, 0.3, 0.5, 0.75, 1.0, 1.5, 2.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    /// Size `n` of each bootstrap sample.
    pub window: usize,
    pub bootstrap_reps: usize,
    /// Quantile level `1 - beta`.
    pub confidence: f64,
    /// Divergence tolerance `delta`.
    pub divergence_tol: f64,
    /// Increasing candidate radii.
    pub theta_grid: Vec<f64>,
    pub seed: u64,
    pub norm: NormKind,
    pub solver: SolverConfig,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            window: 20,
            bootstrap_reps: 50,
            confidence: 0.9,
            divergence_tol: 0.05,
            theta_grid: default_theta_grid(),
            seed: 0,
            norm: NormKind::L2,
            solver: SolverConfig { max_iters: 1_000, gap_tol: 1e-7, ..SolverConfig::default() },
        }
    }
}

impl CalibrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.bootstrap_reps == 0 {
            return Err(WrhtError::InvalidInput("window and bootstrap_reps must be positive".into()));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(WrhtError::InvalidInput(format!("confidence must lie in (0, 1), got {}", self.confidence)));
        }
        if !(self.divergence_tol >= 0.0) {
            return Err(WrhtError::InvalidInput("divergence_tol must be nonnegative".into()));
        }
        if self.theta_grid.is_empty() {
            return Err(WrhtError::InvalidInput("theta_grid is empty".into()));
        }
        if self.theta_grid.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(WrhtError::InvalidInput("theta_grid entries must be finite and nonnegative".into()));
        }
        if self.theta_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(WrhtError::InvalidInput("theta_grid must be increasing".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationResult {
    pub theta: f64,
    pub theta_grid: Vec<f64>,
    /// Divergence quantile at each grid radius.
    pub quantile_curve: Vec<f64>,
    /// Set when no grid radius met the tolerance and the largest was returned.
    pub saturated: bool,
    pub seed: u64,
}

/// Divergences of one bootstrap pair along the radius grid.
fn bootstrap_curve(data: &[Sample], family: PsiFamily, cfg: &CalibrationConfig, rep: usize) -> Result<Vec<f64>> {
    let mut rng = seeded_rng(cfg.seed, STREAM_BOOTSTRAP | rep as u64);
    let draw = |rng: &mut ChaCha8Rng| -> Result<EmpiricalDistribution> {
        let points = (0..cfg.window).map(|_| data[rng.random_range(0..data.len())].clone()).collect();
        EmpiricalDistribution::uniform(points)
    };
    let q1 = draw(&mut rng)?;
    let q2 = draw(&mut rng)?;
    let theta0 = cfg.theta_grid[0];
    let base = LfdProblem::new(&q1, &q2, cfg.norm, theta0, theta0, family)?;
    let mut sol = solve(&base, &cfg.solver)?;
    let mut curve = vec![sol.divergence];
    for &theta in &cfg.theta_grid[1..] {
        let problem = base.with_radii(theta, theta)?;
        sol = solve_warm(&problem, &cfg.solver, &sol)?;
        curve.push(sol.divergence);
    }
    Ok(curve)
}

/// Smallest grid radius whose bootstrap divergence quantile is at most the
/// tolerance, using pairs of resamples of `pre_change`.
pub fn calibrate_radius(pre_change: &[Sample], family: PsiFamily, cfg: &CalibrationConfig) -> Result<CalibrationResult> {
    cfg.validate()?;
    check_samples(pre_change)?;
    if pre_change.len() < 2 * cfg.window {
        return Err(WrhtError::InsufficientData { needed: 2 * cfg.window, got: pre_change.len() });
    }
    let curves = (0..cfg.bootstrap_reps)
        .into_par_iter()
        .map(|rep| bootstrap_curve(pre_change, family, cfg, rep))
        .collect::<Result<Vec<_>>>()?;
    let quantile_curve = (0..cfg.theta_grid.len())
        .map(|i| {
            let column: Vec<f64> = curves.iter().map(|c| c[i]).collect();
            upper_quantile(&column, cfg.confidence)
        })
        .collect::<Result<Vec<f64>>>()?;
    let hit = quantile_curve.iter().position(|q| *q <= cfg.divergence_tol);
    let (theta, saturated) = match hit {
        Some(i) => (cfg.theta_grid[i], false),
        None => (*cfg.theta_grid.last().expect("nonempty grid"), true),
    };
    Ok(CalibrationResult { theta, theta_grid: cfg.theta_grid.clone(), quantile_curve, saturated, seed: cfg.seed })
}

// ---------------------------------------------------------------------------
// Monitoring statistics

#[derive(Debug, Clone, PartialEq)]
pub struct CusumRun {
    /// First index with `S_t >= h`.
    pub alarm: Option<usize>,
    pub trajectory: Vec<f64>,
}

/// One-sided CUSUM `S_t = max(0, S_{t-1} + score_t)` from `S = 0`.
pub fn cusum_run(scores: &[f64], threshold: f64) -> Result<CusumRun> {
    check_threshold(threshold)?;
    check_finite(scores)?;
    let mut s = 0.0;
    let mut alarm = None;
    let trajectory = scores
        .iter()
        .enumerate()
        .map(|(t, x)| {
            s = (s + x).max(0.0);
            if alarm.is_none() && s >= threshold {
                alarm = Some(t);
            }
            s
        })
        .collect();
    Ok(CusumRun { alarm, trajectory })
}

fn cusum_max(scores: &[f64]) -> f64 {
    let mut s: f64 = 0.0;
    let mut best: f64 = 0.0;
    for x in scores {
        s = (s + x).max(0.0);
        best = best.max(s);
    }
    best
}

fn check_threshold(threshold: f64) -> Result<()> {
    if !(threshold >= 0.0) {
        return Err(WrhtError::Domain(format!("threshold must be nonnegative, got {threshold}")));
    }
    Ok(())
}

fn check_finite(values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(WrhtError::InvalidInput("statistics must be finite".into()));
    }
    Ok(())
}

/// `-phi(x)` for every observation, so data favoring the second
/// hypothesis push the CUSUM up.
pub fn robust_scores(model: &DetectorModel, stream: &[Sample]) -> Result<Vec<f64>> {
    stream.iter().map(|x| model.evaluate(x).map(|v| -v)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct HotellingModel {
    mu: DVector<f64>,
    sigma_inv: DMatrix<f64>,
    ridge: f64,
}

impl HotellingModel {
    /// Fits mean and inverse sample covariance. `ridge = None` uses
    /// `1e-8 * trace / d`.
    pub fn fit(training: &[Sample], ridge: Option<f64>) -> Result<Self> {
        let d = check_samples(training)?;
        if training.len() < d + 1 {
            return Err(WrhtError::InsufficientData { needed: d + 1, got: training.len() });
        }
        if let Some(r) = ridge {
            if !(r.is_finite() && r >= 0.0) {
                return Err(WrhtError::InvalidInput(format!("ridge must be nonnegative, got {r}")));
            }
        }
        let n = training.len() as f64;
        let mut mu = DVector::zeros(d);
        for x in training {
            mu += DVector::from_column_slice(x);
        }
        mu /= n;
        let mut cov = DMatrix::zeros(d, d);
        for x in training {
            let c = DVector::from_column_slice(x) - &mu;
            cov += &c * c.transpose();
        }
        cov /= n - 1.0;
        let scale = cov.trace() / d as f64;
        let ridge = ridge.unwrap_or(1e-8 * scale);
        for i in 0..d {
            cov[(i, i)] += ridge;
        }
        let chol = cov.cholesky().ok_or(WrhtError::SingularCovariance)?;
        let floor = 1e-14 * scale.max(f64::MIN_POSITIVE);
        if chol.l_dirty().diagonal().iter().any(|l| l * l <= floor) {
            return Err(WrhtError::SingularCovariance);
        }
        let sigma_inv = chol.inverse();
        Ok(Self { mu, sigma_inv, ridge })
    }

    pub fn from_parts(mu: Vec<f64>, sigma_inv: DMatrix<f64>, ridge: f64) -> Result<Self> {
        let d = mu.len();
        if sigma_inv.nrows() != d || sigma_inv.ncols() != d {
            return Err(WrhtError::DimensionMismatch { left: d, right: sigma_inv.nrows() });
        }
        Ok(Self { mu: DVector::from_vec(mu), sigma_inv, ridge })
    }

    pub fn mean(&self) -> &[f64] {
        self.mu.as_slice()
    }

    pub fn sigma_inv(&self) -> &DMatrix<f64> {
        &self.sigma_inv
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    /// `(x - mu)' Sigma^-1 (x - mu)`.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.mu.len() {
            return Err(WrhtError::DimensionMismatch { left: self.mu.len(), right: x.len() });
        }
        let c = DVector::from_column_slice(x) - &self.mu;
        Ok((c.transpose() * &self.sigma_inv * &c)[(0, 0)].max(0.0))
    }

    pub fn scores(&self, stream: &[Sample]) -> Result<Vec<f64>> {
        stream.iter().map(|x| self.score(x)).collect()
    }
}

// ---------------------------------------------------------------------------
// Thresholds

/// Threshold from the run maxima of `R` pre-change runs: take the order
/// statistic `q = ceil((1 - alpha) R)` and move up to the next strictly
/// larger maximum, so that at most `alpha R` of the runs reach it. When no
/// larger maximum exists, `q` itself is returned.
pub fn threshold_from_maxima(maxima: &[f64], alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(WrhtError::Domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    check_finite(maxima)?;
    let q = upper_quantile(maxima, 1.0 - alpha)?;
    Ok(maxima.iter().copied().filter(|m| *m > q).min_by(f64::total_cmp).unwrap_or(q))
}

/// CUSUM threshold controlling the false alarm rate at `alpha`. The
/// generator returns the pre-change score sequence of replicate `r` and
/// must be deterministic in `r`.
pub fn threshold_by_type1<F>(generator: F, alpha: f64, reps: usize) -> Result<f64>
where
    F: Fn(usize) -> Result<Vec<f64>> + Sync,
{
    if reps == 0 {
        return Err(WrhtError::InvalidInput("at least one replicate is required".into()));
    }
    let maxima = (0..reps)
        .into_par_iter()
        .map(|r| {
            let scores = generator(r)?;
            check_finite(&scores)?;
            Ok(cusum_max(&scores))
        })
        .collect::<Result<Vec<f64>>>()?;
    threshold_from_maxima(&maxima, alpha)
}

// ---------------------------------------------------------------------------
// Reports

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    RobustCusum,
    Hotelling,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::RobustCusum => "robust-cusum",
            Method::Hotelling => "hotelling",
        }
    }
}

/// Outcome of monitoring one stream.
///
/// When the true change time is known and the chart alarms before it, the
/// run is flagged as a false alarm and the chart restarts from zero;
/// `detection_time` is the first alarm at or after the change.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChangeReport {
    pub method: Method,
    pub threshold: f64,
    pub alarm_time: Option<usize>,
    pub truth_change_time: Option<usize>,
    pub detection_time: Option<usize>,
    pub delay: Option<usize>,
    pub false_alarm: bool,
    pub per_step_stat: Vec<f64>,
}

impl ChangeReport {
    fn monitor(method: Method, values: &[f64], threshold: f64, truth: Option<usize>, cusum: bool) -> Result<Self> {
        check_threshold(threshold)?;
        check_finite(values)?;
        let mut s = 0.0;
        let mut alarm_time = None;
        let mut detection_time = None;
        let mut false_alarm = false;
        let mut per_step_stat = Vec::with_capacity(values.len());
        for (t, v) in values.iter().enumerate() {
            let stat = if cusum { (s + v).max(0.0) } else { *v };
            per_step_stat.push(stat);
            s = stat;
            if stat < threshold {
                continue;
            }
            alarm_time.get_or_insert(t);
            match truth {
                Some(c) if t < c => {
                    false_alarm = true;
                    s = 0.0;
                }
                Some(_) => {
                    detection_time.get_or_insert(t);
                }
                None => {}
            }
        }
        let delay = match (detection_time, truth) {
            (Some(a), Some(c)) => Some(a - c),
            _ => None,
        };
        Ok(Self {
            method,
            threshold,
            alarm_time,
            truth_change_time: truth,
            detection_time,
            delay,
            false_alarm,
            per_step_stat,
        })
    }

    /// CUSUM chart over robust detector scores.
    pub fn cusum(scores: &[f64], threshold: f64, truth: Option<usize>) -> Result<Self> {
        Self::monitor(Method::RobustCusum, scores, threshold, truth, true)
    }

    /// Shewhart chart over Hotelling statistics.
    pub fn hotelling(stats: &[f64], threshold: f64, truth: Option<usize>) -> Result<Self> {
        Self::monitor(Method::Hotelling, stats, threshold, truth, false)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub runs: usize,
    /// Mean delay over runs without a false alarm that detected the change.
    pub avg_delay: Option<f64>,
    pub type1_rate: f64,
    pub detection_rate: f64,
}

pub fn evaluate_runs(reports: &[ChangeReport]) -> Result<RunSummary> {
    if reports.is_empty() {
        return Err(WrhtError::InvalidInput("no reports to evaluate".into()));
    }
    let runs = reports.len();
    let delays: Vec<f64> =
        reports.iter().filter(|r| !r.false_alarm).filter_map(|r| r.delay).map(|d| d as f64).collect();
    let avg_delay = (!delays.is_empty()).then(|| delays.iter().sum::<f64>() / delays.len() as f64);
    let false_alarms = reports.iter().filter(|r| r.false_alarm).count();
    let detections = reports.iter().filter(|r| r.detection_time.is_some()).count();
    Ok(RunSummary {
        runs,
        avg_delay,
        type1_rate: false_alarms as f64 / runs as f64,
        detection_rate: detections as f64 / runs as f64,
    })
}

// ---------------------------------------------------------------------------
// Synthetic streams

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub d: usize,
    pub pre_mean: Vec<f64>,
    pub post_mean: Vec<f64>,
    /// Covariance is `cov_scale * I`.
    pub cov_scale: f64,
    pub change_time: usize,
    pub length: usize,
    pub seed: u64,
}

/// Gaussian samples with mean `pre_mean` before `change_time` and
/// `post_mean` from it on.
pub fn synth_stream(spec: &StreamSpec) -> Result<Vec<Sample>> {
    if spec.pre_mean.len() != spec.d {
        return Err(WrhtError::DimensionMismatch { left: spec.d, right: spec.pre_mean.len() });
    }
    if spec.post_mean.len() != spec.d {
        return Err(WrhtError::DimensionMismatch { left: spec.d, right: spec.post_mean.len() });
    }
    if spec.change_time > spec.length {
        return Err(WrhtError::InvalidInput(format!(
            "change_time {} exceeds length {}",
            spec.change_time, spec.length
        )));
    }
    if !(spec.cov_scale.is_finite() && spec.cov_scale >= 0.0) {
        return Err(WrhtError::InvalidInput("cov_scale must be nonnegative".into()));
    }
    let sd = spec.cov_scale.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok((0..spec.length)
        .map(|t| {
            let mean = if t < spec.change_time { &spec.pre_mean } else { &spec.post_mean };
            mean.iter().map(|m| m + sd * rng.sample::<f64, _>(StandardNormal)).collect()
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Monte Carlo experiment

/// Mean-shift scenario: unit-covariance Gaussians, the first coordinate
/// shifts by `shift` at the change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub d: usize,
    pub shift: f64,
    pub pre_len: usize,
    pub post_len: usize,
    /// Size of the training and reference windows.
    pub window: usize,
    pub runs: usize,
    pub alphas: Vec<f64>,
    pub family: PsiFamily,
    pub norm: NormKind,
    /// Fixed radius; `None` calibrates once on a pilot pre-change sample.
    pub theta: Option<f64>,
    pub calibration: CalibrationConfig,
    pub solver: SolverConfig,
    /// Pre-change replicates per threshold.
    pub threshold_reps: usize,
    pub hotelling_ridge: Option<f64>,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            d: 2,
            shift: 2.0,
            pre_len: 200,
            post_len: 200,
            window: 20,
            runs: 100,
            alphas: vec![0.01, 0.05, 0.1],
            family: PsiFamily::new(PsiKind::Log),
            norm: NormKind::L2,
            theta: None,
            calibration: CalibrationConfig::default(),
            solver: SolverConfig { max_iters: 1_000, gap_tol: 1e-7, ..SolverConfig::default() },
            threshold_reps: 500,
            hotelling_ridge: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodResult {
    #[serde(flatten)]
    pub summary: RunSummary,
    pub thresholds: Vec<f64>,
    pub delays: Vec<Option<usize>>,
    pub false_alarms: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaResult {
    pub alpha: f64,
    pub robust: MethodResult,
    pub hotelling: MethodResult,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationReport {
    pub theta: f64,
    pub calibration: Option<CalibrationResult>,
    pub results: Vec<AlphaResult>,
}

struct RunOutcome {
    robust: Vec<ChangeReport>,
    hotelling: Vec<ChangeReport>,
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.window == 0 || self.runs == 0 || self.threshold_reps == 0 {
            return Err(WrhtError::InvalidInput("d, window, runs and threshold_reps must be positive".into()));
        }
        if self.pre_len == 0 || self.post_len == 0 {
            return Err(WrhtError::InvalidInput("pre_len and post_len must be positive".into()));
        }
        if self.alphas.is_empty() || self.alphas.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return Err(WrhtError::InvalidInput("alphas must be nonempty and inside (0, 1)".into()));
        }
        if let Some(t) = self.theta {
            if !(t.is_finite() && t >= 0.0) {
                return Err(WrhtError::InvalidInput(format!("theta must be nonnegative, got {t}")));
            }
        }
        if !self.shift.is_finite() {
            return Err(WrhtError::InvalidInput("shift must be finite".into()));
        }
        Ok(())
    }

    fn means(&self) -> (Vec<f64>, Vec<f64>) {
        let pre = vec![0.0; self.d];
        let mut post = pre.clone();
        post[0] = self.shift;
        (pre, post)
    }

    fn gaussian(&self, mean: &[f64], len: usize, seed: u64, stream: u64) -> Result<Vec<Sample>> {
        let seed = seeded_rng(seed, stream).next_u64();
        synth_stream(&StreamSpec {
            d: self.d,
            pre_mean: mean.to_vec(),
            post_mean: mean.to_vec(),
            cov_scale: 1.0,
            change_time: len,
            length: len,
            seed,
        })
    }

    /// The monitored stream of run `run`, with the change at `pre_len`.
    pub fn test_stream(&self, run: usize) -> Result<Vec<Sample>> {
        let (pre, post) = self.means();
        synth_stream(&StreamSpec {
            d: self.d,
            pre_mean: pre,
            post_mean: post,
            cov_scale: 1.0,
            change_time: self.pre_len,
            length: self.pre_len + self.post_len,
            seed: seeded_rng(self.seed, STREAM_TEST | run as u64).next_u64(),
        })
    }

    fn run(&self, theta: f64, run: usize) -> Result<RunOutcome> {
        let (pre, post) = self.means();
        let r = run as u64;
        let training = self.gaussian(&pre, self.window, self.seed, STREAM_TRAIN | r)?;
        let reference = self.gaussian(&post, self.window, self.seed, STREAM_REFERENCE | r)?;

        let q1 = EmpiricalDistribution::uniform(training.clone())?;
        let q2 = EmpiricalDistribution::uniform(reference)?;
        let problem = LfdProblem::new(&q1, &q2, self.norm, theta, theta, self.family)?;
        let solution = solve(&problem, &self.solver)?;
        let model = DetectorModel::from_problem(&problem, &solution)?;
        let hotelling = HotellingModel::fit(&training, self.hotelling_ridge)?;

        // Pre-change run maxima for both charts.
        let null_seed = seeded_rng(self.seed, STREAM_NULL | r).next_u64();
        let mut robust_max = Vec::with_capacity(self.threshold_reps);
        let mut hotelling_max = Vec::with_capacity(self.threshold_reps);
        for rep in 0..self.threshold_reps {
            let stream = self.gaussian(&pre, self.pre_len, null_seed, rep as u64)?;
            robust_max.push(cusum_max(&robust_scores(&model, &stream)?));
            hotelling_max.push(hotelling.scores(&stream)?.into_iter().fold(0.0, f64::max));
        }

        let stream = self.test_stream(run)?;
        let scores = robust_scores(&model, &stream)?;
        let stats = hotelling.scores(&stream)?;
        let truth = Some(self.pre_len);

        let mut out = RunOutcome { robust: Vec::new(), hotelling: Vec::new() };
        for &alpha in &self.alphas {
            let h = threshold_from_maxima(&robust_max, alpha)?;
            out.robust.push(ChangeReport::cusum(&scores, h, truth)?);
            let h = threshold_from_maxima(&hotelling_max, alpha)?;
            out.hotelling.push(ChangeReport::hotelling(&stats, h, truth)?);
        }
        Ok(out)
    }
}

fn method_result(reports: Vec<ChangeReport>) -> Result<MethodResult> {
    Ok(MethodResult {
        summary: evaluate_runs(&reports)?,
        thresholds: reports.iter().map(|r| r.threshold).collect(),
        delays: reports.iter().map(|r| r.delay).collect(),
        false_alarms: reports.iter().map(|r| r.false_alarm).collect(),
    })
}

/// Runs the mean-shift experiment: per run, a training window of pre-change
/// data and a reference window of post-change data define the robust
/// detector (and the Hotelling fit on the training window); thresholds come
/// from simulated pre-change runs; a fresh stream with the change at
/// `pre_len` is then monitored.
pub fn simulate(cfg: &SimulationConfig) -> Result<SimulationReport> {
    cfg.validate()?;
    let (calibration, theta) = match cfg.theta {
        Some(t) => (None, t),
        None => {
            let (pre, _) = cfg.means();
            let pilot = cfg.gaussian(&pre, cfg.pre_len.max(2 * cfg.calibration.window), cfg.seed, STREAM_PILOT)?;
            let cal = calibrate_radius(&pilot, cfg.family, &cfg.calibration)?;
            let theta = cal.theta;
            (Some(cal), theta)
        }
    };
    let outcomes = (0..cfg.runs).into_par_iter().map(|r| cfg.run(theta, r)).collect::<Result<Vec<_>>>()?;
    let results = cfg
        .alphas
        .iter()
        .enumerate()
        .map(|(i, &alpha)| {
            Ok(AlphaResult {
                alpha,
                robust: method_result(outcomes.iter().map(|o| o.robust[i].clone()).collect())?,
                hotelling: method_result(outcomes.iter().map(|o| o.hotelling[i].clone()).collect())?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SimulationReport { theta, calibration, results })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::SupportPool;

    #[test]
    fn cusum_examples() {
        let run = cusum_run(&[-1.0, -0.5, -2.0], 1.0).unwrap();
        assert_eq!(run.alarm, None);
        assert_eq!(run.trajectory, vec![0.0, 0.0, 0.0]);

        let run = cusum_run(&[1.0; 8], 5.0).unwrap();
        assert_eq!(run.alarm, Some(4));

        let run = cusum_run(&[3.0, -1.0, 3.0], 4.0).unwrap();
        assert_eq!(run.trajectory, vec![3.0, 2.0, 5.0]);
        assert_eq!(run.alarm, Some(2));

        assert!(cusum_run(&[f64::NAN], 1.0).is_err());
        assert!(cusum_run(&[1.0], -1.0).is_err());
    }

    #[test]
    fn robust_score_examples() {
        let pool = SupportPool::from_parts(vec![vec![0.0], vec![1.0], vec![2.0]], 2, 1).unwrap();
        let model = DetectorModel::from_masses(
            pool.clone(),
            vec![0.2, 0.1, 0.7],
            vec![0.3, 0.6, 0.1],
            PsiKind::Log.into(),
            NormKind::L2,
        )
        .unwrap();
        let scores = robust_scores(&model, &[vec![0.0], vec![1.1]]).unwrap();
        assert!(scores.iter().all(|s| *s > 0.0));
        let single = robust_scores(&model, &vec![vec![2.0]; 3]).unwrap();
        assert_eq!(single, vec![-model.phi()[2]; 3]);

        let flat =
            DetectorModel::from_masses(pool, vec![0.5, 0.25, 0.25], vec![0.5, 0.25, 0.25], PsiKind::Log.into(), NormKind::L2)
                .unwrap();
        assert!(robust_scores(&flat, &[vec![0.3], vec![7.0]]).unwrap().iter().all(|s| *s == 0.0));
        assert!(robust_scores(&flat, &[vec![0.3, 1.0]]).is_err());
    }

    #[test]
    fn hotelling_examples() {
        // 1-D with sample variance 1: mean 0, values -1, 0, 1.
        let model = HotellingModel::fit(&[vec![-1.0], vec![0.0], vec![1.0]], Some(0.0)).unwrap();
        assert_eq!(model.score(&[0.0]).unwrap(), 0.0);
        assert!((model.score(&[2.0]).unwrap() - 4.0).abs() < 1e-12);

        let identity = HotellingModel::from_parts(vec![1.0, 1.0], DMatrix::identity(2, 2), 0.0).unwrap();
        assert!((identity.score(&[4.0, 5.0]).unwrap() - 25.0).abs() < 1e-12);

        let singular = [vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]];
        assert_eq!(HotellingModel::fit(&singular, Some(0.0)), Err(WrhtError::SingularCovariance));
        assert!(HotellingModel::fit(&singular, None).is_ok());
        assert!(matches!(
            HotellingModel::fit(&[vec![0.0, 1.0], vec![1.0, 0.0]], None),
            Err(WrhtError::InsufficientData { needed: 3, got: 2 })
        ));
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(threshold_from_maxima(&[1.0, 3.0], 0.5).unwrap(), 3.0);
        assert_eq!(threshold_by_type1(|_| Ok(vec![0.0; 10]), 0.05, 20).unwrap(), 0.0);
        assert!(threshold_from_maxima(&[1.0], 1.0).is_err());
        // At most alpha * R of the runs reach the threshold.
        let maxima: Vec<f64> = (0..100).map(f64::from).collect();
        let h = threshold_from_maxima(&maxima, 0.05).unwrap();
        assert_eq!(h, 95.0);
        assert_eq!(maxima.iter().filter(|m| **m >= h).count(), 5);
    }

    #[test]
    fn evaluate_examples() {
        let report = |alarm: Option<usize>| ChangeReport::cusum(&alarm_scores(alarm), 1.0, Some(10)).unwrap();
        let summary = evaluate_runs(&[report(Some(14)), report(Some(16))]).unwrap();
        assert_eq!(summary.avg_delay, Some(5.0));
        assert_eq!(summary.type1_rate, 0.0);
        assert_eq!(summary.detection_rate, 1.0);

        let early = ChangeReport::cusum(&alarm_scores(Some(3))[..8], 1.0, Some(10)).unwrap();
        assert!(early.false_alarm);
        let summary = evaluate_runs(&[early]).unwrap();
        assert_eq!(summary.type1_rate, 1.0);
        assert_eq!(summary.avg_delay, None);

        let silent = evaluate_runs(&[report(None), report(None)]).unwrap();
        assert_eq!(silent.detection_rate, 0.0);
        assert!(evaluate_runs(&[]).is_err());
    }

    /// Scores that make a unit-threshold CUSUM alarm exactly at `alarm`.
    fn alarm_scores(alarm: Option<usize>) -> Vec<f64> {
        let mut scores = vec![-1.0; 30];
        if let Some(t) = alarm {
            scores[t] = 1.0;
        }
        scores
    }

    #[test]
    fn false_alarm_restarts_chart() {
        let mut scores = vec![-1.0; 20];
        scores[2] = 2.0;
        scores[12] = 2.0;
        let report = ChangeReport::cusum(&scores, 1.0, Some(10)).unwrap();
        assert_eq!(report.alarm_time, Some(2));
        assert!(report.false_alarm);
        assert_eq!(report.detection_time, Some(12));
        assert_eq!(report.delay, Some(2));
        assert_eq!(report.method.as_str(), "robust-cusum");
    }

    #[test]
    fn synth_examples() {
        let spec = StreamSpec {
            d: 2,
            pre_mean: vec![0.0, 0.0],
            post_mean: vec![2.0, 0.0],
            cov_scale: 0.0,
            change_time: 3,
            length: 5,
            seed: 9,
        };
        let s = synth_stream(&spec).unwrap();
        assert_eq!(s, vec![vec![0.0, 0.0], vec![0.0, 0.0], vec![0.0, 0.0], vec![2.0, 0.0], vec![2.0, 0.0]]);

        let noisy = StreamSpec { cov_scale: 1.0, change_time: 5, ..spec.clone() };
        let a = synth_stream(&noisy).unwrap();
        let b = synth_stream(&noisy).unwrap();
        assert_eq!(a, b);
        assert!(synth_stream(&StreamSpec { change_time: 6, ..spec }).is_err());
    }

    #[test]
    fn upper_quantile_uses_ceiling_rank() {
        let v = [5.0, 1.0, 4.0, 2.0, 3.0];
        assert_eq!(upper_quantile(&v, 0.9).unwrap(), 5.0);
        assert_eq!(upper_quantile(&v, 0.5).unwrap(), 3.0);
        assert_eq!(upper_quantile(&v, 0.2).unwrap(), 1.0);
    }
}
