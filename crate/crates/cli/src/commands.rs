//! The five `wrht` commands. Each returns its JSON report as a string.

use std::fs;
use std::path::Path;

use serde::Serialize;
use wrht_core::sequential::{seeded_rng, Sample};
use wrht_core::{
    calibrate_radius, robust_scores, simulate, solve, threshold_by_type1, threshold_from_maxima, CalibrationResult,
    ChangeReport, DetectorModel, EmpiricalDistribution, HotellingModel, LfdProblem, Side, SimulationReport,
};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::io::{parse_samples_csv, samples_to_csv, to_json};

use rand::Rng;

const NULL_STREAM: u64 = 1 << 40;

#[derive(Serialize)]
struct SolveReport<'a> {
    objective: f64,
    divergence: f64,
    fw_gap: f64,
    iterations: usize,
    converged: bool,
    theta: [f64; 2],
    family: &'a str,
    norm: &'a str,
    seed: u64,
    n1: usize,
    n2: usize,
    p1: &'a [f64],
    p2: &'a [f64],
    support: &'a [Sample],
    phi: &'a [f64],
    #[serde(skip_serializing_if = "Option::is_none")]
    calibration: Option<&'a CalibrationResult>,
}

struct Solved {
    model: DetectorModel,
    theta: [f64; 2],
    calibration: Option<CalibrationResult>,
    solution: wrht_core::LfdSolution,
}

fn solve_pair(cfg: &RunConfig, q1: Vec<Sample>, q2: Vec<Sample>) -> CliResult<Solved> {
    let family = cfg.family()?;
    let calibration = if cfg.auto_theta { Some(calibrate_radius(&q1, family, &cfg.calibration)?) } else { None };
    let theta = match &calibration {
        Some(c) => [c.theta, c.theta],
        None => [cfg.theta1, cfg.theta2],
    };
    let q1 = EmpiricalDistribution::uniform(q1)?;
    let q2 = EmpiricalDistribution::uniform(q2)?;
    let problem = LfdProblem::new(&q1, &q2, cfg.norm, theta[0], theta[1], family)?;
    let solution = solve(&problem, &cfg.solver)?;
    let model = DetectorModel::from_problem(&problem, &solution)?;
    Ok(Solved { model, theta, calibration, solution })
}

/// `wrht solve`: least favorable distributions and the robust detector.
pub fn cmd_solve(cfg: &RunConfig, q1: &Path, q2: &Path, model_out: Option<&Path>) -> CliResult<String> {
    let q1 = parse_samples_csv(q1, cfg.header)?;
    let q2 = parse_samples_csv(q2, cfg.header)?;
    let solved = solve_pair(cfg, q1, q2)?;
    if let Some(path) = model_out {
        fs::write(path, solved.model.to_text()).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    }
    let sol = &solved.solution;
    let pool = solved.model.pool();
    to_json(&SolveReport {
        objective: sol.objective,
        divergence: sol.divergence,
        fw_gap: sol.fw_gap,
        iterations: sol.iterations,
        converged: sol.converged,
        theta: solved.theta,
        family: cfg.kind.as_str(),
        norm: cfg.norm.as_str(),
        seed: cfg.seed,
        n1: pool.n1(),
        n2: pool.n2(),
        p1: &sol.p1,
        p2: &sol.p2,
        support: pool.points(),
        phi: solved.model.phi(),
        calibration: solved.calibration.as_ref(),
    })
}

#[derive(Serialize)]
struct CalibrateReport<'a> {
    #[serde(flatten)]
    result: &'a CalibrationResult,
    family: &'a str,
    norm: &'a str,
    window: usize,
    bootstrap_reps: usize,
    confidence: f64,
    divergence_tol: f64,
}

/// `wrht calibrate`: bootstrap choice of the Wasserstein radius.
pub fn cmd_calibrate(cfg: &RunConfig, pre: &Path) -> CliResult<String> {
    let data = parse_samples_csv(pre, cfg.header)?;
    let result = calibrate_radius(&data, cfg.family()?, &cfg.calibration)?;
    to_json(&CalibrateReport {
        result: &result,
        family: cfg.kind.as_str(),
        norm: cfg.norm.as_str(),
        window: cfg.calibration.window,
        bootstrap_reps: cfg.calibration.bootstrap_reps,
        confidence: cfg.calibration.confidence,
        divergence_tol: cfg.calibration.divergence_tol,
    })
}

/// Runs of length `len` drawn with replacement from `pool`, one seeded
/// stream per replicate.
fn resampled_run(pool: &[&Sample], len: usize, seed: u64, rep: usize) -> Vec<Sample> {
    let mut rng = seeded_rng(seed, NULL_STREAM | rep as u64);
    (0..len).map(|_| pool[rng.random_range(0..pool.len())].clone()).collect()
}

fn null_len(cfg: &RunConfig, stream_len: usize) -> usize {
    cfg.null_len.or(cfg.truth).unwrap_or(stream_len).max(1)
}

#[derive(Serialize)]
struct DetectReport<'a> {
    #[serde(flatten)]
    report: &'a ChangeReport,
    family: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    theta: Option<[f64; 2]>,
    seed: u64,
}

pub enum DetectorSource<'a> {
    Model(&'a Path),
    Samples { q1: &'a Path, q2: &'a Path },
}

/// `wrht detect`: CUSUM monitoring of a stream with the robust detector.
///
/// Without an explicit threshold, the threshold controls the false alarm
/// rate at `alpha` on runs resampled from the training sample (the first
/// hypothesis' atoms).
pub fn cmd_detect(cfg: &RunConfig, source: DetectorSource<'_>, stream: &Path) -> CliResult<String> {
    let (model, theta) = match source {
        DetectorSource::Model(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            (DetectorModel::from_text(&text)?, None)
        }
        DetectorSource::Samples { q1, q2 } => {
            let q1 = parse_samples_csv(q1, cfg.header)?;
            let q2 = parse_samples_csv(q2, cfg.header)?;
            let solved = solve_pair(cfg, q1, q2)?;
            (solved.model, Some(solved.theta))
        }
    };
    let stream = parse_samples_csv(stream, cfg.header)?;
    let scores = robust_scores(&model, &stream)?;
    let (threshold, alpha) = match cfg.threshold {
        Some(h) => (h, None),
        None => {
            let pool = model.pool();
            let training: Vec<&Sample> =
                pool.points().iter().zip(pool.labels()).filter(|(_, s)| *s == Side::First).map(|(p, _)| p).collect();
            let len = null_len(cfg, stream.len());
            let h = threshold_by_type1(
                |rep| robust_scores(&model, &resampled_run(&training, len, cfg.seed, rep)),
                cfg.alpha,
                cfg.threshold_reps,
            )?;
            (h, Some(cfg.alpha))
        }
    };
    let report = ChangeReport::cusum(&scores, threshold, cfg.truth)?;
    to_json(&DetectReport { report: &report, family: model.family().kind.as_str(), alpha, theta, seed: cfg.seed })
}

#[derive(Serialize)]
struct BaselineReport<'a> {
    #[serde(flatten)]
    report: &'a ChangeReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    ridge: f64,
    mean: &'a [f64],
    seed: u64,
}

/// `wrht baseline`: Hotelling T² chart trained on `train`.
pub fn cmd_baseline(cfg: &RunConfig, train: &Path, stream: &Path) -> CliResult<String> {
    let train = parse_samples_csv(train, cfg.header)?;
    let stream = parse_samples_csv(stream, cfg.header)?;
    let model = HotellingModel::fit(&train, cfg.ridge)?;
    let stats = model.scores(&stream)?;
    let (threshold, alpha) = match cfg.threshold {
        Some(h) => (h, None),
        None => {
            let pool: Vec<&Sample> = train.iter().collect();
            let len = null_len(cfg, stream.len());
            let maxima = (0..cfg.threshold_reps)
                .map(|rep| {
                    let run = resampled_run(&pool, len, cfg.seed, rep);
                    Ok(model.scores(&run)?.into_iter().fold(0.0, f64::max))
                })
                .collect::<CliResult<Vec<f64>>>()?;
            (threshold_from_maxima(&maxima, cfg.alpha)?, Some(cfg.alpha))
        }
    };
    let report = ChangeReport::hotelling(&stats, threshold, cfg.truth)?;
    to_json(&BaselineReport { report: &report, alpha, ridge: model.ridge(), mean: model.mean(), seed: cfg.seed })
}

#[derive(Serialize)]
struct SimulateReport<'a> {
    #[serde(flatten)]
    report: &'a SimulationReport,
    family: &'a str,
    norm: &'a str,
    seed: u64,
    runs: usize,
    d: usize,
    shift: f64,
    pre_len: usize,
    post_len: usize,
    window: usize,
}

/// `wrht simulate`: Monte Carlo comparison of both charts on Gaussian
/// mean-shift streams. With `streams_dir`, the monitored stream of every
/// run is also written there as CSV.
pub fn cmd_simulate(cfg: &RunConfig, streams_dir: Option<&Path>) -> CliResult<String> {
    let sim = &cfg.simulation;
    let report = simulate(sim)?;
    if let Some(dir) = streams_dir {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        for run in 0..sim.runs {
            let path = dir.join(format!("run_{run:04}.csv"));
            let stream = sim.test_stream(run)?;
            fs::write(&path, samples_to_csv(&stream)).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        }
    }
    to_json(&SimulateReport {
        report: &report,
        family: sim.family.kind.as_str(),
        norm: sim.norm.as_str(),
        seed: sim.seed,
        runs: sim.runs,
        d: sim.d,
        shift: sim.shift,
        pre_len: sim.pre_len,
        post_len: sim.post_len,
        window: sim.window,
    })
}
