//! Synthetic scenes and Monte-Carlo experiment orchestration.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::time::Instant;

use log::{info, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::als::solve_als;
use crate::degradation::{degrade, observe, DegradationConfig, DegradationOperators};
use crate::error::{Error, Result};
use crate::io::read_tensor;
use crate::metrics::{evaluate, spatial_smooth, MetricsReport};
use crate::solver::{init_latent, reconstruct_sri, solve, square_params, FusionProblem, SolverConfig};
use crate::tensor::{cpd_reconstruct, reconstruct_factors, CpdModel, DenseMatrix, DenseTensor3};

/// Environment variable that overrides the configured worker count.
pub const WORKERS_ENV: &str = "NNCPD_WORKERS";

/// Relative tolerance of the operator self-check run before every experiment.
pub const COUPLING_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    NnNls,
    Als,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::NnNls => "nn-nls",
            Algorithm::Als => "als",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nn-nls" => Ok(Algorithm::NnNls),
            "als" => Ok(Algorithm::Als),
            other => Err(Error::InvalidArgument(format!(
                "unknown algorithm {other:?} (expected nn-nls or als)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub dims: [usize; 3],
    pub rank: usize,
    pub seed: u64,
    /// Moving-average window applied to the spatial factor columns, giving
    /// the scene piecewise-smooth spatial structure. `None` keeps raw
    /// uniform factors.
    pub spatial_window: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub sri: DenseTensor3,
    pub model: CpdModel,
}

fn smooth_columns(m: &DenseMatrix, window: usize) -> DenseMatrix {
    let half = window / 2;
    let rows = m.nrows();
    DenseMatrix::from_fn(rows, m.ncols(), |i, r| {
        let lo = i.saturating_sub(half);
        let hi = (i + half).min(rows - 1);
        (lo..=hi).map(|t| m[(t, r)]).sum::<f64>() / (hi - lo + 1) as f64
    })
}

/// Random non-negative CPD scene with factor entries uniform on `[0, 1)`.
pub fn simulate_scene(spec: &SceneSpec) -> Result<Scene> {
    if spec.rank == 0 || spec.dims.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "scene needs positive dims and rank, got {:?} rank {}",
            spec.dims, spec.rank
        )));
    }
    if let Some(w) = spec.spatial_window {
        if w % 2 == 0 {
            return Err(Error::InvalidArgument(format!("spatial window must be odd, got {w}")));
        }
    }
    if spec.rank > *spec.dims.iter().min().expect("three dims") {
        warn!("scene rank {} exceeds the smallest dimension of {:?}", spec.rank, spec.dims);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut block = |rows: usize| DenseMatrix::from_fn(rows, spec.rank, |_, _| rng.random_range(0.0..1.0));
    let mut a = block(spec.dims[0]);
    let mut b = block(spec.dims[1]);
    let c = block(spec.dims[2]);
    if let Some(w) = spec.spatial_window {
        a = smooth_columns(&a, w);
        b = smooth_columns(&b, w);
    }
    let model = CpdModel::new(a, b, c)?;
    let sri = cpd_reconstruct(&model)?;
    Ok(Scene { sri, model })
}

/// Largest relative deviation between degrading a reconstructed model and
/// reconstructing from projected factors. Fails if it exceeds
/// [`COUPLING_TOL`].
pub fn check_coupling_identity(model: &CpdModel, ops: &DegradationOperators) -> Result<f64> {
    let (hsi, msi) = degrade(&cpd_reconstruct(model)?, ops)?;
    let p1a = &ops.p1 * &model.a;
    let p2b = &ops.p2 * &model.b;
    let pmc = &ops.pm * &model.c;
    let hsi_direct = reconstruct_factors([&p1a, &p2b, &model.c])?;
    let msi_direct = reconstruct_factors([&model.a, &model.b, &pmc])?;
    let rel = |x: &DenseTensor3, y: &DenseTensor3| -> Result<f64> {
        let scale = y.squared_norm().sqrt();
        let diff = x.sub(y)?.squared_norm().sqrt();
        Ok(if scale == 0.0 { diff } else { diff / scale })
    };
    let err = rel(&hsi, &hsi_direct)?.max(rel(&msi, &msi_direct)?);
    if err > COUPLING_TOL {
        return Err(Error::Degenerate(format!(
            "degradation operators violate the coupling identity (relative error {err:e})"
        )));
    }
    Ok(err)
}

#[derive(Debug, Clone, PartialEq)]
pub enum SceneSource {
    Synthetic(SceneSpec),
    /// DT3 file holding the ground-truth SRI.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum SweepAxis {
    Snr(Vec<f64>),
    Rank(Vec<usize>),
}

impl SweepAxis {
    fn len(&self) -> usize {
        match self {
            SweepAxis::Snr(v) => v.len(),
            SweepAxis::Rank(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scene: SceneSource,
    pub degradation: DegradationConfig,
    pub solver: SolverConfig,
    pub algorithms: Vec<Algorithm>,
    pub replicates: usize,
    pub sweep: SweepAxis,
    /// Fitted rank when sweeping SNR.
    pub rank: usize,
    /// Input SNR applied to both observations when sweeping rank.
    /// `+∞` means noiseless.
    pub snr_db: f64,
    /// Odd window for post-solve spatial smoothing of the estimate.
    pub smoothing_window: Option<usize>,
    /// Replicate `r` uses seed `seed + r` for noise and initialisation.
    pub seed: u64,
    /// Record wall-clock seconds per solve; otherwise 0 so output stays
    /// byte-identical across runs.
    pub timing: bool,
    /// Thread count; `None` defers to the environment override or rayon.
    pub workers: Option<usize>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::InvalidArgument("replicate count must be ≥ 1".into()));
        }
        if self.sweep.len() == 0 {
            return Err(Error::InvalidArgument("sweep list is empty".into()));
        }
        if self.algorithms.is_empty() {
            return Err(Error::InvalidArgument("no algorithm selected".into()));
        }
        match &self.sweep {
            SweepAxis::Snr(v) if v.iter().any(|s| s.is_nan()) => {
                return Err(Error::InvalidArgument("NaN in SNR sweep".into()))
            }
            SweepAxis::Rank(v) if v.contains(&0) => {
                return Err(Error::InvalidArgument("rank sweep contains 0".into()))
            }
            _ => {}
        }
        if self.rank == 0 {
            return Err(Error::InvalidArgument("rank must be ≥ 1".into()));
        }
        if self.snr_db.is_nan() {
            return Err(Error::InvalidArgument("SNR is NaN".into()));
        }
        if let Some(w) = self.smoothing_window {
            if w % 2 == 0 {
                return Err(Error::InvalidArgument(format!("smoothing window must be odd, got {w}")));
            }
        }
        if self.workers == Some(0) {
            return Err(Error::InvalidArgument("worker count must be ≥ 1".into()));
        }
        self.degradation.validate()?;
        self.solver.validate()
    }

    fn points(&self) -> Vec<(f64, usize)> {
        match &self.sweep {
            SweepAxis::Snr(v) => v.iter().map(|&s| (s, self.rank)).collect(),
            SweepAxis::Rank(v) => v.iter().map(|&r| (self.snr_db, r)).collect(),
        }
    }
}

/// One row per (algorithm, sweep point, replicate).
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub algorithm: String,
    pub snr_db: f64,
    pub rank: usize,
    pub replicate: usize,
    pub rmse: f64,
    pub cc: f64,
    pub rsnr_db: f64,
    /// Radians.
    pub sam: f64,
    pub iterations: usize,
    pub wall_time_seconds: f64,
    pub converged: bool,
}

/// Medians over replicates at one (algorithm, sweep point).
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub algorithm: String,
    pub snr_db: f64,
    pub rank: usize,
    pub replicates: usize,
    pub converged: usize,
    pub rmse: f64,
    pub cc: f64,
    pub rsnr_db: f64,
    pub sam: f64,
    pub iterations: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub rows: Vec<ResultRow>,
    pub summary: Vec<SummaryRow>,
}

/// Median of the non-NaN values; the mean of the two middle order
/// statistics for even counts. NaN when nothing remains.
pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        let (lo, hi) = (v[n / 2 - 1], v[n / 2]);
        if lo == hi {
            lo
        } else {
            0.5 * (lo + hi)
        }
    }
}

pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, u64, usize)> = Vec::new();
    for row in rows {
        let key = (row.algorithm.clone(), row.snr_db.to_bits(), row.rank);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(algorithm, snr_bits, rank)| {
            let group: Vec<&ResultRow> = rows
                .iter()
                .filter(|r| r.algorithm == algorithm && r.snr_db.to_bits() == snr_bits && r.rank == rank)
                .collect();
            let col = |f: fn(&ResultRow) -> f64| median(&group.iter().map(|r| f(r)).collect::<Vec<_>>());
            SummaryRow {
                algorithm,
                snr_db: f64::from_bits(snr_bits),
                rank,
                replicates: group.len(),
                converged: group.iter().filter(|r| r.converged).count(),
                rmse: col(|r| r.rmse),
                cc: col(|r| r.cc),
                rsnr_db: col(|r| r.rsnr_db),
                sam: col(|r| r.sam),
                iterations: col(|r| r.iterations as f64),
            }
        })
        .collect()
}

/// Worker count from the environment override, then the config.
pub fn resolve_workers(configured: Option<usize>) -> Result<Option<usize>> {
    match std::env::var(WORKERS_ENV) {
        Ok(raw) => match raw.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(Error::InvalidArgument(format!("{WORKERS_ENV}={raw:?} is not a positive integer"))),
        },
        Err(_) => Ok(configured),
    }
}

struct Fit {
    estimate: DenseTensor3,
    iterations: usize,
    converged: bool,
}

fn fit(algorithm: Algorithm, prob: &FusionProblem, init_seed: u64, solver: &SolverConfig) -> Result<Fit> {
    let init = init_latent(prob.sri_dims(), prob.rank, init_seed)?;
    match algorithm {
        Algorithm::NnNls => {
            let res = solve(prob, &init, solver)?;
            Ok(Fit {
                estimate: reconstruct_sri(&res.model)?,
                iterations: res.iterations(),
                converged: res.converged(),
            })
        }
        Algorithm::Als => {
            let res = solve_als(prob, &square_params(&init), solver.max_iters, solver.rel_f_tol)?;
            Ok(Fit {
                estimate: cpd_reconstruct(&res.model)?,
                iterations: res.sweeps,
                converged: res.converged,
            })
        }
    }
}

/// Seed offset separating initialisation streams from noise streams.
const INIT_STREAM: u64 = 0xD1B5_4A32_D192_ED03;

struct Job {
    snr_db: f64,
    rank: usize,
    replicate: usize,
}

fn run_job(
    cfg: &ExperimentConfig,
    truth: &DenseTensor3,
    ops: &DegradationOperators,
    job: &Job,
) -> Result<Vec<ResultRow>> {
    let seed = cfg.seed.wrapping_add(job.replicate as u64);
    let noise = job.snr_db.is_finite().then_some(job.snr_db);
    let deg = DegradationConfig {
        snr_hsi_db: noise,
        snr_msi_db: noise,
        rng_seed: seed,
        ..cfg.degradation.clone()
    };
    let (y_h, y_m) = observe(truth, ops, &deg)?;
    let prob = FusionProblem::new(y_h, y_m, ops.clone(), job.rank)?;
    let mut rows = Vec::with_capacity(cfg.algorithms.len());
    for &algorithm in &cfg.algorithms {
        let start = Instant::now();
        let outcome = fit(algorithm, &prob, seed ^ INIT_STREAM, &cfg.solver).and_then(|fit| {
            let est = match cfg.smoothing_window {
                Some(w) => spatial_smooth(&fit.estimate, w)?,
                None => fit.estimate,
            };
            Ok((evaluate(&est, truth)?, fit.iterations, fit.converged))
        });
        let elapsed = if cfg.timing { start.elapsed().as_secs_f64() } else { 0.0 };
        let (m, iterations, converged) = outcome.unwrap_or_else(|e| {
            warn!(
                "{algorithm} failed at snr {} rank {} replicate {}: {e}",
                job.snr_db, job.rank, job.replicate
            );
            let nan = MetricsReport {
                rmse: f64::NAN,
                cc: f64::NAN,
                rsnr_db: f64::NAN,
                sam_radians: f64::NAN,
                cc_skipped_bands: 0,
                sam_skipped_fibers: 0,
            };
            (nan, 0, false)
        });
        rows.push(ResultRow {
            algorithm: algorithm.name().to_string(),
            snr_db: job.snr_db,
            rank: job.rank,
            replicate: job.replicate,
            rmse: m.rmse,
            cc: m.cc,
            rsnr_db: m.rsnr_db,
            sam: m.sam_radians,
            iterations,
            wall_time_seconds: elapsed,
            converged,
        });
    }
    Ok(rows)
}

/// Runs every (sweep point, replicate) job and collects rows ordered by
/// sweep point, then replicate, then algorithm in configuration order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    cfg.validate()?;
    let (truth, check_model) = match &cfg.scene {
        SceneSource::Synthetic(spec) => {
            let scene = simulate_scene(spec)?;
            (scene.sri, scene.model)
        }
        SceneSource::File(path) => {
            let sri = read_tensor(path)?;
            let spec = SceneSpec {
                dims: sri.dims(),
                rank: 3,
                seed: cfg.seed,
                spatial_window: None,
            };
            (sri, simulate_scene(&spec)?.model)
        }
    };
    let ops = DegradationOperators::from_config(truth.dims(), &cfg.degradation)?;
    check_coupling_identity(&check_model, &ops)?;

    let jobs: Vec<Job> = cfg
        .points()
        .into_iter()
        .flat_map(|(snr_db, rank)| (0..cfg.replicates).map(move |replicate| Job { snr_db, rank, replicate }))
        .collect();
    info!("running {} jobs on a {:?} scene", jobs.len(), truth.dims());

    let run_all = || -> Result<Vec<Vec<ResultRow>>> {
        jobs.par_iter().map(|job| run_job(cfg, &truth, &ops, job)).collect()
    };
    let nested = match resolve_workers(cfg.workers)? {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("cannot start {n} workers: {e}")))?
            .install(run_all)?,
        None => run_all()?,
    };
    let rows: Vec<ResultRow> = nested.into_iter().flatten().collect();
    let summary = summarize(&rows);
    Ok(ExperimentResult { rows, summary })
}
