use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use nncpd::degradation::{
    band_aggregation_matrix, blur_downsample_matrix, observe, DegradationConfig, DegradationOperators,
};
use nncpd::experiment::{
    run_experiment, simulate_scene, Algorithm, ExperimentConfig, SceneSource, SceneSpec, SweepAxis,
};
use nncpd::io::{emit_results, read_matrix, read_tensor, write_summary, write_tensor};
use nncpd::metrics::{evaluate, spatial_smooth};
use nncpd::solver::{init_latent, reconstruct_sri, solve, square_params, FusionProblem, SolverConfig};
use nncpd::tensor::{cpd_reconstruct, DenseTensor3};
use nncpd::{als, Error, Result};

#[derive(Parser)]
#[command(name = "nncpd", version, about = "Hyperspectral/multispectral fusion by non-negative coupled CPD")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic non-negative low-rank SRI.
    Simulate(SimulateArgs),
    /// Produce HSI and MSI observations from an SRI.
    Degrade(DegradeArgs),
    /// Recover the SRI from an HSI/MSI pair.
    Fuse(FuseArgs),
    /// Compare an estimate against the ground truth.
    Evaluate(EvaluateArgs),
    /// Monte-Carlo sweep over input SNR or fitted rank.
    Sweep(SweepArgs),
}

fn parse_dims(s: &str) -> std::result::Result<[usize; 3], String> {
    let parts: Vec<usize> = s
        .split([',', 'x'])
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    parts
        .try_into()
        .map_err(|_| format!("expected three dims like 24,24,16, got {s:?}"))
}

#[derive(Args)]
struct DegradationArgs {
    /// Gaussian taps (odd).
    #[arg(long, default_value_t = 9)]
    kernel_size: usize,
    #[arg(long, default_value_t = 2.0)]
    sigma: f64,
    /// Spatial downsampling factor.
    #[arg(long, default_value_t = 4)]
    factor: usize,
    #[arg(long, default_value_t = 6)]
    msi_bands: usize,
    /// DM2 file replacing the uniform band-aggregation matrix.
    #[arg(long)]
    pm: Option<PathBuf>,
}

impl DegradationArgs {
    fn config(&self) -> DegradationConfig {
        DegradationConfig {
            kernel_size: self.kernel_size,
            sigma: self.sigma,
            factor: self.factor,
            num_msi_bands: self.msi_bands,
            ..Default::default()
        }
    }

    fn operators(&self, sri_dims: [usize; 3]) -> Result<DegradationOperators> {
        let cfg = self.config();
        cfg.validate()?;
        let pm = match &self.pm {
            Some(path) => read_matrix(path)?,
            None => band_aggregation_matrix(sri_dims[2], cfg.num_msi_bands)?,
        };
        DegradationOperators::new(
            blur_downsample_matrix(sri_dims[0], &cfg)?,
            blur_downsample_matrix(sri_dims[1], &cfg)?,
            pm,
        )
    }
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long, default_value_t = 200)]
    max_iters: usize,
    /// Relative objective decrease below which the solve stops.
    #[arg(long, default_value_t = 1e-8)]
    rel_tol: f64,
    /// Gradient infinity-norm threshold.
    #[arg(long, default_value_t = 1e-6)]
    grad_tol: f64,
    #[arg(long, default_value_t = 25)]
    cg_max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    cg_tol: f64,
    /// Add the squaring-map curvature term to the Gauss-Newton model.
    #[arg(long)]
    squaring_curvature: bool,
}

impl SolverArgs {
    fn config(&self) -> SolverConfig {
        SolverConfig {
            max_iters: self.max_iters,
            rel_f_tol: self.rel_tol,
            grad_tol: self.grad_tol,
            cg_max_iters: self.cg_max_iters,
            cg_rel_tol: self.cg_tol,
            squaring_curvature: self.squaring_curvature,
            ..Default::default()
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// SRI dims as I,J,K.
    #[arg(long, value_parser = parse_dims, default_value = "24,24,16")]
    dims: [usize; 3],
    #[arg(long, default_value_t = 5)]
    rank: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Odd moving-average window giving the spatial factors smooth structure.
    #[arg(long)]
    spatial_window: Option<usize>,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args)]
struct DegradeArgs {
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long)]
    hsi_out: PathBuf,
    #[arg(long)]
    msi_out: PathBuf,
    #[command(flatten)]
    degradation: DegradationArgs,
    /// HSI SNR in dB; omit for a noiseless observation.
    #[arg(long)]
    snr_hsi: Option<f64>,
    #[arg(long)]
    snr_msi: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long)]
    hsi: PathBuf,
    #[arg(long)]
    msi: PathBuf,
    #[arg(long)]
    rank: usize,
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value = "nn-nls")]
    algorithm: Algorithm,
    /// Seed of the random initialisation.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Odd window for spatial smoothing of the estimate.
    #[arg(long)]
    smooth: Option<usize>,
    #[command(flatten)]
    degradation: DegradationArgs,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    estimate: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Report SAM in degrees instead of radians.
    #[arg(long)]
    degrees: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// Master seed; replicate r uses seed + r.
    #[arg(long)]
    seed: u64,
    /// Ground-truth SRI as a DT3 file instead of a synthetic scene.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_parser = parse_dims, default_value = "24,24,16")]
    dims: [usize; 3],
    /// Rank of the synthetic scene.
    #[arg(long, default_value_t = 5)]
    scene_rank: usize,
    /// Seed of the synthetic scene; defaults to the master seed.
    #[arg(long)]
    scene_seed: Option<u64>,
    #[arg(long)]
    spatial_window: Option<usize>,
    /// Input SNR values in dB to sweep ("inf" for noiseless).
    #[arg(long, value_delimiter = ',', conflicts_with = "ranks")]
    snrs: Vec<f64>,
    /// Fitted ranks to sweep.
    #[arg(long, value_delimiter = ',')]
    ranks: Vec<usize>,
    /// Fitted rank for SNR sweeps.
    #[arg(long, default_value_t = 5)]
    rank: usize,
    /// Input SNR in dB for rank sweeps.
    #[arg(long, default_value_t = 5.0)]
    snr: f64,
    #[arg(long, default_value_t = 10)]
    replicates: usize,
    #[arg(long, value_delimiter = ',', default_value = "nn-nls,als")]
    algorithms: Vec<Algorithm>,
    #[arg(long)]
    smooth: Option<usize>,
    /// Record wall-clock time per solve (makes output run-dependent).
    #[arg(long)]
    timing: bool,
    /// Worker threads; NNCPD_WORKERS overrides.
    #[arg(long)]
    workers: Option<usize>,
    #[command(flatten)]
    degradation: DegradationArgs,
    #[command(flatten)]
    solver: SolverArgs,
    /// Per-replicate CSV.
    #[arg(long, short)]
    out: PathBuf,
    /// Per-sweep-point medians CSV.
    #[arg(long)]
    summary: Option<PathBuf>,
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let scene = simulate_scene(&SceneSpec {
        dims: args.dims,
        rank: args.rank,
        seed: args.seed,
        spatial_window: args.spatial_window,
    })?;
    write_tensor(&args.out, &scene.sri)
}

fn degrade_cmd(args: DegradeArgs) -> Result<()> {
    let sri = read_tensor(&args.input)?;
    let ops = args.degradation.operators(sri.dims())?;
    let cfg = DegradationConfig {
        snr_hsi_db: args.snr_hsi,
        snr_msi_db: args.snr_msi,
        rng_seed: args.seed,
        ..args.degradation.config()
    };
    let (hsi, msi) = observe(&sri, &ops, &cfg)?;
    write_tensor(&args.hsi_out, &hsi)?;
    write_tensor(&args.msi_out, &msi)
}

fn fuse(args: FuseArgs) -> Result<()> {
    let y_h = read_tensor(&args.hsi)?;
    let y_m = read_tensor(&args.msi)?;
    let [i, j, _] = y_m.dims();
    let k = y_h.dims()[2];
    let ops = args.degradation.operators([i, j, k])?;
    let prob = FusionProblem::new(y_h, y_m, ops, args.rank)?;
    let init = init_latent([i, j, k], args.rank, args.seed)?;
    let solver = args.solver.config();
    let estimate = match args.algorithm {
        Algorithm::NnNls => {
            let res = solve(&prob, &init, &solver)?;
            info!("nn-nls stopped after {} iterations: {:?}", res.iterations(), res.state.stop_reason);
            reconstruct_sri(&res.model)?
        }
        Algorithm::Als => {
            let res = als::solve_als(&prob, &square_params(&init), solver.max_iters, solver.rel_f_tol)?;
            info!("als stopped after {} sweeps (converged: {})", res.sweeps, res.converged);
            cpd_reconstruct(&res.model)?
        }
    };
    let estimate = match args.smooth {
        Some(w) => spatial_smooth(&estimate, w)?,
        None => estimate,
    };
    write_tensor(&args.out, &estimate)
}

fn evaluate_cmd(args: EvaluateArgs) -> Result<()> {
    let est: DenseTensor3 = read_tensor(&args.estimate)?;
    let truth = read_tensor(&args.truth)?;
    let m = evaluate(&est, &truth)?;
    println!("rmse,{}", m.rmse);
    println!("cc,{}", m.cc);
    println!("rsnr_db,{}", m.rsnr_db);
    if args.degrees {
        println!("sam_degrees,{}", m.sam_degrees());
    } else {
        println!("sam_radians,{}", m.sam_radians);
    }
    if m.cc_skipped_bands > 0 || m.sam_skipped_fibers > 0 {
        eprintln!(
            "skipped {} constant bands and {} zero fibers",
            m.cc_skipped_bands, m.sam_skipped_fibers
        );
    }
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    if args.degradation.pm.is_some() {
        return Err(Error::InvalidArgument("--pm is not supported by sweep".into()));
    }
    let scene = match args.input {
        Some(path) => SceneSource::File(path),
        None => SceneSource::Synthetic(SceneSpec {
            dims: args.dims,
            rank: args.scene_rank,
            seed: args.scene_seed.unwrap_or(args.seed),
            spatial_window: args.spatial_window,
        }),
    };
    let sweep = if !args.ranks.is_empty() {
        SweepAxis::Rank(args.ranks)
    } else if !args.snrs.is_empty() {
        SweepAxis::Snr(args.snrs)
    } else {
        SweepAxis::Snr(vec![args.snr])
    };
    let cfg = ExperimentConfig {
        scene,
        degradation: args.degradation.config(),
        solver: args.solver.config(),
        algorithms: args.algorithms,
        replicates: args.replicates,
        sweep,
        rank: args.rank,
        snr_db: args.snr,
        smoothing_window: args.smooth,
        seed: args.seed,
        timing: args.timing,
        workers: args.workers,
    };
    let result = run_experiment(&cfg)?;
    emit_results(&result.rows, &args.out)?;
    if let Some(path) = &args.summary {
        write_summary(&result.summary, path)?;
    }
    for s in &result.summary {
        eprintln!(
            "{:>6} snr={:>5} rank={:>3}  median rsnr={:.3} dB  sam={:.4}  converged {}/{}",
            s.algorithm, s.snr_db, s.rank, s.rsnr_db, s.sam, s.converged, s.replicates
        );
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Degrade(a) => degrade_cmd(a),
        Command::Fuse(a) => fuse(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Sweep(a) => sweep(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
