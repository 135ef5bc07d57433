//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints exactly one PASS/FAIL line; the process exits nonzero if any hard
//! criterion fails.

mod common;

use std::process::{Command, ExitCode, Stdio};
use std::time::{Duration, Instant};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{brute_cpd, fd_gradient, fd_jacobian, random_problem, rel_err};
use nncpd::degradation::{add_noise, degrade, DegradationConfig, DegradationOperators};
use nncpd::experiment::{run_experiment, Algorithm, ExperimentConfig, SceneSource, SceneSpec, SweepAxis};
use nncpd::metrics::{cross_correlation, evaluate, rsnr};
use nncpd::solver::{
    gradient, gramian_vector_product, init_latent, objective, solve, GramianOperator, SolveResult, SolverConfig,
};
use nncpd::solver::FusionProblem;
use nncpd::tensor::{cpd_reconstruct, CpdModel, DenseMatrix, DenseTensor3};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Solver runs collected from criteria 3, 8 and 9 for the invariant checks.
#[derive(Default)]
struct SolverLog {
    runs: Vec<(f64, SolveResult)>,
}

fn random_dims(rng: &mut ChaCha8Rng) -> ([usize; 3], usize) {
    let dims = [rng.random_range(3..=6), rng.random_range(3..=5), rng.random_range(2..=4)];
    (dims, rng.random_range(1..=3))
}

fn gradient_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for case in 0..25 {
        let (dims, rank) = random_dims(&mut rng);
        let (prob, latent) = random_problem(case, dims, rank);
        let x = latent.to_vector();
        let err = rel_err(&gradient(&latent, &prob).unwrap(), &fd_gradient(&x, &prob));
        worst = worst.max(err);
    }
    outcome(worst <= 1e-6, format!("25 instances, worst relative error {worst:.2e} (tol 1e-6)"))
}

fn gramian_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    let mut worst_asym = 0.0f64;
    let mut min_quad = f64::INFINITY;
    for case in 0..20 {
        let dims = [rng.random_range(3..=4), rng.random_range(3..=4), rng.random_range(2..=3)];
        let rank = rng.random_range(1..=2);
        let (prob, latent) = random_problem(1000 + case, dims, rank);
        let x = latent.to_vector();
        let jac = fd_jacobian(&x, dims, rank, &prob.ops);
        let dense = jac.transpose() * &jac;
        let opr = GramianOperator::new(&latent, &prob).unwrap();
        let n = x.len();
        let z = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let w = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let gz = gramian_vector_product(&opr, &z).unwrap();
        let gw = gramian_vector_product(&opr, &w).unwrap();
        worst = worst.max(rel_err(&gz, &(&dense * &z)));
        let scale = gz.norm() * w.norm() + gw.norm() * z.norm();
        worst_asym = worst_asym.max((w.dot(&gz) - z.dot(&gw)).abs() / scale);
        min_quad = min_quad.min(z.dot(&gz) / (z.norm_squared() * dense.norm()));
    }
    outcome(
        worst <= 1e-8 && worst_asym <= 1e-12 && min_quad >= -1e-12,
        format!(
            "worst relative error {worst:.2e} (tol 1e-8), asymmetry {worst_asym:.1e}, min zᵀGz/‖z‖²‖G‖ {min_quad:.2e}"
        ),
    )
}

fn exact_recovery(log: &mut SolverLog) -> Outcome {
    let spec = SceneSpec { dims: [12, 12, 8], rank: 3, seed: 42, spatial_window: None };
    let scene = nncpd::experiment::simulate_scene(&spec).unwrap();
    let cfg = DegradationConfig { kernel_size: 3, factor: 2, num_msi_bands: 4, ..Default::default() };
    let ops = DegradationOperators::from_config(spec.dims, &cfg).unwrap();
    let (y_h, y_m) = degrade(&scene.sri, &ops).unwrap();
    let prob = FusionProblem::new(y_h, y_m, ops, 3).unwrap();
    let data_norm = prob.data_squared_norm().sqrt();
    let solver = SolverConfig::default();
    let mut hits = 0;
    let mut residuals = Vec::new();
    for seed in 0..10 {
        let init = init_latent(spec.dims, 3, seed).unwrap();
        let f0 = objective(&init, &prob).unwrap();
        let res = solve(&prob, &init, &solver).unwrap();
        let rel = res.state.f_value.sqrt() / data_norm;
        if rel <= 1e-6 && res.iterations() <= 200 {
            hits += 1;
        }
        residuals.push(format!("{rel:.1e}"));
        log.runs.push((f0, res));
    }
    outcome(hits >= 8, format!("{hits}/10 inits reached relative residual ≤ 1e-6 [{}]", residuals.join(" ")))
}

fn nonnegativity(log: &SolverLog) -> Outcome {
    let bad = log
        .runs
        .iter()
        .filter(|(_, r)| !r.model.factors().iter().all(|m| m.iter().all(|&v| v >= 0.0)))
        .count();
    outcome(bad == 0, format!("{} solver runs, {bad} with a negative factor entry", log.runs.len()))
}

fn monotone_descent(log: &SolverLog) -> Outcome {
    let mut violations = 0;
    let mut accepted = 0;
    for (f0, run) in &log.runs {
        let mut prev = *f0;
        for rec in &run.trace {
            if rec.accepted {
                accepted += 1;
                if rec.f > prev * (1.0 + 1e-12) {
                    violations += 1;
                }
            }
            prev = rec.f;
        }
    }
    outcome(
        violations == 0,
        format!("{accepted} accepted steps over {} runs, {violations} increases", log.runs.len()),
    )
}

fn coupling_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let dims = [rng.random_range(9..=16), rng.random_range(9..=16), rng.random_range(3..=12)];
        let rank = rng.random_range(1..=6);
        let cfg = DegradationConfig {
            kernel_size: [3, 5, 9][rng.random_range(0..3)],
            factor: rng.random_range(1..=4),
            num_msi_bands: rng.random_range(1..=dims[2]),
            ..Default::default()
        };
        let ops = DegradationOperators::from_config(dims, &cfg).unwrap();
        let mut block = |rows: usize| DenseMatrix::from_fn(rows, rank, |_, _| rng.random_range(0.0..1.0));
        let model = CpdModel::new(block(dims[0]), block(dims[1]), block(dims[2])).unwrap();
        let (hsi, msi) = degrade(&cpd_reconstruct(&model).unwrap(), &ops).unwrap();
        let hsi_direct = brute_cpd(&(&ops.p1 * &model.a), &(&ops.p2 * &model.b), &model.c);
        let msi_direct = brute_cpd(&model.a, &model.b, &(&ops.pm * &model.c));
        for (got, want) in [(hsi.data(), &hsi_direct), (msi.data(), &msi_direct)] {
            let got = DVector::from_column_slice(got);
            let want = DVector::from_column_slice(want);
            worst = worst.max(rel_err(&got, &want));
        }
    }
    outcome(worst <= 1e-12, format!("20 random models, worst relative deviation {worst:.2e} (tol 1e-12)"))
}

fn metric_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let truth = DenseTensor3::from_fn([9, 8, 7], |_, _, _| rng.random_range(0.1..1.0)).unwrap();
    let m = evaluate(&truth, &truth).unwrap();
    let identity_ok = m.rmse == 0.0 && (m.cc - 1.0).abs() <= 1e-12 && m.rsnr_db == f64::INFINITY && m.sam_radians == 0.0;

    let mut worst_snr = 0.0f64;
    for s in [0.0, 5.0, 10.0] {
        let noisy = add_noise(&truth, s, 17).unwrap();
        worst_snr = worst_snr.max((rsnr(&noisy, &truth).unwrap() - s).abs());
    }

    let [i, j, k] = truth.dims();
    let gains: Vec<(f64, f64)> = (0..k).map(|_| (rng.random_range(0.5..3.0), rng.random_range(-2.0..2.0))).collect();
    let base = add_noise(&truth, 10.0, 5).unwrap();
    let affine = DenseTensor3::from_fn([i, j, k], |a, b, c| gains[c].0 * base.get(a, b, c) + gains[c].1).unwrap();
    let cc_gap = (cross_correlation(&affine, &truth).unwrap() - cross_correlation(&base, &truth).unwrap()).abs();

    outcome(
        identity_ok && worst_snr <= 1e-9 && cc_gap <= 1e-12,
        format!(
            "metrics(t,t)=({}, {}, {}, {}), rsnr calibration error {worst_snr:.1e} dB, CC affine gap {cc_gap:.1e}",
            m.rmse, m.cc, m.rsnr_db, m.sam_radians
        ),
    )
}

fn trend_config(sweep: SweepAxis, algorithms: Vec<Algorithm>) -> ExperimentConfig {
    ExperimentConfig {
        scene: SceneSource::Synthetic(SceneSpec { dims: [24, 24, 16], rank: 5, seed: 1, spatial_window: None }),
        degradation: DegradationConfig::default(),
        solver: SolverConfig::default(),
        algorithms,
        replicates: 10,
        sweep,
        rank: 5,
        snr_db: 5.0,
        smoothing_window: None,
        seed: 100,
        timing: false,
        workers: None,
    }
}

fn noisy_solver_runs(log: &mut SolverLog) {
    let cfg = trend_config(SweepAxis::Snr(vec![5.0]), vec![Algorithm::NnNls]);
    let SceneSource::Synthetic(spec) = &cfg.scene else { unreachable!() };
    let scene = nncpd::experiment::simulate_scene(spec).unwrap();
    let ops = DegradationOperators::from_config(spec.dims, &cfg.degradation).unwrap();
    let (h, m) = degrade(&scene.sri, &ops).unwrap();
    for rep in 0..3u64 {
        let y_h = add_noise(&h, 5.0, rep).unwrap();
        let y_m = add_noise(&m, 5.0, rep + 50).unwrap();
        for rank in [5, 20] {
            let prob = FusionProblem::new(y_h.clone(), y_m.clone(), ops.clone(), rank).unwrap();
            let init = init_latent(spec.dims, rank, rep).unwrap();
            let f0 = objective(&init, &prob).unwrap();
            log.runs.push((f0, solve(&prob, &init, &cfg.solver).unwrap()));
        }
    }
}

fn noisy_trend() -> Outcome {
    let cfg = trend_config(SweepAxis::Snr(vec![5.0]), vec![Algorithm::NnNls, Algorithm::Als]);
    let res = run_experiment(&cfg).unwrap();
    let median = |alg: &str| res.summary.iter().find(|s| s.algorithm == alg).unwrap().rsnr_db;
    let (nls, als) = (median("nn-nls"), median("als"));
    outcome(nls >= als, format!("median R-SNR nn-nls {nls:.3} dB vs als {als:.3} dB over 10 replicates"))
}

fn rank_robustness() -> Outcome {
    let cfg = trend_config(SweepAxis::Rank(vec![5, 10, 20]), vec![Algorithm::NnNls]);
    let res = run_experiment(&cfg).unwrap();
    let medians: Vec<f64> = res.summary.iter().map(|s| s.rsnr_db).collect();
    let hi = medians.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = medians.iter().copied().fold(f64::INFINITY, f64::min);
    outcome(
        hi - lo < 6.0 && lo > 0.0,
        format!("median R-SNR at R=5,10,20: {:.3?} dB, spread {:.3} dB", medians, hi - lo),
    )
}

fn sweep_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| -> Vec<u8> {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_nncpd"))
            .args(["sweep", "--seed", "9", "--dims", "12,12,8", "--scene-rank", "3", "--rank", "3"])
            .args(["--snrs", "5,10", "--replicates", "3", "--kernel-size", "3", "--factor", "2"])
            .args(["--msi-bands", "4", "--max-iters", "40", "--out"])
            .arg(&out)
            .stderr(Stdio::null())
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read(&out).unwrap()
    };
    let first = run("a.csv");
    let second = run("b.csv");
    let lines = first.iter().filter(|&&b| b == b'\n').count();
    outcome(
        first == second && lines == 1 + 2 * 3 * 2,
        format!("two sweeps, {} bytes / {lines} lines each, identical: {}", first.len(), first == second),
    )
}

fn main() -> ExitCode {
    let mut log = SolverLog::default();
    let mut failed = 0;
    let mut report = |id: u32, title: &str, budget: Duration, soft: bool, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = f();
        let took = start.elapsed();
        let pass = o.pass && took <= budget;
        let verdict = match (pass, soft) {
            (true, _) => "PASS",
            (false, true) => "FAIL (soft)",
            (false, false) => "FAIL",
        };
        if !pass && !soft {
            failed += 1;
        }
        println!(
            "criterion {id:>2} {verdict:<11} {title}: {} [{:.2}s, budget {}s]",
            o.detail,
            took.as_secs_f64(),
            budget.as_secs()
        );
    };
    let secs = Duration::from_secs;

    report(1, "gradient oracle", secs(10), false, &mut gradient_oracle);
    report(2, "gramian oracle", secs(30), false, &mut gramian_oracle);
    report(3, "exact recovery", secs(60), false, &mut || exact_recovery(&mut log));
    noisy_solver_runs(&mut log);
    report(4, "non-negativity", secs(1), false, &mut || nonnegativity(&log));
    report(5, "monotone descent", secs(1), false, &mut || monotone_descent(&log));
    report(6, "coupling identity", secs(10), false, &mut coupling_identity);
    report(7, "metric unit suite", secs(10), false, &mut metric_suite);
    report(8, "noisy trend vs ALS", secs(300), true, &mut noisy_trend);
    report(9, "rank robustness", secs(300), true, &mut rank_robustness);
    report(10, "sweep determinism", secs(60), false, &mut sweep_determinism);

    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
