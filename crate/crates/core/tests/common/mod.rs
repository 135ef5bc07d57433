//! Brute-force oracles shared by the integration tests. Nothing here calls
//! into the library's own tensor kernels.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use nncpd::degradation::{DegradationConfig, DegradationOperators};
use nncpd::solver::{FusionProblem, LatentTriple};
use nncpd::tensor::DenseTensor3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn small_operators(dims: [usize; 3]) -> DegradationOperators {
    let cfg = DegradationConfig {
        kernel_size: 3,
        factor: 2,
        num_msi_bands: dims[2].min(2),
        ..Default::default()
    };
    DegradationOperators::from_config(dims, &cfg).unwrap()
}

/// Entries of `Σ_r a(:,r)∘b(:,r)∘c(:,r)` in column-major order.
pub fn brute_cpd(a: &DMatrix<f64>, b: &DMatrix<f64>, c: &DMatrix<f64>) -> Vec<f64> {
    let (i_n, j_n, k_n) = (a.nrows(), b.nrows(), c.nrows());
    let mut out = vec![0.0; i_n * j_n * k_n];
    for k in 0..k_n {
        for j in 0..j_n {
            for i in 0..i_n {
                let mut s = 0.0;
                for r in 0..a.ncols() {
                    s += a[(i, r)] * b[(j, r)] * c[(k, r)];
                }
                out[i + i_n * (j + j_n * k)] = s;
            }
        }
    }
    out
}

fn squared(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.map(|v| v * v)
}

/// Stacked model predictions `[vec(Ŷ_H); vec(Ŷ_M)]` at latent vector `x`.
pub fn brute_predictions(x: &DVector<f64>, dims: [usize; 3], rank: usize, ops: &DegradationOperators) -> Vec<f64> {
    let [i, j, k] = dims;
    let block = |off: usize, rows: usize| squared(&DMatrix::from_column_slice(rows, rank, &x.as_slice()[off..off + rows * rank]));
    let a = block(0, i);
    let b = block(i * rank, j);
    let c = block((i + j) * rank, k);
    let mut out = brute_cpd(&(&ops.p1 * &a), &(&ops.p2 * &b), &c);
    out.extend(brute_cpd(&a, &b, &(&ops.pm * &c)));
    out
}

pub fn brute_objective(x: &DVector<f64>, prob: &FusionProblem) -> f64 {
    let pred = brute_predictions(x, prob.sri_dims(), prob.rank, &prob.ops);
    let data = prob.y_h.data().iter().chain(prob.y_m.data());
    pred.iter().zip(data).map(|(p, y)| (y - p) * (y - p)).sum()
}

/// Central-difference gradient of [`brute_objective`].
pub fn fd_gradient(x: &DVector<f64>, prob: &FusionProblem) -> DVector<f64> {
    DVector::from_fn(x.len(), |n, _| {
        let h = 1e-5 * x[n].abs().max(1.0);
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[n] += h;
        xm[n] -= h;
        (brute_objective(&xp, prob) - brute_objective(&xm, prob)) / (2.0 * h)
    })
}

/// Dense Jacobian of [`brute_predictions`] by central differences. Each
/// prediction is quadratic in any single coordinate, so the difference is
/// exact up to rounding.
pub fn fd_jacobian(x: &DVector<f64>, dims: [usize; 3], rank: usize, ops: &DegradationOperators) -> DMatrix<f64> {
    let m = brute_predictions(x, dims, rank, ops).len();
    let mut jac = DMatrix::zeros(m, x.len());
    for n in 0..x.len() {
        let h = 1e-3;
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[n] += h;
        xm[n] -= h;
        let fp = brute_predictions(&xp, dims, rank, ops);
        let fm = brute_predictions(&xm, dims, rank, ops);
        for row in 0..m {
            jac[(row, n)] = (fp[row] - fm[row]) / (2.0 * h);
        }
    }
    jac
}

/// Non-negative random observations with a signed random latent point.
pub fn random_problem(seed: u64, dims: [usize; 3], rank: usize) -> (FusionProblem, LatentTriple) {
    let ops = small_operators(dims);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y_h = DenseTensor3::from_fn(ops.hsi_dims(), |_, _, _| rng.random_range(0.0..1.0)).unwrap();
    let y_m = DenseTensor3::from_fn(ops.msi_dims(), |_, _, _| rng.random_range(0.0..1.0)).unwrap();
    let mut block = |rows: usize| DMatrix::from_fn(rows, rank, |_, _| rng.random_range(-1.0..1.0));
    let latent = LatentTriple::new(block(dims[0]), block(dims[1]), block(dims[2])).unwrap();
    (FusionProblem::new(y_h, y_m, ops, rank).unwrap(), latent)
}

pub fn rel_err(got: &DVector<f64>, want: &DVector<f64>) -> f64 {
    let scale = want.norm();
    let diff = (got - want).norm();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}
