//! Unconstrained coupled CPD by alternating least squares, the comparison
//! baseline for the non-negative solver.
//!
//! Each factor update is the exact minimiser of both coupled terms with the
//! other two factors fixed. For `A` the normal equations read
//!
//! ```text
//! (P1ᵀP1) A Γ_H + A Γ_M = P1ᵀ·mttkrp(Y_H, U, 1) + mttkrp(Y_M, V, 1)
//! ```
//!
//! which is solved exactly by diagonalising the symmetric projection Gram
//! `P1ᵀP1`, leaving one `R×R` system per row.

use nalgebra::{Cholesky, SymmetricEigen, LU};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::solver::problem::{model_objective, CoupledFactors, FusionProblem};
use crate::tensor::{gram_hadamard_except, mttkrp, CpdModel, DenseMatrix};

#[derive(Debug, Clone)]
pub struct AlsResult {
    pub model: CpdModel,
    /// Objective before the first sweep followed by one value per sweep.
    pub trace: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
    /// Row systems that needed the ridge fallback.
    pub ridge_fallbacks: usize,
}

/// Random start with i.i.d. standard normal entries.
pub fn init_gaussian(dims: [usize; 3], rank: usize, rng_seed: u64) -> Result<CpdModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut block = |rows: usize| DenseMatrix::from_fn(rows, rank, |_, _| StandardNormal.sample(&mut rng));
    let a = block(dims[0]);
    let b = block(dims[1]);
    let c = block(dims[2]);
    CpdModel::new(a, b, c)
}

/// Solves `S X G1 + X G2 = rhs` for symmetric `S` (n×n) and symmetric
/// `G1`, `G2` (R×R). Returns the solution and the number of ridge fallbacks.
pub fn solve_coupled_normal_equations(
    s: &DenseMatrix,
    g1: &DenseMatrix,
    g2: &DenseMatrix,
    rhs: &DenseMatrix,
) -> Result<(DenseMatrix, usize)> {
    let n = s.nrows();
    let r = g1.nrows();
    if s.ncols() != n || rhs.nrows() != n || rhs.ncols() != r || g2.shape() != (r, r) || g1.ncols() != r {
        return Err(Error::DimensionMismatch("coupled normal equations".into()));
    }
    let eig = SymmetricEigen::new(s.clone());
    let q = &eig.eigenvectors;
    let rotated = q.transpose() * rhs;
    let mut z = DenseMatrix::zeros(n, r);
    let mut fallbacks = 0;
    for i in 0..n {
        let mu = eig.eigenvalues[i].max(0.0);
        let system = g1 * mu + g2;
        let b = rotated.row(i).transpose();
        let sol = match Cholesky::new(system.clone()) {
            Some(ch) => ch.solve(&b),
            None => {
                fallbacks += 1;
                let eps = (1e-10 * system.trace().abs()).max(f64::MIN_POSITIVE);
                let ridged = &system + DenseMatrix::identity(r, r) * eps;
                match Cholesky::new(ridged.clone()) {
                    Some(ch) => ch.solve(&b),
                    None => LU::new(ridged)
                        .solve(&b)
                        .ok_or_else(|| Error::Degenerate("singular ALS normal equations".into()))?,
                }
            }
        };
        z.set_row(i, &sol.transpose());
    }
    Ok((q * z, fallbacks))
}

/// Replaces factor `mode` (1-based) by its exact conditional minimiser.
pub fn update_factor(prob: &FusionProblem, model: &mut CpdModel, mode: usize) -> Result<usize> {
    let cf = CoupledFactors::new(model, &prob.ops);
    let gram_u = cf.u.clone().map(|m| m.transpose() * m);
    let gram_v = cf.v.clone().map(|m| m.transpose() * m);
    let ops = &prob.ops;
    let (sol, fallbacks) = match mode {
        1 => {
            let rhs = ops.p1.transpose() * mttkrp(&prob.y_h, cf.u_refs(), 1)? + mttkrp(&prob.y_m, cf.v_refs(), 1)?;
            solve_coupled_normal_equations(
                &(ops.p1.transpose() * &ops.p1),
                &gram_hadamard_except(&gram_u, &[0]),
                &gram_hadamard_except(&gram_v, &[0]),
                &rhs,
            )?
        }
        2 => {
            let rhs = ops.p2.transpose() * mttkrp(&prob.y_h, cf.u_refs(), 2)? + mttkrp(&prob.y_m, cf.v_refs(), 2)?;
            solve_coupled_normal_equations(
                &(ops.p2.transpose() * &ops.p2),
                &gram_hadamard_except(&gram_u, &[1]),
                &gram_hadamard_except(&gram_v, &[1]),
                &rhs,
            )?
        }
        3 => {
            let rhs = mttkrp(&prob.y_h, cf.u_refs(), 3)? + ops.pm.transpose() * mttkrp(&prob.y_m, cf.v_refs(), 3)?;
            solve_coupled_normal_equations(
                &(ops.pm.transpose() * &ops.pm),
                &gram_hadamard_except(&gram_v, &[2]),
                &gram_hadamard_except(&gram_u, &[2]),
                &rhs,
            )?
        }
        other => return Err(Error::InvalidMode(other)),
    };
    match mode {
        1 => model.a = sol,
        2 => model.b = sol,
        _ => model.c = sol,
    }
    Ok(fallbacks)
}

/// Alternating least squares on the unconstrained coupled objective.
///
/// Stops after `max_iters` sweeps or when a sweep lowers the objective by
/// less than `rel_f_tol` relative to its previous value.
pub fn solve_als(prob: &FusionProblem, init: &CpdModel, max_iters: usize, rel_f_tol: f64) -> Result<AlsResult> {
    if init.dims() != prob.sri_dims() || init.rank() != prob.rank {
        return Err(Error::DimensionMismatch(format!(
            "initial model {:?} rank {} vs problem {:?} rank {}",
            init.dims(),
            init.rank(),
            prob.sri_dims(),
            prob.rank
        )));
    }
    let mut model = init.clone();
    let mut f = model_objective(&model, prob)?;
    if !f.is_finite() {
        return Err(Error::NonFinite("initial ALS objective".into()));
    }
    let mut trace = vec![f];
    let mut ridge_fallbacks = 0;
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < max_iters {
        for mode in 1..=3 {
            ridge_fallbacks += update_factor(prob, &mut model, mode)?;
        }
        sweeps += 1;
        let next = model_objective(&model, prob)?;
        if !next.is_finite() {
            return Err(Error::NonFinite(format!("ALS objective at sweep {sweeps}")));
        }
        trace.push(next);
        let decrease = f - next;
        f = next;
        if f == 0.0 || decrease.abs() < rel_f_tol * trace[trace.len() - 2] {
            converged = true;
            break;
        }
    }
    Ok(AlsResult {
        model,
        trace,
        sweeps,
        converged,
        ridge_fallbacks,
    })
}
