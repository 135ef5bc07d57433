use nalgebra::DVector;

use crate::degradation::DegradationOperators;
use crate::error::{mismatch, Error, Result};
use crate::tensor::{mttkrp, reconstruct_factors, CpdModel, DenseMatrix, DenseTensor3};

use super::latent::{square_params, LatentTriple};

/// Observed HSI/MSI pair together with the known degradation operators.
#[derive(Debug, Clone)]
pub struct FusionProblem {
    pub y_h: DenseTensor3,
    pub y_m: DenseTensor3,
    pub ops: DegradationOperators,
    pub rank: usize,
}

impl FusionProblem {
    pub fn new(y_h: DenseTensor3, y_m: DenseTensor3, ops: DegradationOperators, rank: usize) -> Result<Self> {
        if rank == 0 {
            return Err(Error::InvalidArgument("rank must be ≥ 1".into()));
        }
        if y_h.dims() != ops.hsi_dims() {
            return Err(mismatch(format!(
                "HSI dims {:?} do not match operators {:?}",
                y_h.dims(),
                ops.hsi_dims()
            )));
        }
        if y_m.dims() != ops.msi_dims() {
            return Err(mismatch(format!(
                "MSI dims {:?} do not match operators {:?}",
                y_m.dims(),
                ops.msi_dims()
            )));
        }
        Ok(Self { y_h, y_m, ops, rank })
    }

    pub fn sri_dims(&self) -> [usize; 3] {
        self.ops.sri_dims()
    }

    /// `‖y_h‖² + ‖y_m‖²`, the objective at the zero model.
    pub fn data_squared_norm(&self) -> f64 {
        self.y_h.squared_norm() + self.y_m.squared_norm()
    }

    pub(crate) fn check_dims(&self, dims: [usize; 3], rank: usize) -> Result<()> {
        if dims != self.sri_dims() {
            return Err(mismatch(format!(
                "latent dims {dims:?} do not match SRI dims {:?}",
                self.sri_dims()
            )));
        }
        if rank != self.rank {
            return Err(mismatch(format!(
                "latent rank {rank} differs from problem rank {}",
                self.rank
            )));
        }
        Ok(())
    }
}

/// Factors of both coupled terms at a given model.
#[derive(Debug, Clone)]
pub struct CoupledFactors {
    /// `U = (P1 A, P2 B, C)`.
    pub u: [DenseMatrix; 3],
    /// `V = (A, B, PM C)`.
    pub v: [DenseMatrix; 3],
}

impl CoupledFactors {
    pub fn new(model: &CpdModel, ops: &DegradationOperators) -> Self {
        Self {
            u: [&ops.p1 * &model.a, &ops.p2 * &model.b, model.c.clone()],
            v: [model.a.clone(), model.b.clone(), &ops.pm * &model.c],
        }
    }

    pub fn u_refs(&self) -> [&DenseMatrix; 3] {
        [&self.u[0], &self.u[1], &self.u[2]]
    }

    pub fn v_refs(&self) -> [&DenseMatrix; 3] {
        [&self.v[0], &self.v[1], &self.v[2]]
    }
}

/// `f = f1 + f2` for an arbitrary (not necessarily non-negative) model.
pub fn model_objective(model: &CpdModel, prob: &FusionProblem) -> Result<f64> {
    let cf = CoupledFactors::new(model, &prob.ops);
    let f1 = prob.y_h.sub(&reconstruct_factors(cf.u_refs())?)?.squared_norm();
    let f2 = prob.y_m.sub(&reconstruct_factors(cf.v_refs())?)?.squared_norm();
    Ok(f1 + f2)
}

/// Coupled least-squares objective at the squared latent parameters.
pub fn objective(latent: &LatentTriple, prob: &FusionProblem) -> Result<f64> {
    prob.check_dims(latent.dims(), latent.rank())?;
    model_objective(&square_params(latent), prob)
}

/// `[∇_A f; ∇_B f; ∇_C f]` as three matrices.
pub fn factor_gradient(model: &CpdModel, prob: &FusionProblem) -> Result<[DenseMatrix; 3]> {
    let cf = CoupledFactors::new(model, &prob.ops);
    let gram_u: Vec<DenseMatrix> = cf.u.iter().map(|m| m.transpose() * m).collect();
    let gram_v: Vec<DenseMatrix> = cf.v.iter().map(|m| m.transpose() * m).collect();
    let others = |g: &[DenseMatrix], n: usize| {
        let mut out = DenseMatrix::from_element(prob.rank, prob.rank, 1.0);
        for (m, gm) in g.iter().enumerate() {
            if m != n {
                out.component_mul_assign(gm);
            }
        }
        out
    };
    let mut grads: Vec<DenseMatrix> = Vec::with_capacity(3);
    for n in 0..3 {
        let g_h = &cf.u[n] * others(&gram_u, n) - mttkrp(&prob.y_h, cf.u_refs(), n + 1)?;
        let g_m = &cf.v[n] * others(&gram_v, n) - mttkrp(&prob.y_m, cf.v_refs(), n + 1)?;
        let total = match n {
            0 => prob.ops.p1.transpose() * g_h + g_m,
            1 => prob.ops.p2.transpose() * g_h + g_m,
            _ => g_h + prob.ops.pm.transpose() * g_m,
        };
        // d‖r‖²/du = 2·G
        grads.push(total * 2.0);
    }
    let mut it = grads.into_iter();
    Ok([it.next().unwrap(), it.next().unwrap(), it.next().unwrap()])
}

/// Gradient with respect to `x = [vec(D); vec(E); vec(F)]`.
pub fn gradient(latent: &LatentTriple, prob: &FusionProblem) -> Result<DVector<f64>> {
    prob.check_dims(latent.dims(), latent.rank())?;
    let model = square_params(latent);
    let grads = factor_gradient(&model, prob)?;
    let mut g = Vec::with_capacity(latent.num_params());
    for (x, gu) in latent.blocks().into_iter().zip(&grads) {
        g.extend(x.iter().zip(gu.iter()).map(|(xv, gv)| 2.0 * xv * gv));
    }
    Ok(DVector::from_vec(g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degradation::DegradationConfig;
    use crate::solver::latent::init_latent;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_problem(seed: u64) -> (FusionProblem, LatentTriple) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = [4, 4, 3];
        let ops = DegradationOperators::from_config(
            dims,
            &DegradationConfig { kernel_size: 3, factor: 2, num_msi_bands: 2, ..Default::default() },
        )
        .unwrap();
        let y_h = DenseTensor3::from_fn(ops.hsi_dims(), |_, _, _| rng.random_range(0.0..1.0)).unwrap();
        let y_m = DenseTensor3::from_fn(ops.msi_dims(), |_, _, _| rng.random_range(0.0..1.0)).unwrap();
        let prob = FusionProblem::new(y_h, y_m, ops, 2).unwrap();
        let latent = LatentTriple::new(
            DenseMatrix::from_fn(4, 2, |_, _| rng.random_range(-1.0..1.0)),
            DenseMatrix::from_fn(4, 2, |_, _| rng.random_range(-1.0..1.0)),
            DenseMatrix::from_fn(3, 2, |_, _| rng.random_range(-1.0..1.0)),
        )
        .unwrap();
        (prob, latent)
    }

    #[test]
    fn objective_matches_elementwise_sum() {
        let (prob, latent) = small_problem(1);
        let m = square_params(&latent);
        let ops = &prob.ops;
        // brute force: expand every entry of both model tensors
        let mut brute = 0.0;
        let [ih, jh, k] = prob.y_h.dims();
        for kk in 0..k {
            for j in 0..jh {
                for i in 0..ih {
                    let mut model = 0.0;
                    for r in 0..2 {
                        let pa: f64 = (0..4).map(|p| ops.p1[(i, p)] * m.a[(p, r)]).sum();
                        let pb: f64 = (0..4).map(|p| ops.p2[(j, p)] * m.b[(p, r)]).sum();
                        model += pa * pb * m.c[(kk, r)];
                    }
                    brute += (prob.y_h.get(i, j, kk) - model).powi(2);
                }
            }
        }
        let [im, jm, km] = prob.y_m.dims();
        for q in 0..km {
            for j in 0..jm {
                for i in 0..im {
                    let mut model = 0.0;
                    for r in 0..2 {
                        let pc: f64 = (0..3).map(|p| ops.pm[(q, p)] * m.c[(p, r)]).sum();
                        model += m.a[(i, r)] * m.b[(j, r)] * pc;
                    }
                    brute += (prob.y_m.get(i, j, q) - model).powi(2);
                }
            }
        }
        let f = objective(&latent, &prob).unwrap();
        assert!((f - brute).abs() <= 1e-12 * brute);
    }

    #[test]
    fn zero_latent_objective_is_data_norm() {
        let (prob, _) = small_problem(2);
        let z = LatentTriple::new(DenseMatrix::zeros(4, 2), DenseMatrix::zeros(4, 2), DenseMatrix::zeros(3, 2)).unwrap();
        assert_eq!(objective(&z, &prob).unwrap(), prob.data_squared_norm());
    }

    #[test]
    fn exact_data_gives_zero_objective_and_gradient() {
        let (p, _) = small_problem(3);
        let latent = init_latent([4, 4, 3], 2, 99).unwrap();
        let m = square_params(&latent);
        let cf = CoupledFactors::new(&m, &p.ops);
        let prob = FusionProblem::new(
            reconstruct_factors(cf.u_refs()).unwrap(),
            reconstruct_factors(cf.v_refs()).unwrap(),
            p.ops.clone(),
            2,
        )
        .unwrap();
        assert!(objective(&latent, &prob).unwrap() < 1e-28);
        let g = gradient(&latent, &prob).unwrap();
        assert!(g.amax() <= 1e-10 * prob.data_squared_norm().sqrt());
    }

    #[test]
    fn gradient_vanishes_at_zero_latent_entries() {
        let (prob, mut latent) = small_problem(4);
        latent.d[(1, 0)] = 0.0;
        latent.f[(2, 1)] = 0.0;
        let g = gradient(&latent, &prob).unwrap();
        assert_eq!(g[1], 0.0);
        assert_eq!(g[8 + 8 + 3 + 2], 0.0);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let (prob, latent) = small_problem(5);
        let g = gradient(&latent, &prob).unwrap();
        let x = latent.to_vector();
        let fd = DVector::from_fn(x.len(), |idx, _| {
            let h = 1e-5 * (1.0 + x[idx].abs());
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let fp = objective(&LatentTriple::from_vector([4, 4, 3], 2, &xp).unwrap(), &prob).unwrap();
            let fm = objective(&LatentTriple::from_vector([4, 4, 3], 2, &xm).unwrap(), &prob).unwrap();
            (fp - fm) / (2.0 * h)
        });
        assert!((&g - &fd).norm() <= 1e-6 * fd.norm());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let (prob, _) = small_problem(6);
        let wrong = init_latent([4, 4, 4], 2, 1).unwrap();
        assert!(objective(&wrong, &prob).is_err());
        let wrong_rank = init_latent([4, 4, 3], 3, 1).unwrap();
        assert!(gradient(&wrong_rank, &prob).is_err());
        let bad = FusionProblem::new(prob.y_m.clone(), prob.y_h.clone(), prob.ops.clone(), 2);
        assert!(bad.is_err());
    }
}
