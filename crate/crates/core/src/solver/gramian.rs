//! Matrix-free Gauss-Newton Gramian of the coupled residuals with respect to
//! the latent parameters, and its block-Jacobi preconditioner.
//!
//! With `K`, `M` the Jacobians of the HSI/MSI residuals with respect to the
//! factors `u` and `λ = diag(2x)` the Jacobian of the squaring map, the
//! operator applies `λ (KᵀK + MᵀM) λ` block by block using only `R×R` Gram
//! matrices and the projected factors.

use nalgebra::{Cholesky, DVector, Dyn};

use crate::error::{mismatch, Result};
use crate::tensor::DenseMatrix;

use super::latent::{square_params, LatentTriple};
use super::problem::{CoupledFactors, FusionProblem};

/// One coupled CPD term `[[Q1 X1, Q2 X2, Q3 X3]]`; `None` is the identity.
#[derive(Debug, Clone)]
struct CoupledTerm {
    proj: [Option<DenseMatrix>; 3],
    factors: [DenseMatrix; 3],
    grams: [DenseMatrix; 3],
}

impl CoupledTerm {
    fn new(proj: [Option<DenseMatrix>; 3], factors: [DenseMatrix; 3]) -> Self {
        let grams = [
            factors[0].transpose() * &factors[0],
            factors[1].transpose() * &factors[1],
            factors[2].transpose() * &factors[2],
        ];
        Self { proj, factors, grams }
    }

    fn gram_product_except(&self, skip: &[usize]) -> DenseMatrix {
        let r = self.grams[0].ncols();
        let mut out = DenseMatrix::from_element(r, r, 1.0);
        for (n, g) in self.grams.iter().enumerate() {
            if !skip.contains(&n) {
                out.component_mul_assign(g);
            }
        }
        out
    }

    /// Adds `Jᵀ J t` for this term into `out`, where `t` are factor-space
    /// perturbations.
    fn accumulate(&self, t: &[DenseMatrix; 3], out: &mut [DenseMatrix; 3]) {
        let s: Vec<DenseMatrix> = (0..3)
            .map(|n| match &self.proj[n] {
                Some(q) => q * &t[n],
                None => t[n].clone(),
            })
            .collect();
        let cross: Vec<DenseMatrix> = (0..3)
            .map(|n| s[n].transpose() * &self.factors[n])
            .collect();
        for m in 0..3 {
            let mut block = &s[m] * self.gram_product_except(&[m]);
            let r = self.grams[0].ncols();
            let mut mixed = DenseMatrix::zeros(r, r);
            for n in (0..3).filter(|&n| n != m) {
                mixed += cross[n].component_mul(&self.gram_product_except(&[m, n]));
            }
            block += &self.factors[m] * mixed;
            match &self.proj[m] {
                Some(q) => out[m] += q.transpose() * block,
                None => out[m] += block,
            }
        }
    }
}

/// Cached per-iteration quantities for Gramian-vector products.
#[derive(Debug, Clone)]
pub struct GramianOperator {
    dims: [usize; 3],
    rank: usize,
    /// `λ = 2x`, the Jacobian of the entrywise squaring map.
    lambda: DVector<f64>,
    hsi: CoupledTerm,
    msi: CoupledTerm,
}

impl GramianOperator {
    pub fn new(latent: &LatentTriple, prob: &FusionProblem) -> Result<Self> {
        prob.check_dims(latent.dims(), latent.rank())?;
        let model = square_params(latent);
        let CoupledFactors { u, v } = CoupledFactors::new(&model, &prob.ops);
        let ops = &prob.ops;
        Ok(Self {
            dims: latent.dims(),
            rank: latent.rank(),
            lambda: latent.to_vector() * 2.0,
            hsi: CoupledTerm::new([Some(ops.p1.clone()), Some(ops.p2.clone()), None], u),
            msi: CoupledTerm::new([None, None, Some(ops.pm.clone())], v),
        })
    }

    pub fn len(&self) -> usize {
        self.dims.iter().sum::<usize>() * self.rank
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lambda(&self) -> &DVector<f64> {
        &self.lambda
    }

    fn split(&self, v: &DVector<f64>) -> [DenseMatrix; 3] {
        let s = v.as_slice();
        let [ni, nj, nk] = self.dims;
        let r = self.rank;
        [
            DenseMatrix::from_column_slice(ni, r, &s[..ni * r]),
            DenseMatrix::from_column_slice(nj, r, &s[ni * r..(ni + nj) * r]),
            DenseMatrix::from_column_slice(nk, r, &s[(ni + nj) * r..]),
        ]
    }

    /// Per-factor Hadamard products of the other two Gram matrices, summed
    /// over both coupled terms.
    fn diagonal_grams(&self) -> [DenseMatrix; 3] {
        [0, 1, 2].map(|n| self.hsi.gram_product_except(&[n]) + self.msi.gram_product_except(&[n]))
    }
}

/// `λ (KᵀK + MᵀM) λ z` without forming the Gramian.
pub fn gramian_vector_product(opr: &GramianOperator, z: &DVector<f64>) -> Result<DVector<f64>> {
    if z.len() != opr.len() {
        return Err(mismatch(format!(
            "vector has length {}, Gramian is {}x{}",
            z.len(),
            opr.len(),
            opr.len()
        )));
    }
    let t = opr.split(&z.component_mul(&opr.lambda));
    let mut out = [
        DenseMatrix::zeros(opr.dims[0], opr.rank),
        DenseMatrix::zeros(opr.dims[1], opr.rank),
        DenseMatrix::zeros(opr.dims[2], opr.rank),
    ];
    opr.hsi.accumulate(&t, &mut out);
    opr.msi.accumulate(&t, &mut out);
    let mut y = Vec::with_capacity(opr.len());
    for m in &out {
        y.extend_from_slice(m.as_slice());
    }
    Ok(DVector::from_vec(y).component_mul(&opr.lambda))
}

/// Block-diagonal approximation of the Gramian, applied through its inverse.
///
/// Block `n` is modelled as `S_n^{1/2} (Γ_n + εI) S_n^{1/2}` acting on the
/// rows of the factor-shaped block, with `S_n = max(λ², ε_λ)` entrywise and
/// `Γ_n` the summed Hadamard Gram products of the two coupled terms.
#[derive(Debug, Clone)]
pub struct BlockJacobi {
    dims: [usize; 3],
    rank: usize,
    inv_sqrt_scale: DVector<f64>,
    factors: Vec<Cholesky<f64, Dyn>>,
}

impl BlockJacobi {
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let scaled = v.component_mul(&self.inv_sqrt_scale);
        let s = scaled.as_slice();
        let mut out = Vec::with_capacity(v.len());
        let mut offset = 0;
        for (n, chol) in self.factors.iter().enumerate() {
            let rows = self.dims[n];
            let block = DenseMatrix::from_column_slice(rows, self.rank, &s[offset..offset + rows * self.rank]);
            // W Γ⁻¹ = (Γ⁻¹ Wᵀ)ᵀ for symmetric Γ
            let solved = chol.solve(&block.transpose()).transpose();
            out.extend_from_slice(solved.as_slice());
            offset += rows * self.rank;
        }
        DVector::from_vec(out).component_mul(&self.inv_sqrt_scale)
    }
}

pub fn block_jacobi_preconditioner(opr: &GramianOperator) -> BlockJacobi {
    let lambda_sq = opr.lambda.map(|v| v * v);
    let mean = if lambda_sq.is_empty() { 0.0 } else { lambda_sq.mean() };
    let floor = (1e-8 * mean).max(f64::MIN_POSITIVE);
    let inv_sqrt_scale = lambda_sq.map(|v| 1.0 / v.max(floor).sqrt());
    let factors = opr
        .diagonal_grams()
        .into_iter()
        .map(|g| {
            let r = g.nrows();
            let eps = (1e-12 * g.trace()).max(f64::MIN_POSITIVE);
            let mut reg = g + DenseMatrix::identity(r, r) * eps;
            loop {
                match Cholesky::new(reg.clone()) {
                    Some(c) => break c,
                    // Γ is PSD in exact arithmetic; bump the ridge if rounding says otherwise.
                    None => {
                        let bump = reg.diagonal().amax().max(1.0) * 1e-10;
                        reg += DenseMatrix::identity(r, r) * bump;
                    }
                }
            }
        })
        .collect();
    BlockJacobi {
        dims: opr.dims,
        rank: opr.rank,
        inv_sqrt_scale,
        factors,
    }
}
