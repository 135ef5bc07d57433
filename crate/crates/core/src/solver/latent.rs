use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{mismatch, Error, Result};
use crate::tensor::{cpd_reconstruct, CpdModel, DenseMatrix, DenseTensor3};

/// Unconstrained latent matrices `(D, E, F)`; the CPD factors are their
/// entrywise squares.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTriple {
    pub d: DenseMatrix,
    pub e: DenseMatrix,
    pub f: DenseMatrix,
}

impl LatentTriple {
    pub fn new(d: DenseMatrix, e: DenseMatrix, f: DenseMatrix) -> Result<Self> {
        let r = d.ncols();
        if e.ncols() != r || f.ncols() != r {
            return Err(mismatch(format!(
                "latent column counts {}, {}, {} differ",
                d.ncols(),
                e.ncols(),
                f.ncols()
            )));
        }
        if r == 0 {
            return Err(Error::InvalidArgument("latent rank must be ≥ 1".into()));
        }
        Ok(Self { d, e, f })
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.d.ncols()
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.d.nrows(), self.e.nrows(), self.f.nrows()]
    }

    pub fn blocks(&self) -> [&DenseMatrix; 3] {
        [&self.d, &self.e, &self.f]
    }

    pub fn num_params(&self) -> usize {
        self.dims().iter().sum::<usize>() * self.rank()
    }

    /// `x = [vec(D); vec(E); vec(F)]`.
    pub fn to_vector(&self) -> DVector<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        for m in self.blocks() {
            v.extend_from_slice(m.as_slice());
        }
        DVector::from_vec(v)
    }

    pub fn from_vector(dims: [usize; 3], rank: usize, x: &DVector<f64>) -> Result<Self> {
        let n: usize = dims.iter().sum::<usize>() * rank;
        if x.len() != n {
            return Err(mismatch(format!(
                "latent vector has length {}, expected {n}",
                x.len()
            )));
        }
        let s = x.as_slice();
        let (i, j) = (dims[0] * rank, dims[1] * rank);
        Self::new(
            DenseMatrix::from_column_slice(dims[0], rank, &s[..i]),
            DenseMatrix::from_column_slice(dims[1], rank, &s[i..i + j]),
            DenseMatrix::from_column_slice(dims[2], rank, &s[i + j..]),
        )
    }

    /// Square roots of a non-negative model, the canonical latent preimage.
    pub fn from_model(model: &CpdModel) -> Result<Self> {
        if !model.is_nonnegative() {
            return Err(Error::InvalidArgument(
                "cannot take latent square roots of a model with negative entries".into(),
            ));
        }
        Self::new(
            model.a.map(f64::sqrt),
            model.b.map(f64::sqrt),
            model.c.map(f64::sqrt),
        )
    }
}

/// `A = D*D`, `B = E*E`, `C = F*F` (Hadamard squares).
pub fn square_params(latent: &LatentTriple) -> CpdModel {
    CpdModel {
        a: latent.d.map(|v| v * v),
        b: latent.e.map(|v| v * v),
        c: latent.f.map(|v| v * v),
    }
}

/// Random latent start with entries i.i.d. uniform on `[0.1, 1.0]`.
pub fn init_latent(dims: [usize; 3], rank: usize, rng_seed: u64) -> Result<LatentTriple> {
    if rank == 0 {
        return Err(Error::InvalidArgument("rank must be ≥ 1".into()));
    }
    if dims.contains(&0) {
        return Err(Error::InvalidArgument(format!("dims must be positive, got {dims:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut block = |rows: usize| DenseMatrix::from_fn(rows, rank, |_, _| rng.random_range(0.1..=1.0));
    let d = block(dims[0]);
    let e = block(dims[1]);
    let f = block(dims[2]);
    LatentTriple::new(d, e, f)
}

pub fn reconstruct_sri(model: &CpdModel) -> Result<DenseTensor3> {
    cpd_reconstruct(model)
}
