//! Dense third-order tensors and the multilinear kernels used by the
//! coupled CPD solvers.
//!
//! Storage is column-major with mode 1 fastest: element `(i, j, k)` lives at
//! `i + I*j + I*J*k`. The mode-n unfoldings follow the convention
//!
//! ```text
//! Y(1) = A (C ⊙ B)ᵀ,   Y(2) = B (C ⊙ A)ᵀ,   Y(3) = C (B ⊙ A)ᵀ
//! ```
//!
//! so that `Y(1)` shares its memory layout with the tensor itself.

use nalgebra::DMatrix;

use crate::error::{mismatch, Error, Result};

/// Column-major dense matrix.
pub type DenseMatrix = DMatrix<f64>;

/// Dense real tensor of order three.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor3 {
    dims: [usize; 3],
    data: Vec<f64>,
}

impl DenseTensor3 {
    pub fn new(dims: [usize; 3], data: Vec<f64>) -> Result<Self> {
        check_dims(dims)?;
        let len = dims[0] * dims[1] * dims[2];
        if data.len() != len {
            return Err(mismatch(format!(
                "tensor {}x{}x{} needs {} values, got {}",
                dims[0],
                dims[1],
                dims[2],
                len,
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 3]) -> Result<Self> {
        check_dims(dims)?;
        Ok(Self {
            dims,
            data: vec![0.0; dims[0] * dims[1] * dims[2]],
        })
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        check_dims(dims)?;
        let [ni, nj, nk] = dims;
        let mut data = Vec::with_capacity(ni * nj * nk);
        for k in 0..nk {
            for j in 0..nj {
                for i in 0..ni {
                    data.push(f(i, j, k));
                }
            }
        }
        Ok(Self { dims, data })
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.index(i, j, k)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, k: usize, value: f64) {
        let idx = self.index(i, j, k);
        self.data[idx] = value;
    }

    /// Frontal slice `t(:, :, k)` as an `I x J` matrix.
    pub fn frontal_slice(&self, k: usize) -> DenseMatrix {
        let n = self.dims[0] * self.dims[1];
        DenseMatrix::from_column_slice(self.dims[0], self.dims[1], &self.data[k * n..(k + 1) * n])
    }

    pub fn sub(&self, other: &DenseTensor3) -> Result<DenseTensor3> {
        self.check_same_dims(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(DenseTensor3 { dims: self.dims, data })
    }

    pub fn scaled(&self, s: f64) -> DenseTensor3 {
        DenseTensor3 {
            dims: self.dims,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn check_same_dims(&self, other: &DenseTensor3) -> Result<()> {
        if self.dims != other.dims {
            return Err(mismatch(format!(
                "tensor dims {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

fn check_dims(dims: [usize; 3]) -> Result<()> {
    if dims.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "tensor dims must be positive, got {dims:?}"
        )));
    }
    dims[0]
        .checked_mul(dims[1])
        .and_then(|v| v.checked_mul(dims[2]))
        .ok_or_else(|| Error::InvalidArgument(format!("tensor dims {dims:?} overflow")))?;
    Ok(())
}

fn check_mode(mode: usize) -> Result<usize> {
    match mode {
        1..=3 => Ok(mode - 1),
        _ => Err(Error::InvalidMode(mode)),
    }
}

/// Factor triple `(A, B, C)` of a rank-R CPD.
#[derive(Debug, Clone, PartialEq)]
pub struct CpdModel {
    pub a: DenseMatrix,
    pub b: DenseMatrix,
    pub c: DenseMatrix,
}

impl CpdModel {
    pub fn new(a: DenseMatrix, b: DenseMatrix, c: DenseMatrix) -> Result<Self> {
        let r = a.ncols();
        if b.ncols() != r || c.ncols() != r {
            return Err(mismatch(format!(
                "factor column counts {}, {}, {} differ",
                a.ncols(),
                b.ncols(),
                c.ncols()
            )));
        }
        if r == 0 || a.nrows() == 0 || b.nrows() == 0 || c.nrows() == 0 {
            return Err(Error::InvalidArgument("empty CPD factor".into()));
        }
        Ok(Self { a, b, c })
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.a.ncols()
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.a.nrows(), self.b.nrows(), self.c.nrows()]
    }

    pub fn factors(&self) -> [&DenseMatrix; 3] {
        [&self.a, &self.b, &self.c]
    }

    pub fn is_nonnegative(&self) -> bool {
        self.factors().iter().all(|f| f.iter().all(|&v| v >= 0.0))
    }
}

/// Mode-n matricization; see the module docs for the column ordering.
pub fn unfold(t: &DenseTensor3, mode: usize) -> Result<DenseMatrix> {
    let n = check_mode(mode)?;
    let [ni, nj, nk] = t.dims;
    Ok(match n {
        0 => DenseMatrix::from_column_slice(ni, nj * nk, &t.data),
        1 => {
            let mut m = DenseMatrix::zeros(nj, ni * nk);
            for k in 0..nk {
                for j in 0..nj {
                    for i in 0..ni {
                        m[(j, i + ni * k)] = t.get(i, j, k);
                    }
                }
            }
            m
        }
        _ => {
            let mut m = DenseMatrix::zeros(nk, ni * nj);
            for k in 0..nk {
                for j in 0..nj {
                    for i in 0..ni {
                        m[(k, i + ni * j)] = t.get(i, j, k);
                    }
                }
            }
            m
        }
    })
}

/// Inverse of [`unfold`].
pub fn fold(m: &DenseMatrix, mode: usize, dims: [usize; 3]) -> Result<DenseTensor3> {
    let n = check_mode(mode)?;
    check_dims(dims)?;
    let [ni, nj, nk] = dims;
    let expected = match n {
        0 => (ni, nj * nk),
        1 => (nj, ni * nk),
        _ => (nk, ni * nj),
    };
    if m.shape() != expected {
        return Err(mismatch(format!(
            "mode-{mode} unfolding of {dims:?} must be {expected:?}, got {:?}",
            m.shape()
        )));
    }
    let t = match n {
        0 => DenseTensor3 {
            dims,
            data: m.as_slice().to_vec(),
        },
        1 => DenseTensor3::from_fn(dims, |i, j, k| m[(j, i + ni * k)])?,
        _ => DenseTensor3::from_fn(dims, |i, j, k| m[(k, i + ni * j)])?,
    };
    Ok(t)
}

/// `t ×_mode m`: multiplies every mode-n fiber of `t` by `m`.
pub fn mode_n_product(t: &DenseTensor3, m: &DenseMatrix, mode: usize) -> Result<DenseTensor3> {
    let n = check_mode(mode)?;
    if m.ncols() != t.dims[n] {
        return Err(mismatch(format!(
            "mode-{mode} product: matrix has {} columns, tensor dim is {}",
            m.ncols(),
            t.dims[n]
        )));
    }
    let mut dims = t.dims;
    dims[n] = m.nrows();
    let product = m * unfold(t, mode)?;
    fold(&product, mode, dims)
}

/// Column-wise Kronecker product of the matrices, in list order.
pub fn khatri_rao(ms: &[&DenseMatrix]) -> Result<DenseMatrix> {
    let first = ms
        .first()
        .ok_or_else(|| Error::InvalidArgument("khatri_rao of an empty list".into()))?;
    let r = first.ncols();
    if let Some(bad) = ms.iter().find(|m| m.ncols() != r) {
        return Err(mismatch(format!(
            "khatri_rao column counts {} and {} differ",
            r,
            bad.ncols()
        )));
    }
    let mut out = (*first).clone();
    for m in &ms[1..] {
        let rows = out.nrows() * m.nrows();
        let mut next = DenseMatrix::zeros(rows, r);
        for col in 0..r {
            let left = out.column(col);
            let right = m.column(col);
            let mut dst = next.column_mut(col);
            for (p, &lv) in left.iter().enumerate() {
                for (q, &rv) in right.iter().enumerate() {
                    dst[p * m.nrows() + q] = lv * rv;
                }
            }
        }
        out = next;
    }
    Ok(out)
}

/// Khatri-Rao product of the two non-target factors in the unfolding
/// convention, i.e. `W` such that `Y(n) = U(n) Wᵀ` for a CPD tensor.
pub fn unfolding_khatri_rao(factors: [&DenseMatrix; 3], mode: usize) -> Result<DenseMatrix> {
    match check_mode(mode)? {
        0 => khatri_rao(&[factors[2], factors[1]]),
        1 => khatri_rao(&[factors[2], factors[0]]),
        _ => khatri_rao(&[factors[1], factors[0]]),
    }
}

/// Hadamard product of the Gram matrices of every factor except `skip`.
pub fn gram_hadamard_except(grams: &[DenseMatrix; 3], skip: &[usize]) -> DenseMatrix {
    let r = grams[0].ncols();
    let mut out = DenseMatrix::from_element(r, r, 1.0);
    for (n, g) in grams.iter().enumerate() {
        if !skip.contains(&n) {
            out.component_mul_assign(g);
        }
    }
    out
}

/// Matricized tensor times Khatri-Rao product: `unfold(t, mode) · W(mode)`.
///
/// The factor of the target mode is not read, but all three must share the
/// same column count and the non-target factors must match `t`.
pub fn mttkrp(t: &DenseTensor3, factors: [&DenseMatrix; 3], mode: usize) -> Result<DenseMatrix> {
    let n = check_mode(mode)?;
    let r = factors[0].ncols();
    if factors.iter().any(|f| f.ncols() != r) {
        return Err(mismatch("mttkrp factors have different column counts"));
    }
    for (m, f) in factors.iter().enumerate() {
        if m != n && f.nrows() != t.dims[m] {
            return Err(mismatch(format!(
                "mttkrp factor {} has {} rows, tensor dim is {}",
                m + 1,
                f.nrows(),
                t.dims[m]
            )));
        }
    }
    let [ni, nj, nk] = t.dims;
    let mut out = DenseMatrix::zeros(t.dims[n], r);
    match n {
        0 => {
            let (b, c) = (factors[1], factors[2]);
            for col in 0..r {
                let mut dst = out.column_mut(col);
                for k in 0..nk {
                    let ck = c[(k, col)];
                    for j in 0..nj {
                        let w = b[(j, col)] * ck;
                        if w == 0.0 {
                            continue;
                        }
                        let fiber = &t.data[ni * (j + nj * k)..ni * (j + nj * k + 1)];
                        for (d, &y) in dst.iter_mut().zip(fiber) {
                            *d += w * y;
                        }
                    }
                }
            }
        }
        _ => {
            // Modes 2 and 3 both contract the mode-1 fibers against A first.
            let a = factors[0];
            let other = if n == 1 { factors[2] } else { factors[1] };
            for k in 0..nk {
                for j in 0..nj {
                    let fiber = &t.data[ni * (j + nj * k)..ni * (j + nj * k + 1)];
                    for col in 0..r {
                        let dot: f64 = fiber.iter().zip(a.column(col).iter()).map(|(y, a)| y * a).sum();
                        if n == 1 {
                            out[(j, col)] += dot * other[(k, col)];
                        } else {
                            out[(k, col)] += dot * other[(j, col)];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Full tensor `[[A, B, C]]` from a factor triple.
pub fn reconstruct_factors(factors: [&DenseMatrix; 3]) -> Result<DenseTensor3> {
    let [a, b, c] = factors;
    let r = a.ncols();
    if b.ncols() != r || c.ncols() != r {
        return Err(mismatch("reconstruct: factor column counts differ"));
    }
    let dims = [a.nrows(), b.nrows(), c.nrows()];
    check_dims(dims)?;
    let w = khatri_rao(&[c, b])?;
    let y1 = a * w.transpose();
    Ok(DenseTensor3 {
        dims,
        data: y1.as_slice().to_vec(),
    })
}

pub fn cpd_reconstruct(model: &CpdModel) -> Result<DenseTensor3> {
    reconstruct_factors(model.factors())
}

pub fn frobenius_norm(t: &DenseTensor3) -> f64 {
    t.squared_norm().sqrt()
}
