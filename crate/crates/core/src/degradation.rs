//! Spatial and spectral degradation operators linking the super-resolution
//! image to its hyperspectral and multispectral observations:
//!
//! ```text
//! Y_H = Y_S ×₁ P1 ×₂ P2,     Y_M = Y_S ×₃ PM
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{mismatch, Error, Result};
use crate::tensor::{mode_n_product, DenseMatrix, DenseTensor3};

/// Parameters of the synthetic degradation model.
#[derive(Debug, Clone, PartialEq)]
pub struct DegradationConfig {
    /// Number of Gaussian taps; must be odd.
    pub kernel_size: usize,
    pub sigma: f64,
    /// Spatial downsampling factor `d`.
    pub factor: usize,
    pub num_msi_bands: usize,
    pub snr_hsi_db: Option<f64>,
    pub snr_msi_db: Option<f64>,
    pub rng_seed: u64,
}

impl Default for DegradationConfig {
    fn default() -> Self {
        Self {
            kernel_size: 9,
            sigma: 2.0,
            factor: 4,
            num_msi_bands: 6,
            snr_hsi_db: None,
            snr_msi_db: None,
            rng_seed: 0,
        }
    }
}

impl DegradationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_size == 0 || self.kernel_size.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "kernel size must be odd and positive, got {}",
                self.kernel_size
            )));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if self.factor == 0 {
            return Err(Error::InvalidArgument("downsampling factor must be ≥ 1".into()));
        }
        if self.num_msi_bands == 0 {
            return Err(Error::InvalidArgument("MSI band count must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Known matrices `P1 (I_H×I)`, `P2 (J_H×J)` and `PM (K_M×K)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DegradationOperators {
    pub p1: DenseMatrix,
    pub p2: DenseMatrix,
    pub pm: DenseMatrix,
}

impl DegradationOperators {
    /// Checks non-negativity and that every row of `pm` averages (sums to 1).
    ///
    /// Strictness (`I_H < I` etc.) is reported by [`Self::is_strict`] rather
    /// than enforced, so identity operators remain usable for testing.
    pub fn new(p1: DenseMatrix, p2: DenseMatrix, pm: DenseMatrix) -> Result<Self> {
        for (name, m) in [("P1", &p1), ("P2", &p2), ("PM", &pm)] {
            if m.nrows() == 0 || m.ncols() == 0 {
                return Err(Error::InvalidArgument(format!("{name} is empty")));
            }
            if m.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be entrywise non-negative and finite"
                )));
            }
        }
        for q in 0..pm.nrows() {
            let s: f64 = pm.row(q).sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "PM row {q} sums to {s}, expected 1"
                )));
            }
        }
        Ok(Self { p1, p2, pm })
    }

    pub fn from_config(sri_dims: [usize; 3], cfg: &DegradationConfig) -> Result<Self> {
        cfg.validate()?;
        let p1 = blur_downsample_matrix(sri_dims[0], cfg)?;
        let p2 = blur_downsample_matrix(sri_dims[1], cfg)?;
        let pm = band_aggregation_matrix(sri_dims[2], cfg.num_msi_bands)?;
        Self::new(p1, p2, pm)
    }

    /// Implied SRI dimensions `(I, J, K)`.
    pub fn sri_dims(&self) -> [usize; 3] {
        [self.p1.ncols(), self.p2.ncols(), self.pm.ncols()]
    }

    pub fn hsi_dims(&self) -> [usize; 3] {
        [self.p1.nrows(), self.p2.nrows(), self.pm.ncols()]
    }

    pub fn msi_dims(&self) -> [usize; 3] {
        [self.p1.ncols(), self.p2.ncols(), self.pm.nrows()]
    }

    pub fn is_strict(&self) -> bool {
        self.p1.nrows() < self.p1.ncols()
            && self.p2.nrows() < self.p2.ncols()
            && self.pm.nrows() < self.pm.ncols()
    }
}

/// Normalised 1-D Gaussian taps `exp(-t²/2σ²)`, `t = -h..=h`.
pub fn gaussian_kernel(kernel_size: usize, sigma: f64) -> Vec<f64> {
    let half = (kernel_size / 2) as isize;
    let mut w: Vec<f64> = (-half..=half)
        .map(|t| (-((t * t) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Blur-then-decimate matrix `S·G` of shape `⌈n/d⌉ × n`.
///
/// `G` is the symmetric Toeplitz Gaussian blur with zero-padded boundaries;
/// `S` keeps rows `⌊d/2⌋, ⌊d/2⌋ + d, ...`, clamped to the last row when the
/// phase offset would run past the end.
pub fn blur_downsample_matrix(full_dim: usize, cfg: &DegradationConfig) -> Result<DenseMatrix> {
    cfg.validate()?;
    if full_dim < cfg.kernel_size {
        return Err(Error::InvalidArgument(format!(
            "dimension {full_dim} is smaller than the {}-tap kernel",
            cfg.kernel_size
        )));
    }
    let d = cfg.factor;
    let taps = gaussian_kernel(cfg.kernel_size, cfg.sigma);
    let half = (cfg.kernel_size / 2) as isize;
    let rows = full_dim.div_ceil(d);
    let mut p = DenseMatrix::zeros(rows, full_dim);
    for row in 0..rows {
        let centre = (row * d + d / 2).min(full_dim - 1) as isize;
        for (t, &w) in (-half..=half).zip(&taps) {
            let col = centre + t;
            if (0..full_dim as isize).contains(&col) {
                p[(row, col as usize)] = w;
            }
        }
    }
    Ok(p)
}

/// Uniform contiguous band averaging `PM (k_m × k_full)`.
///
/// The first `k_full mod k_m` groups receive one extra band.
pub fn band_aggregation_matrix(k_full: usize, k_m: usize) -> Result<DenseMatrix> {
    if k_m == 0 || k_full == 0 {
        return Err(Error::InvalidArgument("band counts must be positive".into()));
    }
    if k_m > k_full {
        return Err(Error::InvalidArgument(format!(
            "cannot aggregate {k_full} bands into {k_m} groups"
        )));
    }
    let base = k_full / k_m;
    let extra = k_full % k_m;
    let mut pm = DenseMatrix::zeros(k_m, k_full);
    let mut start = 0;
    for q in 0..k_m {
        let size = base + usize::from(q < extra);
        for col in start..start + size {
            pm[(q, col)] = 1.0 / size as f64;
        }
        start += size;
    }
    Ok(pm)
}

/// Produces `(HSI, MSI)` from the SRI.
pub fn degrade(sri: &DenseTensor3, ops: &DegradationOperators) -> Result<(DenseTensor3, DenseTensor3)> {
    if sri.dims() != ops.sri_dims() {
        return Err(mismatch(format!(
            "SRI dims {:?} do not match operators {:?}",
            sri.dims(),
            ops.sri_dims()
        )));
    }
    let hsi = mode_n_product(&mode_n_product(sri, &ops.p1, 1)?, &ops.p2, 2)?;
    let msi = mode_n_product(sri, &ops.pm, 3)?;
    Ok((hsi, msi))
}

/// Adds i.i.d. Gaussian noise rescaled so that
/// `10·log10(‖t‖² / ‖n‖²)` equals `snr_db` exactly.
///
/// `snr_db = +∞` disables noise.
pub fn add_noise(t: &DenseTensor3, snr_db: f64, rng_seed: u64) -> Result<DenseTensor3> {
    if snr_db.is_nan() {
        return Err(Error::InvalidArgument("SNR is NaN".into()));
    }
    if snr_db == f64::INFINITY {
        return Ok(t.clone());
    }
    let signal = t.squared_norm();
    if signal == 0.0 {
        return Err(Error::Degenerate("SNR is undefined for a zero tensor".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let noise: Vec<f64> = (0..t.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
    let raw: f64 = noise.iter().map(|v| v * v).sum();
    let target = signal * 10f64.powf(-snr_db / 10.0);
    let scale = (target / raw).sqrt();
    let data = t
        .data()
        .iter()
        .zip(&noise)
        .map(|(v, n)| v + scale * n)
        .collect();
    DenseTensor3::new(t.dims(), data)
}

/// Degrades the SRI and corrupts both observations at the configured SNRs.
pub fn observe(
    sri: &DenseTensor3,
    ops: &DegradationOperators,
    cfg: &DegradationConfig,
) -> Result<(DenseTensor3, DenseTensor3)> {
    let (mut hsi, mut msi) = degrade(sri, ops)?;
    if let Some(snr) = cfg.snr_hsi_db {
        hsi = add_noise(&hsi, snr, cfg.rng_seed)?;
    }
    if let Some(snr) = cfg.snr_msi_db {
        msi = add_noise(&msi, snr, cfg.rng_seed.wrapping_add(0x9E37_79B9))?;
    }
    Ok((hsi, msi))
}
