//! Reconstruction quality metrics for the super-resolution image and the
//! spatial smoothing post-process.

use log::warn;

use crate::error::{Error, Result};
use crate::tensor::DenseTensor3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub rmse: f64,
    pub cc: f64,
    /// `+∞` when the estimate is exact.
    pub rsnr_db: f64,
    pub sam_radians: f64,
    /// Bands left out of CC because the ground truth is constant there.
    pub cc_skipped_bands: usize,
    /// Spatial positions left out of SAM because a fibre has zero norm.
    pub sam_skipped_fibers: usize,
}

impl MetricsReport {
    pub fn sam_degrees(&self) -> f64 {
        self.sam_radians.to_degrees()
    }
}

pub fn evaluate(est: &DenseTensor3, truth: &DenseTensor3) -> Result<MetricsReport> {
    let (cc, cc_skipped_bands) = cross_correlation_with_skips(est, truth)?;
    let (sam_radians, sam_skipped_fibers) = sam_with_skips(est, truth)?;
    Ok(MetricsReport {
        rmse: rmse(est, truth)?,
        cc,
        rsnr_db: rsnr(est, truth)?,
        sam_radians,
        cc_skipped_bands,
        sam_skipped_fibers,
    })
}

pub fn rmse(est: &DenseTensor3, truth: &DenseTensor3) -> Result<f64> {
    let diff = est.sub(truth)?;
    Ok((diff.squared_norm() / diff.len() as f64).sqrt())
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if syy == 0.0 {
        return None;
    }
    if sxx == 0.0 {
        return Some(0.0);
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Mean per-band Pearson correlation, skipping bands where `truth` is
/// constant. A constant estimate band scores 0.
pub fn cross_correlation(est: &DenseTensor3, truth: &DenseTensor3) -> Result<f64> {
    cross_correlation_with_skips(est, truth).map(|(cc, _)| cc)
}

pub fn cross_correlation_with_skips(est: &DenseTensor3, truth: &DenseTensor3) -> Result<(f64, usize)> {
    est.check_same_dims(truth)?;
    let [ni, nj, nk] = truth.dims();
    let band = ni * nj;
    let mut sum = 0.0;
    let mut used = 0;
    for k in 0..nk {
        let range = k * band..(k + 1) * band;
        if let Some(rho) = pearson(&est.data()[range.clone()], &truth.data()[range]) {
            sum += rho;
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::Degenerate("every ground-truth band is constant".into()));
    }
    let skipped = nk - used;
    if skipped > 0 {
        warn!("cross-correlation skipped {skipped} constant band(s)");
    }
    Ok((sum / used as f64, skipped))
}

/// Reconstruction SNR in dB; `+∞` for an exact estimate.
pub fn rsnr(est: &DenseTensor3, truth: &DenseTensor3) -> Result<f64> {
    let signal = truth.squared_norm();
    if signal == 0.0 {
        return Err(Error::Degenerate("R-SNR is undefined for a zero ground truth".into()));
    }
    let err = est.sub(truth)?.squared_norm();
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (signal / err).log10())
}

/// Mean spectral angle in radians over spatial positions where both fibres
/// are nonzero.
pub fn sam(est: &DenseTensor3, truth: &DenseTensor3) -> Result<f64> {
    sam_with_skips(est, truth).map(|(s, _)| s)
}

pub fn sam_with_skips(est: &DenseTensor3, truth: &DenseTensor3) -> Result<(f64, usize)> {
    est.check_same_dims(truth)?;
    let [ni, nj, nk] = truth.dims();
    let mut total = 0.0;
    let mut used = 0;
    let mut t_fiber = vec![0.0; nk];
    let mut e_fiber = vec![0.0; nk];
    for j in 0..nj {
        for i in 0..ni {
            for k in 0..nk {
                t_fiber[k] = truth.get(i, j, k);
                e_fiber[k] = est.get(i, j, k);
            }
            let nt = t_fiber.iter().map(|v| v * v).sum::<f64>().sqrt();
            let ne = e_fiber.iter().map(|v| v * v).sum::<f64>().sqrt();
            if nt == 0.0 || ne == 0.0 {
                continue;
            }
            // Kahan's angle formula: exact zero for identical fibres and
            // well conditioned near 0 and π, unlike acos of the cosine.
            let (mut diff, mut sum) = (0.0, 0.0);
            for (t, e) in t_fiber.iter().zip(&e_fiber) {
                let (a, b) = (t / nt, e / ne);
                diff += (a - b) * (a - b);
                sum += (a + b) * (a + b);
            }
            total += 2.0 * diff.sqrt().atan2(sum.sqrt());
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::Degenerate("every spectral fibre is zero".into()));
    }
    Ok((total / used as f64, ni * nj - used))
}

/// Per-band `window×window` moving average; taps falling outside the image
/// are dropped and the mean is taken over the in-bounds ones.
pub fn spatial_smooth(t: &DenseTensor3, window: usize) -> Result<DenseTensor3> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "smoothing window must be odd and positive, got {window}"
        )));
    }
    if window == 1 {
        return Ok(t.clone());
    }
    let [ni, nj, nk] = t.dims();
    let h = window / 2;
    let mut out = DenseTensor3::zeros(t.dims())?;
    for k in 0..nk {
        for j in 0..nj {
            let (j0, j1) = (j.saturating_sub(h), (j + h).min(nj - 1));
            for i in 0..ni {
                let (i0, i1) = (i.saturating_sub(h), (i + h).min(ni - 1));
                let mut acc = 0.0;
                for jj in j0..=j1 {
                    for ii in i0..=i1 {
                        acc += t.get(ii, jj, k);
                    }
                }
                let count = ((i1 - i0 + 1) * (j1 - j0 + 1)) as f64;
                out.set(i, j, k, acc / count);
            }
        }
    }
    Ok(out)
}
