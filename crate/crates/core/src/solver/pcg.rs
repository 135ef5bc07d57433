use nalgebra::DVector;

use super::SolverConfig;

/// Outcome of a (possibly truncated) preconditioned CG solve of `Hp = -g`.
#[derive(Debug, Clone, PartialEq)]
pub struct PcgResult {
    pub p: DVector<f64>,
    pub iterations: usize,
    pub residual_norm: f64,
    /// Set when a direction with `dᵀHd ≤ 1e-14‖d‖²` stopped the iteration.
    pub nonpositive_curvature: bool,
}

/// Preconditioned conjugate gradients on `hop(p) = -g`.
///
/// Stops at relative residual `cfg.cg_rel_tol`, after `cfg.cg_max_iters`
/// iterations, or on the first direction of non-positive curvature, in which
/// case the current iterate is returned.
pub fn pcg<H, P>(hop: H, g: &DVector<f64>, precond: P, cfg: &SolverConfig) -> PcgResult
where
    H: Fn(&DVector<f64>) -> DVector<f64>,
    P: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = g.len();
    let mut p = DVector::zeros(n);
    let b = -g;
    let b_norm = b.norm();
    if b_norm == 0.0 {
        return PcgResult {
            p,
            iterations: 0,
            residual_norm: 0.0,
            nonpositive_curvature: false,
        };
    }
    let mut r = b;
    let mut z = precond(&r);
    let mut d = z.clone();
    let mut rz = r.dot(&z);
    let tol = cfg.cg_rel_tol * b_norm;
    for it in 1..=cfg.cg_max_iters {
        let hd = hop(&d);
        let curvature = d.dot(&hd);
        if curvature <= 1e-14 * d.norm_squared() {
            return PcgResult {
                p,
                iterations: it - 1,
                residual_norm: r.norm(),
                nonpositive_curvature: true,
            };
        }
        let alpha = rz / curvature;
        p.axpy(alpha, &d, 1.0);
        r.axpy(-alpha, &hd, 1.0);
        let r_norm = r.norm();
        if r_norm <= tol {
            return PcgResult {
                p,
                iterations: it,
                residual_norm: r_norm,
                nonpositive_curvature: false,
            };
        }
        z = precond(&r);
        let rz_next = r.dot(&z);
        let beta = rz_next / rz;
        rz = rz_next;
        d = &z + &d * beta;
    }
    let residual_norm = r.norm();
    PcgResult {
        p,
        iterations: cfg.cg_max_iters,
        residual_norm,
        nonpositive_curvature: false,
    }
}
