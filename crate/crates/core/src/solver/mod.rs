//! Non-negative coupled CPD by nonlinear least squares.
//!
//! Non-negativity is imposed through the squared-latent parametrisation
//! `A = D*D, B = E*E, C = F*F`; the unconstrained problem in `(D, E, F)` is
//! solved by a Gauss-Newton dogleg trust-region method whose Newton point
//! comes from block-Jacobi preconditioned CG on the matrix-free Gramian.

pub mod gramian;
pub mod latent;
pub mod nls;
pub mod pcg;
pub mod problem;
pub mod trust_region;

pub use gramian::{block_jacobi_preconditioner, gramian_vector_product, BlockJacobi, GramianOperator};
pub use latent::{init_latent, reconstruct_sri, square_params, LatentTriple};
pub use nls::{solve, SolveResult};
pub use pcg::{pcg, PcgResult};
pub use problem::{gradient, objective, CoupledFactors, FusionProblem};
pub use trust_region::{
    cauchy_point, dogleg_step, trust_region_update, IterationRecord, SolverState, StepOutcome, StepType,
    StopReason,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Stop when an accepted step lowers f by less than this fraction.
    pub rel_f_tol: f64,
    /// Stop when `‖g‖∞` falls below this.
    pub grad_tol: f64,
    pub cg_max_iters: usize,
    pub cg_rel_tol: f64,
    /// Initial radius; `None` means `max(0.3‖x₀‖, 1)`.
    pub delta0: Option<f64>,
    /// Radius cap; `None` means `1e3·Δ₀`.
    pub delta_max: Option<f64>,
    pub accept_ratio: f64,
    pub shrink_threshold: f64,
    pub grow_threshold: f64,
    pub shrink_factor: f64,
    pub grow_factor: f64,
    /// Add the `diag(2∇_u f)` term of the squaring map to the Gramian.
    pub squaring_curvature: bool,
    pub rng_seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            rel_f_tol: 1e-8,
            grad_tol: 1e-6,
            cg_max_iters: 25,
            cg_rel_tol: 1e-6,
            delta0: None,
            delta_max: None,
            accept_ratio: 1e-4,
            shrink_threshold: 0.25,
            grow_threshold: 0.75,
            shrink_factor: 0.25,
            grow_factor: 2.0,
            squaring_curvature: false,
            rng_seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rel_f_tol", self.rel_f_tol),
            ("grad_tol", self.grad_tol),
            ("cg_rel_tol", self.cg_rel_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.accept_ratio > 0.0 && self.accept_ratio < 0.25) {
            return Err(Error::InvalidArgument(format!(
                "accept ratio must lie in (0, 0.25), got {}",
                self.accept_ratio
            )));
        }
        if self.cg_max_iters == 0 {
            return Err(Error::InvalidArgument("cg_max_iters must be ≥ 1".into()));
        }
        if let Some(d) = self.delta0 {
            if !(d > 0.0) {
                return Err(Error::InvalidArgument(format!("delta0 must be > 0, got {d}")));
            }
        }
        Ok(())
    }
}
