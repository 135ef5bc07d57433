use std::fmt;

use nalgebra::DVector;

use super::latent::LatentTriple;
use super::SolverConfig;

/// Which branch of the dogleg produced the step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepType {
    Cauchy,
    Dogleg,
    Newton,
}

impl fmt::Display for StepType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StepType::Cauchy => "cauchy",
            StepType::Dogleg => "dogleg",
            StepType::Newton => "newton",
        })
    }
}

/// Why the outer loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    GradientTolerance,
    RelativeDecrease,
    ZeroObjective,
    RadiusCollapsed,
    MaxIterations,
}

impl StopReason {
    pub fn is_converged(self) -> bool {
        matches!(
            self,
            StopReason::GradientTolerance | StopReason::RelativeDecrease | StopReason::ZeroObjective
        )
    }
}

/// Diagnostics of one trust-region iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Objective after the iteration (unchanged on rejection).
    pub f: f64,
    pub grad_inf_norm: f64,
    /// Radius used to compute the step.
    pub delta: f64,
    pub rho: f64,
    pub cg_iterations: usize,
    pub step_type: StepType,
    pub step_norm: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone)]
pub struct SolverState {
    pub latent: LatentTriple,
    pub x: DVector<f64>,
    pub delta: f64,
    pub delta_max: f64,
    pub f_value: f64,
    pub gradient: DVector<f64>,
    pub iteration: usize,
    pub last_step: Option<DVector<f64>>,
    pub rho: f64,
    pub stop_reason: Option<StopReason>,
}

impl SolverState {
    pub fn converged(&self) -> bool {
        self.stop_reason.is_some_and(StopReason::is_converged)
    }
}

/// Minimiser of the quadratic model along `-g` inside the radius.
pub fn cauchy_point<H>(g: &DVector<f64>, hop: H, delta: f64) -> DVector<f64>
where
    H: Fn(&DVector<f64>) -> DVector<f64>,
{
    let g_norm = g.norm();
    if g_norm == 0.0 {
        return DVector::zeros(g.len());
    }
    let ghg = g.dot(&hop(g));
    cauchy_from_curvature(g, ghg, delta)
}

/// [`cauchy_point`] with a precomputed `gᵀHg`.
pub fn cauchy_from_curvature(g: &DVector<f64>, ghg: f64, delta: f64) -> DVector<f64> {
    let g_norm = g.norm();
    if g_norm == 0.0 {
        return DVector::zeros(g.len());
    }
    let tau = if ghg <= 0.0 {
        1.0
    } else {
        (g_norm.powi(3) / (delta * ghg)).min(1.0)
    };
    g * (-tau * delta / g_norm)
}

/// Classic single dogleg between the Cauchy and Newton points.
pub fn dogleg_step(p_c: &DVector<f64>, p_n: &DVector<f64>, delta: f64) -> (DVector<f64>, StepType) {
    let n_norm = p_n.norm();
    if n_norm <= delta {
        return (p_n.clone(), StepType::Newton);
    }
    let c_norm = p_c.norm();
    if c_norm >= delta {
        let scale = if c_norm > 0.0 { delta / c_norm } else { 0.0 };
        return (p_c * scale, StepType::Cauchy);
    }
    // ‖p_c + θ v‖ = Δ with a = ‖v‖², b = p_cᵀv, c = ‖p_c‖² − Δ² < 0
    let v = p_n - p_c;
    let a = v.norm_squared();
    let b = p_c.dot(&v);
    let c = c_norm * c_norm - delta * delta;
    let disc = (b * b - a * c).max(0.0).sqrt();
    let theta = if b <= 0.0 { (-b + disc) / a } else { -c / (b + disc) };
    (p_c + v * theta.clamp(0.0, 1.0), StepType::Dogleg)
}

/// Result of testing a trial step against the quadratic model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub accepted: bool,
    pub rho: f64,
}

/// Ratio test and radius update.
///
/// `predicted_reduction = m(0) − m(p)`, `f_trial = f(x + p)`. On acceptance
/// the state moves to `x + p` with objective `f_trial`; the caller refreshes
/// the gradient.
pub fn trust_region_update(
    state: &mut SolverState,
    step: &DVector<f64>,
    predicted_reduction: f64,
    f_trial: f64,
    cfg: &SolverConfig,
) -> StepOutcome {
    let actual = state.f_value - f_trial;
    let rho = if predicted_reduction > 0.0 && f_trial.is_finite() {
        actual / predicted_reduction
    } else {
        f64::NEG_INFINITY
    };
    let step_norm = step.norm();
    let accepted = rho >= cfg.accept_ratio;
    if rho < cfg.shrink_threshold {
        state.delta *= cfg.shrink_factor;
    } else if rho > cfg.grow_threshold && step_norm >= 0.99 * state.delta {
        state.delta = (state.delta * cfg.grow_factor).min(state.delta_max);
    }
    if accepted {
        state.x += step;
        state.f_value = f_trial;
    }
    state.rho = rho;
    state.last_step = Some(step.clone());
    StepOutcome { accepted, rho }
}
