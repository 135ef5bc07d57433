use log::debug;
use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::tensor::CpdModel;

use super::gramian::{block_jacobi_preconditioner, gramian_vector_product, GramianOperator};
use super::latent::{square_params, LatentTriple};
use super::pcg::pcg;
use super::problem::{factor_gradient, gradient, objective, FusionProblem};
use super::trust_region::{
    cauchy_from_curvature, dogleg_step, trust_region_update, IterationRecord, SolverState, StepType, StopReason,
};
use super::SolverConfig;

#[derive(Debug, Clone)]
pub struct SolveResult {
    /// Squared latent iterate; non-negative by construction.
    pub model: CpdModel,
    pub state: SolverState,
    pub trace: Vec<IterationRecord>,
}

impl SolveResult {
    pub fn converged(&self) -> bool {
        self.state.converged()
    }

    pub fn iterations(&self) -> usize {
        self.state.iteration
    }
}

fn ensure_finite(what: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} is {v}")))
    }
}

/// Gauss-Newton dogleg trust-region solve of the squared-latent coupled CPD.
pub fn solve(prob: &FusionProblem, init: &LatentTriple, cfg: &SolverConfig) -> Result<SolveResult> {
    cfg.validate()?;
    prob.check_dims(init.dims(), init.rank())?;
    let dims = init.dims();
    let rank = init.rank();

    let x0 = init.to_vector();
    let f0 = objective(init, prob)?;
    ensure_finite("initial objective", f0)?;
    let g0 = gradient(init, prob)?;
    if g0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("initial gradient".into()));
    }
    let delta0 = cfg.delta0.unwrap_or_else(|| (0.3 * x0.norm()).max(1.0));
    let mut state = SolverState {
        latent: init.clone(),
        x: x0,
        delta: delta0,
        delta_max: cfg.delta_max.unwrap_or(1e3 * delta0).max(delta0),
        f_value: f0,
        gradient: g0,
        iteration: 0,
        last_step: None,
        rho: 0.0,
        stop_reason: None,
    };
    let mut trace = Vec::new();

    while state.iteration < cfg.max_iters {
        if state.f_value == 0.0 {
            state.stop_reason = Some(StopReason::ZeroObjective);
            break;
        }
        if state.gradient.amax() < cfg.grad_tol {
            state.stop_reason = Some(StopReason::GradientTolerance);
            break;
        }
        if state.delta <= 1e-14 * state.x.norm() {
            state.stop_reason = Some(StopReason::RadiusCollapsed);
            break;
        }

        let opr = GramianOperator::new(&state.latent, prob)?;
        let curvature_diag = if cfg.squaring_curvature {
            let grads = factor_gradient(&square_params(&state.latent), prob)?;
            let mut diag = Vec::with_capacity(opr.len());
            for gu in &grads {
                diag.extend(gu.iter().map(|v| 2.0 * v));
            }
            Some(DVector::from_vec(diag))
        } else {
            None
        };
        // Model Hessian of f = ‖r‖² is 2·JᵀJ under the GN approximation.
        let hop = |v: &DVector<f64>| -> DVector<f64> {
            let mut hv = gramian_vector_product(&opr, v).expect("vector length fixed by the operator") * 2.0;
            if let Some(d) = &curvature_diag {
                hv += d.component_mul(v);
            }
            hv
        };
        let precond = block_jacobi_preconditioner(&opr);
        let g = &state.gradient;

        let newton = pcg(hop, g, |v: &DVector<f64>| precond.apply(v), cfg);
        let ghg = g.dot(&hop(g));
        let p_c = cauchy_from_curvature(g, ghg, state.delta);
        let model_decrease = |p: &DVector<f64>| -(g.dot(p) + 0.5 * p.dot(&hop(p)));

        let (mut step, mut step_type) = if newton.p.iter().all(|&v| v == 0.0) {
            (p_c.clone(), StepType::Cauchy)
        } else {
            dogleg_step(&p_c, &newton.p, state.delta)
        };
        let mut predicted = model_decrease(&step);
        if step_type != StepType::Cauchy {
            let cauchy_decrease = model_decrease(&p_c);
            if cauchy_decrease > predicted {
                step = p_c;
                step_type = StepType::Cauchy;
                predicted = cauchy_decrease;
            }
        }

        let trial_x = &state.x + &step;
        let trial = LatentTriple::from_vector(dims, rank, &trial_x)?;
        let f_trial = objective(&trial, prob)?;
        let f_before = state.f_value;
        let delta_used = state.delta;
        let outcome = trust_region_update(&mut state, &step, predicted, f_trial, cfg);
        state.iteration += 1;

        if outcome.accepted {
            state.latent = trial;
            state.gradient = gradient(&state.latent, prob)?;
            if state.gradient.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "gradient at iteration {}",
                    state.iteration
                )));
            }
        }
        trace.push(IterationRecord {
            iteration: state.iteration,
            f: state.f_value,
            grad_inf_norm: state.gradient.amax(),
            delta: delta_used,
            rho: outcome.rho,
            cg_iterations: newton.iterations,
            step_type,
            step_norm: step.norm(),
            accepted: outcome.accepted,
        });
        debug!(
            "iter {:4} f={:.6e} |g|={:.3e} delta={:.3e} rho={:.3} cg={} {}",
            state.iteration,
            state.f_value,
            state.gradient.amax(),
            delta_used,
            outcome.rho,
            newton.iterations,
            step_type
        );
        if outcome.accepted && (f_before - state.f_value) < cfg.rel_f_tol * f_before {
            state.stop_reason = Some(StopReason::RelativeDecrease);
            break;
        }
    }
    if state.stop_reason.is_none() {
        state.stop_reason = Some(StopReason::MaxIterations);
    }
    Ok(SolveResult {
        model: square_params(&state.latent),
        state,
        trace,
    })
}
