//! One fully instrumented path: driver, reference, scheme, perturbation
//! and error limit.

use serde::Serialize;

use super::config::ExperimentConfig;
use crate::fbm::{FbmPath, FbmSampler, Hurst};
use crate::flow::{doss_solution, ReferencePath};
use crate::limits::{error_limit_process, simulate_limit_u, theoretical_rate, LimitProcessSpec};
use crate::perturbation::{coefficient_functions, main_terms, solve_perturbation, PerturbationPath};
use crate::schemes::{run_scheme, SchemeTrajectory};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationSummary {
    pub m: u32,
    pub fine_level: u32,
    pub sup_error: f64,
    pub gamma: Option<f64>,
    pub perturbation_sup: Option<f64>,
    pub frozen: bool,
    pub fbm_fallback: bool,
}

#[derive(Debug, Clone)]
pub struct Simulation {
    pub path: FbmPath,
    pub reference: ReferencePath,
    pub trajectory: SchemeTrajectory,
    pub perturbation: Option<PerturbationPath>,
    pub kappa_tilde: Vec<f64>,
    /// `U` and the error limit on the fine grid, when `H` is in the
    /// theorem's range.
    pub limit: Option<(Vec<f64>, Vec<f64>)>,
    pub summary: SimulationSummary,
}

/// Path `0` of the configured family at level `m`.
pub fn simulate(cfg: &ExperimentConfig) -> Result<Simulation> {
    cfg.validate_single()?;
    let model = cfg.build_model()?;
    let m = cfg.m;
    let sampler = FbmSampler::new(m + cfg.fine_offset, Hurst::new(cfg.hurst)?)?;
    let path = sampler.sample(cfg.seed, 0).with_level(m)?;
    let trajectory = run_scheme(cfg.scheme, &model, cfg.xi, &path, &cfg.run_options())?;
    let reference = doss_solution(&model, cfg.xi, path.values(), path.fine_step())?;
    let r = path.refinement();
    let x_coarse = reference.subsample(r);
    let sup_error = trajectory.values.iter().zip(&x_coarse).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let elliptic = model.is_elliptic();
    let perturbation = if elliptic { Some(solve_perturbation(&trajectory, &model, &path)?) } else { None };
    let kappa_tilde = match coefficient_functions(cfg.scheme, &model) {
        Ok(family) if elliptic => main_terms(&family, &x_coarse, &path)?,
        _ => Vec::new(),
    };
    let gamma = theoretical_rate(cfg.scheme, cfg.hurst).ok();
    let limit = match gamma {
        Some(_) if elliptic => {
            let spec = LimitProcessSpec::new(cfg.scheme, cfg.hurst)?;
            let u = simulate_limit_u(&spec, &model, &reference, cfg.seed, 0)?;
            let e = error_limit_process(&model, &reference, &u)?;
            Some((u, e))
        }
        _ => None,
    };
    let summary = SimulationSummary {
        m,
        fine_level: path.fine_level(),
        sup_error,
        gamma,
        perturbation_sup: perturbation.as_ref().map(|p| p.sup_norm()),
        frozen: trajectory.frozen,
        fbm_fallback: path.fallback(),
    };
    Ok(Simulation { path, reference, trajectory, perturbation, kappa_tilde, limit, summary })
}
