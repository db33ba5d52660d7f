//! Monte Carlo experiments: convergence rates, normalized-error
//! distributions and variation checks.
//!
//! Paths are processed in parallel but always collected by index, so every
//! report depends only on the configuration.

use rayon::prelude::*;
use serde::Serialize;

use super::config::ExperimentConfig;
use crate::fbm::{FbmPath, FbmSampler, Hurst};
use crate::flow::{doss_solution, evolve, ReferencePath};
use crate::limits::{
    conditional_second_moment, error_limit_process, simulate_limit_u, theoretical_rate, LimitProcessSpec,
};
use crate::model::CoefficientModel;
use crate::ode::AUX_TOL;
use crate::rng::Purpose;
use crate::schemes::{run_scheme, SchemeKind, SchemeTrajectory};
use crate::stats::{self, LinearFit};
use crate::variations::{
    hermite_variation, sigma_qh_squared, sigma_tilde_squared, simple_trapezoid_variation, trapezoid_variation_path,
};
use crate::{Error, Result};

/// Below this every error counts as round-off.
const EXACT_TOL: f64 = 1e-12;
/// Largest inadmissible fraction tolerated at the smallest fitted level.
const MAX_INADMISSIBLE: f64 = 0.05;

fn stream_index(m: u32, i: usize) -> u64 {
    ((m as u64) << 32) | i as u64
}

fn indexed<T: Send>(n: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    (0..n).into_par_iter().map(&f).collect()
}

/// Exact solution at the coarse nodes of level `m` of `path`, chained cell
/// by cell on the fine grid.
pub fn reference_coarse(model: &CoefficientModel, xi: f64, path: &FbmPath, m: u32) -> Result<Vec<f64>> {
    let r = 1usize << (path.fine_level() - m);
    let v = path.values();
    let h = path.fine_step();
    let mut out = Vec::with_capacity((1 << m) + 1);
    let mut x = xi;
    out.push(x);
    for k in 0..1usize << m {
        x = evolve(model, x, &v[k * r..=(k + 1) * r], h, AUX_TOL)?;
        out.push(x);
    }
    Ok(out)
}

fn sup_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Per-level summary of a rate experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelStats {
    pub m: u32,
    pub mean_sup_error: f64,
    pub median_sup_error: f64,
    /// Standard error of the mean.
    pub se: f64,
    /// Fraction of paths whose implicit trajectory was frozen.
    pub inadmissible_fraction: f64,
    /// Fraction of paths violating the grid Hölder bound.
    pub holder_violation_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    pub scheme: SchemeKind,
    pub model: String,
    pub hurst: f64,
    pub n_paths: usize,
    pub fine_offset: u32,
    /// `γ` of the limit theorem, when `H` is in its range.
    pub theoretical_gamma: Option<f64>,
    pub levels: Vec<LevelStats>,
    pub fitted_levels: Vec<u32>,
    /// Least-squares fit of `log₂(mean error)` against `m`.
    pub fit: Option<LinearFit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub degenerate: Option<String>,
}

struct PathOutcome {
    sup_error: f64,
    frozen: bool,
    holder_violation: bool,
}

fn scheme_on(cfg: &ExperimentConfig, model: &CoefficientModel, path: &FbmPath) -> Result<SchemeTrajectory> {
    run_scheme(cfg.scheme, model, cfg.xi, path, &cfg.run_options())
}

/// Sup-norm scheme errors at the grid points for `m_min..=m_max`.
pub fn run_rate_experiment(cfg: &ExperimentConfig) -> Result<RateReport> {
    cfg.validate_range()?;
    let model = cfg.build_model()?;
    let hurst = Hurst::new(cfg.hurst)?;
    let mut levels = Vec::new();
    for m in cfg.m_min..=cfg.m_max {
        let sampler = FbmSampler::new(m + cfg.fine_offset, hurst)?;
        let outcomes = indexed(cfg.n_paths, |i| {
            let path = sampler.sample(cfg.seed, stream_index(m, i)).with_level(m)?;
            let traj = scheme_on(cfg, &model, &path)?;
            let exact = reference_coarse(&model, cfg.xi, &path, m)?;
            Ok(PathOutcome {
                sup_error: sup_distance(&traj.values, &exact),
                frozen: traj.frozen,
                holder_violation: !traj.admissible,
            })
        })?;
        let errors: Vec<f64> = outcomes.iter().map(|o| o.sup_error).collect();
        let n = outcomes.len() as f64;
        levels.push(LevelStats {
            m,
            mean_sup_error: stats::mean(&errors),
            median_sup_error: stats::median(&errors),
            se: if errors.len() > 1 { stats::standard_error(&errors) } else { f64::NAN },
            inadmissible_fraction: outcomes.iter().filter(|o| o.frozen).count() as f64 / n,
            holder_violation_fraction: outcomes.iter().filter(|o| o.holder_violation).count() as f64 / n,
        });
    }
    let theoretical_gamma = theoretical_rate(cfg.scheme, cfg.hurst).ok();
    let mut report = RateReport {
        scheme: cfg.scheme,
        model: cfg.model.name.clone(),
        hurst: cfg.hurst,
        n_paths: cfg.n_paths,
        fine_offset: cfg.fine_offset,
        theoretical_gamma,
        levels,
        fitted_levels: Vec::new(),
        fit: None,
        degenerate: None,
    };
    if report.levels.iter().all(|l| l.mean_sup_error <= EXACT_TOL) {
        report.degenerate = Some("exact scheme".into());
        return Ok(report);
    }
    let mut used: Vec<&LevelStats> = report.levels.iter().filter(|l| l.mean_sup_error > 0.0).collect();
    if cfg.scheme == SchemeKind::CrankNicolson
        && used.first().is_some_and(|l| l.inadmissible_fraction > MAX_INADMISSIBLE)
    {
        used.remove(0);
    }
    if used.len() >= 4 {
        let x: Vec<f64> = used.iter().map(|l| l.m as f64).collect();
        let y: Vec<f64> = used.iter().map(|l| l.mean_sup_error.log2()).collect();
        report.fit = Some(stats::ols(&x, &y));
    }
    report.fitted_levels = used.iter().map(|l| l.m).collect();
    Ok(report)
}

/// One row of `dist.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DistributionSample {
    pub sample_id: usize,
    /// `2^{mγ}(X̄₁ − X₁)`.
    pub normalized_error: f64,
    /// Limit at `t = 1`: same path in pathwise mode, an independent one in
    /// weak mode.
    pub limit_sample: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathwiseSummary {
    /// `sup_t |2^{mγ}(X̄_t − X_t) − L_t| / sup_t |L_t|` per path.
    pub relative_deviations: Vec<f64>,
    pub median_relative_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeakSummary {
    pub mean_error: f64,
    pub mean_limit: f64,
    pub second_moment_error: f64,
    pub second_moment_error_se: f64,
    pub second_moment_limit: f64,
    /// Monte Carlo mean of `E[L₁² | B]` over the limit paths.
    pub conditional_second_moment: f64,
    pub conditional_second_moment_se: f64,
    pub ks_distance: f64,
    pub ks_p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistributionReport {
    pub scheme: SchemeKind,
    pub model: String,
    pub hurst: f64,
    pub m: u32,
    pub gamma: f64,
    pub mode: ComparisonMode,
    pub samples: Vec<DistributionSample>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pathwise: Option<PathwiseSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weak: Option<WeakSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ComparisonMode {
    Pathwise,
    Weak,
}

/// Normalized error on the coarse grid and the limit at the same nodes.
struct Coupled {
    error: Vec<f64>,
    limit: Vec<f64>,
}

fn coupled_sample(
    cfg: &ExperimentConfig,
    model: &CoefficientModel,
    spec: &LimitProcessSpec,
    path: &FbmPath,
    scale: f64,
    index: u64,
) -> Result<Coupled> {
    let traj = scheme_on(cfg, model, path)?;
    let reference = doss_solution(model, cfg.xi, path.values(), path.fine_step())?;
    let r = path.refinement();
    let u = simulate_limit_u(spec, model, &reference, cfg.seed, index)?;
    let limit = error_limit_process(model, &reference, &u)?;
    Ok(Coupled {
        error: traj.values.iter().enumerate().map(|(k, v)| scale * (v - reference.x[k * r])).collect(),
        limit: limit.iter().step_by(r).copied().collect(),
    })
}

/// Terminal limit value and `E[L₁² | B]` on a path independent of the
/// scheme paths.
fn independent_limit(
    cfg: &ExperimentConfig,
    model: &CoefficientModel,
    spec: &LimitProcessSpec,
    path: &FbmPath,
    index: u64,
) -> Result<(f64, f64)> {
    let reference: ReferencePath = doss_solution(model, cfg.xi, path.values(), path.fine_step())?;
    let u = simulate_limit_u(spec, model, &reference, cfg.seed, index)?;
    let limit = error_limit_process(model, &reference, &u)?;
    let cond = conditional_second_moment(spec, model, &reference)?;
    Ok((*limit.last().expect("non-empty"), cond))
}

/// Compares `2^{mγ}(X̄ − X)` with the limit: pathwise for limits in
/// probability, by moments and KS distance for limits in law.
pub fn run_distribution_experiment(cfg: &ExperimentConfig) -> Result<DistributionReport> {
    cfg.validate_single()?;
    let model = cfg.build_model()?;
    let spec = LimitProcessSpec::new(cfg.scheme, cfg.hurst)?;
    let gamma = theoretical_rate(cfg.scheme, cfg.hurst)?;
    let m = cfg.m;
    let scale = 2f64.powf(m as f64 * gamma);
    let sampler = FbmSampler::new(m + cfg.fine_offset, Hurst::new(cfg.hurst)?)?;
    let mode = if spec.is_pathwise() { ComparisonMode::Pathwise } else { ComparisonMode::Weak };
    let mut report = DistributionReport {
        scheme: cfg.scheme,
        model: cfg.model.name.clone(),
        hurst: cfg.hurst,
        m,
        gamma,
        mode,
        samples: Vec::new(),
        pathwise: None,
        weak: None,
    };
    match mode {
        ComparisonMode::Pathwise => {
            let rows = indexed(cfg.n_paths, |i| {
                let path = sampler.sample(cfg.seed, i as u64).with_level(m)?;
                let c = coupled_sample(cfg, &model, &spec, &path, scale, i as u64)?;
                let sup_limit = c.limit.iter().fold(0.0f64, |a, v| a.max(v.abs()));
                let gap = sup_distance(&c.error, &c.limit);
                let deviation = if sup_limit > 0.0 {
                    gap / sup_limit
                } else if gap == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                };
                Ok((c.error[c.error.len() - 1], c.limit[c.limit.len() - 1], deviation))
            })?;
            let deviations: Vec<f64> = rows.iter().map(|r| r.2).collect();
            report.samples = rows
                .iter()
                .enumerate()
                .map(|(i, r)| DistributionSample { sample_id: i, normalized_error: r.0, limit_sample: r.1 })
                .collect();
            report.pathwise = Some(PathwiseSummary {
                median_relative_deviation: stats::median(&deviations),
                relative_deviations: deviations,
            });
        }
        ComparisonMode::Weak => {
            let rows = indexed(cfg.n_paths, |i| {
                let path = sampler.sample(cfg.seed, i as u64).with_level(m)?;
                let traj = scheme_on(cfg, &model, &path)?;
                let exact = reference_coarse(&model, cfg.xi, &path, m)?;
                let err = scale * (traj.values[traj.values.len() - 1] - exact[exact.len() - 1]);
                let limit_path = sampler.sample_from(cfg.seed, Purpose::LimitFbm, i as u64);
                let (limit, cond) = independent_limit(cfg, &model, &spec, &limit_path, i as u64)?;
                Ok((err, limit, cond))
            })?;
            let errors: Vec<f64> = rows.iter().map(|r| r.0).collect();
            let limits: Vec<f64> = rows.iter().map(|r| r.1).collect();
            let conds: Vec<f64> = rows.iter().map(|r| r.2).collect();
            let sq_err: Vec<f64> = errors.iter().map(|v| v * v).collect();
            let sq_lim: Vec<f64> = limits.iter().map(|v| v * v).collect();
            let ks = stats::ks_statistic(&errors, &limits);
            report.samples = rows
                .iter()
                .enumerate()
                .map(|(i, r)| DistributionSample { sample_id: i, normalized_error: r.0, limit_sample: r.1 })
                .collect();
            report.weak = Some(WeakSummary {
                mean_error: stats::mean(&errors),
                mean_limit: stats::mean(&limits),
                second_moment_error: stats::mean(&sq_err),
                second_moment_error_se: stats::standard_error(&sq_err),
                second_moment_limit: stats::mean(&sq_lim),
                conditional_second_moment: stats::mean(&conds),
                conditional_second_moment_se: stats::standard_error(&conds),
                ks_distance: ks,
                ks_p_value: stats::ks_p_value(ks, errors.len(), limits.len()),
            });
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LlnCheck {
    pub q: usize,
    /// `2^{m(qH−1)} Σ F_k (ΔB_k)^q` on one path.
    pub value: f64,
    /// `E[Z^q] ∫₀¹ f(X_s) ds`.
    pub target: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceCheck {
    pub samples: usize,
    pub variance: f64,
    pub variance_se: f64,
    pub mean: f64,
    pub mean_se: f64,
    /// Limit variance, when the series converges.
    pub target: Option<f64>,
    pub relative_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayPoint {
    pub m: u32,
    /// Median over paths of `2^{rm} sup_k |U_m(τ_k)|`.
    pub median_scaled_sup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariationReport {
    pub hurst: f64,
    pub q: usize,
    pub m: u32,
    /// `E[Z^q]` for a standard Gaussian `Z`.
    pub gaussian_moment: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lln: Option<LlnCheck>,
    /// `H^(q)_m(1)` against `σ²_{q,H}`.
    pub hermite: VarianceCheck,
    /// `Ũ_m(1)` against `σ̃²_H`.
    pub trapezoid: VarianceCheck,
    pub decay_rate: f64,
    pub decay: Vec<DecayPoint>,
    pub decay_monotone: bool,
}

/// `E[Z^q]`: `(q−1)!!` for even `q`, zero for odd `q`.
pub fn gaussian_moment(q: usize) -> f64 {
    if q % 2 == 1 {
        return 0.0;
    }
    (1..q).step_by(2).map(|j| j as f64).product()
}

fn variance_check(values: &[f64], target: Option<f64>) -> VarianceCheck {
    let variance = stats::variance(values);
    VarianceCheck {
        samples: values.len(),
        variance,
        variance_se: stats::variance_standard_error(values),
        mean: stats::mean(values),
        mean_se: stats::standard_error(values),
        target,
        relative_error: target.map(|t| (variance - t).abs() / t),
    }
}

/// Decay curves use at most this many paths.
const DECAY_PATHS: usize = 32;

/// Law of large numbers on one path, simple-variation variances against
/// the limit constants, and the trapezoid-variation decay curve.
pub fn run_variation_experiment(cfg: &ExperimentConfig) -> Result<VariationReport> {
    cfg.validate_single()?;
    let model = cfg.build_model()?;
    let hurst = Hurst::new(cfg.hurst)?;
    let (h, q, m) = (cfg.hurst, cfg.q, cfg.m);
    if q < 2 {
        return Err(Error::Domain(format!("Hermite order must be at least 2, got {q}")));
    }
    let weight = cfg.variation_weight;

    // Single-path law of large numbers for even q.
    let sampler = FbmSampler::new(m + cfg.fine_offset, hurst)?;
    let lln = if q % 2 == 0 {
        let path = sampler.sample(cfg.seed, 0).with_level(m)?;
        let reference = doss_solution(&model, cfg.xi, path.values(), path.fine_step())?;
        let fx: Vec<f64> = reference.x.iter().map(|&x| weight.eval(&model, x)).collect();
        let target_integral: f64 = fx.windows(2).map(|w| 0.5 * (w[0] + w[1])).sum::<f64>() * reference.dt;
        let r = path.refinement();
        let b = path.coarse(m)?;
        let sum: f64 = (1..b.len())
            .map(|k| {
                let f = cfg.weight.average(|x| weight.eval(&model, x), reference.x[(k - 1) * r], reference.x[k * r]);
                f * (b[k] - b[k - 1]).powi(q as i32)
            })
            .sum();
        let value = 2f64.powf(m as f64 * (q as f64 * h - 1.0)) * sum;
        let target = gaussian_moment(q) * target_integral;
        Some(LlnCheck { q, value, target, relative_error: (value - target).abs() / target.abs() })
    } else {
        None
    };

    // Simple variations at t = 1.
    let pairs = indexed(cfg.n_paths, |i| {
        let path = sampler.sample(cfg.seed, stream_index(m, i + 1)).with_level(m)?;
        Ok((hermite_variation(q, &path, m, 1.0)?, simple_trapezoid_variation(&path, m, 1.0)?))
    })?;
    let hv: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let uv: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let sigma2 = sigma_qh_squared(q, h).ok().map(|s| s.0);
    let sigma_t2 = sigma_tilde_squared(h)?.0;

    // Decay of 2^{rm} sup |U_m| over m_min..=m_max on shared paths.
    let (lo, hi) = (cfg.m_min, cfg.m_max);
    if lo == 0 || lo > hi || hi + cfg.fine_offset > crate::fbm::MAX_FINE_LEVEL {
        return Err(Error::Config(format!("invalid decay level range {lo}..={hi}")));
    }
    let decay_sampler = FbmSampler::new(hi + cfg.fine_offset, hurst)?;
    let n_decay = cfg.n_paths.min(DECAY_PATHS);
    let sups = indexed(n_decay, |i| {
        let path = decay_sampler.sample(cfg.seed, stream_index(hi, i + (1 << 20)));
        let x_fine = match weight {
            crate::harness::config::VariationWeight::One => None,
            _ => Some(doss_solution(&model, cfg.xi, path.values(), path.fine_step())?.x),
        };
        (lo..=hi)
            .map(|mm| {
                let stride = 1usize << (path.fine_level() - mm);
                let xc: Vec<f64> = match &x_fine {
                    None => vec![1.0; (1 << mm) + 1],
                    Some(x) => x.iter().step_by(stride).copied().collect(),
                };
                let u = trapezoid_variation_path(|x| weight.eval(&model, x), &xc, &path, mm)?;
                Ok(u.iter().fold(0.0f64, |a, v| a.max(v.abs())))
            })
            .collect::<Result<Vec<f64>>>()
    })?;
    let decay: Vec<DecayPoint> = (lo..=hi)
        .enumerate()
        .map(|(j, mm)| {
            let scaled: Vec<f64> = sups.iter().map(|s| 2f64.powf(cfg.decay_rate * mm as f64) * s[j]).collect();
            DecayPoint { m: mm, median_scaled_sup: stats::median(&scaled) }
        })
        .collect();
    let decay_monotone = decay.windows(2).all(|w| w[1].median_scaled_sup < w[0].median_scaled_sup);

    Ok(VariationReport {
        hurst: h,
        q,
        m,
        gaussian_moment: gaussian_moment(q),
        lln,
        hermite: variance_check(&hv, sigma2),
        trapezoid: variance_check(&uv, Some(sigma_t2)),
        decay_rate: cfg.decay_rate,
        decay,
        decay_monotone,
    })
}
