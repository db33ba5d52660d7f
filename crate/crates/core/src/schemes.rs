//! Euler, Milstein and Crank–Nicolson steppers and trajectory runners.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbm::{holder_ratio, FbmPath};
use crate::model::CoefficientModel;

/// Default `ε` in `H − ε`.
pub const DEFAULT_EPSILON: f64 = 0.01;
/// Contraction margin required of every implicit step.
pub const CN_MARGIN: f64 = 0.9;
const NEWTON_MAX_ITER: u32 = 50;
const NEWTON_STEP_TOL: f64 = 1e-15;
const RESIDUAL_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    Euler,
    Milstein,
    #[serde(rename = "cn", alias = "crank-nicolson")]
    CrankNicolson,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 3] = [SchemeKind::Euler, SchemeKind::Milstein, SchemeKind::CrankNicolson];

    pub fn as_str(self) -> &'static str {
        match self {
            SchemeKind::Euler => "euler",
            SchemeKind::Milstein => "milstein",
            SchemeKind::CrankNicolson => "cn",
        }
    }
}

impl std::str::FromStr for SchemeKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(SchemeKind::Euler),
            "milstein" => Ok(SchemeKind::Milstein),
            "cn" | "crank-nicolson" => Ok(SchemeKind::CrankNicolson),
            other => Err(Error::Config(format!("unknown scheme `{other}` (expected euler, milstein or cn)"))),
        }
    }
}

impl std::fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Least integer `m ≥ 1` with
/// `m > max{1 + log₂ sup|b'|, (1 + log₂ sup|σ'|)/(H − ε)}`.
///
/// A zero sup-bound removes its branch.
pub fn admissible_level(sup_db: f64, sup_dsigma: f64, hurst: f64, epsilon: f64) -> Result<u32> {
    if !(epsilon > 0.0 && epsilon < hurst) {
        return Err(Error::Domain(format!("need 0 < ε < H, got ε = {epsilon}, H = {hurst}")));
    }
    if !(sup_db >= 0.0 && sup_dsigma >= 0.0) || !sup_db.is_finite() || !sup_dsigma.is_finite() {
        return Err(Error::Domain("sup bounds must be finite and non-negative".into()));
    }
    let branch_b = if sup_db > 0.0 { 1.0 + sup_db.log2() } else { f64::NEG_INFINITY };
    let branch_s = if sup_dsigma > 0.0 { (1.0 + sup_dsigma.log2()) / (hurst - epsilon) } else { f64::NEG_INFINITY };
    let bound = branch_b.max(branch_s);
    if bound < 1.0 {
        return Ok(1);
    }
    Ok(bound.floor() as u32 + 1)
}

/// [`admissible_level`] from a model's recorded bounds.
pub fn model_admissible_level(model: &CoefficientModel, hurst: f64, epsilon: f64) -> Result<u32> {
    let s = model.sup_bounds();
    admissible_level(s.db, s.dsigma, hurst, epsilon)
}

/// Outcome of one implicit step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CnStep {
    pub value: f64,
    pub iterations: u32,
    pub residual: f64,
    pub bisection: bool,
}

#[inline]
fn cn_residual(model: &CoefficientModel, xi: f64, b0: f64, s0: f64, dt: f64, db: f64, eta: f64) -> f64 {
    eta - xi - 0.5 * (b0 + model.b(eta)) * dt - 0.5 * (s0 + model.sigma(eta)) * db
}

/// Contraction factor `½ sup|b'| Δ + ½ sup|σ'| |ΔB|`.
pub fn cn_contraction(model: &CoefficientModel, dt: f64, db: f64) -> f64 {
    let s = model.sup_bounds();
    0.5 * s.db * dt + 0.5 * s.dsigma * db.abs()
}

/// Solves `η = ξ + ½(b(ξ)+b(η))Δ + ½(σ(ξ)+σ(η))ΔB`.
pub fn cn_step(model: &CoefficientModel, xi: f64, dt: f64, db: f64) -> Result<CnStep> {
    let factor = cn_contraction(model, dt, db);
    if factor >= CN_MARGIN {
        return Err(Error::InadmissibleStep { factor, limit: CN_MARGIN });
    }
    let b0 = model.b(xi);
    let s0 = model.sigma(xi);
    // Euler predictor.
    let mut eta = xi + b0 * dt + s0 * db;
    let mut residual = cn_residual(model, xi, b0, s0, dt, db, eta);
    let mut iterations = 0;
    while iterations < NEWTON_MAX_ITER && residual.abs() >= RESIDUAL_TOL {
        let slope = 1.0 - 0.5 * model.db(eta) * dt - 0.5 * model.dsigma(eta) * db;
        let update = residual / slope;
        eta -= update;
        iterations += 1;
        residual = cn_residual(model, xi, b0, s0, dt, db, eta);
        if !eta.is_finite() || update.abs() < NEWTON_STEP_TOL {
            break;
        }
    }
    if eta.is_finite() && residual.abs() <= RESIDUAL_TOL {
        return Ok(CnStep { value: eta, iterations, residual, bisection: false });
    }
    let value = cn_bisect(model, xi, b0, s0, dt, db)?;
    let residual = cn_residual(model, xi, b0, s0, dt, db, value);
    if residual.abs() > RESIDUAL_TOL {
        return Err(Error::Solver {
            context: "implicit step did not reach its residual tolerance".into(),
            attained: residual,
        });
    }
    Ok(CnStep { value, iterations, residual, bisection: true })
}

/// Bisection on the increasing residual map.
pub fn cn_bisect(model: &CoefficientModel, xi: f64, b0: f64, s0: f64, dt: f64, db: f64) -> Result<f64> {
    let f = |eta| cn_residual(model, xi, b0, s0, dt, db, eta);
    let mut half = xi.abs() + 10.0;
    let (mut lo, mut hi) = (xi - half, xi + half);
    let mut expansions = 0;
    while !(f(lo) <= 0.0 && f(hi) >= 0.0) {
        half *= 2.0;
        lo = xi - half;
        hi = xi + half;
        expansions += 1;
        if expansions > 60 {
            return Err(Error::Numeric(format!("implicit step root not bracketed around ξ = {xi}")));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let r = f(mid);
        if r == 0.0 {
            return Ok(mid);
        }
        if r < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (rl, rh) = (f(lo).abs(), f(hi).abs());
    Ok(if rl <= rh { lo } else { hi })
}

/// One explicit or implicit step of the given scheme.
pub fn scheme_step(kind: SchemeKind, model: &CoefficientModel, xi: f64, dt: f64, db: f64) -> Result<f64> {
    Ok(match kind {
        SchemeKind::Euler => euler_step(model, xi, dt, db),
        SchemeKind::Milstein => milstein_step(model, xi, dt, db),
        SchemeKind::CrankNicolson => cn_step(model, xi, dt, db)?.value,
    })
}

#[inline]
pub fn euler_step(model: &CoefficientModel, xi: f64, dt: f64, db: f64) -> f64 {
    xi + model.b(xi) * dt + model.sigma(xi) * db
}

#[inline]
pub fn milstein_step(model: &CoefficientModel, xi: f64, dt: f64, db: f64) -> f64 {
    let bd = model.b_derivs(xi);
    let (s, s1) = model.diffusion().value_and_slope(xi);
    let (b, b1) = (bd[0], bd[1]);
    xi + b * dt + 0.5 * b * b1 * dt * dt + 0.5 * (s * b1 + s1 * b) * dt * db + s * db + 0.5 * s * s1 * db * db
}

/// How paths outside the admissible set are handled by the implicit scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CnPolicy {
    /// Constant trajectory whenever the grid Hölder ratio exceeds one.
    OmegaCn,
    /// Constant trajectory only when some step violates the contraction
    /// margin; the Hölder flag is still recorded.
    #[default]
    StepContraction,
}

/// Options for [`run_scheme`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub epsilon: f64,
    /// Run the implicit scheme below its admissible level.
    pub force: bool,
    pub cn_policy: CnPolicy,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { epsilon: DEFAULT_EPSILON, force: false, cn_policy: CnPolicy::default() }
    }
}

/// Grid values of one scheme run.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeTrajectory {
    pub kind: SchemeKind,
    pub level: u32,
    pub xi: f64,
    pub values: Vec<f64>,
    /// Implicit scheme only: the path satisfies the grid Hölder bound.
    pub admissible: bool,
    /// Implicit scheme only: grid Hölder ratio over windows `2^{-m}`.
    pub holder_ratio: Option<f64>,
    /// Implicit scheme only: the trajectory was frozen at `ξ`.
    pub frozen: bool,
    /// Implicit scheme only: Newton iterations per step.
    pub newton_stats: Vec<u32>,
    /// Implicit scheme only: steps that needed bisection.
    pub bisections: usize,
    /// Largest implicit residual over all steps.
    pub max_residual: f64,
}

impl SchemeTrajectory {
    /// Step `Δ = 2^{-m}`.
    pub fn delta(&self) -> f64 {
        1.0 / (1u64 << self.level) as f64
    }

    /// Scheme value at fine node `j` of `path`: the one-step rule from the
    /// left coarse node with the fine-grid increment.
    pub fn dense(&self, model: &CoefficientModel, path: &FbmPath, j: usize) -> Result<f64> {
        let r = 1usize << (path.fine_level() - self.level);
        if j > path.fine_cells() {
            return Err(Error::Contract(format!("fine index {j} outside the grid")));
        }
        if j == 0 {
            return Ok(self.values[0]);
        }
        if self.frozen {
            return Ok(self.xi);
        }
        let k = (j - 1) / r;
        let start = k * r;
        let dt = (j - start) as f64 * path.fine_step();
        let v = path.values();
        let db = v[j] - v[start];
        scheme_step(self.kind, model, self.values[k], dt, db)
    }

    /// CSV `t,x_scheme` on the coarse grid.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,x_scheme")?;
        let dt = self.delta();
        for (k, v) in self.values.iter().enumerate() {
            writeln!(out, "{:.16e},{:.16e}", k as f64 * dt, v)?;
        }
        Ok(())
    }
}

/// Runs a scheme on the coarse grid of `path` (its `level()`).
pub fn run_scheme(
    kind: SchemeKind,
    model: &CoefficientModel,
    xi: f64,
    path: &FbmPath,
    opts: &RunOptions,
) -> Result<SchemeTrajectory> {
    let m = path.level();
    let incs = path.coarse_increments();
    let dt = 1.0 / (1u64 << m) as f64;
    let mut traj = SchemeTrajectory {
        kind,
        level: m,
        xi,
        values: Vec::with_capacity(incs.len() + 1),
        admissible: true,
        holder_ratio: None,
        frozen: false,
        newton_stats: Vec::new(),
        bisections: 0,
        max_residual: 0.0,
    };
    traj.values.push(xi);
    match kind {
        SchemeKind::Euler => {
            model.require_order(2, "euler")?;
            let mut x = xi;
            for db in incs {
                x = euler_step(model, x, dt, db);
                traj.values.push(x);
            }
        }
        SchemeKind::Milstein => {
            model.require_order(2, "milstein")?;
            let mut x = xi;
            for db in incs {
                x = milstein_step(model, x, dt, db);
                traj.values.push(x);
            }
        }
        SchemeKind::CrankNicolson => {
            let h = path.hurst().value();
            let m_star = model_admissible_level(model, h, opts.epsilon)?;
            if m < m_star && !opts.force {
                return Err(Error::Contract(format!(
                    "level {m} is below the admissible level {m_star}; pass force to run anyway"
                )));
            }
            let ratio = holder_ratio(path, h - opts.epsilon, dt)?;
            traj.holder_ratio = Some(ratio);
            traj.admissible = ratio <= 1.0;
            if opts.cn_policy == CnPolicy::OmegaCn && !traj.admissible {
                traj.frozen = true;
            } else {
                traj.frozen = incs.iter().any(|&db| cn_contraction(model, dt, db) >= CN_MARGIN);
            }
            if traj.frozen {
                traj.values.resize(incs.len() + 1, xi);
                return Ok(traj);
            }
            let mut x = xi;
            traj.newton_stats.reserve(incs.len());
            for db in incs {
                let step = cn_step(model, x, dt, db)?;
                x = step.value;
                traj.newton_stats.push(step.iterations);
                traj.bisections += step.bisection as usize;
                traj.max_residual = traj.max_residual.max(step.residual.abs());
                traj.values.push(x);
            }
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm::{sample_fbm, Hurst};
    use crate::model::{Diffusion, Drift};
    use serde_json::json;

    fn constant() -> CoefficientModel {
        CoefficientModel::from_registry("constant", &json!({"theta": 0.5, "c": 2.0})).unwrap()
    }

    #[test]
    fn admissible_level_examples() {
        assert_eq!(admissible_level(0.0, 0.0, 0.5, 0.01).unwrap(), 1);
        assert_eq!(admissible_level(1.0, 1.0, 0.41, 0.01).unwrap(), 3);
        assert_eq!(admissible_level(1.0, 2.0, 0.46, 0.01).unwrap(), 5);
        // An integer bound must be exceeded strictly.
        assert_eq!(admissible_level(4.0, 0.0, 0.5, 0.01).unwrap(), 4);
        assert!(admissible_level(1.0, 1.0, 0.3, 0.3).is_err());
    }

    #[test]
    fn constant_coefficient_steps() {
        let m = constant();
        for kind in SchemeKind::ALL {
            let v = scheme_step(kind, &m, 1.0, 0.25, 0.1).unwrap();
            assert!((v - 1.325).abs() < 1e-15, "{kind}: {v}");
        }
    }

    #[test]
    fn milstein_without_drift_matches_hand_step() {
        let m = CoefficientModel::from_registry("trig", &json!({"drift": "zero"})).unwrap();
        let (xi, db) = (0.7f64, 0.13f64);
        let s = 2.0 + xi.sin();
        let s1 = xi.cos();
        let oracle = xi + s * db + 0.5 * s * s1 * db * db;
        assert!((milstein_step(&m, xi, 0.01, db) - oracle).abs() < 1e-15);
    }

    #[test]
    fn cn_newton_agrees_with_bisection() {
        let m = CoefficientModel::from_registry("sinh", &json!({"drift": "cos"})).unwrap();
        for &(xi, db) in &[(0.3, 0.2), (-2.0, -0.4), (4.0, 0.05), (0.0, 0.6)] {
            let dt = 1.0 / 64.0;
            let step = cn_step(&m, xi, dt, db).unwrap();
            let bis = cn_bisect(&m, xi, m.b(xi), m.sigma(xi), dt, db).unwrap();
            assert!((step.value - bis).abs() < 1e-12);
            assert!(step.residual.abs() <= 1e-13);
            let slope = 1.0 - 0.5 * m.db(step.value) * dt - 0.5 * m.dsigma(step.value) * db;
            assert!(slope >= 0.5);
        }
    }

    #[test]
    fn cn_rejects_large_steps() {
        let m = CoefficientModel::from_registry("sinh", &json!({})).unwrap();
        assert!(matches!(cn_step(&m, 0.0, 0.01, 1.9), Err(Error::InadmissibleStep { .. })));
    }

    #[test]
    fn constant_model_schemes_are_exact() {
        let m = constant();
        let path = sample_fbm(9, Hurst::new(0.4).unwrap(), 3).unwrap().with_level(6).unwrap();
        let coarse = path.coarse(6).unwrap();
        let opts = RunOptions::default();
        for kind in SchemeKind::ALL {
            let tr = run_scheme(kind, &m, 1.0, &path, &opts).unwrap();
            assert!(!tr.frozen);
            for (k, (x, b)) in tr.values.iter().zip(&coarse).enumerate() {
                let exact = 1.0 + 0.5 * k as f64 / 64.0 + 2.0 * b;
                assert!((x - exact).abs() < 1e-12, "{kind} k={k}");
            }
        }
    }

    #[test]
    fn cn_trajectory_residuals_and_policies() {
        let m = CoefficientModel::from_registry("sinh", &json!({})).unwrap();
        let path = sample_fbm(10, Hurst::new(0.5).unwrap(), 11).unwrap().with_level(8).unwrap();
        let tr = run_scheme(SchemeKind::CrankNicolson, &m, 1.0, &path, &RunOptions::default()).unwrap();
        assert!(tr.max_residual <= 1e-13);
        assert_eq!(tr.newton_stats.len(), 256);
        assert!(tr.holder_ratio.is_some());
        let strict = RunOptions { cn_policy: CnPolicy::OmegaCn, ..Default::default() };
        let tr2 = run_scheme(SchemeKind::CrankNicolson, &m, 1.0, &path, &strict).unwrap();
        assert_eq!(tr2.frozen, !tr2.admissible);
        if tr2.frozen {
            assert!(tr2.values.iter().all(|&v| v == 1.0));
        }
    }

    #[test]
    fn cn_level_guard() {
        let m = CoefficientModel::new("steep", Drift::Zero, Diffusion::Trig { level: 20.0, amplitude: 16.0 }).unwrap();
        let path = sample_fbm(6, Hurst::new(0.5).unwrap(), 1).unwrap().with_level(4).unwrap();
        assert!(matches!(
            run_scheme(SchemeKind::CrankNicolson, &m, 0.0, &path, &RunOptions::default()),
            Err(Error::Contract(_))
        ));
        let forced = RunOptions { force: true, ..Default::default() };
        assert!(run_scheme(SchemeKind::CrankNicolson, &m, 0.0, &path, &forced).is_ok());
    }

    #[test]
    fn dense_output_hits_nodes_bitwise() {
        let m = CoefficientModel::from_registry("trig", &json!({})).unwrap();
        let path = sample_fbm(9, Hurst::new(0.45).unwrap(), 5).unwrap().with_level(5).unwrap();
        for kind in SchemeKind::ALL {
            let tr = run_scheme(kind, &m, 0.2, &path, &RunOptions::default()).unwrap();
            for k in 0..=32 {
                let d = tr.dense(&m, &path, k * 16).unwrap();
                assert_eq!(d.to_bits(), tr.values[k].to_bits(), "{kind} k={k}");
            }
        }
    }

    #[test]
    fn scheme_kind_round_trip() {
        for kind in SchemeKind::ALL {
            assert_eq!(kind.as_str().parse::<SchemeKind>().unwrap(), kind);
            let js = serde_json::to_string(&kind).unwrap();
            assert_eq!(serde_json::from_str::<SchemeKind>(&js).unwrap(), kind);
        }
        assert!("rk4".parse::<SchemeKind>().is_err());
    }
}
