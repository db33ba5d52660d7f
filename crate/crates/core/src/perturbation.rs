//! Perturbation paths `h^(m)` that reproduce a scheme exactly, the
//! one-step errors `κ̂_k`, the explicit main terms `κ̃_k` and the four
//! partial-sum processes built from them.

use std::io::Write;

use crate::error::{Error, Result};
use crate::fbm::FbmPath;
use crate::flow::{self, CellIntegrals};
use crate::model::CoefficientModel;
use crate::ode::{Tolerance, AUX_TOL};
use crate::schemes::{scheme_step, SchemeKind, SchemeTrajectory};

/// Every coefficient function at one point; entries that a scheme does not
/// use are zero.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct FamilyValues {
    pub f2_hat: f64,
    pub f2: f64,
    pub f3_hat: f64,
    pub f3: f64,
    pub f4_hat: f64,
    pub f4: f64,
    pub f4_dagger: f64,
    pub g1_hat: f64,
    pub g1: f64,
    pub phi_hat: f64,
    pub phi: f64,
    pub phi_hat_011: f64,
    pub phi_hat_101: f64,
    pub phi_hat_110: f64,
    pub phi_011: f64,
    pub phi_101: f64,
    pub phi_110: f64,
    pub psi: f64,
    /// `f₃'`, needed by the identity checks.
    pub f3_prime: f64,
}

/// The scheme-specific coefficient functions, evaluated on demand.
#[derive(Debug, Clone)]
pub struct CoefficientFamily {
    scheme: SchemeKind,
    model: CoefficientModel,
}

/// Derivative order each family needs from the model.
pub fn required_order(scheme: SchemeKind) -> usize {
    match scheme {
        SchemeKind::Euler => 2,
        SchemeKind::CrankNicolson => 4,
        SchemeKind::Milstein => 6,
    }
}

/// Builds the family for `scheme` over `model`.
pub fn coefficient_functions(scheme: SchemeKind, model: &CoefficientModel) -> Result<CoefficientFamily> {
    model.require_order(required_order(scheme), "coefficient_functions")?;
    Ok(CoefficientFamily { scheme, model: model.clone() })
}

impl CoefficientFamily {
    pub fn scheme(&self) -> SchemeKind {
        self.scheme
    }
    pub fn model(&self) -> &CoefficientModel {
        &self.model
    }

    pub fn eval(&self, x: f64) -> FamilyValues {
        let sd = self.model.sigma_derivs(x);
        let bd = self.model.b_derivs(x);
        let (s, s1, s2, s3) = (sd[0], sd[1], sd[2], sd[3]);
        let (b, b1, b2) = (bd[0], bd[1], bd[2]);
        let mut v = FamilyValues::default();
        if self.scheme == SchemeKind::Euler {
            v.f2_hat = -0.5 * s * s1;
            v.f2 = -0.5 * s1;
            return v;
        }
        let w = s * b1 - s1 * b;
        let ss1_d = s1 * s1 + s * s2; // (σσ')'
        v.g1_hat = w;
        v.g1 = w / s;
        v.phi_hat_011 = -b * ss1_d;
        v.phi_hat_101 = -s * (b1 * s1 + b * s2);
        v.phi_hat_110 = -s * (s1 * b1 + s * b2);
        v.phi_011 = -b * ss1_d / s;
        v.phi_101 = -(b1 * s1 + b * s2);
        v.phi_110 = -(s1 * b1 + s * b2);
        match self.scheme {
            SchemeKind::CrankNicolson => {
                v.f3_hat = (s * s * s2 + s * s1 * s1) / 12.0;
                v.f4_hat = (s.powi(3) * s3 + 5.0 * s * s * s1 * s2 + 2.0 * s * s1.powi(3)) / 24.0;
                v.f3 = (s * s2 + s1 * s1) / 12.0;
                v.f4 = s * (s * s3 + 3.0 * s1 * s2) / 24.0;
                v.f3_prime = (s * s3 + 3.0 * s1 * s2) / 12.0;
                v.phi_hat = 0.25 * (b * s1 * s1 + s * s * b2) + 0.5 * (b * s * s2 + s * s1 * b1);
                v.phi = 0.25 * (b * s1 * s1 / s + s * b2) + 0.5 * (b * s2 + s1 * b1);
            }
            SchemeKind::Milstein => {
                let p2_d = s1.powi(3) + 4.0 * s * s1 * s2 + s * s * s3; // (σ(σσ')')'
                v.f3_hat = -s * ss1_d / 6.0;
                v.f4_hat = -s * p2_d / 24.0;
                v.f3 = -ss1_d / 6.0;
                v.f4 = -(s * s * s3 - 3.0 * s1.powi(3)) / 24.0;
                v.f4_dagger = (s * s * s3 + 6.0 * s * s1 * s2 + 3.0 * s1.powi(3)) / 24.0;
                v.f3_prime = -(3.0 * s1 * s2 + s * s3) / 6.0;
            }
            SchemeKind::Euler => unreachable!(),
        }
        v.psi = v.phi + 0.25 * (v.phi_011 + v.phi_110);
        v
    }
}

/// `κ̂_k = ξ_k − X_Δ(ξ_{k−1}, θ_{τ_{k−1}}B)` for the scheme step from
/// `xi_prev` over coarse cell `k` (1-based) of `path`.
pub fn one_step_error(
    kind: SchemeKind,
    model: &CoefficientModel,
    xi_prev: f64,
    path: &FbmPath,
    k: usize,
) -> Result<f64> {
    let cell = path.cell(k);
    let dt = 1.0 / (1u64 << path.level()) as f64;
    let next = scheme_step(kind, model, xi_prev, dt, *cell.last().unwrap())?;
    let exact = flow::evolve(model, xi_prev, &cell, path.fine_step(), AUX_TOL)?;
    Ok(next - exact)
}

/// Leading part of `κ̂_k` with coefficients at `x`.
pub fn one_step_expansion(family: &CoefficientFamily, x: f64, c: &CellIntegrals) -> f64 {
    let v = family.eval(x);
    let db = c.dg;
    if family.scheme == SchemeKind::Euler {
        return v.f2_hat * db * db;
    }
    v.f3_hat * db.powi(3)
        + v.f4_hat * db.powi(4)
        + v.g1_hat * c.trapezoid_kernel()
        + v.phi_hat * c.dt * db * db
        + v.phi_hat_011 * c.g011
        + v.phi_hat_101 * c.g101
        + v.phi_hat_110 * c.g110
}

/// Piecewise-linear perturbation with `h(τ_k) − h(τ_{k−1}) = κ_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationPath {
    pub level: u32,
    pub kappa: Vec<f64>,
    /// `X_Δ(ξ_{k−1}, θB + κ_k ℓ/Δ) − ξ_k` per cell.
    pub residuals: Vec<f64>,
    pub iterations: Vec<u32>,
}

impl PerturbationPath {
    /// `h` at the coarse nodes.
    pub fn coarse_values(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.kappa.len() + 1);
        let mut acc = 0.0;
        out.push(0.0);
        for k in &self.kappa {
            acc += k;
            out.push(acc);
        }
        out
    }

    /// `h` at the nodes of a grid `refinement` times finer.
    pub fn fine_values(&self, refinement: usize) -> Vec<f64> {
        let coarse = self.coarse_values();
        let mut out = Vec::with_capacity(self.kappa.len() * refinement + 1);
        for (k, kap) in self.kappa.iter().enumerate() {
            for j in 0..refinement {
                out.push(coarse[k] + kap * (j as f64 / refinement as f64));
            }
        }
        out.push(*coarse.last().unwrap());
        out
    }

    pub fn sup_norm(&self) -> f64 {
        self.coarse_values().iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    /// CSV `k,kappa,kappa_tilde,residual`.
    pub fn write_csv<W: Write>(&self, kappa_tilde: &[f64], mut out: W) -> Result<()> {
        if kappa_tilde.len() != self.kappa.len() {
            return Err(Error::Contract("main-term sequence has the wrong length".into()));
        }
        writeln!(out, "k,kappa,kappa_tilde,residual")?;
        for (k, ((kap, tilde), res)) in self.kappa.iter().zip(kappa_tilde).zip(&self.residuals).enumerate() {
            writeln!(out, "{},{kap:.16e},{tilde:.16e},{res:.16e}", k + 1)?;
        }
        Ok(())
    }
}

/// Value and `κ`-derivative of `X_Δ(x0, g + κ·ramp)` over one coarse cell.
fn cell_map(
    model: &CoefficientModel,
    x0: f64,
    cell: &[f64],
    fine_dt: f64,
    kappa: f64,
    tol: Tolerance,
) -> Result<(f64, f64)> {
    let r = cell.len() - 1;
    let driver: Vec<f64> = cell.iter().enumerate().map(|(j, g)| g + kappa * (j as f64 / r as f64)).collect();
    let (xs, ws) = flow::evolve_with_w(model, x0, &driver, fine_dt, tol)?;
    let end = ws[r];
    let mut acc = 0.0;
    for j in 1..=r {
        acc += 0.5 * ((end - ws[j - 1]).exp() + (end - ws[j]).exp());
    }
    // Ramp slope is 1/Δ = 1/(r·δ); the δ of the quadrature cancels.
    let deriv = model.sigma(xs[r]) * acc / r as f64;
    Ok((xs[r], deriv))
}

/// Solves `X_Δ(x0, θB + κℓ/Δ) = target` on one cell by safeguarded Newton.
pub fn solve_cell_kappa(
    model: &CoefficientModel,
    x0: f64,
    target: f64,
    cell: &[f64],
    fine_dt: f64,
) -> Result<(f64, f64, u32)> {
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    let mut kappa = 0.0;
    let mut best = (f64::INFINITY, 0.0);
    for iter in 1..=100u32 {
        let (x, d) = cell_map(model, x0, cell, fine_dt, kappa, AUX_TOL)?;
        let f = x - target;
        if f.abs() < best.0.abs() {
            best = (f, kappa);
        }
        if f.abs() <= 1e-13 * target.abs().max(1.0) {
            return Ok((kappa, f, iter));
        }
        if f < 0.0 {
            lo = lo.max(kappa);
        } else {
            hi = hi.min(kappa);
        }
        let mut next = if d > 0.0 && d.is_finite() { kappa - f / d } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = match (lo.is_finite(), hi.is_finite()) {
                (true, true) => 0.5 * (lo + hi),
                (true, false) => lo + 2.0 * (lo.abs() + 1.0),
                (false, true) => hi - 2.0 * (hi.abs() + 1.0),
                (false, false) => return Err(Error::Numeric("perturbation map has no usable slope".into())),
            };
        }
        if (next - kappa).abs() <= 1e-16 * kappa.abs().max(1e-3) {
            let (x, _) = cell_map(model, x0, cell, fine_dt, next, AUX_TOL)?;
            return Ok((next, x - target, iter));
        }
        kappa = next;
    }
    if best.0.abs() <= 1e-10 {
        return Ok((best.1, best.0, 100));
    }
    Err(Error::Numeric(format!("perturbation root not found from x0 = {x0} to {target}; best residual {}", best.0)))
}

/// The unique perturbation reproducing `traj` on `path`.
pub fn solve_perturbation(
    traj: &SchemeTrajectory,
    model: &CoefficientModel,
    path: &FbmPath,
) -> Result<PerturbationPath> {
    model.require_elliptic("solve_perturbation")?;
    if traj.level != path.level() {
        return Err(Error::Contract(format!(
            "trajectory level {} differs from path level {}",
            traj.level,
            path.level()
        )));
    }
    let n = traj.values.len() - 1;
    let mut out = PerturbationPath {
        level: traj.level,
        kappa: Vec::with_capacity(n),
        residuals: Vec::with_capacity(n),
        iterations: Vec::with_capacity(n),
    };
    for k in 1..=n {
        let cell = path.cell(k);
        let (kap, res, it) = solve_cell_kappa(model, traj.values[k - 1], traj.values[k], &cell, path.fine_step())?;
        out.kappa.push(kap);
        out.residuals.push(res);
        out.iterations.push(it);
    }
    Ok(out)
}

/// `max_k |X_{τ_k}(ξ, B + h) − ξ_k|` by one global solve on the fine grid.
pub fn reconstruction_error(
    model: &CoefficientModel,
    traj: &SchemeTrajectory,
    path: &FbmPath,
    pert: &PerturbationPath,
) -> Result<f64> {
    let r = path.refinement();
    let h = pert.fine_values(r);
    let driver: Vec<f64> = path.values().iter().zip(&h).map(|(b, h)| b + h).collect();
    let opts = flow::ReferenceOptions { with_a: false, ..Default::default() };
    let sol = flow::doss_solution_with(model, traj.xi, &driver, path.fine_step(), &opts)?;
    Ok(traj.values.iter().enumerate().map(|(k, v)| (sol.x[k * r] - v).abs()).fold(0.0, f64::max))
}

/// Closed-form `κ_k = F(ξ_k) − F(ξ_{k−1}) − ΔB_k`, valid when `b ≡ 0`.
pub fn driftless_kappa(model: &CoefficientModel, traj: &SchemeTrajectory, path: &FbmPath) -> Result<Vec<f64>> {
    let incs = path.coarse_increments();
    let f: Vec<f64> = traj.values.iter().map(|&x| flow::lamperti_f(model, x)).collect::<Result<_>>()?;
    Ok((1..f.len()).map(|k| f[k] - f[k - 1] - incs[k - 1]).collect())
}

/// `κ̃_k` with coefficients at `x_left = X_{τ_{k−1}}`.
pub fn main_term_kappa(family: &CoefficientFamily, x_left: f64, c: &CellIntegrals) -> f64 {
    let v = family.eval(x_left);
    let db = c.dg;
    if family.scheme == SchemeKind::Euler {
        return v.f2 * db * db;
    }
    v.f3 * db.powi(3)
        + v.f4 * db.powi(4)
        + v.g1 * c.trapezoid_kernel()
        + v.phi * c.dt * db * db
        + v.phi_011 * c.g011
        + v.phi_101 * c.g101
        + v.phi_110 * c.g110
}

/// Iterated integrals for every coarse cell of `path`.
pub fn cell_integrals(path: &FbmPath) -> Vec<CellIntegrals> {
    let n = 1usize << path.level();
    (1..=n).map(|k| CellIntegrals::new(&path.cell(k), path.fine_step())).collect()
}

/// `κ̃_1..κ̃_{2^m}` given the reference at the coarse nodes.
pub fn main_terms(family: &CoefficientFamily, x_coarse: &[f64], path: &FbmPath) -> Result<Vec<f64>> {
    let cells = cell_integrals(path);
    if x_coarse.len() != cells.len() + 1 {
        return Err(Error::Contract("reference must be given at every coarse node".into()));
    }
    Ok(cells.iter().enumerate().map(|(k, c)| main_term_kappa(family, x_coarse[k], c)).collect())
}

/// The partial-sum processes at the coarse nodes (index `k` holds the sum
/// over cells `1..=k`).
#[derive(Debug, Clone, PartialEq)]
pub struct PhiProcesses {
    pub level: u32,
    pub phi: [Vec<f64>; 4],
}

impl PhiProcesses {
    /// Right-continuous step value at time `t`.
    pub fn at(&self, i: usize, t: f64) -> f64 {
        let n = self.phi[i].len() - 1;
        let k = ((t * n as f64).floor().max(0.0) as usize).min(n);
        self.phi[i][k]
    }

    /// CSV `t,phi1,phi2,phi3,phi4`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,phi1,phi2,phi3,phi4")?;
        let n = self.phi[0].len() - 1;
        for k in 0..=n {
            writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                k as f64 / n as f64,
                self.phi[0][k],
                self.phi[1][k],
                self.phi[2][k],
                self.phi[3][k]
            )?;
        }
        Ok(())
    }
}

/// `Φ₁..Φ₄` with coefficients at the reference values `x_coarse`.
pub fn phi_processes(family: &CoefficientFamily, x_coarse: &[f64], path: &FbmPath) -> Result<PhiProcesses> {
    let cells = cell_integrals(path);
    if x_coarse.len() != cells.len() + 1 {
        return Err(Error::Contract("reference must be given at every coarse node".into()));
    }
    let mut phi: [Vec<f64>; 4] = Default::default();
    let mut acc = [0.0; 4];
    for p in phi.iter_mut() {
        p.reserve(cells.len() + 1);
        p.push(0.0);
    }
    let euler = family.scheme == SchemeKind::Euler;
    for (k, c) in cells.iter().enumerate() {
        let v = family.eval(x_coarse[k]);
        let db = c.dg;
        let terms = if euler {
            [v.f2 * db * db, 0.0, 0.0, 0.0]
        } else {
            let kern = c.trapezoid_kernel();
            let sigma1 = family.model.dsigma(x_coarse[k]);
            [
                v.f3 * db.powi(3) + v.f4 * db.powi(4),
                v.g1 * kern,
                v.phi * c.dt * db * db + v.phi_011 * c.g011 + v.phi_101 * c.g101 + v.phi_110 * c.g110,
                -v.g1 * sigma1 * db * kern,
            ]
        };
        for i in 0..4 {
            acc[i] += terms[i];
            phi[i].push(acc[i]);
        }
    }
    Ok(PhiProcesses { level: path.level(), phi })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm::{sample_fbm, FbmSampler, Hurst};
    use crate::model::{Diffusion, Drift};
    use crate::schemes::{run_scheme, RunOptions};
    use serde_json::json;

    fn sinh(drift: &str) -> CoefficientModel {
        CoefficientModel::from_registry("sinh", &json!({ "drift": drift })).unwrap()
    }

    fn grid() -> impl Iterator<Item = f64> {
        (0..200).map(|i| -3.0 + 6.0 * i as f64 / 199.0)
    }

    #[test]
    fn family_examples() {
        let c = CoefficientModel::from_registry("constant", &json!({})).unwrap();
        let fam = coefficient_functions(SchemeKind::CrankNicolson, &c).unwrap();
        assert_eq!(fam.eval(0.3).f3, 0.0);
        let fam = coefficient_functions(SchemeKind::CrankNicolson, &sinh("neg-x")).unwrap();
        assert!((fam.eval(0.0).f3 - 1.0 / 12.0).abs() < 1e-15);
        let fam = coefficient_functions(SchemeKind::CrankNicolson, &sinh("zero")).unwrap();
        for x in grid() {
            assert_eq!(fam.eval(x).g1, 0.0);
        }
    }

    #[test]
    fn order_contract() {
        let m = sinh("cos").with_max_order(4);
        assert!(coefficient_functions(SchemeKind::CrankNicolson, &m).is_ok());
        assert!(matches!(coefficient_functions(SchemeKind::Milstein, &m), Err(Error::Contract(_))));
    }

    #[test]
    fn family_identities() {
        let trig = CoefficientModel::from_registry("trig", &json!({})).unwrap();
        for model in [sinh("cos"), sinh("neg-x"), trig] {
            let cn = coefficient_functions(SchemeKind::CrankNicolson, &model).unwrap();
            let mil = coefficient_functions(SchemeKind::Milstein, &model).unwrap();
            for x in grid() {
                let s = model.sigma(x);
                let s1 = model.dsigma(x);
                for v in [cn.eval(x), mil.eval(x)] {
                    for (h, hh) in [
                        (v.f3, v.f3_hat),
                        (v.g1, v.g1_hat),
                        (v.phi, v.phi_hat),
                        (v.phi_011, v.phi_hat_011),
                        (v.phi_101, v.phi_hat_101),
                        (v.phi_110, v.phi_hat_110),
                    ] {
                        assert!((h - hh / s).abs() < 1e-10);
                    }
                    assert!((v.f4 - (v.f4_hat - s1 * v.f3_hat) / s).abs() < 1e-10);
                    assert!((v.psi - (v.phi + 0.25 * (v.phi_011 + v.phi_110))).abs() < 1e-12);
                }
                let c = cn.eval(x);
                assert!((c.f4 - 0.5 * s * c.f3_prime).abs() < 1e-10);
                let bd = model.b_derivs(x);
                let sd = model.sigma_derivs(x);
                assert!((c.psi - 0.25 * (sd[1] * bd[1] + sd[2] * bd[0])).abs() < 1e-10);
                let m = mil.eval(x);
                assert!((m.f4_dagger - (m.f4 - 0.5 * s * m.f3_prime)).abs() < 1e-10);
                assert_eq!(m.phi, 0.0);
                // f₃' against a central difference.
                let h = 1e-5;
                let fd = (cn.eval(x + h).f3 - cn.eval(x - h).f3) / (2.0 * h);
                assert!((fd - c.f3_prime).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn constant_coefficients_have_zero_errors() {
        let c = CoefficientModel::from_registry("constant", &json!({})).unwrap();
        let path = sample_fbm(10, Hurst::new(0.45).unwrap(), 2).unwrap().with_level(6).unwrap();
        for kind in SchemeKind::ALL {
            for k in [1, 17, 64] {
                assert!(one_step_error(kind, &c, 0.4, &path, k).unwrap().abs() < 1e-12);
            }
            let tr = run_scheme(kind, &c, 1.0, &path, &RunOptions::default()).unwrap();
            let p = solve_perturbation(&tr, &c, &path).unwrap();
            assert!(p.kappa.iter().all(|k| k.abs() < 1e-12));
        }
    }

    #[test]
    fn euler_one_step_leading_term() {
        let m = CoefficientModel::from_registry("trig", &json!({"drift": "zero"})).unwrap();
        let xi = 0.4;
        let s = m.sigma(xi);
        let s1 = m.dsigma(xi);
        let mut prev = None;
        for e in 4..=8 {
            let db = 0.5f64.powi(e);
            // Driver is a straight segment of 64 fine cells with increment db.
            let cell: Vec<f64> = (0..=64).map(|j| db * j as f64 / 64.0).collect();
            let next = scheme_step(SchemeKind::Euler, &m, xi, 0.0, db).unwrap();
            let exact = flow::evolve(&m, xi, &cell, 1e-3, AUX_TOL).unwrap();
            let rest = (next - exact + 0.5 * s * s1 * db * db).abs();
            if let Some(p) = prev {
                assert!(p / rest > 2f64.powf(2.7), "ratio {}", p / rest);
            }
            prev = Some(rest);
        }
    }

    #[test]
    fn cn_one_step_expansion_scales() {
        let m = sinh("zero");
        let fam = coefficient_functions(SchemeKind::CrankNicolson, &m).unwrap();
        let h = 0.45;
        let sampler = FbmSampler::new(16, Hurst::new(h).unwrap()).unwrap();
        let mut medians = Vec::new();
        for level in [6u32, 8, 10] {
            let mut errs: Vec<f64> = (0..16)
                .map(|seed| {
                    let p = sampler.sample(seed, 0).with_level(level).unwrap();
                    let c = CellIntegrals::new(&p.cell(1), p.fine_step());
                    let e = one_step_error(SchemeKind::CrankNicolson, &m, 0.3, &p, 1).unwrap();
                    (e - one_step_expansion(&fam, 0.3, &c)).abs()
                })
                .collect();
            errs.sort_by(f64::total_cmp);
            medians.push(0.5 * (errs[7] + errs[8]));
        }
        // Two levels shrink the remainder by about 2^{-2·5H⁻}.
        for w in medians.windows(2) {
            let rate = (w[0] / w[1]).log2() / 2.0;
            assert!(rate > 5.0 * (h - 0.01) - 0.5, "medians {medians:?}");
        }
    }

    #[test]
    fn perturbation_reconstructs_and_matches_closed_form() {
        let m = sinh("zero");
        let path = sample_fbm(12, Hurst::new(0.5).unwrap(), 7).unwrap().with_level(7).unwrap();
        for kind in SchemeKind::ALL {
            let tr = run_scheme(kind, &m, 1.0, &path, &RunOptions::default()).unwrap();
            let p = solve_perturbation(&tr, &m, &path).unwrap();
            let closed = driftless_kappa(&m, &tr, &path).unwrap();
            for (a, b) in p.kappa.iter().zip(&closed) {
                assert!((a - b).abs() < 1e-10, "{kind}: {a} vs {b}");
            }
            assert!(reconstruction_error(&m, &tr, &path, &p).unwrap() < 1e-9);
        }
        let m = sinh("neg-x");
        let tr = run_scheme(SchemeKind::CrankNicolson, &m, 1.0, &path, &RunOptions::default()).unwrap();
        let p = solve_perturbation(&tr, &m, &path).unwrap();
        assert!(p.residuals.iter().all(|r| r.abs() < 1e-9));
        assert!(reconstruction_error(&m, &tr, &path, &p).unwrap() < 1e-9);
    }

    #[test]
    fn main_terms_vanish_for_constant_sigma_without_drift() {
        let m = CoefficientModel::new("c", Drift::Zero, Diffusion::Constant { c: 1.3 }).unwrap();
        let path = sample_fbm(9, Hurst::new(0.4).unwrap(), 1).unwrap().with_level(4).unwrap();
        let x: Vec<f64> = vec![0.1; 17];
        for kind in SchemeKind::ALL {
            let fam = coefficient_functions(kind, &m).unwrap();
            assert!(main_terms(&fam, &x, &path).unwrap().iter().all(|&v| v == 0.0));
            let phi = phi_processes(&fam, &x, &path).unwrap();
            assert!(phi.phi.iter().all(|p| p.iter().all(|&v| v == 0.0)));
        }
    }

    #[test]
    fn euler_main_term_form() {
        let m = sinh("neg-x");
        let fam = coefficient_functions(SchemeKind::Euler, &m).unwrap();
        let path = sample_fbm(8, Hurst::new(0.75).unwrap(), 4).unwrap().with_level(4).unwrap();
        let x: Vec<f64> = (0..=16).map(|k| 0.1 * k as f64).collect();
        let kt = main_terms(&fam, &x, &path).unwrap();
        for (k, db) in path.coarse_increments().iter().enumerate() {
            assert!((kt[k] + 0.5 * m.dsigma(x[k]) * db * db).abs() < 1e-15);
        }
    }

    #[test]
    fn phi_structure() {
        let zero = sinh("zero");
        let path = sample_fbm(10, Hurst::new(0.45).unwrap(), 9).unwrap().with_level(5).unwrap();
        let x: Vec<f64> = (0..=32).map(|k| (k as f64 * 0.1).sin()).collect();
        let fam = coefficient_functions(SchemeKind::CrankNicolson, &zero).unwrap();
        let phi = phi_processes(&fam, &x, &path).unwrap();
        assert!(phi.phi[1].iter().all(|&v| v == 0.0));
        assert!(phi.phi[3].iter().all(|&v| v == 0.0));
        // Piecewise-linear κ̃ path vs Φ₁+Φ₂+Φ₃ at the nodes.
        let m = sinh("cos");
        let fam = coefficient_functions(SchemeKind::CrankNicolson, &m).unwrap();
        let kt = main_terms(&fam, &x, &path).unwrap();
        let phi = phi_processes(&fam, &x, &path).unwrap();
        let max_k = kt.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let mut acc = 0.0;
        for k in 0..=32 {
            if k > 0 {
                acc += kt[k - 1];
            }
            let s = phi.phi[0][k] + phi.phi[1][k] + phi.phi[2][k];
            assert!((acc - s).abs() <= max_k + 1e-15);
        }
        let mut buf = Vec::new();
        phi.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("t,phi1,phi2,phi3,phi4\n"));
    }
}
