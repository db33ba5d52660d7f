//! Limit processes `U` of the normalized scheme errors and the composed
//! error limit `σ(X)U + J∫J⁻¹W(X)U ds`.

use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use std::io::Write;

use crate::flow::{directional_derivative, ReferencePath};
use crate::model::CoefficientModel;
use crate::perturbation::{coefficient_functions, FamilyValues};
use crate::rng::{stream, Purpose};
use crate::schemes::SchemeKind;
use crate::variations::sigma_qh;
use crate::{Error, Result};

/// Tolerance for deciding that `H` equals one half.
const HALF_TOL: f64 = 1e-12;

/// Normalization exponent `γ`: the error times `2^{mγ}` has a limit.
pub fn theoretical_rate(scheme: SchemeKind, h: f64) -> Result<f64> {
    match scheme {
        SchemeKind::Euler if h > 0.5 && h < 1.0 => Ok(2.0 * h - 1.0),
        SchemeKind::Euler => Err(Error::Domain(format!("Euler limit needs 1/2 < H < 1, got {h}"))),
        SchemeKind::Milstein if h > 1.0 / 3.0 && h <= 0.5 + HALF_TOL => Ok(4.0 * h - 1.0),
        SchemeKind::Milstein => Err(Error::Domain(format!("Milstein limit needs 1/3 < H <= 1/2, got {h}"))),
        SchemeKind::CrankNicolson if h > 1.0 / 3.0 && h <= 0.5 + HALF_TOL => Ok(3.0 * h - 0.5),
        SchemeKind::CrankNicolson => Err(Error::Domain(format!("Crank-Nicolson limit needs 1/3 < H <= 1/2, got {h}"))),
    }
}

/// Hurst regime of a limit theorem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// `1/2 < H < 1` (Euler).
    Smooth,
    /// `1/3 < H < 1/2`.
    Rough,
    /// `H = 1/2`.
    Brownian,
}

/// Integrator of one limit term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    /// `du`, trapezoid rule.
    Time,
    /// Itô `dW`, left-point sums.
    W,
    /// Itô `dW̃`, left-point sums.
    WTilde,
    /// Stratonovich `∘dB`, trapezoid-in-`f` sums.
    StratonovichB,
}

/// Coefficient function of one limit term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Coefficient {
    F2,
    F3,
    F4Dagger,
    Psi,
    G1,
}

impl Coefficient {
    fn pick(self, v: &FamilyValues) -> f64 {
        match self {
            Self::F2 => v.f2,
            Self::F3 => v.f3,
            Self::F4Dagger => v.f4_dagger,
            Self::Psi => v.psi,
            Self::G1 => v.g1,
        }
    }
}

/// `weight · ∫ f(X_u) d(integrator)_u`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Term {
    pub weight: f64,
    pub coefficient: Coefficient,
    pub integrator: Integrator,
}

/// The terms of `U` for a scheme and Hurst index.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitProcessSpec {
    pub scheme: SchemeKind,
    pub hurst: f64,
    pub regime: Regime,
    pub terms: Vec<Term>,
}

impl LimitProcessSpec {
    pub fn new(scheme: SchemeKind, hurst: f64) -> Result<Self> {
        theoretical_rate(scheme, hurst)?;
        let half = (hurst - 0.5).abs() <= HALF_TOL;
        let term = |weight, coefficient, integrator| Term { weight, coefficient, integrator };
        use Coefficient::*;
        use Integrator::*;
        let (regime, terms) = match scheme {
            SchemeKind::Euler => (Regime::Smooth, vec![term(1.0, F2, Time)]),
            SchemeKind::Milstein if !half => (Regime::Rough, vec![term(3.0, F4Dagger, Time)]),
            SchemeKind::Milstein => (
                Regime::Brownian,
                vec![
                    term(1.0, Psi, Time),
                    term(6f64.sqrt(), F3, W),
                    term(3.0, F3, StratonovichB),
                    term(3.0, F4Dagger, Time),
                    term(1.0 / 12f64.sqrt(), G1, WTilde),
                ],
            ),
            SchemeKind::CrankNicolson if !half => (Regime::Rough, vec![term(sigma_qh(3, hurst)?, F3, W)]),
            SchemeKind::CrankNicolson => (
                Regime::Brownian,
                vec![
                    term(1.0, Psi, Time),
                    term(6f64.sqrt(), F3, W),
                    term(3.0, F3, StratonovichB),
                    term(1.0 / 12f64.sqrt(), G1, WTilde),
                ],
            ),
        };
        Ok(Self { scheme, hurst, regime, terms })
    }

    /// Whether the limit holds in probability (pathwise comparison) rather
    /// than only in law.
    pub fn is_pathwise(&self) -> bool {
        match self.scheme {
            SchemeKind::Euler => true,
            SchemeKind::Milstein => self.regime == Regime::Rough,
            SchemeKind::CrankNicolson => false,
        }
    }

    /// Whether any term needs the independent Brownian motions.
    pub fn needs_noise(&self) -> bool {
        self.terms.iter().any(|t| matches!(t.integrator, Integrator::W | Integrator::WTilde))
    }
}

/// Brownian increments on a grid of `cells` steps of size `dt`.
pub fn brownian_increments(seed: u64, purpose: Purpose, index: u64, cells: usize, dt: f64) -> Vec<f64> {
    let mut rng = stream(seed, purpose, index);
    let sd = dt.sqrt();
    (0..cells)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sd * z
        })
        .collect()
}

/// One sample of `U` on the reference grid. Replica `index` draws `W` and
/// `W̃` from their own streams, independent of the driver's.
///
/// Terms whose coefficient vanishes along the whole path are skipped, so
/// the output is exactly the sum of the remaining terms.
pub fn simulate_limit_u(
    spec: &LimitProcessSpec,
    model: &CoefficientModel,
    reference: &ReferencePath,
    seed: u64,
    index: u64,
) -> Result<Vec<f64>> {
    limit_u(spec, model, reference, Some((seed, index)))
}

/// The part of `U` that is measurable with respect to the driver: every
/// term except the Itô integrals against `W` and `W̃`.
pub fn driver_part_u(spec: &LimitProcessSpec, model: &CoefficientModel, reference: &ReferencePath) -> Result<Vec<f64>> {
    limit_u(spec, model, reference, None)
}

fn coefficient_values(
    spec: &LimitProcessSpec,
    model: &CoefficientModel,
    reference: &ReferencePath,
) -> Result<Vec<FamilyValues>> {
    if reference.len() < 2 {
        return Err(Error::Contract("reference path needs at least two nodes".into()));
    }
    if spec.regime == Regime::Brownian && reference.driver.len() != reference.len() {
        return Err(Error::Contract("Stratonovich terms need the driver on the reference grid".into()));
    }
    let family = coefficient_functions(spec.scheme, model)?;
    Ok(reference.x.iter().map(|&x| family.eval(x)).collect())
}

fn limit_u(
    spec: &LimitProcessSpec,
    model: &CoefficientModel,
    reference: &ReferencePath,
    noise: Option<(u64, u64)>,
) -> Result<Vec<f64>> {
    let values = coefficient_values(spec, model, reference)?;
    let n = reference.len();
    let dt = reference.dt;
    let mut u = vec![0.0; n];
    let mut dw: Option<Vec<f64>> = None;
    let mut dw_tilde: Option<Vec<f64>> = None;
    for term in &spec.terms {
        let f: Vec<f64> = values.iter().map(|v| term.coefficient.pick(v)).collect();
        if f.iter().all(|&v| v == 0.0) {
            continue;
        }
        let incr: Vec<f64> = match (term.integrator, noise) {
            (Integrator::Time, _) => (1..n).map(|j| 0.5 * (f[j - 1] + f[j]) * dt).collect(),
            (Integrator::W | Integrator::WTilde, None) => continue,
            (Integrator::W, Some((seed, index))) => {
                let w = dw.get_or_insert_with(|| brownian_increments(seed, Purpose::LimitW, index, n - 1, dt));
                (1..n).map(|j| f[j - 1] * w[j - 1]).collect()
            }
            (Integrator::WTilde, Some((seed, index))) => {
                let w =
                    dw_tilde.get_or_insert_with(|| brownian_increments(seed, Purpose::LimitWTilde, index, n - 1, dt));
                (1..n).map(|j| f[j - 1] * w[j - 1]).collect()
            }
            (Integrator::StratonovichB, _) => {
                let g = &reference.driver;
                (1..n).map(|j| 0.5 * (f[j - 1] + f[j]) * (g[j] - g[j - 1])).collect()
            }
        };
        let mut acc = 0.0;
        for j in 1..n {
            acc += term.weight * incr[j - 1];
            u[j] += acc;
        }
    }
    Ok(u)
}

/// Weights `c_j` with `L_1 = Σ c_j U_j` for the discretized error limit at
/// the final node.
fn terminal_weights(model: &CoefficientModel, reference: &ReferencePath) -> Vec<f64> {
    let n = reference.len();
    let (x, j, dt) = (&reference.x, &reference.j, reference.dt);
    let jn = j[n - 1];
    let mut c: Vec<f64> = (0..n).map(|i| jn * dt * model.wronskian(x[i]) / j[i]).collect();
    c[0] *= 0.5;
    c[n - 1] *= 0.5;
    c[n - 1] += model.sigma(x[n - 1]);
    c
}

/// `E[L_1² | B]` for the error limit `L` at `t = 1`, exact for the
/// discretized limit: the driver part squared plus the Itô variances.
pub fn conditional_second_moment(
    spec: &LimitProcessSpec,
    model: &CoefficientModel,
    reference: &ReferencePath,
) -> Result<f64> {
    model.require_elliptic("conditional_second_moment")?;
    let values = coefficient_values(spec, model, reference)?;
    let n = reference.len();
    let c = terminal_weights(model, reference);
    let u0 = driver_part_u(spec, model, reference)?;
    let mean: f64 = c.iter().zip(&u0).map(|(c, u)| c * u).sum();
    // tail[i] = Σ_{j ≥ i} c_j
    let mut tail = vec![0.0; n + 1];
    for i in (0..n).rev() {
        tail[i] = tail[i + 1] + c[i];
    }
    let mut var = 0.0;
    for term in &spec.terms {
        if matches!(term.integrator, Integrator::W | Integrator::WTilde) {
            let s: f64 = (0..n - 1).map(|i| (term.coefficient.pick(&values[i]) * tail[i + 1]).powi(2)).sum();
            var += term.weight * term.weight * s * reference.dt;
        }
    }
    Ok(mean * mean + var)
}

/// `σ(X_t)U_t + J_t ∫₀ᵗ J_s⁻¹ W(X_s) U_s ds`, trapezoid in `s`.
pub fn error_limit_process(model: &CoefficientModel, reference: &ReferencePath, u: &[f64]) -> Result<Vec<f64>> {
    directional_derivative(model, reference, u)
}

/// CSV `t,U,error_limit`.
pub fn write_limit_csv<W: Write>(dt: f64, u: &[f64], limit: &[f64], mut out: W) -> Result<()> {
    if u.len() != limit.len() {
        return Err(Error::Contract(format!("U has {} nodes, limit has {}", u.len(), limit.len())));
    }
    writeln!(out, "t,U,error_limit")?;
    for (j, (a, b)) in u.iter().zip(limit).enumerate() {
        writeln!(out, "{:.16e},{a:.16e},{b:.16e}", j as f64 * dt)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fbm::{sample_fbm, Hurst};
    use crate::flow::doss_solution;
    use crate::stats::{mean, standard_error};
    use serde_json::json;

    fn reference(model: &CoefficientModel, h: f64, level: u32, seed: u64) -> ReferencePath {
        let path = sample_fbm(level, Hurst::new(h).unwrap(), seed).unwrap();
        doss_solution(model, 0.3, path.values(), path.fine_step()).unwrap()
    }

    #[test]
    fn rates() {
        assert_eq!(theoretical_rate(SchemeKind::Euler, 0.75).unwrap(), 0.5);
        assert!((theoretical_rate(SchemeKind::Milstein, 0.4).unwrap() - 0.6).abs() < 1e-15);
        assert_eq!(theoretical_rate(SchemeKind::CrankNicolson, 0.5).unwrap(), 1.0);
        assert!(matches!(theoretical_rate(SchemeKind::Euler, 0.4), Err(Error::Domain(_))));
        assert!(matches!(theoretical_rate(SchemeKind::CrankNicolson, 0.3), Err(Error::Domain(_))));
        assert!(matches!(theoretical_rate(SchemeKind::Milstein, 0.6), Err(Error::Domain(_))));
    }

    #[test]
    fn spec_terms() {
        let cn = LimitProcessSpec::new(SchemeKind::CrankNicolson, 0.5).unwrap();
        assert_eq!(cn.terms.len(), 4);
        assert!(!cn.is_pathwise());
        let mil = LimitProcessSpec::new(SchemeKind::Milstein, 0.5).unwrap();
        assert_eq!(mil.terms.len(), 5);
        let rough = LimitProcessSpec::new(SchemeKind::Milstein, 0.4).unwrap();
        assert!(rough.is_pathwise() && !rough.needs_noise());
        let cn_rough = LimitProcessSpec::new(SchemeKind::CrankNicolson, 0.45).unwrap();
        assert!((cn_rough.terms[0].weight - sigma_qh(3, 0.45).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn vanishing_coefficients() {
        let constant = CoefficientModel::from_registry("constant", &json!({"theta": 0.2, "c": 1.5})).unwrap();
        let r = reference(&constant, 0.45, 8, 1);
        let spec = LimitProcessSpec::new(SchemeKind::CrankNicolson, 0.45).unwrap();
        assert!(simulate_limit_u(&spec, &constant, &r, 5, 0).unwrap().iter().all(|&v| v == 0.0));
        let lin = CoefficientModel::from_registry("linear-drift", &json!({"theta": 0.7, "c": 1.0})).unwrap();
        let r = reference(&lin, 0.75, 8, 2);
        let spec = LimitProcessSpec::new(SchemeKind::Euler, 0.75).unwrap();
        let u = simulate_limit_u(&spec, &lin, &r, 5, 0).unwrap();
        assert!(u.iter().all(|&v| v == 0.0));
        assert!(error_limit_process(&lin, &r, &u).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn driftless_limit_is_sigma_times_u() {
        let model = CoefficientModel::from_registry("sinh", &json!({"drift": "zero"})).unwrap();
        let r = reference(&model, 0.75, 8, 3);
        let spec = LimitProcessSpec::new(SchemeKind::Euler, 0.75).unwrap();
        let u = simulate_limit_u(&spec, &model, &r, 1, 0).unwrap();
        let e = error_limit_process(&model, &r, &u).unwrap();
        for j in 0..u.len() {
            assert_eq!(e[j], model.sigma(r.x[j]) * u[j]);
        }
    }

    #[test]
    fn cn_brownian_conditional_mean() {
        let model = CoefficientModel::from_registry("trig", &json!({"drift": "zero"})).unwrap();
        let r = reference(&model, 0.5, 8, 4);
        let spec = LimitProcessSpec::new(SchemeKind::CrankNicolson, 0.5).unwrap();
        let family = coefficient_functions(SchemeKind::CrankNicolson, &model).unwrap();
        let f3: Vec<f64> = r.x.iter().map(|&x| family.eval(x).f3).collect();
        let strat: f64 = (1..r.len()).map(|j| 0.5 * (f3[j - 1] + f3[j]) * (r.driver[j] - r.driver[j - 1])).sum();
        let samples: Vec<f64> =
            (0..2000).map(|i| *simulate_limit_u(&spec, &model, &r, 9, i).unwrap().last().unwrap()).collect();
        let se = standard_error(&samples);
        assert!((mean(&samples) - 3.0 * strat).abs() < 3.0 * se, "{} vs {}", mean(&samples), 3.0 * strat);
    }

    #[test]
    fn conditional_moment_matches_monte_carlo() {
        let model = CoefficientModel::from_registry("trig", &json!({"drift": "cos"})).unwrap();
        let r = reference(&model, 0.5, 7, 6);
        let spec = LimitProcessSpec::new(SchemeKind::CrankNicolson, 0.5).unwrap();
        let exact = conditional_second_moment(&spec, &model, &r).unwrap();
        let sq: Vec<f64> = (0..4000)
            .map(|i| {
                let u = simulate_limit_u(&spec, &model, &r, 2, i).unwrap();
                error_limit_process(&model, &r, &u).unwrap().last().unwrap().powi(2)
            })
            .collect();
        assert!((mean(&sq) - exact).abs() < 3.0 * standard_error(&sq), "{} vs {exact}", mean(&sq));
    }

    #[test]
    fn limit_csv() {
        let mut buf = Vec::new();
        write_limit_csv(0.5, &[0.0, 1.0, 2.0], &[0.0, 2.0, 4.0], &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("t,U,error_limit\n"));
        assert_eq!(s.lines().count(), 4);
        assert!(write_limit_csv(0.5, &[0.0], &[0.0, 1.0], Vec::new()).is_err());
    }
}
