//! Weighted Hermite and trapezoidal variations of fBm, their limit
//! constants, and the covariance algebra of the trapezoid kernels.

use serde::Serialize;
use std::io::Write;

use crate::fbm::FbmPath;
use crate::quadrature::gl16;
use crate::{Error, Result};

/// Largest supported Hermite degree.
pub const MAX_HERMITE_DEGREE: usize = 10;

/// Probabilists' Hermite polynomial `H_q(ξ)` by the three-term recurrence.
pub fn hermite(q: usize, xi: f64) -> f64 {
    debug_assert!(q <= MAX_HERMITE_DEGREE, "degree {q} above {MAX_HERMITE_DEGREE}");
    let (mut prev, mut cur) = (0.0, 1.0);
    for j in 0..q {
        let next = xi * cur - j as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

/// Probability measure `μ` on `[0, 1]` weighting `f(θx_t + (1−θ)x_s)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMeasure {
    /// `δ₀`: evaluate at the left endpoint.
    #[default]
    Left,
    /// `δ_{1/2}`.
    Midpoint,
    /// `½(δ₀ + δ₁)`.
    Trapezoid,
    /// Lebesgue measure, by 16-point Gauss–Legendre.
    Uniform,
}

impl WeightMeasure {
    /// `F^{f,μ}_{st}(x) = ∫ f(θ x_t + (1−θ) x_s) μ(dθ)`.
    pub fn average(self, f: impl Fn(f64) -> f64, xs: f64, xt: f64) -> f64 {
        let at = |theta: f64| f(theta * xt + (1.0 - theta) * xs);
        match self {
            Self::Left => f(xs),
            Self::Midpoint => at(0.5),
            Self::Trapezoid => 0.5 * (f(xs) + f(xt)),
            Self::Uniform => {
                let (nodes, weights) = gl16();
                nodes.iter().zip(weights).map(|(&th, w)| w * at(th)).sum()
            }
        }
    }
}

impl std::str::FromStr for WeightMeasure {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" => Ok(Self::Left),
            "midpoint" => Ok(Self::Midpoint),
            "trapezoid" => Ok(Self::Trapezoid),
            "uniform" => Ok(Self::Uniform),
            other => Err(Error::Config(format!("unknown weight measure '{other}'"))),
        }
    }
}

fn cells_up_to(m: u32, t: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("time {t} outside [0, 1]")));
    }
    let n = 1usize << m;
    Ok(((n as f64 * t) + 1e-9).floor().min(n as f64) as usize)
}

fn check_level(path: &FbmPath, m: u32, x_coarse: Option<&[f64]>) -> Result<()> {
    if m > path.fine_level() {
        return Err(Error::Contract(format!("level {m} above the path's fine level {}", path.fine_level())));
    }
    if let Some(x) = x_coarse {
        if x.len() != (1usize << m) + 1 {
            return Err(Error::Contract(format!("expected {} coarse values of X, got {}", (1usize << m) + 1, x.len())));
        }
    }
    Ok(())
}

/// `W^(q)_m(t) = Σ_{k ≤ ⌊2^m t⌋} F^{f,μ}_{τ_{k−1}τ_k}(X) H_q(2^{mH} ΔB_k)`.
///
/// `x_coarse` holds X at the `2^m + 1` nodes of level `m`.
pub fn weighted_hermite_variation(
    q: usize,
    f: impl Fn(f64) -> f64,
    mu: WeightMeasure,
    x_coarse: &[f64],
    path: &FbmPath,
    m: u32,
    t: f64,
) -> Result<f64> {
    if q > MAX_HERMITE_DEGREE {
        return Err(Error::Domain(format!("Hermite degree {q} above {MAX_HERMITE_DEGREE}")));
    }
    check_level(path, m, Some(x_coarse))?;
    let b = path.coarse(m)?;
    let scale = 2f64.powf(m as f64 * path.hurst().value());
    let n = cells_up_to(m, t)?;
    Ok((1..=n).map(|k| mu.average(&f, x_coarse[k - 1], x_coarse[k]) * hermite(q, scale * (b[k] - b[k - 1]))).sum())
}

/// Simple variation `H^(q)_m(t) = 2^{−m/2} Σ H_q(2^{mH} ΔB_k)`.
pub fn hermite_variation(q: usize, path: &FbmPath, m: u32, t: f64) -> Result<f64> {
    let ones = vec![1.0; (1usize << m) + 1];
    let w = weighted_hermite_variation(q, |_| 1.0, WeightMeasure::Left, &ones, path, m, t)?;
    Ok(w * 2f64.powf(-0.5 * m as f64))
}

/// Trapezoid kernels `½·2^{−m}ΔB_k − ∫_{τ_{k−1}}^{τ_k} (B_u − B_{τ_{k−1}}) du`
/// for every cell of level `m`, the integral by the trapezoid rule on the
/// fine grid.
pub fn trapezoid_kernels(path: &FbmPath, m: u32) -> Result<Vec<f64>> {
    check_level(path, m, None)?;
    let v = path.values();
    let stride = 1usize << (path.fine_level() - m);
    let h = path.fine_step();
    let dt = 2f64.powi(-(m as i32));
    Ok((0..1usize << m)
        .map(|c| {
            let base = v[c * stride];
            let mut integral = 0.0;
            for j in 1..=stride {
                integral += 0.5 * (v[c * stride + j - 1] + v[c * stride + j] - 2.0 * base);
            }
            0.5 * dt * (v[(c + 1) * stride] - base) - integral * h
        })
        .collect())
}

/// `U_m(t) = Σ_{k ≤ ⌊2^m t⌋} g(X_{τ_{k−1}}) (½·2^{−m}ΔB_k − ∫ B_{τ_{k−1}u} du)`.
pub fn trapezoid_variation(g: impl Fn(f64) -> f64, x_coarse: &[f64], path: &FbmPath, m: u32, t: f64) -> Result<f64> {
    check_level(path, m, Some(x_coarse))?;
    let kernels = trapezoid_kernels(path, m)?;
    let n = cells_up_to(m, t)?;
    Ok((1..=n).map(|k| g(x_coarse[k - 1]) * kernels[k - 1]).sum())
}

/// Running values `U_m(τ_k)`, `k = 0..=2^m`.
pub fn trapezoid_variation_path(g: impl Fn(f64) -> f64, x_coarse: &[f64], path: &FbmPath, m: u32) -> Result<Vec<f64>> {
    check_level(path, m, Some(x_coarse))?;
    let kernels = trapezoid_kernels(path, m)?;
    let mut out = Vec::with_capacity(kernels.len() + 1);
    let mut acc = 0.0;
    out.push(acc);
    for (k, kern) in kernels.iter().enumerate() {
        acc += g(x_coarse[k]) * kern;
        out.push(acc);
    }
    Ok(out)
}

/// Simple trapezoid variation `Ũ_m(t) = 2^{m(H+1/2)} U_m(t)` with `g ≡ 1`.
pub fn simple_trapezoid_variation(path: &FbmPath, m: u32, t: f64) -> Result<f64> {
    let ones = vec![1.0; (1usize << m) + 1];
    let u = trapezoid_variation(|_| 1.0, &ones, path, m, t)?;
    Ok(u * 2f64.powf(m as f64 * (path.hurst().value() + 0.5)))
}

fn check_hurst(h: f64) -> Result<()> {
    if !(h > 0.0 && h < 1.0) {
        return Err(Error::Domain(format!("Hurst parameter {h} outside (0, 1)")));
    }
    Ok(())
}

fn binom(a: f64, n: usize) -> f64 {
    (0..n).fold(1.0, |acc, j| acc * (a - j as f64) / (j + 1) as f64)
}

/// `ρ_H(l) = ½(|l+1|^{2H} + |l−1|^{2H} − 2|l|^{2H})`, the correlation of
/// unit fGn increments at lag `l`.
pub fn rho(h: f64, l: u64) -> f64 {
    let two_h = 2.0 * h;
    if l < 8 {
        let k = |u: f64| u.abs().powf(two_h);
        let lf = l as f64;
        return 0.5 * (k(lf + 1.0) + k(lf - 1.0) - 2.0 * k(lf));
    }
    // Even part of the binomial series, free of the cancellation above.
    let lf = l as f64;
    let x2 = 1.0 / (lf * lf);
    let mut sum = 0.0;
    let mut pow = 1.0;
    for j in 1..40 {
        pow *= x2;
        let term = binom(two_h, 2 * j) * pow;
        sum += term;
        if term.abs() <= 1e-18 * sum.abs() {
            break;
        }
    }
    lf.powf(two_h) * sum
}

fn kpow(u: f64, two_h: f64) -> f64 {
    u.abs().powf(two_h)
}

/// Signed primitive of `|u|^{2H}`.
fn prim1(u: f64, two_h: f64) -> f64 {
    u.signum() * u.abs().powf(two_h + 1.0) / (two_h + 1.0)
}

/// Even second primitive of `|u|^{2H}`.
fn prim2(u: f64, two_h: f64) -> f64 {
    u.abs().powf(two_h + 2.0) / ((two_h + 1.0) * (two_h + 2.0))
}

/// Lags at and beyond which the Peano-kernel forms replace the primitives.
const PEANO_LAG: u64 = 4;

/// `a(d) = E[κ_1 κ_{1+d}]` for the trapezoid kernels `κ`, `d ≥ 0`.
fn a_lag(h: f64, d: u64) -> f64 {
    let two_h = 2.0 * h;
    if d >= PEANO_LAG {
        return a_lag_peano(two_h, d as f64);
    }
    let d = d as f64;
    let k = |u: f64| kpow(u, two_h);
    let p = |u: f64| prim1(u, two_h);
    let q = |u: f64| prim2(u, two_h);
    // κ = ∫ B ν with ν = ½δ₀ + ½δ₁ − Leb, so a = −½ ∬ |d + y − x|^{2H} ν(dx) ν(dy).
    let atoms = 0.25 * (2.0 * k(d) + k(d + 1.0) + k(d - 1.0));
    let atom_leb = -0.5 * ((p(d + 1.0) - p(d)) + (p(d) - p(d - 1.0)));
    let leb_atom = -0.5 * ((p(d) - p(d - 1.0)) + (p(d + 1.0) - p(d)));
    let leb_leb = q(d + 1.0) - 2.0 * q(d) + q(d - 1.0);
    -0.5 * (atoms + atom_leb + leb_atom + leb_leb)
}

fn k3(u: f64, two_h: f64) -> f64 {
    two_h * (two_h - 1.0) * (two_h - 2.0) * u.signum() * u.abs().powf(two_h - 3.0)
}

fn k4(u: f64, two_h: f64) -> f64 {
    two_h * (two_h - 1.0) * (two_h - 2.0) * (two_h - 3.0) * u.abs().powf(two_h - 4.0)
}

/// `a(d) = −⅛ ∬ s(1−s) t(1−t) K''''(d + t − s) ds dt`, valid for `d ≥ 2`.
fn a_lag_peano(two_h: f64, d: f64) -> f64 {
    let (nodes, weights) = gl16();
    let mut sum = 0.0;
    for (&s, ws) in nodes.iter().zip(weights) {
        for (&t, wt) in nodes.iter().zip(weights) {
            sum += ws * wt * s * (1.0 - s) * t * (1.0 - t) * k4(d + t - s, two_h);
        }
    }
    -0.125 * sum
}

/// `a†(e)` for `e = k − l`: `E[ΔB_k κ_l]`.
fn a_dagger_lag(h: f64, e: i64) -> f64 {
    let two_h = 2.0 * h;
    if e.unsigned_abs() >= PEANO_LAG {
        return (e.signum() as f64) * a_dagger_peano(two_h, e.unsigned_abs() as f64);
    }
    let e = e as f64;
    let k = |u: f64| kpow(u, two_h);
    let p = |u: f64| prim1(u, two_h);
    0.25 * (k(e - 1.0) - k(e + 1.0)) + 0.5 * ((p(e + 1.0) + p(e - 1.0)) - 2.0 * p(e))
}

/// `a†` at `e = k − l > 0` as `¼ ∬ y(1−y) K'''(y − x − e) dx dy`.
fn a_dagger_peano(two_h: f64, e: f64) -> f64 {
    let (nodes, weights) = gl16();
    let mut sum = 0.0;
    for (&x, wx) in nodes.iter().zip(weights) {
        for (&y, wy) in nodes.iter().zip(weights) {
            sum += wx * wy * y * (1.0 - y) * k3(-e + y - x, two_h);
        }
    }
    0.25 * sum
}

/// `a_{k,l} = E[(½ΔB_k − ∫B_{τ_{k−1}u}du)(½ΔB_l − ∫B_{τ_{l−1}u}du)]` on the
/// unit grid.
pub fn a_cov(h: f64, k: u64, l: u64) -> Result<f64> {
    check_hurst(h)?;
    check_indices(k, l)?;
    Ok(a_lag(h, k.abs_diff(l)))
}

/// `a†_{k,l} = E[ΔB_k (½ΔB_l − ∫B_{τ_{l−1}u}du)]` on the unit grid.
pub fn a_dagger(h: f64, k: u64, l: u64) -> Result<f64> {
    check_hurst(h)?;
    check_indices(k, l)?;
    Ok(a_dagger_lag(h, k as i64 - l as i64))
}

fn check_indices(k: u64, l: u64) -> Result<()> {
    if k == 0 || l == 0 {
        return Err(Error::Domain(format!("indices must be at least 1, got ({k}, {l})")));
    }
    Ok(())
}

/// `ρ̃_H(l) = a_{1, l+1}`.
pub fn rho_tilde(h: f64, l: u64) -> f64 {
    a_lag(h, l)
}

/// Truncation record of a limit-constant series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Truncation {
    pub terms: u64,
    pub tail_bound: f64,
}

const TAIL_TARGET: f64 = 1e-10;
const START_TERMS: u64 = 1_000;
const MAX_TERMS: u64 = 10_000_000;

/// Sums `term(l)` for `l ≥ 1`, doubling the cut-off until `tail(L)` drops
/// below the target or the cap is reached.
fn truncated_series(term: impl Fn(u64) -> f64, tail: impl Fn(u64) -> f64) -> (f64, Truncation) {
    let mut sum = 0.0;
    let mut done = 0;
    let mut cut = START_TERMS;
    loop {
        // Add the new block from the small end to keep round-off low.
        let block: f64 = (done + 1..=cut).rev().map(&term).sum();
        sum += block;
        done = cut;
        let bound = tail(cut);
        if bound < TAIL_TARGET || cut >= MAX_TERMS {
            return (sum, Truncation { terms: cut, tail_bound: bound });
        }
        cut = (cut * 2).min(MAX_TERMS);
    }
}

/// `σ²_{q,H} = q!(1 + 2Σ_{l≥1} ρ_H(l)^q)` with its truncation record.
pub fn sigma_qh_squared(q: usize, h: f64) -> Result<(f64, Truncation)> {
    check_hurst(h)?;
    if q < 2 {
        return Err(Error::Domain(format!("order q = {q} must be at least 2")));
    }
    let bound = 1.0 - 1.0 / (2.0 * q as f64);
    if h >= bound {
        return Err(Error::Domain(format!(
            "series for sigma_qH diverges: need H < 1 - 1/(2q) = {bound} for q = {q}, got {h}"
        )));
    }
    let qi = q as i32;
    let c = (h * (2.0 * h - 1.0)).abs();
    let decay = q as f64 * (2.0 - 2.0 * h) - 1.0;
    // |ρ(l)| ≤ H|2H−1|(l−1)^{2H−2}, so the tail after L is at most the
    // integral of that bound raised to q.
    let tail = |cut: u64| 2.0 * c.powi(qi) * ((cut - 1) as f64).powf(-decay) / decay;
    let (sum, trunc) = truncated_series(|l| rho(h, l).powi(qi), tail);
    let fact: f64 = (1..=q).map(|j| j as f64).product();
    Ok((fact * (1.0 + 2.0 * sum), Truncation { terms: trunc.terms, tail_bound: fact * trunc.tail_bound }))
}

/// `σ_{q,H}`.
pub fn sigma_qh(q: usize, h: f64) -> Result<f64> {
    sigma_qh_squared(q, h).map(|(s2, _)| s2.max(0.0).sqrt())
}

/// `σ̃²_H = ¼(1−H)/(1+H) + 2Σ_{l≥1} ρ̃_H(l)` with its truncation record.
pub fn sigma_tilde_squared(h: f64) -> Result<(f64, Truncation)> {
    check_hurst(h)?;
    let two_h = 2.0 * h;
    let c4 = (two_h * (two_h - 1.0) * (two_h - 2.0) * (two_h - 3.0)).abs();
    let decay = 3.0 - two_h;
    // |ρ̃(l)| ≤ c₄/288 · (l−1)^{2H−4} from the Peano form.
    let tail = |cut: u64| 2.0 * c4 / 288.0 * ((cut - 1) as f64).powf(-decay) / decay;
    let (sum, trunc) = truncated_series(|l| rho_tilde(h, l), tail);
    Ok((0.25 * (1.0 - h) / (1.0 + h) + 2.0 * sum, trunc))
}

/// `σ̃_H`.
pub fn sigma_tilde(h: f64) -> Result<f64> {
    sigma_tilde_squared(h).map(|(s2, _)| s2.max(0.0).sqrt())
}

/// Limit constants at one Hurst index and Hermite order.
#[derive(Debug, Clone, Serialize)]
pub struct LimitConstants {
    pub hurst: f64,
    pub q: usize,
    /// `ρ_H(l)` for `l = 0..rho.len()`.
    pub rho: Vec<f64>,
    /// `ρ̃_H(l)` for `l = 1..=rho_tilde.len()`.
    pub rho_tilde: Vec<f64>,
    #[serde(rename = "sigma_qH")]
    pub sigma_qh: f64,
    pub sigma_tilde: f64,
    /// Terms kept in the `σ_{q,H}` series.
    pub truncation: u64,
    /// Analytic tail bound on `σ²_{q,H}` after truncation.
    pub tail_bound: f64,
    pub sigma_tilde_truncation: Truncation,
}

impl LimitConstants {
    pub fn new(hurst: f64, q: usize, lags: usize) -> Result<Self> {
        let (s2, trunc) = sigma_qh_squared(q, hurst)?;
        let (t2, ttrunc) = sigma_tilde_squared(hurst)?;
        Ok(Self {
            hurst,
            q,
            rho: (0..lags as u64).map(|l| rho(hurst, l)).collect(),
            rho_tilde: (1..=lags as u64).map(|l| rho_tilde(hurst, l)).collect(),
            sigma_qh: s2.max(0.0).sqrt(),
            sigma_tilde: t2.max(0.0).sqrt(),
            truncation: trunc.terms,
            tail_bound: trunc.tail_bound,
            sigma_tilde_truncation: ttrunc,
        })
    }
}

/// Writes `k,l,a,a_dagger` for `1 ≤ k, l ≤ n`.
pub fn write_covariance_csv<W: Write>(h: f64, n: u64, mut out: W) -> Result<()> {
    writeln!(out, "k,l,a,a_dagger")?;
    for k in 1..=n {
        for l in 1..=n {
            writeln!(out, "{k},{l},{:.16e},{:.16e}", a_cov(h, k, l)?, a_dagger(h, k, l)?)?;
        }
    }
    Ok(())
}
