//! Pathwise solution of `dx = b(x)dt + σ(x)d°g` through the flow of `σ`.
//!
//! The driver is known on a uniform grid and taken piecewise linear between
//! nodes, so on each cell the equation is an ordinary differential equation
//! and the symmetric integral coincides with the Riemann–Stieltjes one. The
//! Doss route restarts the auxiliary equation for `a` at every node
//! (`x_{s+t} = x_t(x_s, θ_s g)`), which keeps all flow arguments small.

use std::cell::Cell;
use std::io::Write;

use crate::error::{Error, Result};
use crate::model::CoefficientModel;
use crate::ode::{self, Tolerance, AUX_TOL, FLOW_TOL};

/// `(φ(α,β), ∂₁φ(α,β))` where `∂_β φ = σ(φ)`, `φ(α,0) = α`.
///
/// Uses the model's closed form when one is registered.
pub fn flow_phi(model: &CoefficientModel, alpha: f64, beta: f64) -> Result<(f64, f64)> {
    if let Some(v) = model.closed_form_flow(alpha, beta) {
        return Ok(v);
    }
    flow_phi_numeric(model, alpha, beta, FLOW_TOL)
}

/// Flow by joint integration of `φ` and `log ∂₁φ`, ignoring closed forms.
pub fn flow_phi_numeric(model: &CoefficientModel, alpha: f64, beta: f64, tol: Tolerance) -> Result<(f64, f64)> {
    model.require_order(2, "flow_phi")?;
    let [phi, log_d] = ode::integrate(
        |_, y: &[f64; 2]| {
            let (s, ds) = model.diffusion().value_and_slope(y[0]);
            [s, ds]
        },
        0.0,
        beta,
        [alpha, 0.0],
        tol,
    )?;
    Ok((phi, log_d.exp()))
}

/// `F(x) = ∫₀ˣ dξ/σ(ξ)`.
pub fn lamperti_f(model: &CoefficientModel, x: f64) -> Result<f64> {
    model.require_elliptic("F")?;
    if let Some(v) = model.closed_form_lamperti(x) {
        return Ok(v);
    }
    let [v] = ode::integrate(|xi, _: &[f64; 1]| [1.0 / model.sigma(xi)], 0.0, x, [0.0], FLOW_TOL)?;
    Ok(v)
}

/// `G = F⁻¹ = φ(0, ·)`.
pub fn lamperti_g(model: &CoefficientModel, y: f64) -> Result<f64> {
    model.require_elliptic("G")?;
    Ok(flow_phi(model, 0.0, y)?.0)
}

/// Runs an integration whose right-hand side can fail; the first failure
/// poisons the state with NaN and is reported in preference to the
/// integrator's own error.
fn integrate_fallible<const N: usize, F>(mut f: F, t0: f64, t1: f64, y0: [f64; N], tol: Tolerance) -> Result<[f64; N]>
where
    F: FnMut(f64, &[f64; N]) -> Result<[f64; N]>,
{
    let failure: Cell<Option<Error>> = Cell::new(None);
    let out = ode::integrate(
        |t, y| match f(t, y) {
            Ok(v) => v,
            Err(e) => {
                failure.set(Some(e));
                [f64::NAN; N]
            }
        },
        t0,
        t1,
        y0,
        tol,
    );
    match failure.into_inner() {
        Some(e) => Err(e),
        None => out,
    }
}

/// Result of one driver cell.
#[derive(Debug, Clone, Copy)]
struct CellStep {
    x: f64,
    /// `∫ (W/σ)(x_u) du` over the cell (zero for non-elliptic models).
    int_w: f64,
    /// `∫ b'(x_u) du + ∫ σ'(x_u) dg_u` over the cell.
    int_q: f64,
}

/// One cell of the Doss route: `a` restarted at `x0`, driver `β(u) = slope·u`.
fn doss_cell(
    model: &CoefficientModel,
    x0: f64,
    slope: f64,
    dt: f64,
    tol: Tolerance,
    substeps: usize,
) -> Result<CellStep> {
    let elliptic = model.is_elliptic();
    let mut state = [x0, 0.0, 0.0];
    let h = dt / substeps as f64;
    for i in 0..substeps {
        let u0 = i as f64 * h;
        state = integrate_fallible(
            |u, y: &[f64; 3]| {
                let (x, d1) = flow_phi(model, y[0], slope * u)?;
                let (s, ds) = model.diffusion().value_and_slope(x);
                let bd = model.b_derivs(x);
                let w = if elliptic { (s * bd[1] - ds * bd[0]) / s } else { 0.0 };
                Ok([bd[0] / d1, w, bd[1] + ds * slope])
            },
            u0,
            u0 + h,
            state,
            tol,
        )?;
    }
    let (x, _) = flow_phi(model, state[0], slope * dt)?;
    Ok(CellStep { x, int_w: state[1], int_q: state[2] })
}

/// Solver settings for [`doss_solution_with`].
#[derive(Debug, Clone, Copy)]
pub struct ReferenceOptions {
    pub tol: Tolerance,
    /// Fill the global auxiliary path `a_t = φ(x_t, −g_t)`.
    pub with_a: bool,
    /// Integration pieces per driver cell (1 = one adaptive solve per cell).
    pub substeps: usize,
}

impl Default for ReferenceOptions {
    fn default() -> Self {
        Self { tol: AUX_TOL, with_a: true, substeps: 1 }
    }
}

/// Exact solution for a piecewise-linear driver on a uniform grid.
#[derive(Debug, Clone)]
pub struct ReferencePath {
    pub dt: f64,
    pub driver: Vec<f64>,
    pub xi: f64,
    pub x: Vec<f64>,
    /// Auxiliary path; empty when not requested.
    pub a: Vec<f64>,
    /// `J_t` by the product form for elliptic models, else by quadrature.
    pub j: Vec<f64>,
    /// `J_t` by quadrature of `∫b'(x)du + ∫σ'(x)d°g`.
    pub j_quadrature: Vec<f64>,
    /// Cumulative `∫₀ᵗ (W/σ)(x_u) du`; zeros for non-elliptic models.
    pub int_w_over_sigma: Vec<f64>,
    pub tolerance: Tolerance,
}

impl ReferencePath {
    pub fn len(&self) -> usize {
        self.x.len()
    }
    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
    pub fn time(&self, j: usize) -> f64 {
        j as f64 * self.dt
    }

    /// Values at every `stride`-th node.
    pub fn subsample(&self, stride: usize) -> Vec<f64> {
        self.x.iter().step_by(stride).copied().collect()
    }

    /// CSV `t,x,a,J` at 17 significant digits (`a` blank when absent).
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,x,a,J")?;
        for i in 0..self.x.len() {
            let a = self.a.get(i).map(|v| format!("{v:.16e}")).unwrap_or_default();
            writeln!(out, "{:.16e},{:.16e},{},{:.16e}", self.time(i), self.x[i], a, self.j[i])?;
        }
        Ok(())
    }
}

fn check_driver(g: &[f64], dt: f64) -> Result<()> {
    if g.len() < 2 {
        return Err(Error::Contract("driver needs at least two nodes".into()));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Contract(format!("grid step must be positive, got {dt}")));
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Contract("driver contains non-finite values".into()));
    }
    Ok(())
}

/// Solves `ȧ = b(φ(a,g))/∂₁φ(a,g)`, `a_0 = ξ`, globally along the grid.
pub fn solve_a(model: &CoefficientModel, xi: f64, g: &[f64], dt: f64) -> Result<Vec<f64>> {
    solve_a_with(model, xi, g, dt, AUX_TOL, 1)
}

/// [`solve_a`] with explicit tolerance and per-cell subdivision.
pub fn solve_a_with(
    model: &CoefficientModel,
    xi: f64,
    g: &[f64],
    dt: f64,
    tol: Tolerance,
    substeps: usize,
) -> Result<Vec<f64>> {
    check_driver(g, dt)?;
    let substeps = substeps.max(1);
    let mut a = Vec::with_capacity(g.len());
    a.push(xi);
    let mut cur = xi;
    for w in g.windows(2) {
        let slope = (w[1] - w[0]) / dt;
        let h = dt / substeps as f64;
        for i in 0..substeps {
            let u0 = i as f64 * h;
            let [next] = integrate_fallible(
                |u, y: &[f64; 1]| {
                    let (x, d1) = flow_phi(model, y[0], w[0] + slope * u)?;
                    Ok([model.b(x) / d1])
                },
                u0,
                u0 + h,
                [cur],
                tol,
            )?;
            cur = next;
        }
        a.push(cur);
    }
    Ok(a)
}

/// Reference solution `x_t = φ(a_t, g_t)` with `J_t`.
pub fn doss_solution(model: &CoefficientModel, xi: f64, g: &[f64], dt: f64) -> Result<ReferencePath> {
    doss_solution_with(model, xi, g, dt, &ReferenceOptions::default())
}

pub fn doss_solution_with(
    model: &CoefficientModel,
    xi: f64,
    g: &[f64],
    dt: f64,
    opts: &ReferenceOptions,
) -> Result<ReferencePath> {
    check_driver(g, dt)?;
    model.require_order(2, "doss_solution")?;
    let n = g.len();
    let mut x = Vec::with_capacity(n);
    let mut iw = Vec::with_capacity(n);
    let mut iq = Vec::with_capacity(n);
    x.push(xi);
    iw.push(0.0);
    iq.push(0.0);
    let (mut cx, mut cw, mut cq) = (xi, 0.0, 0.0);
    for w in g.windows(2) {
        let step = doss_cell(model, cx, (w[1] - w[0]) / dt, dt, opts.tol, opts.substeps.max(1))?;
        cx = step.x;
        cw += step.int_w;
        cq += step.int_q;
        x.push(cx);
        iw.push(cw);
        iq.push(cq);
    }
    let j_quadrature: Vec<f64> = iq.iter().map(|v| v.exp()).collect();
    let j = if model.is_elliptic() {
        let s0 = model.sigma(xi);
        x.iter().zip(&iw).map(|(&xt, &w)| model.sigma(xt) / s0 * w.exp()).collect()
    } else {
        j_quadrature.clone()
    };
    let a = if opts.with_a {
        x.iter().zip(g).map(|(&xt, &gt)| flow_phi(model, xt, -(gt - g[0])).map(|v| v.0)).collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    Ok(ReferencePath { dt, driver: g.to_vec(), xi, x, a, j, j_quadrature, int_w_over_sigma: iw, tolerance: opts.tol })
}

/// Terminal value of one cell started at `x0` over a driver segment given on
/// a uniform sub-grid (values relative or absolute, only increments matter).
pub fn evolve(model: &CoefficientModel, x0: f64, g: &[f64], dt: f64, tol: Tolerance) -> Result<f64> {
    let mut x = x0;
    for w in g.windows(2) {
        x = doss_cell(model, x, (w[1] - w[0]) / dt, dt, tol, 1)?.x;
    }
    Ok(x)
}

/// Like [`evolve`] but also returns the cumulative `∫(W/σ)(x)du` at every
/// node, used for derivative information along the segment.
pub fn evolve_with_w(
    model: &CoefficientModel,
    x0: f64,
    g: &[f64],
    dt: f64,
    tol: Tolerance,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut xs = Vec::with_capacity(g.len());
    let mut ws = Vec::with_capacity(g.len());
    xs.push(x0);
    ws.push(0.0);
    let (mut x, mut acc) = (x0, 0.0);
    for w in g.windows(2) {
        let step = doss_cell(model, x, (w[1] - w[0]) / dt, dt, tol, 1)?;
        x = step.x;
        acc += step.int_w;
        xs.push(x);
        ws.push(acc);
    }
    Ok((xs, ws))
}

/// Independent route `x = G(y)`, `y_t = F(ξ) + ∫₀ᵗ b̃(y_u)du + g_t − g_0`,
/// `b̃ = (b/σ)∘G`.
pub fn transform_solution(model: &CoefficientModel, xi: f64, g: &[f64], dt: f64) -> Result<Vec<f64>> {
    check_driver(g, dt)?;
    model.require_elliptic("transform_solution")?;
    let y0 = lamperti_f(model, xi)?;
    // G(y) is carried alongside y as z with ż = σ(z)ẏ so that b̃ needs no
    // inversion inside the integrator; outputs use G evaluated afresh.
    let mut state = [y0, xi];
    let mut x = Vec::with_capacity(g.len());
    x.push(lamperti_g(model, y0)?);
    for w in g.windows(2) {
        let slope = (w[1] - w[0]) / dt;
        state = ode::integrate(
            |_, s: &[f64; 2]| {
                let sig = model.sigma(s[1]);
                let dy = model.b(s[1]) / sig + slope;
                [dy, sig * dy]
            },
            0.0,
            dt,
            state,
            AUX_TOL,
        )?;
        x.push(lamperti_g(model, state[0])?);
    }
    Ok(x)
}

/// `∇_h x_t = σ(x_t)h_t + J_t ∫₀ᵗ J_s⁻¹ W(x_s) h_s ds`, trapezoid in `s`.
pub fn directional_derivative(model: &CoefficientModel, reference: &ReferencePath, h: &[f64]) -> Result<Vec<f64>> {
    model.require_elliptic("directional_derivative")?;
    if h.len() != reference.len() {
        return Err(Error::Contract(format!("perturbation has {} nodes, reference has {}", h.len(), reference.len())));
    }
    let x = &reference.x;
    let j = &reference.j;
    let integrand: Vec<f64> = (0..x.len()).map(|i| model.wronskian(x[i]) * h[i] / j[i]).collect();
    let mut out = Vec::with_capacity(x.len());
    let mut acc = 0.0;
    for i in 0..x.len() {
        if i > 0 {
            acc += 0.5 * (integrand[i - 1] + integrand[i]) * reference.dt;
        }
        out.push(model.sigma(x[i]) * h[i] + j[i] * acc);
    }
    Ok(out)
}

/// `∇_h x_t = σ(x_t) ∫₀ᵗ exp(∫ₛᵗ (W/σ)(x_u)du) ḣ_s ds` for piecewise-linear
/// `h` given at the grid nodes.
pub fn directional_derivative_lipschitz(
    model: &CoefficientModel,
    reference: &ReferencePath,
    h: &[f64],
) -> Result<Vec<f64>> {
    model.require_elliptic("directional_derivative_lipschitz")?;
    if h.len() != reference.len() {
        return Err(Error::Contract(format!("perturbation has {} nodes, reference has {}", h.len(), reference.len())));
    }
    let iw = &reference.int_w_over_sigma;
    let mut out = Vec::with_capacity(h.len());
    out.push(0.0);
    // ∫₀ᵗ e^{−I_s} ḣ_s ds, accumulated cell by cell.
    let mut acc = 0.0;
    for i in 1..h.len() {
        let slope = (h[i] - h[i - 1]) / reference.dt;
        acc += 0.5 * ((-iw[i - 1]).exp() + (-iw[i]).exp()) * slope * reference.dt;
        out.push(model.sigma(reference.x[i]) * iw[i].exp() * acc);
    }
    Ok(out)
}

/// Modified Riemann sum with a grid-halving diagnostic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymmetricSum {
    pub value: f64,
    /// Same sum on every second node; `None` for an odd number of cells.
    pub half_grid: Option<f64>,
}

impl SymmetricSum {
    /// `|S_δ − S_{2δ}|`, the grid-halving change.
    pub fn richardson_gap(&self) -> Option<f64> {
        self.half_grid.map(|h| (self.value - h).abs())
    }
}

fn node_index(t: f64, dt: f64, len: usize) -> usize {
    ((t / dt).round().max(0.0) as usize).min(len - 1)
}

/// `∫ₛᵗ f(a_u, g_u) d°g_u` as `Σ ½(f_{k−1} + f_k)(g_k − g_{k−1})` over the
/// grid nodes nearest to `s` and `t`.
pub fn symmetric_integral<F>(f: F, a: &[f64], g: &[f64], dt: f64, s: f64, t: f64) -> SymmetricSum
where
    F: Fn(f64, f64) -> f64,
{
    let len = a.len().min(g.len());
    let (i0, i1) = (node_index(s, dt, len), node_index(t, dt, len));
    let (lo, hi, sign) = if i0 <= i1 { (i0, i1, 1.0) } else { (i1, i0, -1.0) };
    let sum = |stride: usize| {
        let mut acc = 0.0;
        let mut prev = f(a[lo], g[lo]);
        let mut k = lo;
        while k + stride <= hi {
            let next = f(a[k + stride], g[k + stride]);
            acc += 0.5 * (prev + next) * (g[k + stride] - g[k]);
            prev = next;
            k += stride;
        }
        acc
    };
    let value = sign * sum(1);
    let half_grid = ((hi - lo) % 2 == 0 && hi > lo).then(|| sign * sum(2));
    SymmetricSum { value, half_grid }
}

/// Running iterated integral `I^w_{s,u_j}` at every node of `g`
/// (`g[0]` is time `s`), letters `0 ↦ dt`, `1 ↦ dg`, first letter innermost.
pub fn iterated_path(word: &[u8], g: &[f64], dt: f64) -> Result<Vec<f64>> {
    if word.is_empty() || word.len() > 4 || word.iter().any(|&c| c > 1) {
        return Err(Error::Contract(format!("word must have 1..=4 letters in {{0,1}}, got {word:?}")));
    }
    let n = g.len();
    // Level zero is the constant 1.
    let mut prev = vec![1.0; n];
    for &letter in word {
        let mut cur = Vec::with_capacity(n);
        cur.push(0.0);
        for j in 1..n {
            let d = if letter == 0 { dt } else { g[j] - g[j - 1] };
            let v = cur[j - 1] + 0.5 * (prev[j - 1] + prev[j]) * d;
            cur.push(v);
        }
        prev = cur;
    }
    Ok(prev)
}

/// `I^w_{st}` over the grid nodes nearest `s` and `t` (`s ≤ t`).
pub fn iterated_integral(word: &[u8], g: &[f64], dt: f64, s: f64, t: f64) -> Result<f64> {
    if t < s {
        return Err(Error::Contract(format!("need s ≤ t, got ({s}, {t})")));
    }
    let (i0, i1) = (node_index(s, dt, g.len()), node_index(t, dt, g.len()));
    Ok(*iterated_path(word, &g[i0..=i1], dt)?.last().unwrap())
}

/// The iterated integrals that appear in the one-step expansions, over a
/// single segment of fine-grid driver values.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CellIntegrals {
    pub dt: f64,
    pub dg: f64,
    pub g10: f64,
    pub g011: f64,
    pub g101: f64,
    pub g110: f64,
}

impl CellIntegrals {
    pub fn new(g: &[f64], fine_dt: f64) -> Self {
        // Inline nested sums: all four words share the same few prefixes.
        let n = g.len();
        let (mut i1, mut i0) = (0.0, 0.0);
        let (mut i10, mut i01, mut i11) = (0.0, 0.0, 0.0);
        let (mut i011, mut i101, mut i110) = (0.0, 0.0, 0.0);
        for j in 1..n {
            let dg = g[j] - g[j - 1];
            let dt = fine_dt;
            let (p1, p0, p10, p01, p11) = (i1, i0, i10, i01, i11);
            i1 += dg;
            i0 += dt;
            i10 += 0.5 * (p1 + i1) * dt;
            i01 += 0.5 * (p0 + i0) * dg;
            i11 += 0.5 * (p1 + i1) * dg;
            i011 += 0.5 * (p01 + i01) * dg;
            i101 += 0.5 * (p10 + i10) * dg;
            i110 += 0.5 * (p11 + i11) * dt;
        }
        Self { dt: i0, dg: i1, g10: i10, g011: i011, g101: i101, g110: i110 }
    }

    /// Trapezoid kernel `½·Δt·Δg − g^{10}`.
    pub fn trapezoid_kernel(&self) -> f64 {
        0.5 * self.dt * self.dg - self.g10
    }
}

/// `x_t − x_s` minus its expansion in iterated integrals up to the terms of
/// total weight below `min(2+λ, 1+3λ, 5λ)`, with coefficients at `x_s`.
pub fn taylor_remainder_check(model: &CoefficientModel, xi: f64, g: &[f64], dt: f64, s: f64, t: f64) -> Result<f64> {
    model.require_order(4, "taylor_remainder_check")?;
    if !(t >= s && t - s <= 0.125 + 1e-15) {
        return Err(Error::Contract(format!("need 0 ≤ t−s ≤ 1/8, got ({s}, {t})")));
    }
    let i0 = node_index(s, dt, g.len());
    let i1 = node_index(t, dt, g.len());
    let seg = &g[i0..=i1];
    let xs = evolve(model, xi, &g[..=i0], dt, AUX_TOL)?;
    let xt = evolve(model, xs, seg, dt, AUX_TOL)?;
    Ok(xt - xs - taylor_expansion(model, xs, seg, dt))
}

/// The expansion itself (coefficients at `x`).
pub fn taylor_expansion(model: &CoefficientModel, x: f64, seg: &[f64], dt: f64) -> f64 {
    let c = CellIntegrals::new(seg, dt);
    let sd = model.sigma_derivs(x);
    let bd = model.b_derivs(x);
    let (s, s1, s2, s3) = (sd[0], sd[1], sd[2], sd[3]);
    let (b, b1, b2) = (bd[0], bd[1], bd[2]);
    let dt_ = c.dt;
    let dg = c.dg;
    // (σσ')' and σ(σσ')' with its derivative.
    let ss1_d = s1 * s1 + s * s2;
    let p2 = s * ss1_d;
    let p2_d = s1.powi(3) + 4.0 * s * s1 * s2 + s * s * s3;
    b * dt_
        + s * dg
        + 0.5 * s * s1 * dg * dg
        + p2 * dg.powi(3) / 6.0
        + s * p2_d * dg.powi(4) / 24.0
        + b * s1 * dg * dt_
        + (s * b1 - b * s1) * c.g10
        + 0.5 * b1 * b * dt_ * dt_
        + b * ss1_d * c.g011
        + s * (b1 * s1 + b * s2) * c.g101
        + s * (s1 * b1 + s * b2) * c.g110
}
