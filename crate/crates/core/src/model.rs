//! Coefficient models `b` (drift) and `σ` (dispersion) with analytic
//! derivatives up to order six, addressable by name plus a JSON parameter
//! object.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// Highest derivative order every registered model provides.
pub const MAX_ORDER: usize = 6;

/// Range used for invariant spot checks (ellipticity, inverse pairs).
pub const WORKING_RANGE: (f64, f64) = (-5.0, 5.0);

/// Derivatives `f, f', ..., f⁽⁶⁾` at one point.
pub type Derivs = [f64; MAX_ORDER + 1];

/// Drift families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Drift {
    Zero,
    /// `b ≡ θ`
    Constant {
        theta: f64,
    },
    /// `b(x) = θx`
    Linear {
        theta: f64,
    },
    /// `b(x) = A cos x`
    Cos {
        amplitude: f64,
    },
}

/// Dispersion families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Diffusion {
    /// `σ ≡ c`
    Constant { c: f64 },
    /// `σ(x) = √(1+x²)`, flow `φ(α,β) = sinh(β + asinh α)`.
    Sinh,
    /// `σ(x) = level + amplitude·sin x`
    Trig { level: f64, amplitude: f64 },
}

impl Drift {
    pub fn derivs(&self, x: f64) -> Derivs {
        let mut d = [0.0; MAX_ORDER + 1];
        match *self {
            Drift::Zero => {}
            Drift::Constant { theta } => d[0] = theta,
            Drift::Linear { theta } => {
                d[0] = theta * x;
                d[1] = theta;
            }
            Drift::Cos { amplitude } => {
                let (s, c) = x.sin_cos();
                // cos, -sin, -cos, sin, cos, ...
                let cycle = [c, -s, -c, s];
                for (j, v) in d.iter_mut().enumerate() {
                    *v = amplitude * cycle[j % 4];
                }
            }
        }
        d
    }

    pub fn value(&self, x: f64) -> f64 {
        match *self {
            Drift::Zero => 0.0,
            Drift::Constant { theta } => theta,
            Drift::Linear { theta } => theta * x,
            Drift::Cos { amplitude } => amplitude * x.cos(),
        }
    }

    fn params_finite(&self) -> bool {
        match *self {
            Drift::Zero => true,
            Drift::Constant { theta } | Drift::Linear { theta } => theta.is_finite(),
            Drift::Cos { amplitude } => amplitude.is_finite(),
        }
    }

    fn sup_derivative(&self) -> f64 {
        match *self {
            Drift::Zero | Drift::Constant { .. } => 0.0,
            Drift::Linear { theta } => theta.abs(),
            Drift::Cos { amplitude } => amplitude.abs(),
        }
    }
}

impl Diffusion {
    pub fn derivs(&self, x: f64) -> Derivs {
        let mut d = [0.0; MAX_ORDER + 1];
        match *self {
            Diffusion::Constant { c } => d[0] = c,
            Diffusion::Sinh => {
                let s = 1.0 + x * x;
                let r = s.sqrt();
                let x2 = x * x;
                d[0] = r;
                d[1] = x / r;
                d[2] = 1.0 / (s * r);
                d[3] = -3.0 * x / (s * s * r);
                d[4] = (12.0 * x2 - 3.0) / (s * s * s * r);
                d[5] = (45.0 * x - 60.0 * x2 * x) / (s * s * s * s * r);
                d[6] = (45.0 - 540.0 * x2 + 360.0 * x2 * x2) / (s * s * s * s * s * r);
            }
            Diffusion::Trig { level, amplitude } => {
                let (sn, cs) = x.sin_cos();
                let cycle = [sn, cs, -sn, -cs];
                for (j, v) in d.iter_mut().enumerate() {
                    *v = amplitude * cycle[j % 4];
                }
                d[0] += level;
            }
        }
        d
    }

    pub fn value(&self, x: f64) -> f64 {
        match *self {
            Diffusion::Constant { c } => c,
            Diffusion::Sinh => (1.0 + x * x).sqrt(),
            Diffusion::Trig { level, amplitude } => level + amplitude * x.sin(),
        }
    }

    /// `(σ, σ')`, the pair the flow integrator needs.
    pub fn value_and_slope(&self, x: f64) -> (f64, f64) {
        match *self {
            Diffusion::Constant { c } => (c, 0.0),
            Diffusion::Sinh => {
                let r = (1.0 + x * x).sqrt();
                (r, x / r)
            }
            Diffusion::Trig { level, amplitude } => {
                let (sn, cs) = x.sin_cos();
                (level + amplitude * sn, amplitude * cs)
            }
        }
    }

    fn params_finite(&self) -> bool {
        match *self {
            Diffusion::Constant { c } => c.is_finite(),
            Diffusion::Sinh => true,
            Diffusion::Trig { level, amplitude } => level.is_finite() && amplitude.is_finite(),
        }
    }

    fn sup_derivative(&self) -> f64 {
        match *self {
            Diffusion::Constant { .. } => 0.0,
            Diffusion::Sinh => 1.0,
            Diffusion::Trig { amplitude, .. } => amplitude.abs(),
        }
    }

    fn infimum(&self) -> f64 {
        match *self {
            Diffusion::Constant { c } => c,
            Diffusion::Sinh => 1.0,
            Diffusion::Trig { level, amplitude } => level - amplitude.abs(),
        }
    }
}

/// Recorded sup-norms of the first derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupBounds {
    pub db: f64,
    pub dsigma: f64,
}

/// Name plus parameter object, as it appears in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub name: String,
    #[serde(default)]
    pub params: Value,
}

impl ModelSpec {
    pub fn new(name: &str, params: Value) -> Self {
        Self { name: name.to_owned(), params }
    }

    pub fn build(&self) -> Result<CoefficientModel> {
        CoefficientModel::from_registry(&self.name, &self.params)
    }
}

/// A drift/dispersion pair with its recorded bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientModel {
    name: String,
    drift: Drift,
    diffusion: Diffusion,
    max_order: usize,
    sup_bounds: SupBounds,
    sigma_inf: Option<f64>,
}

fn param_f64(params: &Value, key: &str, default: f64) -> Result<f64> {
    match params.get(key) {
        None | Some(Value::Null) => Ok(default),
        Some(v) => v.as_f64().ok_or_else(|| Error::Config(format!("parameter `{key}` must be a number"))),
    }
}

fn param_str<'a>(params: &'a Value, key: &str, default: &'a str) -> Result<&'a str> {
    match params.get(key) {
        None | Some(Value::Null) => Ok(default),
        Some(v) => v.as_str().ok_or_else(|| Error::Config(format!("parameter `{key}` must be a string"))),
    }
}

fn named_drift(name: &str) -> Result<Drift> {
    match name {
        "zero" => Ok(Drift::Zero),
        "neg-x" => Ok(Drift::Linear { theta: -1.0 }),
        "cos" => Ok(Drift::Cos { amplitude: 1.0 }),
        other => Err(Error::Config(format!("unknown drift `{other}` (expected zero, neg-x or cos)"))),
    }
}

impl CoefficientModel {
    /// Builds a model from explicit families, validating ellipticity claims.
    pub fn new(name: &str, drift: Drift, diffusion: Diffusion) -> Result<Self> {
        if !drift.params_finite() || !diffusion.params_finite() {
            return Err(Error::Config(format!("non-finite parameter in {drift:?} / {diffusion:?}")));
        }
        let inf = diffusion.infimum();
        let sigma_inf = (inf > 0.0).then_some(inf);
        let model = Self {
            name: name.to_owned(),
            sup_bounds: SupBounds { db: drift.sup_derivative(), dsigma: diffusion.sup_derivative() },
            drift,
            diffusion,
            max_order: MAX_ORDER,
            sigma_inf,
        };
        model.spot_check_ellipticity()?;
        Ok(model)
    }

    /// Registered models:
    ///
    /// * `constant` `{theta, c}`: `b ≡ θ`, `σ ≡ c`
    /// * `linear-drift` `{theta, c}`: `b(x) = θx`, `σ ≡ c`
    /// * `sinh` `{drift: zero | neg-x | cos}`: `σ = √(1+x²)`
    /// * `trig` `{drift: cos | zero}`: `σ = 2 + sin x`
    pub fn from_registry(name: &str, params: &Value) -> Result<Self> {
        match name {
            "constant" => {
                let theta = param_f64(params, "theta", 0.5)?;
                let c = param_f64(params, "c", 2.0)?;
                Self::new(name, Drift::Constant { theta }, Diffusion::Constant { c })
            }
            "linear-drift" => {
                let theta = param_f64(params, "theta", -1.0)?;
                let c = param_f64(params, "c", 1.0)?;
                Self::new(name, Drift::Linear { theta }, Diffusion::Constant { c })
            }
            "sinh" => {
                let drift = named_drift(param_str(params, "drift", "neg-x")?)?;
                Self::new(name, drift, Diffusion::Sinh)
            }
            "trig" => {
                let drift = named_drift(param_str(params, "drift", "cos")?)?;
                let level = param_f64(params, "level", 2.0)?;
                let amplitude = param_f64(params, "amplitude", 1.0)?;
                Self::new(name, drift, Diffusion::Trig { level, amplitude })
            }
            other => {
                Err(Error::Config(format!("unknown model `{other}` (expected constant, linear-drift, sinh or trig)")))
            }
        }
    }

    /// Caps the advertised derivative order; used to exercise contract checks.
    pub fn with_max_order(mut self, order: usize) -> Self {
        self.max_order = order.min(MAX_ORDER);
        self
    }

    fn spot_check_ellipticity(&self) -> Result<()> {
        let Some(inf) = self.sigma_inf else {
            return Ok(());
        };
        let (lo, hi) = WORKING_RANGE;
        let n = 4000;
        for i in 0..=n {
            let x = lo + (hi - lo) * i as f64 / n as f64;
            let s = self.diffusion.value(x);
            if s < inf - 1e-12 {
                return Err(Error::Contract(format!("model `{}` claims inf σ = {inf} but σ({x}) = {s}", self.name)));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn drift(&self) -> &Drift {
        &self.drift
    }
    pub fn diffusion(&self) -> &Diffusion {
        &self.diffusion
    }
    pub fn max_order(&self) -> usize {
        self.max_order
    }
    pub fn sup_bounds(&self) -> SupBounds {
        self.sup_bounds
    }
    pub fn sigma_inf(&self) -> Option<f64> {
        self.sigma_inf
    }
    pub fn is_elliptic(&self) -> bool {
        self.sigma_inf.is_some()
    }

    pub fn require_elliptic(&self, what: &str) -> Result<f64> {
        self.sigma_inf
            .ok_or_else(|| Error::Contract(format!("{what} requires inf σ > 0; model `{}` is not elliptic", self.name)))
    }

    pub fn require_order(&self, order: usize, what: &str) -> Result<()> {
        if order > self.max_order {
            return Err(Error::Contract(format!(
                "{what} needs derivatives to order {order}; model `{}` registers {}",
                self.name, self.max_order
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn b(&self, x: f64) -> f64 {
        self.drift.value(x)
    }
    #[inline]
    pub fn sigma(&self, x: f64) -> f64 {
        self.diffusion.value(x)
    }
    #[inline]
    pub fn db(&self, x: f64) -> f64 {
        self.drift.derivs(x)[1]
    }
    #[inline]
    pub fn dsigma(&self, x: f64) -> f64 {
        self.diffusion.value_and_slope(x).1
    }

    pub fn b_derivs(&self, x: f64) -> Derivs {
        self.drift.derivs(x)
    }
    pub fn sigma_derivs(&self, x: f64) -> Derivs {
        self.diffusion.derivs(x)
    }

    /// `W = σb' − σ'b`.
    pub fn wronskian(&self, x: f64) -> f64 {
        let (s, ds) = self.diffusion.value_and_slope(x);
        s * self.db(x) - ds * self.b(x)
    }

    /// Closed-form flow `(φ(α,β), ∂₁φ(α,β))` when the dispersion admits one.
    pub fn closed_form_flow(&self, alpha: f64, beta: f64) -> Option<(f64, f64)> {
        match self.diffusion {
            Diffusion::Constant { c } => Some((alpha + c * beta, 1.0)),
            Diffusion::Sinh => {
                let z = beta + alpha.asinh();
                Some((z.sinh(), z.cosh() / (1.0 + alpha * alpha).sqrt()))
            }
            Diffusion::Trig { .. } => None,
        }
    }

    /// Closed-form `F(x) = ∫₀ˣ dξ/σ(ξ)` when available.
    pub fn closed_form_lamperti(&self, x: f64) -> Option<f64> {
        match self.diffusion {
            Diffusion::Constant { c } if c > 0.0 => Some(x / c),
            Diffusion::Sinh => Some(x.asinh()),
            _ => None,
        }
    }
}
