//! Fractional Brownian motion on dyadic grids.
//!
//! Paths are sampled exactly on a fine grid of `2^M` cells by circulant
//! embedding of the increment covariance; coarse grids are sub-samples of
//! the fine grid so all levels share the same realisation.

use std::io::Write;
use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

/// Largest fine level the sampler accepts.
pub const MAX_FINE_LEVEL: u32 = 22;
/// Largest grid the Cholesky oracle accepts.
pub const MAX_CHOLESKY_N: usize = 1 << 12;
/// Relative threshold below which a negative circulant eigenvalue is fatal.
const EIGEN_TOL: f64 = 1e-12;

/// Hurst index `H ∈ (0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Hurst(f64);

impl Hurst {
    pub fn new(value: f64) -> Result<Self> {
        if value > 0.0 && value < 1.0 {
            Ok(Self(value))
        } else {
            Err(Error::Domain(format!("Hurst parameter must lie in (0,1), got {value}")))
        }
    }

    /// Like [`Hurst::new`] but also requires `H > 1/3`, the range in which
    /// the schemes and the pathwise SDE theory apply.
    pub fn for_schemes(value: f64) -> Result<Self> {
        let h = Self::new(value)?;
        if value <= 1.0 / 3.0 {
            return Err(Error::Domain(format!("schemes require 1/3 < H < 1, got {value}")));
        }
        Ok(h)
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Hurst {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<Hurst> for f64 {
    fn from(h: Hurst) -> f64 {
        h.0
    }
}

/// `R(s,t) = ½(s^{2H} + t^{2H} − |t−s|^{2H})`.
pub fn fbm_covariance(s: f64, t: f64, hurst: f64) -> Result<f64> {
    let h = Hurst::new(hurst)?.value();
    if !(0.0..=1.0).contains(&s) || !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("times must lie in [0,1], got ({s}, {t})")));
    }
    Ok(covariance_unchecked(s, t, h))
}

#[inline]
fn covariance_unchecked(s: f64, t: f64, h: f64) -> f64 {
    let two_h = 2.0 * h;
    0.5 * (s.powf(two_h) + t.powf(two_h) - (t - s).abs().powf(two_h))
}

/// Autocovariance of unit-spaced fractional Gaussian noise.
#[inline]
pub(crate) fn fgn_autocovariance(lag: usize, h: f64) -> f64 {
    let k = lag as f64;
    let two_h = 2.0 * h;
    0.5 * ((k + 1.0).powf(two_h) + (k - 1.0).abs().powf(two_h) - 2.0 * k.powf(two_h))
}

/// Which exact method produced a path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Circulant,
    Cholesky,
}

/// Metadata written next to exported paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathMetadata {
    pub hurst: f64,
    pub level: u32,
    pub fine_level: u32,
    pub seed: u64,
    pub index: u64,
    pub sampler: SamplerKind,
    pub fallback: bool,
}

/// One fBm sample on the fine grid `j·2^{-M}`, `j = 0..=2^M`.
#[derive(Debug, Clone, PartialEq)]
pub struct FbmPath {
    level: u32,
    fine_level: u32,
    values: Arc<[f64]>,
    hurst: Hurst,
    seed: u64,
    index: u64,
    sampler: SamplerKind,
    fallback: bool,
}

impl FbmPath {
    /// Wraps explicit fine-grid values (e.g. a deterministic driver).
    pub fn from_values(values: Vec<f64>, hurst: Hurst) -> Result<Self> {
        let n = values.len().saturating_sub(1);
        if n == 0 || !n.is_power_of_two() {
            return Err(Error::Contract(format!("path needs 2^M + 1 values, got {}", values.len())));
        }
        let fine_level = n.trailing_zeros();
        Ok(Self {
            level: fine_level,
            fine_level,
            values: values.into(),
            hurst,
            seed: 0,
            index: 0,
            sampler: SamplerKind::Circulant,
            fallback: false,
        })
    }

    /// Same realisation, viewed as a driver for a scheme at level `m ≤ M`.
    pub fn with_level(mut self, level: u32) -> Result<Self> {
        if level == 0 || level > self.fine_level {
            return Err(Error::Contract(format!("level {level} must satisfy 1 ≤ m ≤ M = {}", self.fine_level)));
        }
        self.level = level;
        Ok(self)
    }

    pub fn level(&self) -> u32 {
        self.level
    }
    pub fn fine_level(&self) -> u32 {
        self.fine_level
    }
    pub fn hurst(&self) -> Hurst {
        self.hurst
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn sampler(&self) -> SamplerKind {
        self.sampler
    }
    pub fn fallback(&self) -> bool {
        self.fallback
    }
    /// Fine-grid values `B_{j 2^{-M}}`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn fine_cells(&self) -> usize {
        1 << self.fine_level
    }
    pub fn fine_step(&self) -> f64 {
        (self.fine_cells() as f64).recip()
    }
    /// Number of fine cells per coarse cell at the path's level.
    pub fn refinement(&self) -> usize {
        1 << (self.fine_level - self.level)
    }

    /// Values at the dyadic grid of level `m`.
    pub fn coarse(&self, m: u32) -> Result<Vec<f64>> {
        if m > self.fine_level {
            return Err(Error::Contract(format!("coarse level {m} exceeds fine level {}", self.fine_level)));
        }
        let stride = 1usize << (self.fine_level - m);
        Ok(self.values.iter().step_by(stride).copied().collect())
    }

    /// Increments `ΔB_k` at the path's level.
    pub fn coarse_increments(&self) -> Vec<f64> {
        let stride = self.refinement();
        (1..=(1usize << self.level)).map(|k| self.values[k * stride] - self.values[(k - 1) * stride]).collect()
    }

    /// Fine-grid values `B_u − B_{τ_{k−1}}` over coarse cell `k` (1-based),
    /// `refinement() + 1` entries.
    pub fn cell(&self, k: usize) -> Vec<f64> {
        let stride = self.refinement();
        let start = (k - 1) * stride;
        let base = self.values[start];
        self.values[start..=start + stride].iter().map(|v| v - base).collect()
    }

    pub fn metadata(&self) -> PathMetadata {
        PathMetadata {
            hurst: self.hurst.value(),
            level: self.level,
            fine_level: self.fine_level,
            seed: self.seed,
            index: self.index,
            sampler: self.sampler,
            fallback: self.fallback,
        }
    }

    /// CSV `t,B` on the fine grid at 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,B")?;
        let dt = self.fine_step();
        for (j, v) in self.values.iter().enumerate() {
            writeln!(out, "{:.16e},{:.16e}", j as f64 * dt, v)?;
        }
        Ok(())
    }
}

/// Reusable sampler for a fixed `(M, H)`; the circulant spectrum (or the
/// Cholesky factor after a fallback) is computed once.
#[derive(Clone)]
pub struct FbmSampler {
    fine_level: u32,
    hurst: Hurst,
    inner: SamplerInner,
}

#[derive(Clone)]
enum SamplerInner {
    Circulant { sqrt_eigen: Vec<f64>, fft: Arc<dyn rustfft::Fft<f64>> },
    Cholesky(CholeskySampler),
}

impl FbmSampler {
    pub fn new(fine_level: u32, hurst: Hurst) -> Result<Self> {
        if fine_level == 0 || fine_level > MAX_FINE_LEVEL {
            return Err(Error::Domain(format!("fine level must satisfy 1 ≤ M ≤ {MAX_FINE_LEVEL}, got {fine_level}")));
        }
        let n = 1usize << fine_level;
        let h = hurst.value();
        let size = 2 * n;
        let mut c: Vec<Complex64> = (0..size)
            .map(|j| {
                let lag = if j <= n { j } else { size - j };
                Complex64::new(fgn_autocovariance(lag, h), 0.0)
            })
            .collect();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(size);
        fft.process(&mut c);
        let max = c.iter().map(|z| z.re).fold(f64::MIN, f64::max);
        let min = c.iter().map(|z| z.re).fold(f64::MAX, f64::min);
        if min < -EIGEN_TOL * max {
            let inner = SamplerInner::Cholesky(CholeskySampler::new(n, hurst)?);
            return Ok(Self { fine_level, hurst, inner });
        }
        let sqrt_eigen = c.iter().map(|z| (z.re.max(0.0) / size as f64).sqrt()).collect();
        Ok(Self { fine_level, hurst, inner: SamplerInner::Circulant { sqrt_eigen, fft } })
    }

    pub fn is_fallback(&self) -> bool {
        matches!(self.inner, SamplerInner::Cholesky(_))
    }

    /// Path number `index` of the family keyed by `seed`.
    pub fn sample(&self, seed: u64, index: u64) -> FbmPath {
        self.sample_from(seed, Purpose::Fbm, index)
    }

    /// Path drawn from the stream `(seed, purpose, index)`.
    pub fn sample_from(&self, seed: u64, purpose: Purpose, index: u64) -> FbmPath {
        match &self.inner {
            SamplerInner::Cholesky(chol) => {
                let mut path = chol.sample_from(seed, purpose, index);
                path.fallback = true;
                path
            }
            SamplerInner::Circulant { sqrt_eigen, fft } => {
                let n = 1usize << self.fine_level;
                let mut rng = rng::stream(seed, purpose, index);
                let mut buf: Vec<Complex64> = sqrt_eigen
                    .iter()
                    .map(|s| {
                        let re: f64 = StandardNormal.sample(&mut rng);
                        let im: f64 = StandardNormal.sample(&mut rng);
                        Complex64::new(s * re, s * im)
                    })
                    .collect();
                fft.process(&mut buf);
                let scale = (n as f64).powf(-self.hurst.value());
                let mut values = Vec::with_capacity(n + 1);
                let mut acc = 0.0;
                values.push(0.0);
                for z in &buf[..n] {
                    acc += scale * z.re;
                    values.push(acc);
                }
                FbmPath {
                    level: self.fine_level,
                    fine_level: self.fine_level,
                    values: values.into(),
                    hurst: self.hurst,
                    seed,
                    index,
                    sampler: SamplerKind::Circulant,
                    fallback: false,
                }
            }
        }
    }
}

/// One path at fine level `M` keyed by `seed` (stream index 0).
pub fn sample_fbm(fine_level: u32, hurst: Hurst, seed: u64) -> Result<FbmPath> {
    Ok(FbmSampler::new(fine_level, hurst)?.sample(seed, 0))
}

/// Exact sampler by Cholesky factorisation of `R(t_i, t_j)`, `t_i = i/n`.
#[derive(Debug, Clone)]
pub struct CholeskySampler {
    n: usize,
    hurst: Hurst,
    /// Row-major lower-triangular factor.
    factor: Vec<f64>,
}

impl CholeskySampler {
    pub fn new(n: usize, hurst: Hurst) -> Result<Self> {
        if n == 0 || n > MAX_CHOLESKY_N || !n.is_power_of_two() {
            return Err(Error::Domain(format!(
                "Cholesky grid size must be a power of two in [1, {MAX_CHOLESKY_N}], got {n}"
            )));
        }
        let h = hurst.value();
        let dt = 1.0 / n as f64;
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                a[i * n + j] = covariance_unchecked((i + 1) as f64 * dt, (j + 1) as f64 * dt, h);
            }
        }
        for j in 0..n {
            let mut d = a[j * n + j];
            for k in 0..j {
                d -= a[j * n + k] * a[j * n + k];
            }
            if d <= 0.0 || !d.is_finite() {
                return Err(Error::Factorization { pivot: j, value: d });
            }
            let d = d.sqrt();
            a[j * n + j] = d;
            for i in j + 1..n {
                let mut s = a[i * n + j];
                for k in 0..j {
                    s -= a[i * n + k] * a[j * n + k];
                }
                a[i * n + j] = s / d;
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                a[i * n + j] = 0.0;
            }
        }
        Ok(Self { n, hurst, factor: a })
    }

    /// Lower factor entry `L[i][j]`.
    pub fn factor(&self, i: usize, j: usize) -> f64 {
        self.factor[i * self.n + j]
    }

    pub fn sample(&self, seed: u64, index: u64) -> FbmPath {
        self.sample_from(seed, Purpose::Fbm, index)
    }

    /// Path drawn from the stream `(seed, purpose, index)`.
    pub fn sample_from(&self, seed: u64, purpose: Purpose, index: u64) -> FbmPath {
        let n = self.n;
        let mut rng = rng::stream(seed, purpose, index);
        let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut values = Vec::with_capacity(n + 1);
        values.push(0.0);
        for i in 0..n {
            let row = &self.factor[i * n..i * n + i + 1];
            values.push(row.iter().zip(&z).map(|(l, z)| l * z).sum());
        }
        let level = n.trailing_zeros();
        FbmPath {
            level,
            fine_level: level,
            values: values.into(),
            hurst: self.hurst,
            seed,
            index,
            sampler: SamplerKind::Cholesky,
            fallback: false,
        }
    }
}

/// Cholesky oracle for an `n`-step grid on `[0,1]`.
pub fn sample_fbm_cholesky(n: usize, hurst: Hurst, seed: u64) -> Result<FbmPath> {
    Ok(CholeskySampler::new(n, hurst)?.sample(seed, 0))
}

/// `sup |B_t − B_s| / (t−s)^λ` over fine-grid pairs with `0 < t−s ≤ window`.
///
/// The supremum runs over grid pairs only, an approximation of the
/// continuum supremum.
pub fn holder_ratio(path: &FbmPath, lambda: f64, window: f64) -> Result<f64> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::Domain(format!("exponent must lie in (0,1), got {lambda}")));
    }
    if !(window > 0.0 && window <= 1.0) {
        return Err(Error::Domain(format!("window must lie in (0,1], got {window}")));
    }
    let v = path.values();
    let n = path.fine_cells();
    let dt = path.fine_step();
    // Tolerate rounding when the window is an exact multiple of the step.
    let max_lag = ((window / dt) * (1.0 + 1e-12)).floor() as usize;
    let max_lag = max_lag.min(n);
    let weights: Vec<f64> = (0..=max_lag).map(|d| (d as f64 * dt).powf(-lambda)).collect();
    let mut best = 0.0f64;
    for i in 0..n {
        let vi = v[i];
        let end = (i + max_lag).min(n);
        for j in i + 1..=end {
            let r = (v[j] - vi).abs() * weights[j - i];
            if r > best {
                best = r;
            }
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covariance_examples() {
        assert_eq!(fbm_covariance(1.0, 1.0, 0.75).unwrap(), 1.0);
        assert!((fbm_covariance(0.5, 1.0, 0.5).unwrap() - 0.5).abs() < 1e-15);
        // ½(0.25^{1.5} + 1 − 0.75^{1.5}), evaluated in extended precision.
        assert!((fbm_covariance(0.25, 1.0, 0.75).unwrap() - 0.237_740_473_580_835_6).abs() < 1e-12);
    }

    #[test]
    fn covariance_rejects_bad_inputs() {
        assert!(matches!(fbm_covariance(0.2, 0.3, 1.0), Err(Error::Domain(_))));
        assert!(matches!(fbm_covariance(0.2, 0.3, 0.0), Err(Error::Domain(_))));
        assert!(matches!(fbm_covariance(-0.1, 0.3, 0.5), Err(Error::Domain(_))));
        assert!(matches!(fbm_covariance(0.1, 1.3, 0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn small_path_shape() {
        let p = sample_fbm(3, Hurst::new(0.5).unwrap(), 1).unwrap();
        assert_eq!(p.values().len(), 9);
        assert_eq!(p.values()[0], 0.0);
        assert_eq!(p.coarse_increments().len(), 8);
        assert_eq!(p.sampler(), SamplerKind::Circulant);
        assert!(!p.fallback());
    }

    #[test]
    fn fine_level_guard() {
        let h = Hurst::new(0.5).unwrap();
        assert!(FbmSampler::new(0, h).is_err());
        assert!(FbmSampler::new(MAX_FINE_LEVEL + 1, h).is_err());
    }

    #[test]
    fn deterministic_and_level_consistent() {
        let h = Hurst::new(0.3).unwrap();
        let a = sample_fbm(8, h, 42).unwrap();
        let b = sample_fbm(8, h, 42).unwrap();
        assert_eq!(a.values(), b.values());
        let c5 = a.coarse(5).unwrap();
        for (k, v) in c5.iter().enumerate() {
            assert_eq!(v.to_bits(), a.values()[k * 8].to_bits());
        }
        let c3_via_5: Vec<f64> = c5.iter().step_by(4).copied().collect();
        assert_eq!(c3_via_5, a.coarse(3).unwrap());
    }

    #[test]
    fn cholesky_factor_reproduces_covariance() {
        let h = Hurst::new(0.7).unwrap();
        let n = 64;
        let chol = CholeskySampler::new(n, h).unwrap();
        for i in 0..n {
            for j in 0..=i {
                let mut s = 0.0;
                for k in 0..=j {
                    s += chol.factor(i, k) * chol.factor(j, k);
                }
                let r = fbm_covariance((i + 1) as f64 / n as f64, (j + 1) as f64 / n as f64, 0.7).unwrap();
                assert!((s - r).abs() < 1e-10, "({i},{j}) {s} vs {r}");
            }
        }
    }

    #[test]
    fn cholesky_two_point_variance() {
        // n = 2 at H = 1/2: Var(B_{1/2}) = 1/2 and Var(B_1) = 1.
        let chol = CholeskySampler::new(2, Hurst::new(0.5).unwrap()).unwrap();
        let l00 = chol.factor(0, 0);
        assert!((l00 * l00 - 0.5).abs() < 1e-15);
        let v1 = chol.factor(1, 0).powi(2) + chol.factor(1, 1).powi(2);
        assert!((v1 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cholesky_size_guard() {
        let h = Hurst::new(0.5).unwrap();
        assert!(CholeskySampler::new(3, h).is_err());
        assert!(CholeskySampler::new(MAX_CHOLESKY_N * 2, h).is_err());
    }

    #[test]
    fn holder_examples() {
        let h = Hurst::new(0.5).unwrap();
        let flat = FbmPath::from_values(vec![0.0; 17], h).unwrap();
        assert_eq!(holder_ratio(&flat, 0.5, 1.0).unwrap(), 0.0);
        let line: Vec<f64> = (0..=16).map(|j| j as f64 / 16.0).collect();
        let line = FbmPath::from_values(line, h).unwrap();
        let r = holder_ratio(&line, 0.5, 1.0).unwrap();
        assert!((r - 1.0).abs() < 1e-14);
        assert!(holder_ratio(&line, 1.5, 1.0).is_err());
        assert!(holder_ratio(&line, 0.5, 0.0).is_err());
    }

    #[test]
    fn holder_matches_direct_double_loop() {
        let h = Hurst::new(0.45).unwrap();
        for seed in 0..8 {
            let p = sample_fbm(6, h, seed).unwrap();
            let fast = holder_ratio(&p, 0.44, 1.0 / 8.0).unwrap();
            let t: Vec<f64> = (0..=64).map(|j| j as f64 / 64.0).collect();
            let mut brute = 0.0f64;
            for (i, ti) in t.iter().enumerate() {
                for (j, tj) in t.iter().enumerate() {
                    let d = tj - ti;
                    if d > 0.0 && d <= 0.125 + 1e-15 {
                        brute = brute.max((p.values()[j] - p.values()[i]).abs() / d.powf(0.44));
                    }
                }
            }
            assert!((fast - brute).abs() <= 1e-12 * brute.max(1.0));
            assert_eq!(fast <= 1.0, brute <= 1.0);
        }
    }

    #[test]
    fn csv_export_has_header_and_full_precision() {
        let p = sample_fbm(2, Hurst::new(0.6).unwrap(), 9).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,B"));
        let rows: Vec<_> = lines.collect();
        assert_eq!(rows.len(), 5);
        let last: Vec<f64> = rows[4].split(',').map(|s| s.parse().unwrap()).collect();
        assert_eq!(last[1].to_bits(), p.values()[4].to_bits());
        let meta = serde_json::to_value(p.metadata()).unwrap();
        assert_eq!(meta["sampler"], "circulant");
        assert_eq!(meta["fallback"], false);
    }
}
