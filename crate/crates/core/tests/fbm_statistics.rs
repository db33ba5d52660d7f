//! Statistical checks of the fBm samplers and of the kernel covariances.

use fracsde::fbm::{fbm_covariance, CholeskySampler, FbmSampler, Hurst};
use fracsde::stats::{ks_p_value, ks_statistic, mean, standard_error};
use fracsde::variations::{a_cov, rho, trapezoid_kernels};

#[test]
fn terminal_variance_is_one() {
    let sampler = FbmSampler::new(4, Hurst::new(0.7).unwrap()).unwrap();
    let squares: Vec<f64> = (0..100_000).map(|s| sampler.sample(s, 0).values()[16].powi(2)).collect();
    assert!((mean(&squares) - 1.0).abs() < 0.02, "E B₁² = {}", mean(&squares));
}

#[test]
fn circulant_and_cholesky_agree_in_law() {
    let h = Hurst::new(0.3).unwrap();
    let fft = FbmSampler::new(6, h).unwrap();
    let chol = CholeskySampler::new(64, h).unwrap();
    let a: Vec<f64> = (0..10_000).map(|i| fft.sample(11, i).values()[64]).collect();
    let b: Vec<f64> = (0..10_000).map(|i| chol.sample(12, i).values()[64]).collect();
    let d = ks_statistic(&a, &b);
    let p = ks_p_value(d, a.len(), b.len());
    assert!(p > 0.01, "KS d={d} p={p}");
}

#[test]
fn increments_are_stationary_with_rho_correlation() {
    let h = 0.35;
    let n = 64usize;
    let sampler = FbmSampler::new(6, Hurst::new(h).unwrap()).unwrap();
    let paths: Vec<Vec<f64>> = (0..20_000).map(|i| sampler.sample(5, i).values().to_vec()).collect();
    let scale = (n as f64).powf(2.0 * h);
    for lag in [1usize, 2, 5] {
        for shift in [0usize, 17, 40] {
            let prods: Vec<f64> = paths
                .iter()
                .map(|v| {
                    let d0 = v[shift + 1] - v[shift];
                    let d1 = v[shift + lag + 1] - v[shift + lag];
                    d0 * d1 * scale
                })
                .collect();
            let target = rho(h, lag as u64);
            let (m, se) = (mean(&prods), standard_error(&prods));
            assert!((m - target).abs() < 3.0 * se + 1e-12, "lag {lag} shift {shift}: {m} vs {target} (se {se})");
        }
    }
}

/// Exact covariance of the two level-1 kernels computed on the fine grid,
/// scaled like `a`.
fn discrete_kernel_covariance(h: f64, fine_level: u32) -> f64 {
    let n = 1usize << fine_level;
    let stride = n / 2;
    let step = 1.0 / n as f64;
    let weights = |c: usize| {
        let mut w = vec![0.0; n + 1];
        let base = c * stride;
        w[base + stride] += 0.25;
        w[base] -= 0.25;
        for j in 1..=stride {
            w[base + j - 1] -= 0.5 * step;
            w[base + j] -= 0.5 * step;
            w[base] += step;
        }
        w
    };
    let (w0, w1) = (weights(0), weights(1));
    let mut acc = 0.0;
    for (i, wi) in w0.iter().enumerate().skip(1) {
        for (j, wj) in w1.iter().enumerate().skip(1) {
            acc += wi * wj * fbm_covariance(i as f64 * step, j as f64 * step, h).unwrap();
        }
    }
    acc * 2f64.powf(2.0 * (1.0 + h))
}

#[test]
fn kernel_covariance_matches_monte_carlo() {
    let h = 0.75;
    let fine = 7;
    let target = a_cov(h, 1, 2).unwrap();
    // Grid bias of the oracle is far below the Monte Carlo error.
    let bias = (discrete_kernel_covariance(h, fine) - target).abs();
    assert!(bias < 1e-5, "grid bias {bias}");
    let sampler = FbmSampler::new(fine, Hurst::new(h).unwrap()).unwrap();
    let scale = 2f64.powf(2.0 * (1.0 + h));
    let prods: Vec<f64> = (0..1_000_000)
        .map(|i| {
            let z = trapezoid_kernels(&sampler.sample(21, i), 1).unwrap();
            z[0] * z[1] * scale
        })
        .collect();
    let (m, se) = (mean(&prods), standard_error(&prods));
    assert!((m - target).abs() < 3.0 * se, "MC {m} ± {se} vs {target}");
}
