//! Monte Carlo oracles for iterated integrals, variation functionals and
//! scheme refinement.

use serde_json::json;

use fracsde::fbm::{FbmSampler, Hurst};
use fracsde::flow::{doss_solution, CellIntegrals};
use fracsde::harness::{run_rate_experiment, ExperimentConfig};
use fracsde::model::ModelSpec;
use fracsde::perturbation::{coefficient_functions, phi_processes};
use fracsde::schemes::SchemeKind;
use fracsde::stats::{mean, standard_error, variance, variance_standard_error};
use fracsde::variations::{hermite_variation, sigma_qh_squared, simple_trapezoid_variation};

fn assert_mean(samples: &[f64], target: f64, what: &str) {
    let (m, se) = (mean(samples), standard_error(samples));
    assert!((m - target).abs() < 3.0 * se, "{what}: {m} ± {se} vs {target}");
}

#[test]
fn brownian_triple_integral_mean() {
    let m = 4;
    let sampler = FbmSampler::new(10, Hurst::new(0.5).unwrap()).unwrap();
    let samples: Vec<f64> = (0..20_000)
        .map(|i| {
            let path = sampler.sample(2, i).with_level(m).unwrap();
            CellIntegrals::new(&path.cell(1), path.fine_step()).g011
        })
        .collect();
    let delta = 2f64.powi(-(m as i32));
    assert_mean(&samples, delta * delta / 4.0, "B^011");
}

#[test]
fn trapezoid_process_is_centred_for_brownian_motion() {
    let model = ModelSpec::new("sinh", json!({"drift": "neg-x"})).build().unwrap();
    let family = coefficient_functions(SchemeKind::CrankNicolson, &model).unwrap();
    let sampler = FbmSampler::new(10, Hurst::new(0.5).unwrap()).unwrap();
    let m = 6;
    let mut phi2 = Vec::new();
    let mut u = Vec::new();
    let mut w2 = Vec::new();
    for i in 0..4000 {
        let path = sampler.sample(3, i).with_level(m).unwrap();
        let reference = doss_solution(&model, 0.5, path.values(), path.fine_step()).unwrap();
        let x = reference.subsample(path.refinement());
        phi2.push(*phi_processes(&family, &x, &path).unwrap().phi[1].last().unwrap());
        u.push(simple_trapezoid_variation(&path, m, 1.0).unwrap());
        w2.push(hermite_variation(2, &path, m, 1.0).unwrap());
    }
    assert_mean(&phi2, 0.0, "Φ₂(1)");
    assert_mean(&u, 0.0, "U_m(1)");
    assert_mean(&w2, 0.0, "H^(2)_m(1)");
}

#[test]
fn cubic_variation_variance_matches_constant() {
    let h = 0.4;
    let m = 10;
    let (target, _) = sigma_qh_squared(3, h).unwrap();
    let sampler = FbmSampler::new(m, Hurst::new(h).unwrap()).unwrap();
    let v: Vec<f64> = (0..20_000).map(|i| hermite_variation(3, &sampler.sample(4, i), m, 1.0).unwrap()).collect();
    let (var, se) = (variance(&v), variance_standard_error(&v));
    assert!((var - target).abs() / target < 0.05, "Var {var} ± {se} vs σ² {target}");
}

#[test]
fn errors_shrink_under_refinement() {
    let cases = [
        (SchemeKind::Euler, 0.75, "sinh"),
        (SchemeKind::Milstein, 0.4, "trig"),
        (SchemeKind::CrankNicolson, 0.5, "sinh"),
    ];
    for (scheme, hurst, name) in cases {
        let cfg = ExperimentConfig {
            scheme,
            hurst,
            model: ModelSpec::new(name, json!({})),
            m_min: 4,
            m_max: 8,
            n_paths: 32,
            fine_offset: 3,
            ..Default::default()
        };
        let report = run_rate_experiment(&cfg).unwrap();
        // Levels use independent paths, so allow two combined standard errors.
        for w in report.levels.windows(2) {
            let slack = 2.0 * w[0].se.hypot(w[1].se);
            assert!(w[1].mean_sup_error <= w[0].mean_sup_error + slack, "{scheme:?}: {:?}", report.levels);
        }
    }
}
