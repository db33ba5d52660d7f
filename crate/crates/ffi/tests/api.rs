use std::ffi::{CStr, CString};
use std::ptr;

use fracsde_ffi::*;

fn last_error() -> String {
    let p = fracsde_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

struct Handles {
    model: *mut FracsdeModel,
    path: *mut FracsdePath,
}

impl Drop for Handles {
    fn drop(&mut self) {
        unsafe {
            fracsde_model_free(self.model);
            fracsde_path_free(self.path);
        }
    }
}

fn handles(model: &str, params: &str, fine: u32, level: u32) -> Handles {
    let name = CString::new(model).unwrap();
    let params = CString::new(params).unwrap();
    let mut h = Handles { model: ptr::null_mut(), path: ptr::null_mut() };
    unsafe {
        assert_eq!(fracsde_model_new(name.as_ptr(), params.as_ptr(), &mut h.model), FracsdeStatus::Ok);
        assert_eq!(fracsde_fbm_sample(fine, 0.5, 3, 0, &mut h.path), FracsdeStatus::Ok);
        assert_eq!(fracsde_path_set_level(h.path, level), FracsdeStatus::Ok);
    }
    h
}

#[test]
fn scheme_matches_library() {
    let h = handles("sinh", r#"{"drift": "neg-x"}"#, 10, 6);
    let mut out = vec![0.0; 65];
    let mut frozen = true;
    let status = unsafe {
        fracsde_scheme_run(FracsdeScheme::Euler, h.model, 0.5, h.path, out.as_mut_ptr(), out.len(), &mut frozen)
    };
    assert_eq!(status, FracsdeStatus::Ok);
    assert!(!frozen);

    let model = fracsde::model::ModelSpec::new("sinh", serde_json::json!({"drift": "neg-x"})).build().unwrap();
    let sampler = fracsde::fbm::FbmSampler::new(10, fracsde::fbm::Hurst::new(0.5).unwrap()).unwrap();
    let path = sampler.sample(3, 0).with_level(6).unwrap();
    let opts = fracsde::schemes::RunOptions::default();
    let traj = fracsde::schemes::run_scheme(fracsde::schemes::SchemeKind::Euler, &model, 0.5, &path, &opts).unwrap();
    assert_eq!(out, traj.values);
}

#[test]
fn reference_and_path_lengths() {
    let h = handles("trig", r#"{"drift": "zero"}"#, 8, 4);
    let mut n = 0usize;
    assert_eq!(unsafe { fracsde_path_len(h.path, &mut n) }, FracsdeStatus::Ok);
    assert_eq!(n, 257);
    let mut b = vec![0.0; n];
    assert_eq!(unsafe { fracsde_path_values(h.path, b.as_mut_ptr(), n) }, FracsdeStatus::Ok);
    assert_eq!(b[0], 0.0);
    let mut x = vec![0.0; n];
    assert_eq!(unsafe { fracsde_reference_solve(h.model, 0.3, h.path, x.as_mut_ptr(), n) }, FracsdeStatus::Ok);
    assert_eq!(x[0], 0.3);

    let mut short = vec![0.0; n - 1];
    let status = unsafe { fracsde_reference_solve(h.model, 0.3, h.path, short.as_mut_ptr(), short.len()) };
    assert_eq!(status, FracsdeStatus::InvalidArgument);
    assert!(last_error().contains("257"));
}

#[test]
fn error_codes() {
    let mut v = 0.0;
    unsafe {
        assert_eq!(fracsde_theoretical_rate(FracsdeScheme::Euler, 0.4, &mut v), FracsdeStatus::Domain);
        assert_eq!(fracsde_theoretical_rate(FracsdeScheme::CrankNicolson, 0.5, &mut v), FracsdeStatus::Ok);
        assert_eq!(v, 1.0);
        assert_eq!(fracsde_rho(1.5, 1, &mut v), FracsdeStatus::Domain);
        assert_eq!(fracsde_model_eval(ptr::null(), 0.0, &mut v, &mut v), FracsdeStatus::NullPointer);
        assert!(last_error().contains("model"));

        let bad = CString::new("{not json").unwrap();
        let name = CString::new("sinh").unwrap();
        let mut model = ptr::null_mut();
        assert_eq!(fracsde_model_new(name.as_ptr(), bad.as_ptr(), &mut model), FracsdeStatus::Config);
        assert!(model.is_null());

        let mut path = ptr::null_mut();
        assert_eq!(fracsde_fbm_sample(4, 0.5, 1, 0, &mut path), FracsdeStatus::Ok);
        assert_eq!(fracsde_path_set_level(path, 5), FracsdeStatus::Contract);
        fracsde_path_free(path);
        fracsde_model_free(ptr::null_mut());
    }
}

#[test]
fn constants_through_the_boundary() {
    let mut v = 0.0;
    unsafe {
        assert_eq!(fracsde_sigma_tilde(0.5, &mut v), FracsdeStatus::Ok);
        assert!((v - 1.0 / 12f64.sqrt()).abs() < 1e-9);
        assert_eq!(fracsde_a_cov(0.5, 3, 3, &mut v), FracsdeStatus::Ok);
        assert!((v - 1.0 / 12.0).abs() < 1e-12);
        let (mut x, mut y) = (0.0, 0.0);
        assert_eq!(fracsde_a_dagger(0.35, 2, 9, &mut x), FracsdeStatus::Ok);
        assert_eq!(fracsde_a_dagger(0.35, 9, 2, &mut y), FracsdeStatus::Ok);
        assert!((x + y).abs() < 1e-12);
    }
}

#[test]
fn errors_are_thread_local() {
    let mut v = 0.0;
    assert_eq!(unsafe { fracsde_sigma_qh(3, 0.95, &mut v) }, FracsdeStatus::Domain);
    let other = std::thread::spawn(|| fracsde_last_error_message().is_null()).join().unwrap();
    assert!(other);
}
