use std::ffi::{CStr, CString};
use std::ptr;

use natsched_ffi::*;

fn last_error() -> String {
    let p = nat_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn chain(k: usize, n: usize, c: usize) -> *mut NatChain {
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { nat_chain_new(k, n, c, 3, &mut out) }, NatStatus::Ok);
    assert!(!out.is_null());
    out
}

#[test]
fn joint_probabilities_sum_to_one() {
    let ch = chain(2, 3, 2);
    let mut total = 0.0;
    for idx in 0..8usize {
        let seq = [(idx >> 2) & 1, (idx >> 1) & 1, idx & 1];
        let mut p = 0.0;
        assert_eq!(unsafe { nat_chain_joint_prob(ch, 1, seq.as_ptr(), 3, &mut p) }, NatStatus::Ok);
        total += p;
    }
    assert!((total - 1.0).abs() < 1e-12);
    unsafe { nat_chain_free(ch) };
}

#[test]
fn exact_conditional_is_a_distribution() {
    let ch = chain(3, 4, 1);
    let tokens: [i64; 4] = [0, -1, 2, -1];
    let mut probs = [0.0; 3];
    let status = unsafe { nat_chain_exact_conditional(ch, 0, tokens.as_ptr(), 4, 1, probs.as_mut_ptr(), 3) };
    assert_eq!(status, NatStatus::Ok);
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);

    let status = unsafe { nat_chain_exact_conditional(ch, 0, tokens.as_ptr(), 4, 0, probs.as_mut_ptr(), 3) };
    assert_eq!(status, NatStatus::InvalidArgument);
    assert!(last_error().contains('0'));
    unsafe { nat_chain_free(ch) };
}

#[test]
fn schedule_json_round_trip() {
    let mut sched = ptr::null_mut();
    assert_eq!(unsafe { nat_schedule_heuristic(4, 16, 4.5, 2.0, &mut sched) }, NatStatus::Ok);
    let mut steps = 0;
    assert_eq!(unsafe { nat_schedule_steps(sched, &mut steps) }, NatStatus::Ok);
    assert_eq!(steps, 4);

    let mut text = ptr::null_mut();
    assert_eq!(unsafe { nat_schedule_to_json(sched, &mut text) }, NatStatus::Ok);
    let json = unsafe { CStr::from_ptr(text) }.to_owned();
    unsafe { nat_string_free(text) };

    let mut back = ptr::null_mut();
    assert_eq!(unsafe { nat_schedule_from_json(json.as_ptr(), &mut back) }, NatStatus::Ok);
    let mut projected = ptr::null_mut();
    assert_eq!(unsafe { nat_schedule_project(back, 16, &mut projected) }, NatStatus::Ok);
    let mut text2 = ptr::null_mut();
    assert_eq!(unsafe { nat_schedule_to_json(projected, &mut text2) }, NatStatus::Ok);
    assert_eq!(unsafe { CStr::from_ptr(text2) }, json.as_c_str());
    unsafe {
        nat_string_free(text2);
        nat_schedule_free(sched);
        nat_schedule_free(back);
        nat_schedule_free(projected);
    }
}

#[test]
fn malformed_schedule_is_rejected() {
    let bad = CString::new(r#"{"T": 2, "r": [0.0]}"#).unwrap();
    let mut out = ptr::null_mut();
    let status = unsafe { nat_schedule_from_json(bad.as_ptr(), &mut out) };
    assert_eq!(status, NatStatus::Config);
    assert!(out.is_null());
    assert!(!last_error().is_empty());
}

#[test]
fn null_pointers_are_reported() {
    assert_eq!(unsafe { nat_chain_new(2, 3, 1, 0, ptr::null_mut()) }, NatStatus::NullPointer);
    let mut p = 0.0;
    assert_eq!(unsafe { nat_chain_joint_prob(ptr::null(), 0, ptr::null(), 0, &mut p) }, NatStatus::NullPointer);
    assert_eq!(unsafe { nat_schedule_from_json(ptr::null(), ptr::null_mut()) }, NatStatus::NullPointer);
    unsafe {
        nat_chain_free(ptr::null_mut());
        nat_schedule_free(ptr::null_mut());
        nat_model_free(ptr::null_mut());
        nat_string_free(ptr::null_mut());
    }
}

#[test]
fn oracle_generation_is_seeded() {
    let ch = chain(4, 8, 2);
    let mut sched = ptr::null_mut();
    assert_eq!(unsafe { nat_schedule_heuristic(3, 8, 4.5, 2.0, &mut sched) }, NatStatus::Ok);
    let mut a = [0usize; 8];
    let mut b = [0usize; 8];
    assert_eq!(unsafe { nat_generate_oracle(ch, sched, 1, 42, a.as_mut_ptr(), 8) }, NatStatus::Ok);
    assert_eq!(unsafe { nat_generate_oracle(ch, sched, 1, 42, b.as_mut_ptr(), 8) }, NatStatus::Ok);
    assert_eq!(a, b);
    assert!(a.iter().all(|&t| t < 4));
    assert_eq!(unsafe { nat_generate_oracle(ch, sched, -1, 7, a.as_mut_ptr(), 8) }, NatStatus::Ok);
    assert_eq!(unsafe { nat_generate_oracle(ch, sched, 1, 42, a.as_mut_ptr(), 7) }, NatStatus::InvalidArgument);
    assert_eq!(unsafe { nat_generate_oracle(ch, sched, 5, 42, a.as_mut_ptr(), 8) }, NatStatus::InvalidArgument);
    unsafe {
        nat_schedule_free(sched);
        nat_chain_free(ch);
    }
}

#[test]
fn model_checkpoint_generation() {
    use natsched::predictor::{ModelDims, TrainableModel};
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    let dims = ModelDims { k: 3, n: 5, c: 2, d: 4, h: 6, w: 1 };
    TrainableModel::new(dims, 1).unwrap().save(&path).unwrap();

    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { nat_model_load(cpath.as_ptr(), &mut model) }, NatStatus::Ok);
    let mut sched = ptr::null_mut();
    assert_eq!(unsafe { nat_schedule_heuristic(2, 5, 4.5, 2.0, &mut sched) }, NatStatus::Ok);
    let mut out = [9usize; 5];
    assert_eq!(unsafe { nat_generate_model(model, sched, 0, 3, out.as_mut_ptr(), 5) }, NatStatus::Ok);
    assert!(out.iter().all(|&t| t < 3));

    let missing = CString::new(dir.path().join("none.bin").to_str().unwrap()).unwrap();
    let mut m2 = ptr::null_mut();
    assert_eq!(unsafe { nat_model_load(missing.as_ptr(), &mut m2) }, NatStatus::Runtime);
    unsafe {
        nat_schedule_free(sched);
        nat_model_free(model);
    }
}

#[test]
fn beta_density_through_c_abi() {
    let mut v = 0.0;
    assert_eq!(unsafe { nat_beta_density(0.5, 2.0, 2.0, &mut v) }, NatStatus::Ok);
    assert!((v - 1.5).abs() < 1e-12);
    assert_eq!(unsafe { nat_beta_density(0.5, -1.0, 2.0, &mut v) }, NatStatus::Config);
}

#[test]
fn version_is_nul_terminated() {
    let v = unsafe { CStr::from_ptr(nat_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/natsched.h")).unwrap();
    for name in [
        "nat_last_error",
        "nat_chain_new",
        "nat_chain_joint_prob",
        "nat_schedule_from_json",
        "nat_schedule_to_json",
        "nat_generate_model",
        "nat_beta_density",
        "NAT_STATUS_PANIC",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/natsched.h");
    let Ok(status) = std::process::Command::new("cc").args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", header]).status() else {
        eprintln!("no C compiler available; skipping");
        return;
    };
    assert!(status.success());
}
