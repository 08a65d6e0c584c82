use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use schoolrd_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(sr_last_error()) }.to_string_lossy().into_owned()
}

fn fixture(name: &str) -> CString {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/worked_example").join(name);
    CString::new(p.to_str().unwrap()).unwrap()
}

fn example_market() -> *mut SrMarket {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { sr_market_example(&mut m) }, SrStatus::Ok);
    m
}

#[test]
fn eligibility_region_of_the_example() {
    let m = example_market();
    let c = [0.0, 1.0 / 3.0, 2.0 / 3.0, 0.5];
    let prefs = [2usize, 3, 1, 0];
    let q = [0u32; 4];
    let mut r = ptr::null_mut();
    let st = unsafe { sr_eligibility_set(m, c.as_ptr(), 4, prefs.as_ptr(), 4, q.as_ptr(), 4, 3, &mut r) };
    assert_eq!(st, SrStatus::Ok, "{}", last_error());
    let mut measure = 0.0;
    assert_eq!(unsafe { sr_region_measure(r, &mut measure) }, SrStatus::Ok);
    assert!((measure - 2.0 / 3.0).abs() < 1e-12);
    let mut inside = false;
    assert_eq!(unsafe { sr_region_contains(r, [0.5].as_ptr(), 1, &mut inside) }, SrStatus::Ok);
    assert!(inside);
    assert_eq!(unsafe { sr_region_contains(r, [0.7].as_ptr(), 1, &mut inside) }, SrStatus::Ok);
    assert!(!inside);
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { sr_region_to_string(r, &mut s) }, SrStatus::Ok);
    assert_eq!(unsafe { CStr::from_ptr(s) }.to_str().unwrap(), "[0, 0.666666666667)");
    unsafe {
        sr_string_free(s);
        sr_region_free(r);
        sr_market_free(m);
    }
}

#[test]
fn match_and_estimate_from_a_roster_file() {
    let m = example_market();
    let mut roster = ptr::null_mut();
    let path = fixture("roster.csv");
    assert_eq!(unsafe { sr_roster_from_path(m, path.as_ptr(), false, 0, &mut roster) }, SrStatus::Ok, "{}", last_error());
    let mut n = 0;
    assert_eq!(unsafe { sr_roster_len(roster, &mut n) }, SrStatus::Ok);
    assert_eq!(n, 4000);

    let mut mat = ptr::null_mut();
    assert_eq!(unsafe { sr_run_da(m, roster, &mut mat) }, SrStatus::Ok);
    let mut len = 0;
    assert_eq!(unsafe { sr_match_assignment(mat, ptr::null_mut(), 0, &mut len) }, SrStatus::Ok);
    assert_eq!(len, 4000);
    let mut assignment = vec![usize::MAX; len];
    assert_eq!(unsafe { sr_match_assignment(mat, assignment.as_mut_ptr(), len, &mut len) }, SrStatus::Ok);
    assert!(assignment.iter().all(|&s| s < 4));
    let mut cutoffs = [0.0; 4];
    assert_eq!(unsafe { sr_match_cutoffs(mat, cutoffs.as_mut_ptr(), 4, &mut len) }, SrStatus::Ok);
    assert!((cutoffs[2] - 2.0 / 3.0).abs() < 0.05);

    let mut json = ptr::null_mut();
    assert_eq!(unsafe { sr_estimate_rd(m, roster, 2, 1, 0.0, &mut json) }, SrStatus::Ok, "{}", last_error());
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_owned();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert!(v["tau_hat"].as_f64().unwrap().is_finite());
    unsafe {
        sr_string_free(json);
        sr_match_free(mat);
        sr_roster_free(roster);
        sr_market_free(m);
    }
}

#[test]
fn errors_map_to_status_codes() {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { sr_market_from_json(ptr::null(), &mut m) }, SrStatus::NullPointer);
    assert!(last_error().contains("json"));

    let bad = CString::new("{\"schools\": []}").unwrap();
    assert_eq!(unsafe { sr_market_from_json(bad.as_ptr(), &mut m) }, SrStatus::Config);
    assert!(m.is_null());

    let not_utf8 = [0xffu8, 0xfe, 0];
    assert_eq!(unsafe { sr_market_from_json(not_utf8.as_ptr().cast(), &mut m) }, SrStatus::InvalidUtf8);

    let market = example_market();
    let mut roster = ptr::null_mut();
    let csv = CString::new("id,prefs,score_0,u_0\n1,s2>s9>s0,0.5,0.5\n").unwrap();
    assert_eq!(unsafe { sr_roster_from_csv(market, csv.as_ptr(), false, 0, &mut roster) }, SrStatus::Data);
    assert!(last_error().contains("<roster>:2"), "{}", last_error());

    let csv = CString::new("id,prefs,score_0,u_0\n1,s2>s1>s0,0.9,0.5\n2,s1>s0,0.2,0.1\n").unwrap();
    assert_eq!(unsafe { sr_roster_from_csv(market, csv.as_ptr(), false, 0, &mut roster) }, SrStatus::Ok);
    let mut json = ptr::null_mut();
    assert_eq!(unsafe { sr_estimate_rd(market, roster, 2, 1, 0.1, &mut json) }, SrStatus::Data);
    assert!(last_error().contains("outcome"));
    assert!(json.is_null());
    unsafe {
        sr_roster_free(roster);
        sr_market_free(market);
        sr_market_free(ptr::null_mut());
    }
}

#[test]
fn market_json_round_trip() {
    let text = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/worked_example/market.json")).unwrap();
    let text = CString::new(text).unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { sr_market_from_json(text.as_ptr(), &mut m) }, SrStatus::Ok);
    let mut k = 0;
    assert_eq!(unsafe { sr_market_num_schools(m, &mut k) }, SrStatus::Ok);
    assert_eq!(k, 4);
    unsafe { sr_market_free(m) };
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(sr_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}
