//! C interface to `schoolrd`.
//!
//! Objects cross the boundary as opaque handles that the caller frees with
//! the matching `*_free` function. Every function returns an [`SrStatus`];
//! on failure, [`sr_last_error`] describes the problem. Strings returned
//! through out-parameters are owned by the caller and released with
//! [`sr_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use schoolrd::eligibility::eligibility_set;
use schoolrd::estimator::{estimate_rd_ate, BandwidthPolicy, RdPair};
use schoolrd::io::{parse_roster, read_roster, Roster};
use schoolrd::{example, run_da, CutoffVector, Error, ErrorKind, MarketSpec, MatchResult, Preferences, Region, SchoolId};

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Bad configuration or an argument outside the operation's domain.
    Config = 3,
    /// Malformed input data.
    Data = 4,
    /// The sample or design does not support the computation.
    Degenerate = 5,
    /// A bug inside the library.
    Panic = 6,
}

/// A validated market.
pub struct SrMarket(MarketSpec);

/// Students read from a roster, with outcomes when the roster has them.
pub struct SrRoster(Roster);

/// Deferred-acceptance assignment and its cutoffs.
pub struct SrMatch(MatchResult);

/// A product of intervals in score space.
pub struct SrRegion(Region);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

enum Failure {
    Null(&'static str),
    Utf8(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type Outcome<T = ()> = Result<T, Failure>;

fn guard(f: impl FnOnce() -> Outcome) -> SrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SrStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(&format!("null pointer: {what}"));
            SrStatus::NullPointer
        }
        Ok(Err(Failure::Utf8(what))) => {
            set_error(&format!("{what} is not valid UTF-8"));
            SrStatus::InvalidUtf8
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(&e.to_string());
            match e.kind() {
                ErrorKind::Config => SrStatus::Config,
                ErrorKind::Data => SrStatus::Data,
                ErrorKind::Degenerate => SrStatus::Degenerate,
            }
        }
        Err(_) => {
            set_error("internal failure");
            SrStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &'static str) -> Outcome<&'a str> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::Utf8(what))
}

unsafe fn handle<'a, T>(p: *const T, what: &'static str) -> Outcome<&'a T> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Outcome<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn put<T>(out: *mut T, value: T, what: &'static str) -> Outcome {
    if out.is_null() {
        return Err(Failure::Null(what));
    }
    out.write(value);
    Ok(())
}

/// Copies up to `capacity` values into `buf` and always reports the full length.
unsafe fn fill<T: Copy>(src: &[T], buf: *mut T, capacity: usize, len: *mut usize) -> Outcome {
    put(len, src.len(), "len")?;
    if capacity > 0 {
        if buf.is_null() {
            return Err(Failure::Null("buf"));
        }
        let k = capacity.min(src.len());
        ptr::copy_nonoverlapping(src.as_ptr(), buf, k);
    }
    Ok(())
}

fn owned_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).unwrap_or_default().into_raw()
}

/// Message for the most recent failure on this thread. The pointer stays
/// valid until the next failing call on the same thread; do not free it.
#[no_mangle]
pub extern "C" fn sr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn sr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn sr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a market from JSON.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sr_market_from_json(json: *const c_char, out: *mut *mut SrMarket) -> SrStatus {
    guard(|| {
        let text = text(json, "json")?;
        let market: MarketSpec =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("market JSON: {e}")))?;
        market.validate()?;
        put(out, Box::into_raw(Box::new(SrMarket(market))), "out")
    })
}

/// The four-school worked example.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sr_market_example(out: *mut *mut SrMarket) -> SrStatus {
    guard(|| put(out, Box::into_raw(Box::new(SrMarket(example::market()))), "out"))
}

/// # Safety
/// `market` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sr_market_num_schools(market: *const SrMarket, out: *mut usize) -> SrStatus {
    guard(|| put(out, handle(market, "market")?.0.num_schools(), "out"))
}

/// # Safety
/// `market` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sr_market_free(market: *mut SrMarket) {
    if !market.is_null() {
        drop(Box::from_raw(market));
    }
}

fn seed_arg(has_seed: bool, seed: u64) -> Option<u64> {
    has_seed.then_some(seed)
}

/// Reads a roster CSV file. Lottery draws missing from the file are drawn
/// from `seed` when `has_seed` is true.
///
/// # Safety
/// `market` must be a live handle, `path` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sr_roster_from_path(
    market: *const SrMarket,
    path: *const c_char,
    has_seed: bool,
    seed: u64,
    out: *mut *mut SrRoster,
) -> SrStatus {
    guard(|| {
        let market = handle(market, "market")?;
        let path = text(path, "path")?;
        let roster = read_roster(Path::new(path), &market.0, seed_arg(has_seed, seed))?;
        put(out, Box::into_raw(Box::new(SrRoster(roster))), "out")
    })
}

/// Parses roster CSV text.
///
/// # Safety
/// `market` must be a live handle, `csv` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sr_roster_from_csv(
    market: *const SrMarket,
    csv: *const c_char,
    has_seed: bool,
    seed: u64,
    out: *mut *mut SrRoster,
) -> SrStatus {
    guard(|| {
        let market = handle(market, "market")?;
        let csv = text(csv, "csv")?;
        let roster = parse_roster(csv, "<roster>", &market.0, seed_arg(has_seed, seed))?;
        put(out, Box::into_raw(Box::new(SrRoster(roster))), "out")
    })
}

/// # Safety
/// `roster` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sr_roster_len(roster: *const SrRoster, out: *mut usize) -> SrStatus {
    guard(|| put(out, handle(roster, "roster")?.0.len(), "out"))
}

/// # Safety
/// `roster` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sr_roster_free(roster: *mut SrRoster) {
    if !roster.is_null() {
        drop(Box::from_raw(roster));
    }
}

/// Runs deferred acceptance with seat counts `floor(N * capacity_share)`.
///
/// # Safety
/// `market` and `roster` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sr_run_da(market: *const SrMarket, roster: *const SrRoster, out: *mut *mut SrMatch) -> SrStatus {
    guard(|| {
        let market = handle(market, "market")?;
        let roster = handle(roster, "roster")?;
        let m = run_da(&market.0, &roster.0.students, roster.0.len())?;
        put(out, Box::into_raw(Box::new(SrMatch(m))), "out")
    })
}

/// Copies the assigned school of each student into `buf` (up to `capacity`
/// entries) and writes the number of students to `len`. Pass `capacity = 0`
/// to query the length only.
///
/// # Safety
/// `m` must be a live handle, `buf` valid for `capacity` writes, `len` writable.
#[no_mangle]
pub unsafe extern "C" fn sr_match_assignment(m: *const SrMatch, buf: *mut usize, capacity: usize, len: *mut usize) -> SrStatus {
    guard(|| {
        let ids: Vec<usize> = handle(m, "match")?.0.assignment.iter().map(|s| s.0).collect();
        fill(&ids, buf, capacity, len)
    })
}

/// Copies the cutoff of each school into `buf`, like [`sr_match_assignment`].
///
/// # Safety
/// `m` must be a live handle, `buf` valid for `capacity` writes, `len` writable.
#[no_mangle]
pub unsafe extern "C" fn sr_match_cutoffs(m: *const SrMatch, buf: *mut f64, capacity: usize, len: *mut usize) -> SrStatus {
    guard(|| fill(handle(m, "match")?.0.cutoffs.as_slice(), buf, capacity, len))
}

/// # Safety
/// `m` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sr_match_free(m: *mut SrMatch) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Eligibility set of `school` for a student type at cutoffs `c`.
/// `preferences` lists school indices best first and must end with 0;
/// `qualifiers` has one entry per school.
///
/// # Safety
/// Arrays must hold the stated number of elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sr_eligibility_set(
    market: *const SrMarket,
    cutoffs: *const f64,
    n_cutoffs: usize,
    preferences: *const usize,
    n_preferences: usize,
    qualifiers: *const u32,
    n_qualifiers: usize,
    school: usize,
    out: *mut *mut SrRegion,
) -> SrStatus {
    guard(|| {
        let market = &handle(market, "market")?.0;
        let c = CutoffVector::new(slice(cutoffs, n_cutoffs, "cutoffs")?.to_vec())?;
        c.check_market(market)?;
        let prefs = Preferences::from_indices(slice(preferences, n_preferences, "preferences")?);
        market.check_preferences(&prefs).map_err(Error::Config)?;
        let q = slice(qualifiers, n_qualifiers, "qualifiers")?;
        market.check_qualifiers(q).map_err(Error::Config)?;
        if school >= market.num_schools() {
            return Err(Error::Config(format!("unknown school {school}")).into());
        }
        let region = eligibility_set(market, &prefs, q, &c, SchoolId(school));
        put(out, Box::into_raw(Box::new(SrRegion(region))), "out")
    })
}

/// # Safety
/// `region` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sr_region_measure(region: *const SrRegion, out: *mut f64) -> SrStatus {
    guard(|| put(out, handle(region, "region")?.0.measure(), "out"))
}

/// # Safety
/// `region` must be a live handle, `point` must hold `dims` values, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sr_region_contains(
    region: *const SrRegion,
    point: *const f64,
    dims: usize,
    out: *mut bool,
) -> SrStatus {
    guard(|| {
        let region = &handle(region, "region")?.0;
        let point = slice(point, dims, "point")?;
        if dims != region.dims() {
            return Err(Error::Config(format!("point has {dims} coordinates, region has {}", region.dims())).into());
        }
        put(out, region.contains(point), "out")
    })
}

/// Interval notation such as `[0.333333333333, 0.666666666667)`.
///
/// # Safety
/// `region` must be a live handle; free `*out` with [`sr_string_free`].
#[no_mangle]
pub unsafe extern "C" fn sr_region_to_string(region: *const SrRegion, out: *mut *mut c_char) -> SrStatus {
    guard(|| {
        let s = handle(region, "region")?.0.to_string();
        put(out, owned_string(s), "out")
    })
}

/// # Safety
/// `region` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sr_region_free(region: *mut SrRegion) {
    if !region.is_null() {
        drop(Box::from_raw(region));
    }
}

/// Local-linear RD estimate of `preferred` against `other` at the roster's
/// own DA cutoffs, returned as JSON. `h <= 0` selects the default bandwidth
/// `N^-0.3`. The roster must carry outcomes.
///
/// # Safety
/// Handles must be live; free `*json_out` with [`sr_string_free`].
#[no_mangle]
pub unsafe extern "C" fn sr_estimate_rd(
    market: *const SrMarket,
    roster: *const SrRoster,
    preferred: usize,
    other: usize,
    h: f64,
    json_out: *mut *mut c_char,
) -> SrStatus {
    guard(|| {
        let market = &handle(market, "market")?.0;
        let roster = &handle(roster, "roster")?.0;
        let outcomes = roster
            .outcomes
            .as_deref()
            .ok_or_else(|| Error::Data("roster has no outcome column".into()))?;
        if preferred >= market.num_schools() || other >= market.num_schools() {
            return Err(Error::Config("school index out of range".into()).into());
        }
        let policy = if h > 0.0 {
            BandwidthPolicy::Fixed(h)
        } else if h.is_nan() {
            return Err(Error::Config("bandwidth is NaN".into()).into());
        } else {
            BandwidthPolicy::default()
        };
        let m = run_da(market, &roster.students, roster.len())?;
        let pair = RdPair::new(SchoolId(preferred), SchoolId(other));
        let report = estimate_rd_ate(market, &roster.students, outcomes, pair, &m.cutoffs, policy)?;
        put(json_out, owned_string(schoolrd::report::to_json(&report)?), "json_out")
    })
}
