//! Score-space cutoffs and the sets of scores on which a student type has
//! positive probability of assignment to each school.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::lottery::LotteryWindows;
use crate::market::{MarketSpec, Preferences, SchoolId, SchoolKind, SchoolSpec, StudentType};
use crate::matching::CutoffVector;
use crate::region::{Interval, Region};

/// Lowest score on the school's test that clears `c_s` with qualifier `q`.
pub fn score_cutoff(school: &SchoolSpec, q: u32, c_s: f64) -> Result<f64> {
    if school.is_lottery() {
        return Err(Error::Domain(format!(
            "school {} is a lottery school and has no test-score cutoff",
            school.id.0
        )));
    }
    if q > school.qualifier_max {
        return Err(Error::Domain(format!(
            "qualifier {q} exceeds maximum {} at school {}",
            school.qualifier_max, school.id.0
        )));
    }
    Ok(school.tiebreak_threshold(q, c_s))
}

/// The largest score cutoff across qualifier classes that lies in [0, 1), or 0.
pub fn school_test_cutoff(school: &SchoolSpec, c_s: f64) -> Result<f64> {
    let mut best: Option<f64> = None;
    for q in 0..=school.qualifier_max {
        let r = score_cutoff(school, q, c_s)?;
        if r < 1.0 {
            best = Some(best.map_or(r, |b| b.max(r)));
        }
    }
    Ok(best.unwrap_or(0.0))
}

/// Most lenient cutoff on one test among schools preferred to a target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LenientCutoff {
    pub value: f64,
    /// No preferred school uses the test; `value` is then 1 and the bound is closed.
    pub vacuous: bool,
}

impl LenientCutoff {
    /// `[lower, value)`, or `[lower, 1]` when vacuous.
    fn interval_from(&self, lower: f64) -> Option<Interval> {
        if self.vacuous {
            Interval::closed(lower, 1.0)
        } else {
            Interval::half_open(lower, self.value)
        }
    }
}

fn own_score_cutoff(market: &MarketSpec, qualifiers: &[u32], c: &CutoffVector, s: SchoolId) -> Option<f64> {
    let school = market.school(s);
    match school.kind {
        SchoolKind::TestScore { .. } => Some(school.tiebreak_threshold(qualifiers[s.0], c.get(s))),
        SchoolKind::Lottery { .. } => None,
    }
}

pub fn lenient_cutoff(
    market: &MarketSpec,
    prefs: &Preferences,
    qualifiers: &[u32],
    c: &CutoffVector,
    target: SchoolId,
    test: usize,
) -> LenientCutoff {
    let min = prefs
        .above(target)
        .iter()
        .filter(|&&s| market.school(s).test_index() == Some(test))
        .filter_map(|&s| own_score_cutoff(market, qualifiers, c, s))
        .fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |a| a.min(r))));
    match min {
        Some(v) => LenientCutoff {
            value: v.max(0.0),
            vacuous: false,
        },
        None => LenientCutoff {
            value: 1.0,
            vacuous: true,
        },
    }
}

/// Lottery schools the student qualifies for with probability one.
pub fn sure_win_set(market: &MarketSpec, qualifiers: &[u32], c: &CutoffVector) -> Vec<SchoolId> {
    market
        .schools
        .iter()
        .filter(|s| s.is_lottery() && s.tiebreak_threshold(qualifiers[s.id.0], c.get(s.id)) == 0.0)
        .map(|s| s.id)
        .collect()
}

/// Whether the student wins at lottery school `s` while losing every lottery
/// school ranked above it, with positive probability.
pub fn favorite_lottery_positive(
    market: &MarketSpec,
    prefs: &Preferences,
    qualifiers: &[u32],
    c: &CutoffVector,
    s: SchoolId,
) -> Result<bool> {
    let school = market.school(s);
    let SchoolKind::Lottery { lottery } = school.kind else {
        return Err(Error::Domain(format!("school {} is a test-score school", s.0)));
    };
    if !prefs.ranks(s) {
        return Ok(false);
    }
    let mut w = crate::lottery::losing_all(market, qualifiers, c.as_slice(), prefs.above(s));
    w.win(lottery, school.tiebreak_threshold(qualifiers[s.0], c.get(s)));
    Ok(w.is_positive())
}

/// No sure-win lottery school other than `s` is ranked above `s`.
fn above_sure_wins(market: &MarketSpec, prefs: &Preferences, qualifiers: &[u32], c: &CutoffVector, s: SchoolId) -> bool {
    sure_win_set(market, qualifiers, c)
        .into_iter()
        .all(|l| l == s || !prefs.prefers(l, s))
}

/// Scores at which the type is assigned to `s` with positive probability.
pub fn eligibility_set(
    market: &MarketSpec,
    prefs: &Preferences,
    qualifiers: &[u32],
    c: &CutoffVector,
    s: SchoolId,
) -> Region {
    let dims = market.num_tests;
    if !prefs.ranks(s) {
        return Region::empty(dims);
    }
    let lenient: Vec<LenientCutoff> = (0..dims)
        .map(|t| lenient_cutoff(market, prefs, qualifiers, c, s, t))
        .collect();
    if lenient.iter().any(|l| l.value <= 0.0) {
        return Region::empty(dims);
    }
    match market.school(s).kind {
        SchoolKind::Lottery { .. } => {
            if !favorite_lottery_positive(market, prefs, qualifiers, c, s).expect("lottery school") {
                return Region::empty(dims);
            }
            Region::from_factors(lenient.iter().map(|l| l.interval_from(0.0)).collect())
        }
        SchoolKind::TestScore { test } => {
            if !above_sure_wins(market, prefs, qualifiers, c, s) {
                return Region::empty(dims);
            }
            let own = own_score_cutoff(market, qualifiers, c, s).expect("test school");
            if lenient[test].value <= own {
                return Region::empty(dims);
            }
            Region::from_factors(
                lenient
                    .iter()
                    .enumerate()
                    .map(|(t, l)| l.interval_from(if t == test { own } else { 0.0 }))
                    .collect(),
            )
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Variation {
    LotteryDriven,
    RdDriven,
    Unidentified,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RdCutoff {
    pub test: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContrastReport {
    /// The more preferred school of the pair.
    pub preferred: SchoolId,
    pub other: SchoolId,
    /// Intersection of the closures of both eligibility sets.
    pub region: Region,
    pub variation: Variation,
    pub rd_cutoff: Option<RdCutoff>,
}

/// Where the contrast between `s1` (preferred) and `s0` is identified, and by
/// which kind of variation.
pub fn identified_contrast_region(
    market: &MarketSpec,
    prefs: &Preferences,
    qualifiers: &[u32],
    c: &CutoffVector,
    s0: SchoolId,
    s1: SchoolId,
) -> Result<ContrastReport> {
    if !prefs.prefers(s1, s0) {
        return Err(Error::Domain(format!(
            "school {} is not preferred to school {} under {prefs}",
            s1.0, s0.0
        )));
    }
    let dims = market.num_tests;
    let unidentified = || ContrastReport {
        preferred: s1,
        other: s0,
        region: Region::empty(dims),
        variation: Variation::Unidentified,
        rd_cutoff: None,
    };
    let e0 = eligibility_set(market, prefs, qualifiers, c, s0);
    let e1 = eligibility_set(market, prefs, qualifiers, c, s1);
    if e0.is_empty() || e1.is_empty() {
        return Ok(unidentified());
    }
    let closure0 = e0.closure();
    match market.school(s1).kind {
        SchoolKind::Lottery { .. } => Ok(ContrastReport {
            preferred: s1,
            other: s0,
            region: closure0,
            variation: Variation::LotteryDriven,
            rd_cutoff: None,
        }),
        SchoolKind::TestScore { test } => {
            let r1 = own_score_cutoff(market, qualifiers, c, s1).expect("test school");
            let lenient0 = lenient_cutoff(market, prefs, qualifiers, c, s0, test);
            if r1 == lenient0.value && r1 > 0.0 {
                let region = closure0.slice(test, &Interval::point(r1));
                if region.is_empty() {
                    return Ok(unidentified());
                }
                Ok(ContrastReport {
                    preferred: s1,
                    other: s0,
                    region,
                    variation: Variation::RdDriven,
                    rd_cutoff: Some(RdCutoff { test, value: r1 }),
                })
            } else {
                Ok(unidentified())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TypedContrast {
    pub type_index: usize,
    pub report: ContrastReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Default)]
pub struct EnumerationSummary {
    pub lottery_driven: usize,
    pub rd_driven: usize,
    pub unidentified: usize,
    /// Total Lebesgue measure of lottery-driven regions.
    pub lottery_measure: f64,
    /// Total Lebesgue measure of RD-driven regions; zero by construction.
    pub rd_measure: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Enumeration {
    pub contrasts: Vec<TypedContrast>,
    pub summary: EnumerationSummary,
}

/// Unordered school pairs `(a, b)` with `a < b`, in lexicographic order.
pub fn school_pairs(num_schools: usize) -> Vec<(SchoolId, SchoolId)> {
    let mut out = Vec::new();
    for a in 0..num_schools {
        for b in a + 1..num_schools {
            out.push((SchoolId(a), SchoolId(b)));
        }
    }
    out
}

/// Contrast report for every type and every unordered pair of schools.
pub fn enumerate_identified_ates(
    market: &MarketSpec,
    c: &CutoffVector,
    census: &[StudentType],
) -> Result<Enumeration> {
    c.check_market(market)?;
    let mut contrasts = Vec::new();
    let mut summary = EnumerationSummary::default();
    for (k, ty) in census.iter().enumerate() {
        market.check_type(ty)?;
        for (a, b) in school_pairs(market.num_schools()) {
            let prefs = &ty.preferences;
            let (s1, s0) = if prefs.prefers(a, b) { (a, b) } else { (b, a) };
            let report = if prefs.prefers(s1, s0) {
                identified_contrast_region(market, prefs, &ty.qualifiers, c, s0, s1)?
            } else {
                ContrastReport {
                    preferred: s1,
                    other: s0,
                    region: Region::empty(market.num_tests),
                    variation: Variation::Unidentified,
                    rd_cutoff: None,
                }
            };
            match report.variation {
                Variation::LotteryDriven => {
                    summary.lottery_driven += 1;
                    summary.lottery_measure += report.region.measure();
                }
                Variation::RdDriven => {
                    summary.rd_driven += 1;
                    summary.rd_measure += report.region.measure();
                }
                Variation::Unidentified => summary.unidentified += 1,
            }
            contrasts.push(TypedContrast {
                type_index: k,
                report,
            });
        }
    }
    Ok(Enumeration { contrasts, summary })
}

/// Exact positivity of a set of lottery events, exposed for tests and oracles.
pub fn lottery_event_positive(num_lotteries: usize, wins: &[(usize, f64)], losses: &[(usize, f64)]) -> bool {
    let mut w = LotteryWindows::new(num_lotteries);
    for &(l, a) in wins {
        w.win(l, a);
    }
    for &(l, a) in losses {
        w.lose(l, a);
    }
    w.is_positive()
}
