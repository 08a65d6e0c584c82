//! The four-school, three-type worked example used throughout the docs and tests.
//!
//! Schools: `s0` outside option, `s1` and `s2` admit on one shared test,
//! `s3` admits by lottery. Types (all qualifiers zero):
//!
//! | type | ranking            |
//! |------|--------------------|
//! | A    | s2 > s3 > s1 > s0  |
//! | B    | s2 > s1 > s3 > s0  |
//! | C    | s3 > s2 > s1 > s0  |
//!
//! With equal type shares and uniform scores, capacity shares
//! `(inf, 2/9, 5/18, 1/3)` clear the market at `c = (0, 1/3, 2/3, 1/2)`.

use crate::dgp::{CubicMean, Density, DgpSpec, LotteryLaw, Noise, TypeSpec};
use crate::market::{MarketSpec, Preferences, SchoolId, SchoolSpec, StudentProfile, StudentType};
use crate::matching::CutoffVector;

pub const LABELS: [&str; 3] = ["A", "B", "C"];

pub const RANKINGS: [[usize; 4]; 3] = [[2, 3, 1, 0], [2, 1, 3, 0], [3, 2, 1, 0]];

/// Schools that count as treated in the propensity and diagnostic examples.
pub const TREATED: [SchoolId; 2] = [SchoolId(2), SchoolId(3)];

pub fn market() -> MarketSpec {
    MarketSpec::new(
        vec![
            SchoolSpec::lottery(0, f64::INFINITY, 0, 0),
            SchoolSpec::test_score(1, 2.0 / 9.0, 0, 0),
            SchoolSpec::test_score(2, 5.0 / 18.0, 0, 0),
            SchoolSpec::lottery(3, 1.0 / 3.0, 0, 0),
        ],
        1,
        1,
    )
    .expect("example market is valid")
}

pub fn cutoffs() -> CutoffVector {
    CutoffVector::new(vec![0.0, 1.0 / 3.0, 2.0 / 3.0, 0.5]).expect("valid cutoffs")
}

pub fn census() -> Vec<StudentType> {
    LABELS
        .iter()
        .zip(RANKINGS)
        .map(|(label, ranking)| StudentType {
            label: Some(label.to_string()),
            preferences: Preferences::from_indices(&ranking),
            qualifiers: vec![0; 4],
        })
        .collect()
}

/// A student of type `k` with score `r` and lottery draw `u`.
pub fn student(k: usize, r: f64, u: f64) -> StudentProfile {
    StudentProfile {
        preferences: Preferences::from_indices(&RANKINGS[k]),
        scores: vec![r],
        qualifiers: vec![0; 4],
        lottery_draws: vec![u],
    }
}

fn cubic(intercept: f64, b: [f64; 3]) -> CubicMean {
    CubicMean {
        intercept,
        terms: vec![b],
    }
}

fn with_outcomes(outcomes: impl Fn(usize) -> Vec<CubicMean>, noise: Noise) -> DgpSpec {
    DgpSpec {
        market: market(),
        types: census()
            .into_iter()
            .enumerate()
            .map(|(k, ty)| TypeSpec {
                label: ty.label,
                weight: 1.0,
                preferences: ty.preferences,
                qualifiers: ty.qualifiers,
                densities: vec![Density::Uniform],
                outcomes: outcomes(k),
                noise,
            })
            .collect(),
        lottery_law: LotteryLaw::IndependentUniform,
    }
}

/// Equal type shares and uniform scores. Outcomes depend on the school only
/// through treatment status: `s2`, `s3` share one mean and `s0`, `s1` another,
/// with effects that vary by type and score.
pub fn dgp() -> DgpSpec {
    with_outcomes(
        |k| {
            let shift = 0.25 * k as f64;
            let control = cubic(0.5 + shift, [1.0, -0.5, 0.0]);
            let treated = cubic(1.0 + 3.0 * shift, [0.5, 0.5, -0.3]);
            vec![control.clone(), control, treated.clone(), treated]
        },
        Noise::Gaussian { sd: 1.0 },
    )
}

/// Effects of `s2` over `s1` by type; their average is the RD target at 2/3.
pub const RD_EFFECT_PROFILE: [f64; 3] = [0.5, 1.0, 1.5];

/// Same market with cubic means whose `s2`-vs-`s1` gap is `tau * profile[k]`
/// for type k, so the effect at the `s2` cutoff averages to `tau`.
pub fn rd_dgp(tau: f64) -> DgpSpec {
    with_outcomes(
        |k| {
            let a = 0.3 * k as f64;
            let base = [0.8, -0.6, 0.4];
            vec![
                cubic(a - 0.5, [0.4, 0.0, 0.0]),
                cubic(a, base),
                cubic(a + tau * RD_EFFECT_PROFILE[k], base),
                cubic(a + 0.7, [0.0, 0.3, 0.0]),
            ]
        },
        Noise::Gaussian { sd: 1.0 },
    )
}

/// The RD pair in the example: `s2` against `s1` at the score cutoff 2/3.
pub const RD_PAIR: (SchoolId, SchoolId) = (SchoolId(2), SchoolId(1));

/// One lottery school with capacity share `kappa` demanded by a share `delta`
/// of students. Returns `(dgp, kappa, delta)`; the clearing cutoff is `1 - kappa/delta`.
pub fn single_lottery_dgp() -> (DgpSpec, f64, f64) {
    let (kappa, delta) = (0.2, 0.5);
    let market = MarketSpec::new(
        vec![
            SchoolSpec::lottery(0, f64::INFINITY, 0, 0),
            SchoolSpec::lottery(1, kappa, 1, 0),
        ],
        0,
        2,
    )
    .expect("valid market");
    let ty = |prefs: &[usize], weight: f64| TypeSpec {
        label: None,
        weight,
        preferences: Preferences::from_indices(prefs),
        qualifiers: vec![0, 0],
        densities: vec![],
        outcomes: vec![],
        noise: Noise::Gaussian { sd: 0.0 },
    };
    let dgp = DgpSpec {
        market,
        types: vec![ty(&[1, 0], delta), ty(&[0], 1.0 - delta)],
        lottery_law: LotteryLaw::IndependentUniform,
    };
    (dgp, kappa, delta)
}
