//! Flags for observations exposed to RD variation and bounds on the weight a
//! linear estimator puts on them.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::eligibility::{eligibility_set, identified_contrast_region, Variation};
use crate::error::{Error, Result};
use crate::market::{MarketSpec, SchoolId, SchoolKind, StudentProfile};
use crate::matching::CutoffVector;
use crate::region::Interval;

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct RdFlags {
    pub possibly: bool,
    pub definitely: bool,
    /// `(preferred, other)` test-school pairs that put the student near a cutoff.
    pub witnesses: Vec<(SchoolId, SchoolId)>,
}

fn widen(i: &Interval, h: f64) -> Interval {
    Interval {
        lower: (i.lower - h).max(0.0),
        upper: (i.upper + h).min(1.0),
        lower_closed: true,
        upper_closed: true,
    }
}

/// Flags computed at the sample cutoffs `c` with bandwidth `h`.
///
/// A student is possibly exposed if some preferred test school `s1` and a
/// lower-ranked `s0` on the other side of the treatment boundary have an RD
/// contrast, and the student's score on `s1`'s test lies within `h` of that
/// cutoff (on either side) with every other coordinate inside the closure of
/// `s0`'s eligibility set. Exposure is definite unless some lottery pair across
/// the boundary covers the student's scores, allowing the same `h` of slack.
pub fn rd_flags(
    market: &MarketSpec,
    student: &StudentProfile,
    treated: &[SchoolId],
    c: &CutoffVector,
    h: f64,
) -> RdFlags {
    let prefs = &student.preferences;
    let q = &student.qualifiers;
    let r = &student.scores;
    let ranked = prefs.as_slice();
    let crosses = |a: SchoolId, b: SchoolId| treated.contains(&a) != treated.contains(&b);

    let mut witnesses = Vec::new();
    let mut lottery_cover = false;
    for (i, &s1) in ranked.iter().enumerate() {
        for &s0 in &ranked[i + 1..] {
            if !crosses(s1, s0) {
                continue;
            }
            let report = match identified_contrast_region(market, prefs, q, c, s0, s1) {
                Ok(rep) => rep,
                Err(_) => continue,
            };
            match market.school(s1).kind {
                SchoolKind::TestScore { test } => {
                    if report.variation != Variation::RdDriven {
                        continue;
                    }
                    let cut = report.rd_cutoff.expect("RD contrast has a cutoff").value;
                    let e0 = eligibility_set(market, prefs, q, c, s0).closure();
                    let Some(f) = e0.factors() else { continue };
                    let inside = f.iter().enumerate().all(|(t, iv)| {
                        if t == test {
                            let lo = iv.lower.max(cut - h);
                            r[t] >= lo && r[t] <= (cut + h).min(1.0)
                        } else {
                            iv.contains(r[t])
                        }
                    });
                    if inside {
                        witnesses.push((s1, s0));
                    }
                }
                SchoolKind::Lottery { .. } => {
                    if let Some(f) = report.region.factors() {
                        if f.iter().zip(r).all(|(iv, &x)| widen(iv, h).contains(x)) {
                            lottery_cover = true;
                        }
                    }
                }
            }
        }
    }
    let possibly = !witnesses.is_empty();
    RdFlags {
        possibly,
        definitely: possibly && !lottery_cover,
        witnesses,
    }
}

/// Weights `w` with `tau_hat = sum w_i y_i` for coefficient `target` of an OLS fit on `design`.
pub fn linear_estimator_weights(design: &DMatrix<f64>, target: usize) -> Result<Vec<f64>> {
    let (n, p) = design.shape();
    if target >= p {
        return Err(Error::Config(format!("coefficient {target} out of range for {p} regressors")));
    }
    if n < p {
        return Err(Error::SingularDesign(format!("{n} observations for {p} regressors")));
    }
    let qr = design.clone().qr();
    let rmat = qr.r();
    let diag_max = rmat.diagonal().iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let tol = diag_max * f64::EPSILON * n.max(p) as f64;
    if diag_max == 0.0 || rmat.diagonal().iter().any(|x| x.abs() <= tol) {
        return Err(Error::SingularDesign("design matrix is rank deficient".into()));
    }
    let mut e = DVector::zeros(p);
    e[target] = 1.0;
    let z = rmat
        .transpose()
        .solve_lower_triangular(&e)
        .ok_or_else(|| Error::SingularDesign("triangular solve failed".into()))?;
    Ok((qr.q() * z).iter().copied().collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightBounds {
    pub upper: f64,
    pub lower: f64,
    pub n_possibly: usize,
    pub n_definitely: usize,
    /// Observations whose weight has the wrong sign for their treatment status.
    pub wrong_signed: Vec<usize>,
    pub inverted: bool,
    pub negative: bool,
}

fn sign(d: bool) -> f64 {
    if d {
        1.0
    } else {
        -1.0
    }
}

/// Upper and lower bounds on the weight put on RD-exposed observations.
pub fn rd_weight_bounds(weights: &[f64], treated: &[bool], flags: &[RdFlags]) -> Result<WeightBounds> {
    if weights.len() != treated.len() || weights.len() != flags.len() {
        return Err(Error::Data("weights, treatment and flags lengths differ".into()));
    }
    let mut upper = 0.0;
    let mut lower = 0.0;
    let mut wrong_signed = Vec::new();
    for (i, ((&w, &d), f)) in weights.iter().zip(treated).zip(flags).enumerate() {
        let x = w * sign(d);
        if f.possibly {
            upper += x;
        }
        if f.definitely {
            lower += x;
        }
        if x < 0.0 {
            wrong_signed.push(i);
        }
    }
    Ok(WeightBounds {
        upper,
        lower,
        n_possibly: flags.iter().filter(|f| f.possibly).count(),
        n_definitely: flags.iter().filter(|f| f.definitely).count(),
        wrong_signed,
        inverted: upper < lower,
        negative: upper < 0.0 || lower < 0.0,
    })
}

/// OLS coefficient `target` of `y` on `design`, via an SVD least-squares solve.
pub fn ols_coefficient(design: &DMatrix<f64>, y: &[f64], target: usize) -> Result<f64> {
    if design.nrows() != y.len() {
        return Err(Error::Data("design rows and outcome length differ".into()));
    }
    let svd = design.clone().svd(true, true);
    let rank = svd.rank(svd.singular_values.max() * f64::EPSILON * design.nrows().max(1) as f64);
    if rank < design.ncols() {
        return Err(Error::SingularDesign("design matrix is rank deficient".into()));
    }
    let beta = svd
        .solve(&DVector::from_column_slice(y), 0.0)
        .map_err(|e| Error::SingularDesign(e.to_string()))?;
    Ok(beta[target])
}

/// The same bounds obtained by regressing `(2D - 1) * flag` on the design.
pub fn rd_weight_bounds_by_regression(
    design: &DMatrix<f64>,
    target: usize,
    treated: &[bool],
    flags: &[RdFlags],
) -> Result<(f64, f64)> {
    let up: Vec<f64> = treated
        .iter()
        .zip(flags)
        .map(|(&d, f)| if f.possibly { sign(d) } else { 0.0 })
        .collect();
    let lo: Vec<f64> = treated
        .iter()
        .zip(flags)
        .map(|(&d, f)| if f.definitely { sign(d) } else { 0.0 })
        .collect();
    Ok((ols_coefficient(design, &up, target)?, ols_coefficient(design, &lo, target)?))
}

/// Single-column design `D - psi` used by the propensity regression.
pub fn propensity_design(treated: &[bool], psi: &[f64]) -> DMatrix<f64> {
    DMatrix::from_iterator(
        treated.len(),
        1,
        treated
            .iter()
            .zip(psi)
            .map(|(&d, &p)| if d { 1.0 } else { 0.0 } - p),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::example;
    use crate::market::{Preferences, SchoolSpec};
    use proptest::prelude::*;

    #[test]
    fn intercept_only_weights_are_uniform() {
        let x = DMatrix::from_element(7, 1, 1.0);
        let w = linear_estimator_weights(&x, 0).unwrap();
        for wi in w {
            assert!((wi - 1.0 / 7.0).abs() < 1e-15);
        }
    }

    #[test]
    fn propensity_design_weights_closed_form() {
        let d = [true, false, true, false, true];
        let psi = [0.5, 0.25, 0.75, 0.5, 0.1];
        let x = propensity_design(&d, &psi);
        let w = linear_estimator_weights(&x, 0).unwrap();
        let den: f64 = x.iter().map(|v| v * v).sum();
        for (wi, xi) in w.iter().zip(x.iter()) {
            assert!((wi - xi / den).abs() < 1e-14);
        }
    }

    #[test]
    fn rank_deficient_design_errors() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert!(matches!(linear_estimator_weights(&x, 0), Err(Error::SingularDesign(_))));
    }

    #[test]
    fn bound_examples() {
        let n = 6;
        let d = [true, false, true, true, false, false];
        let w: Vec<f64> = d.iter().map(|&b| sign(b) / n as f64).collect();
        let all = vec![RdFlags { possibly: true, definitely: false, witnesses: vec![] }; n];
        let b = rd_weight_bounds(&w, &d, &all).unwrap();
        assert!((b.upper - 1.0).abs() < 1e-15);
        assert_eq!(b.lower, 0.0);
        let none = vec![RdFlags::default(); n];
        let b = rd_weight_bounds(&w, &d, &none).unwrap();
        assert_eq!((b.upper, b.lower), (0.0, 0.0));
    }

    #[test]
    fn extended_example_flags() {
        let m = example::market();
        let c = example::cutoffs();
        let h = 0.02;
        let t = &example::TREATED;
        for r in [2.0 / 3.0 - h / 2.0, 2.0 / 3.0 + h / 2.0] {
            let f = rd_flags(&m, &example::student(0, r, 0.3), t, &c, h);
            assert!(f.possibly, "type A at {r}");
            assert!(!f.definitely, "type A at {r}");
            assert!(f.witnesses.contains(&(SchoolId(2), SchoolId(1))));
            let f = rd_flags(&m, &example::student(1, r, 0.3), t, &c, h);
            assert!(f.possibly && f.definitely, "type B at {r}");
        }
        let f = rd_flags(&m, &example::student(1, 0.5, 0.3), t, &c, h);
        assert!(!f.possibly);
        let f = rd_flags(&m, &example::student(1, 1.0 / 3.0 + h / 2.0, 0.3), t, &c, h);
        assert!(f.possibly && !f.definitely);
    }

    #[test]
    fn single_rd_pair_is_definite() {
        let m = MarketSpec::new(
            vec![
                SchoolSpec::lottery(0, f64::INFINITY, 0, 0),
                SchoolSpec::test_score(1, 0.3, 0, 0),
                SchoolSpec::test_score(2, 0.3, 0, 0),
            ],
            1,
            1,
        )
        .unwrap();
        let c = CutoffVector::new(vec![0.0, 0.2, 0.6]).unwrap();
        let p = StudentProfile {
            preferences: Preferences::from_indices(&[2, 1, 0]),
            scores: vec![0.6],
            qualifiers: vec![0; 3],
            lottery_draws: vec![0.5],
        };
        let f = rd_flags(&m, &p, &[SchoolId(2)], &c, 0.05);
        assert!(f.possibly && f.definitely);
    }

    #[test]
    fn all_lottery_market_never_flags() {
        let m = MarketSpec::new(
            vec![
                SchoolSpec::lottery(0, f64::INFINITY, 0, 0),
                SchoolSpec::lottery(1, 0.3, 1, 0),
                SchoolSpec::lottery(2, 0.3, 2, 0),
            ],
            1,
            3,
        )
        .unwrap();
        let c = CutoffVector::new(vec![0.0, 0.4, 0.6]).unwrap();
        for r in [0.0, 0.4, 0.6, 1.0] {
            let p = StudentProfile {
                preferences: Preferences::from_indices(&[2, 1, 0]),
                scores: vec![r],
                qualifiers: vec![0; 3],
                lottery_draws: vec![0.5; 3],
            };
            assert_eq!(rd_flags(&m, &p, &[SchoolId(2)], &c, 0.1), RdFlags::default());
        }
    }

    type Design = (DMatrix<f64>, Vec<f64>, Vec<bool>, Vec<(bool, bool)>);

    fn design_strategy() -> impl Strategy<Value = Design> {
        (8usize..40, 1usize..4).prop_flat_map(|(n, p)| {
            (
                prop::collection::vec(-3.0f64..3.0, n * p),
                prop::collection::vec(-5.0f64..5.0, n),
                prop::collection::vec(any::<bool>(), n),
                prop::collection::vec((any::<bool>(), any::<bool>()), n),
            )
                .prop_map(move |(x, y, d, f)| (DMatrix::from_row_slice(n, p, &x), y, d, f))
        })
    }

    proptest! {
        #[test]
        fn hat_weights_reproduce_ols((x, y, d, f) in design_strategy()) {
            let w = linear_estimator_weights(&x, 0).unwrap();
            let via_w: f64 = w.iter().zip(&y).map(|(a, b)| a * b).sum();
            let direct = ols_coefficient(&x, &y, 0).unwrap();
            prop_assert!((via_w - direct).abs() <= 1e-10 * direct.abs().max(1.0));

            let flags: Vec<RdFlags> = f
                .iter()
                .map(|&(p, q)| RdFlags { possibly: p || q, definitely: q, witnesses: vec![] })
                .collect();
            let b = rd_weight_bounds(&w, &d, &flags).unwrap();
            let (up, lo) = rd_weight_bounds_by_regression(&x, 0, &d, &flags).unwrap();
            prop_assert!((b.upper - up).abs() <= 1e-10 * up.abs().max(1.0));
            prop_assert!((b.lower - lo).abs() <= 1e-10 * lo.abs().max(1.0));
            for fl in &flags {
                prop_assert!(!fl.definitely || fl.possibly);
            }
        }
    }
}
