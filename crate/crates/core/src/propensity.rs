//! Local propensity scores over a banded partition of one test, the
//! propensity-regression estimand and its cell-weight decomposition.

use serde::Serialize;

use crate::dgp::{gauss_legendre, DgpSpec};
use crate::error::{Error, Result};
use crate::lottery::assignment_distribution;
use crate::market::{MarketSpec, Preferences, SchoolId, SchoolKind, StudentProfile, StudentType};
use crate::matching::CutoffVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum RegionKind {
    Interior,
    Band { cutpoint: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartitionRegion {
    pub label: String,
    pub kind: RegionKind,
    pub lower: f64,
    pub upper: f64,
}

impl PartitionRegion {
    pub fn is_band(&self) -> bool {
        matches!(self.kind, RegionKind::Band { .. })
    }
}

/// Interior regions alternating with bands of half-width `h` around each cutpoint.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandPartition {
    pub test: usize,
    pub cutpoints: Vec<f64>,
    pub h: f64,
    regions: Vec<PartitionRegion>,
}

fn roman(mut n: usize) -> String {
    const TABLE: [(usize, &str); 13] = [
        (1000, "M"),
        (900, "CM"),
        (500, "D"),
        (400, "CD"),
        (100, "C"),
        (90, "XC"),
        (50, "L"),
        (40, "XL"),
        (10, "X"),
        (9, "IX"),
        (5, "V"),
        (4, "IV"),
        (1, "I"),
    ];
    let mut out = String::new();
    for (v, s) in TABLE {
        while n >= v {
            out.push_str(s);
            n -= v;
        }
    }
    out
}

impl BandPartition {
    pub fn new(test: usize, mut cutpoints: Vec<f64>, h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Config(format!("bandwidth must be positive, got {h}")));
        }
        cutpoints.sort_by(f64::total_cmp);
        cutpoints.dedup();
        if cutpoints.iter().any(|&c| !(c > 0.0 && c < 1.0)) {
            return Err(Error::Config("cutpoints must lie strictly inside (0, 1)".into()));
        }
        let mut edges = vec![0.0];
        for &c in &cutpoints {
            edges.push(c - h);
            edges.push(c + h);
        }
        edges.push(1.0);
        if edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "bands of half-width {h} around {cutpoints:?} overlap each other or the unit interval's ends"
            )));
        }
        let mut regions = Vec::new();
        for k in 0..edges.len() - 1 {
            let kind = if k % 2 == 0 {
                RegionKind::Interior
            } else {
                RegionKind::Band {
                    cutpoint: cutpoints[k / 2],
                }
            };
            regions.push(PartitionRegion {
                label: roman(k + 1),
                kind,
                lower: edges[k],
                upper: edges[k + 1],
            });
        }
        Ok(BandPartition {
            test,
            cutpoints,
            h,
            regions,
        })
    }

    /// Cutpoints are the interior score cutoffs on `test` faced by any type in `census`.
    pub fn from_census(
        market: &MarketSpec,
        census: &[StudentType],
        c: &CutoffVector,
        test: usize,
        h: f64,
    ) -> Result<Self> {
        let mut cuts = Vec::new();
        for ty in census {
            for s in ty.preferences.iter() {
                let school = market.school(s);
                if school.test_index() == Some(test) {
                    let r = school.tiebreak_threshold(ty.qualifiers[s.0], c.get(s));
                    if r > 0.0 && r < 1.0 {
                        cuts.push(r);
                    }
                }
            }
        }
        BandPartition::new(test, cuts, h)
    }

    pub fn regions(&self) -> &[PartitionRegion] {
        &self.regions
    }

    /// Index of the region holding score `r` (regions are closed on the left).
    pub fn locate(&self, r: f64) -> usize {
        self.regions
            .iter()
            .position(|g| r < g.upper)
            .unwrap_or(self.regions.len() - 1)
    }
}

fn treated_mass(dist: &[f64], treated: &[SchoolId]) -> f64 {
    treated.iter().map(|s| dist[s.0]).sum()
}

/// Side of a banded cutoff: schools whose own score cutoff equals the cutpoint
/// are failed (`below`) or cleared (`above`); everything else is judged at `scores`.
#[allow(clippy::too_many_arguments)]
fn probability_treated(
    market: &MarketSpec,
    prefs: &Preferences,
    qualifiers: &[u32],
    c: &CutoffVector,
    scores: &[f64],
    treated: &[SchoolId],
    forced: &[(usize, f64, bool)],
) -> f64 {
    let dist = assignment_distribution(market, prefs, qualifiers, c.as_slice(), |s| {
        let school = market.school(s);
        let SchoolKind::TestScore { test } = school.kind else {
            unreachable!("only test schools are queried")
        };
        let q = qualifiers[s.0];
        for &(t, cut, above) in forced {
            if t == test && school.tiebreak_threshold(q, c.get(s)) == cut {
                return above;
            }
        }
        school.score_from(q, scores[test]) >= c.get(s)
    });
    treated_mass(&dist, treated)
}

/// Probability of assignment into `treated` for a type whose banded-test score
/// falls in region `region` of `partition`. Scores on other tests are taken
/// from `other_scores`.
#[allow(clippy::too_many_arguments)]
pub fn local_propensity(
    market: &MarketSpec,
    ty: &StudentType,
    c: &CutoffVector,
    partition: &BandPartition,
    region: usize,
    treated: &[SchoolId],
    other_scores: &[f64],
) -> Result<f64> {
    market.check_type(ty)?;
    c.check_market(market)?;
    if other_scores.len() != market.num_tests {
        return Err(Error::Config("score vector length differs from the number of tests".into()));
    }
    let g = partition
        .regions
        .get(region)
        .ok_or_else(|| Error::Config(format!("no region {region} in partition")))?;
    let mut scores = other_scores.to_vec();
    let t = partition.test;
    let p = |scores: &[f64], forced: &[(usize, f64, bool)]| {
        probability_treated(market, &ty.preferences, &ty.qualifiers, c, scores, treated, forced)
    };
    Ok(match g.kind {
        RegionKind::Interior => {
            scores[t] = 0.5 * (g.lower + g.upper);
            p(&scores, &[])
        }
        RegionKind::Band { cutpoint } => {
            scores[t] = cutpoint;
            0.5 * p(&scores, &[(t, cutpoint, false)]) + 0.5 * p(&scores, &[(t, cutpoint, true)])
        }
    })
}

/// Local propensity for one student: on each test, a score within `h` of one
/// of the student's own score cutoffs is treated as a fair coin on that cutoff.
pub fn student_local_propensity(
    market: &MarketSpec,
    student: &StudentProfile,
    c: &CutoffVector,
    treated: &[SchoolId],
    h: f64,
) -> f64 {
    let mut bands: Vec<(usize, f64)> = Vec::new();
    for t in 0..market.num_tests {
        let r = student.scores[t];
        let nearest = student
            .preferences
            .iter()
            .filter(|&s| market.school(s).test_index() == Some(t))
            .map(|s| market.school(s).tiebreak_threshold(student.qualifiers[s.0], c.get(s)))
            .filter(|&cut| cut > 0.0 && cut < 1.0 && (r - cut).abs() <= h)
            .min_by(|a, b| (r - a).abs().total_cmp(&(r - b).abs()));
        if let Some(cut) = nearest {
            bands.push((t, cut));
        }
    }
    let k = bands.len();
    let mut total = 0.0;
    for mask in 0..(1u32 << k) {
        let forced: Vec<(usize, f64, bool)> = bands
            .iter()
            .enumerate()
            .map(|(j, &(t, cut))| (t, cut, mask & (1 << j) != 0))
            .collect();
        total += probability_treated(
            market,
            &student.preferences,
            &student.qualifiers,
            c,
            &student.scores,
            treated,
            &forced,
        );
    }
    total / (1u64 << k) as f64
}

/// `sum (D - psi) Y / sum (D - psi)^2`.
pub fn propensity_regression_estimand(y: &[f64], treated: &[bool], psi: &[f64]) -> Result<f64> {
    if y.len() != treated.len() || y.len() != psi.len() {
        return Err(Error::Data("outcome, treatment and propensity lengths differ".into()));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for ((&y, &d), &p) in y.iter().zip(treated).zip(psi) {
        let x = if d { 1.0 } else { 0.0 } - p;
        num += x * y;
        den += x * x;
    }
    if den == 0.0 {
        return Err(Error::DegenerateDesign(
            "treatment equals its propensity everywhere".into(),
        ));
    }
    Ok(num / den)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellInput {
    pub mass: f64,
    pub psi: f64,
    pub effect: f64,
    pub band: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightDecomposition {
    pub weights: Vec<f64>,
    pub implied_tau: f64,
    /// Total weight on band cells.
    pub band_share: f64,
}

/// Weights proportional to `mass * psi * (1 - psi)` and the implied average effect.
pub fn weight_decomposition(cells: &[CellInput]) -> Result<WeightDecomposition> {
    if cells.iter().any(|c| !(0.0..=1.0).contains(&c.psi) || c.mass < 0.0) {
        return Err(Error::Data("cell propensities must lie in [0, 1] and masses be >= 0".into()));
    }
    let total_mass: f64 = cells.iter().map(|c| c.mass).sum();
    if (total_mass - 1.0).abs() > 1e-9 {
        return Err(Error::Data(format!("cell masses sum to {total_mass}, expected 1")));
    }
    let raw: Vec<f64> = cells.iter().map(|c| c.mass * c.psi * (1.0 - c.psi)).collect();
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateDesign("every cell has propensity 0 or 1".into()));
    }
    let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
    let implied_tau = weights.iter().zip(cells).map(|(w, c)| w * c.effect).sum();
    let band_share = weights
        .iter()
        .zip(cells)
        .filter(|(_, c)| c.band)
        .map(|(w, _)| w)
        .sum();
    Ok(WeightDecomposition {
        weights,
        implied_tau,
        band_share,
    })
}

/// One (type, region) cell of a single-test DGP.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub type_index: usize,
    pub region: usize,
    pub input: CellInput,
}

/// Population cells for a one-test DGP whose outcomes depend on the school
/// only through treatment status: `effect` is `E[Y(treated) - Y(control)]`
/// over the cell, where the reference treated and control schools are the
/// first listed members of each group.
pub fn population_cells(
    dgp: &DgpSpec,
    c: &CutoffVector,
    partition: &BandPartition,
    treated: &[SchoolId],
) -> Result<Vec<Cell>> {
    let market = &dgp.market;
    if market.num_tests != 1 {
        return Err(Error::Config("population cells need a single-test market".into()));
    }
    let t_ref = *treated
        .first()
        .ok_or_else(|| Error::Config("treated set is empty".into()))?;
    let c_ref = market
        .school_ids()
        .find(|s| !treated.contains(s))
        .ok_or_else(|| Error::Config("every school is treated".into()))?;
    let probs = dgp.type_probabilities();
    let mut out = Vec::new();
    for (k, spec) in dgp.types.iter().enumerate() {
        let ty = spec.student_type();
        let density = spec.density(0);
        let (mu_t, mu_c) = (spec.mean(t_ref), spec.mean(c_ref));
        for (j, g) in partition.regions().iter().enumerate() {
            let psi = local_propensity(market, &ty, c, partition, j, treated, &[0.0])?;
            let mass = probs[k] * (density.cdf(g.upper) - density.cdf(g.lower));
            let effect = density
                .conditional_mean(g.lower, g.upper, |r| mu_t.eval(&[r]) - mu_c.eval(&[r]))
                .unwrap_or(0.0);
            out.push(Cell {
                type_index: k,
                region: j,
                input: CellInput {
                    mass,
                    psi,
                    effect,
                    band: g.is_band(),
                },
            });
        }
    }
    Ok(out)
}

/// Exact population value of the propensity-regression estimand in a one-test
/// DGP, integrating the true assignment probability against the outcome means.
pub fn population_regression_estimand(
    dgp: &DgpSpec,
    c: &CutoffVector,
    partition: &BandPartition,
    treated: &[SchoolId],
) -> Result<f64> {
    let market = &dgp.market;
    let cells = population_cells(dgp, c, partition, treated)?;
    let probs = dgp.type_probabilities();
    let mut num = 0.0;
    let mut den = 0.0;
    for cell in &cells {
        let spec = &dgp.types[cell.type_index];
        let ty = spec.student_type();
        let g = &partition.regions()[cell.region];
        let psi = cell.input.psi;
        let density = spec.density(0);
        // Split the region where the true assignment probability can jump.
        let mut knots = vec![g.lower, g.upper];
        for s in ty.preferences.iter() {
            let school = market.school(s);
            if school.test_index() == Some(0) {
                let r = school.tiebreak_threshold(ty.qualifiers[s.0], c.get(s));
                if r > g.lower && r < g.upper {
                    knots.push(r);
                }
            }
        }
        knots.sort_by(f64::total_cmp);
        for w in knots.windows(2) {
            let (a, b) = (w[0], w[1]);
            let mid = 0.5 * (a + b);
            let dist = assignment_distribution(market, &ty.preferences, &ty.qualifiers, c.as_slice(), |s| {
                market.school(s).score_from(ty.qualifiers[s.0], mid) >= c.get(s)
            });
            // E[(D - psi) Y | r] = sum_s P(s | r) (1{s treated} - psi) mu_s(r)
            let integrand = |r: f64| {
                let mut v = 0.0;
                for s in market.school_ids() {
                    if dist[s.0] > 0.0 {
                        let d = if treated.contains(&s) { 1.0 } else { 0.0 };
                        v += dist[s.0] * (d - psi) * spec.mean(s).eval(&[r]);
                    }
                }
                v * density.pdf(r)
            };
            let p_treat = treated_mass(&dist, treated);
            let sq = p_treat * (1.0 - psi).powi(2) + (1.0 - p_treat) * psi * psi;
            num += probs[cell.type_index] * gauss_legendre(a, b, integrand);
            den += probs[cell.type_index] * sq * (density.cdf(b) - density.cdf(a));
        }
    }
    if den == 0.0 {
        return Err(Error::DegenerateDesign("no residual treatment variation".into()));
    }
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::example;

    fn psi_table(h: f64) -> Vec<Vec<f64>> {
        let m = example::market();
        let c = example::cutoffs();
        let census = example::census();
        let part = BandPartition::from_census(&m, &census, &c, 0, h).unwrap();
        census
            .iter()
            .map(|ty| {
                (0..part.regions().len())
                    .map(|j| local_propensity(&m, ty, &c, &part, j, &example::TREATED, &[0.0]).unwrap())
                    .collect()
            })
            .collect()
    }

    #[test]
    fn extended_example_table() {
        let expected = [
            [0.5, 0.5, 0.5, 0.75, 1.0],
            [0.5, 0.25, 0.0, 0.5, 1.0],
            [0.5, 0.5, 0.5, 0.75, 1.0],
        ];
        for h in [0.1, 0.02, 0.001] {
            let t = psi_table(h);
            for (row, exp) in t.iter().zip(expected) {
                assert_eq!(row.as_slice(), exp.as_slice(), "h = {h}");
            }
        }
    }

    #[test]
    fn partition_labels_and_overlap() {
        let p = BandPartition::new(0, vec![1.0 / 3.0, 2.0 / 3.0], 0.05).unwrap();
        let labels: Vec<&str> = p.regions().iter().map(|g| g.label.as_str()).collect();
        assert_eq!(labels, ["I", "II", "III", "IV", "V"]);
        assert_eq!(p.locate(0.1), 0);
        assert_eq!(p.locate(0.3), 1);
        assert_eq!(p.locate(0.99), 4);
        assert!(matches!(BandPartition::new(0, vec![0.4, 0.5], 0.06), Err(Error::Config(_))));
        assert!(BandPartition::new(0, vec![0.4, 0.5], 0.0).is_err());
    }

    #[test]
    fn estimand_examples() {
        // With psi = 1/2 and Y = D the ratio is 2 * mean(D); balanced draws give 1.
        let d = [true, false, true, false, false, true];
        let y: Vec<f64> = d.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let tau = propensity_regression_estimand(&y, &d, &[0.5; 6]).unwrap();
        assert!((tau - 1.0).abs() < 1e-15);
        let tau = propensity_regression_estimand(&y[..5], &d[..5], &[0.5; 5]).unwrap();
        assert!((tau - 2.0 * 2.0 / 5.0).abs() < 1e-15);
        let psi: Vec<f64> = y.clone();
        assert!(matches!(
            propensity_regression_estimand(&y, &d, &psi),
            Err(Error::DegenerateDesign(_))
        ));
    }

    #[test]
    fn decomposition_examples() {
        let cells = [
            CellInput { mass: 0.5, psi: 0.5, effect: 1.0, band: false },
            CellInput { mass: 0.5, psi: 0.5, effect: 3.0, band: true },
        ];
        let w = weight_decomposition(&cells).unwrap();
        assert_eq!(w.weights, vec![0.5, 0.5]);
        assert_eq!(w.implied_tau, 2.0);
        assert_eq!(w.band_share, 0.5);
        let single = [CellInput { mass: 1.0, psi: 0.0, effect: 1.0, band: false }];
        assert!(matches!(weight_decomposition(&single), Err(Error::DegenerateDesign(_))));
    }

    fn band_share(h: f64) -> f64 {
        let dgp = example::dgp();
        let c = example::cutoffs();
        let part = BandPartition::from_census(&dgp.market, &example::census(), &c, 0, h).unwrap();
        let cells = population_cells(&dgp, &c, &part, &example::TREATED).unwrap();
        let inputs: Vec<CellInput> = cells.into_iter().map(|c| c.input).collect();
        weight_decomposition(&inputs).unwrap().band_share
    }

    #[test]
    fn band_share_shrinks_with_h() {
        let shares: Vec<f64> = [0.1, 0.05, 0.02, 0.01].iter().map(|&h| band_share(h)).collect();
        assert!(shares.windows(2).all(|w| w[1] < w[0]), "{shares:?}");
    }

    #[test]
    fn bias_shrinks_with_h() {
        let dgp = example::dgp();
        let c = example::cutoffs();
        let census = example::census();
        let lottery_only = |h: f64| {
            let part = BandPartition::from_census(&dgp.market, &census, &c, 0, h).unwrap();
            let cells = population_cells(&dgp, &c, &part, &example::TREATED).unwrap();
            let interior: Vec<CellInput> = cells
                .iter()
                .map(|c| CellInput { mass: if c.input.band { 0.0 } else { c.input.mass }, ..c.input.clone() })
                .collect();
            let total: f64 = interior.iter().map(|c| c.mass).sum();
            let normalized: Vec<CellInput> =
                interior.into_iter().map(|c| CellInput { mass: c.mass / total, ..c }).collect();
            weight_decomposition(&normalized).unwrap().implied_tau
        };
        let target = lottery_only(1e-6);
        let gaps: Vec<f64> = [0.1, 0.05, 0.02, 0.01]
            .iter()
            .map(|&h| {
                let part = BandPartition::from_census(&dgp.market, &census, &c, 0, h).unwrap();
                (population_regression_estimand(&dgp, &c, &part, &example::TREATED).unwrap() - target).abs()
            })
            .collect();
        assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
    }

    #[test]
    fn student_propensity_matches_cells_away_from_bands() {
        let m = example::market();
        let c = example::cutoffs();
        for (k, r, expect) in [(1, 0.2, 0.5), (1, 0.5, 0.0), (1, 0.34, 0.25), (0, 0.66, 0.75), (2, 0.9, 1.0)] {
            let p = example::student(k, r, 0.3);
            let psi = student_local_propensity(&m, &p, &c, &example::TREATED, 0.02);
            assert_eq!(psi, expect, "type {k} at {r}");
        }
    }
}
