//! Local-linear estimation of RD-driven contrasts between a test school `s1`
//! and a less preferred school `s0`, with IPW proxy outcomes that undo lottery
//! selection on either side of the cutoff.

use serde::{Deserialize, Serialize};

use crate::dgp::DgpSpec;
use crate::eligibility::{favorite_lottery_positive, lenient_cutoff, school_test_cutoff, sure_win_set};
use crate::error::{Error, Result};
use crate::lottery::{losing_all, LotteryWindows};
use crate::market::{MarketSpec, Preferences, SchoolId, SchoolKind, StudentProfile};
use crate::matching::CutoffVector;
use crate::region::{Interval, Region};

/// Ordered pair: `preferred` is the test school whose cutoff drives the contrast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RdPair {
    pub preferred: SchoolId,
    pub other: SchoolId,
}

impl RdPair {
    pub fn new(preferred: SchoolId, other: SchoolId) -> Self {
        RdPair { preferred, other }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionContext {
    pub pair: RdPair,
    pub cutoffs: CutoffVector,
    pub h: f64,
    /// Score cutoff of `pair.preferred` on its test.
    pub rho: f64,
    pub test: usize,
}

impl SelectionContext {
    pub fn new(market: &MarketSpec, pair: RdPair, cutoffs: CutoffVector, h: f64) -> Result<Self> {
        cutoffs.check_market(market)?;
        for s in [pair.preferred, pair.other] {
            if s.0 >= market.num_schools() {
                return Err(Error::Config(format!("unknown school {}", s.0)));
            }
        }
        if pair.preferred == pair.other {
            return Err(Error::Config("pair must name two different schools".into()));
        }
        let school = market.school(pair.preferred);
        let SchoolKind::TestScore { test } = school.kind else {
            return Err(Error::Domain(format!(
                "school {} must be a test-score school to carry an RD contrast",
                pair.preferred.0
            )));
        };
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::Config(format!("bandwidth must be positive, got {h}")));
        }
        let rho = school_test_cutoff(school, cutoffs.get(pair.preferred))?;
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::DegenerateDesign(format!(
                "score cutoff {rho} of school {} is not interior",
                pair.preferred.0
            )));
        }
        Ok(SelectionContext {
            pair,
            cutoffs,
            h,
            rho,
            test,
        })
    }
}

/// Score box for which a type is selected, or `None` if it never is.
/// The running-variable coordinate is left unrestricted.
pub fn type_selection(
    market: &MarketSpec,
    prefs: &Preferences,
    qualifiers: &[u32],
    ctx: &SelectionContext,
) -> Option<Region> {
    let c = &ctx.cutoffs;
    let (s1, s0) = (ctx.pair.preferred, ctx.pair.other);
    let t1 = ctx.test;
    if !prefs.prefers(s1, s0) || !prefs.ranks(s0) {
        return None;
    }
    // Not a sure winner at any lottery school above s0.
    if sure_win_set(market, qualifiers, c)
        .into_iter()
        .any(|l| l != s0 && prefs.prefers(l, s0))
    {
        return None;
    }
    let school0 = market.school(s0);
    if school0.is_lottery() && !favorite_lottery_positive(market, prefs, qualifiers, c, s0).ok()? {
        return None;
    }
    // The type's own cutoff at s1 is the one being estimated.
    let own1 = market.school(s1).tiebreak_threshold(qualifiers[s1.0], c.get(s1));
    if own1 != ctx.rho {
        return None;
    }
    let lenient0 = |t| lenient_cutoff(market, prefs, qualifiers, c, s0, t);
    if ctx.rho > lenient0(t1).value {
        return None;
    }
    if ctx.rho + ctx.h >= lenient_cutoff(market, prefs, qualifiers, c, s1, t1).value {
        return None;
    }
    let t0 = school0.test_index();
    if t0 == Some(t1) {
        let own0 = school0.tiebreak_threshold(qualifiers[s0.0], c.get(s0));
        if ctx.rho - ctx.h <= own0 {
            return None;
        }
    }
    let mut factors = Vec::with_capacity(market.num_tests);
    for t in 0..market.num_tests {
        let f = if t == t1 {
            Some(Interval::unit())
        } else if Some(t) == t0 {
            let own0 = school0.tiebreak_threshold(qualifiers[s0.0], c.get(s0));
            Interval::closed(own0, lenient0(t).value)
        } else {
            Interval::new(0.0, lenient0(t).value, false, true)
        };
        factors.push(f);
    }
    let region = Region::from_factors(factors);
    (!region.is_empty()).then_some(region)
}

/// Selection indicator `J` for one student.
pub fn selection_indicator(market: &MarketSpec, student: &StudentProfile, ctx: &SelectionContext) -> bool {
    type_selection(market, &student.preferences, &student.qualifiers, ctx)
        .is_some_and(|b| b.contains(&student.scores))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Side {
    /// Above the cutoff, where `s1` is the relevant school.
    Plus,
    /// Below the cutoff, where `s0` is.
    Minus,
}

impl Side {
    pub fn name(self) -> &'static str {
        match self {
            Side::Plus => "plus",
            Side::Minus => "minus",
        }
    }
}

fn side_windows(
    market: &MarketSpec,
    prefs: &Preferences,
    qualifiers: &[u32],
    pair: RdPair,
    side: Side,
    c: &CutoffVector,
) -> LotteryWindows {
    let target = match side {
        Side::Plus => pair.preferred,
        Side::Minus => pair.other,
    };
    let mut w = losing_all(market, qualifiers, c.as_slice(), prefs.above(target));
    if side == Side::Minus {
        let school = market.school(target);
        if let SchoolKind::Lottery { lottery } = school.kind {
            w.win(lottery, school.tiebreak_threshold(qualifiers[target.0], c.get(target)));
        }
    }
    w
}

/// Probability over lottery draws that the side's selection event holds.
pub fn qualification_probability(
    market: &MarketSpec,
    prefs: &Preferences,
    qualifiers: &[u32],
    pair: RdPair,
    side: Side,
    c: &CutoffVector,
) -> f64 {
    side_windows(market, prefs, qualifiers, pair, side, c).probability()
}

/// Whether the realized draws satisfy the side's selection event: losing every
/// lottery school above the side's school and, below the cutoff, winning `s0`
/// when it is a lottery school.
pub fn realized_selection(
    market: &MarketSpec,
    student: &StudentProfile,
    pair: RdPair,
    side: Side,
    c: &CutoffVector,
) -> bool {
    let target = match side {
        Side::Plus => pair.preferred,
        Side::Minus => pair.other,
    };
    let loses_above = student
        .preferences
        .above(target)
        .iter()
        .filter(|&&s| market.school(s).is_lottery())
        .all(|&s| market.score(student, s) < c.get(s));
    let wins_target = side == Side::Plus
        || !market.school(target).is_lottery()
        || market.score(student, target) >= c.get(target);
    loses_above && wins_target
}

/// `D * Y / pi` with `0 / 0 = 0`.
pub fn proxy_outcome(y: f64, selected: bool, pi: f64) -> Result<f64> {
    if !selected {
        return Ok(0.0);
    }
    if pi <= 0.0 {
        return Err(Error::ImpossibleEvent(
            "selection event realized although its probability is zero".into(),
        ));
    }
    Ok(y / pi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SideFit {
    pub intercept: f64,
    pub slope: f64,
    pub n: usize,
    /// Variance contribution on the `sqrt(N h)` scale.
    pub sigma2: f64,
}

/// Uniform-kernel linear fit of `y` on `x = R - rho` within one side's band.
/// `total_n` is the full sample size used in the variance scaling.
pub fn local_linear_side(points: &[(f64, f64)], side: Side, total_n: usize, h: f64) -> Result<SideFit> {
    let n = points.len();
    let insufficient = || Error::InsufficientData { side: side.name(), n };
    if n < 2 {
        return Err(insufficient());
    }
    let nf = n as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(x, y) in points {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let distinct = points.iter().any(|p| p.0 != points[0].0);
    if !distinct || sxx <= 0.0 {
        return Err(insufficient());
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let second = points.iter().map(|p| p.1 * p.1).sum::<f64>() / nf;
    let sigma2 = (4.0 * total_n as f64 * h / nf) * (second - intercept * intercept);
    Ok(SideFit {
        intercept,
        slope,
        n,
        sigma2,
    })
}

/// How the bandwidth shrinks with the sample size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthPolicy {
    Fixed(f64),
    /// `h = kappa * N^(-d)`.
    Rate { kappa: f64, d: f64 },
}

impl Default for BandwidthPolicy {
    fn default() -> Self {
        BandwidthPolicy::Rate { kappa: 1.0, d: 0.3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateCheck {
    /// `h = o(N^(-1/5))`: bias is negligible relative to the standard error.
    pub undersmoothing: Option<bool>,
    /// `N^(-1/2) = o(h)`: estimating the cutoffs does not matter to first order.
    pub cutoff_noise_negligible: Option<bool>,
}

impl BandwidthPolicy {
    pub fn bandwidth(&self, n: usize) -> f64 {
        match *self {
            BandwidthPolicy::Fixed(h) => h,
            BandwidthPolicy::Rate { kappa, d } => kappa * (n.max(1) as f64).powf(-d),
        }
    }

    pub fn rate_check(&self) -> RateCheck {
        match *self {
            BandwidthPolicy::Fixed(_) => RateCheck {
                undersmoothing: None,
                cutoff_noise_negligible: None,
            },
            BandwidthPolicy::Rate { d, .. } => RateCheck {
                undersmoothing: Some(d > 0.2),
                cutoff_noise_negligible: Some(d < 0.5),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateReport {
    pub tau_hat: f64,
    pub beta_plus: (f64, f64),
    pub beta_minus: (f64, f64),
    pub n_plus: usize,
    pub n_minus: usize,
    pub sigma2_plus: f64,
    pub sigma2_minus: f64,
    /// Sum of both sides, on the `sqrt(N h)` scale.
    pub sigma2_hat: f64,
    /// Standard error of `tau_hat`: `sqrt(sigma2_hat / (N h))`.
    pub se: f64,
    pub ci_95: (f64, f64),
    pub h: f64,
    pub rho: f64,
    pub cutoffs: CutoffVector,
    pub n_total: usize,
    pub rate: RateCheck,
}

impl EstimateReport {
    pub fn covers(&self, value: f64) -> bool {
        self.ci_95.0 <= value && value <= self.ci_95.1
    }
}

/// One in-band observation used by the estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BandRow {
    pub index: usize,
    pub score: f64,
    pub proxy: f64,
    pub selected: bool,
    pub side: Side,
}

/// Proxy outcomes for every student whose running variable is in either band.
pub fn band_rows(
    market: &MarketSpec,
    students: &[StudentProfile],
    outcomes: &[f64],
    ctx: &SelectionContext,
) -> Result<Vec<BandRow>> {
    if students.len() != outcomes.len() {
        return Err(Error::Data("roster and outcome lengths differ".into()));
    }
    market.check_students(students)?;
    let mut rows = Vec::new();
    for (i, (p, &y)) in students.iter().zip(outcomes).enumerate() {
        let r = p.scores[ctx.test];
        let side = if r >= ctx.rho && r <= ctx.rho + ctx.h {
            Side::Plus
        } else if r >= ctx.rho - ctx.h && r < ctx.rho {
            Side::Minus
        } else {
            continue;
        };
        let selected = selection_indicator(market, p, ctx);
        let proxy = if selected {
            let d = realized_selection(market, p, ctx.pair, side, &ctx.cutoffs);
            let pi = qualification_probability(market, &p.preferences, &p.qualifiers, ctx.pair, side, &ctx.cutoffs);
            proxy_outcome(y, d, pi).map_err(|e| match e {
                Error::ImpossibleEvent(m) => Error::ImpossibleEvent(format!("student {i}: {m}")),
                other => other,
            })?
        } else {
            0.0
        };
        rows.push(BandRow {
            index: i,
            score: r,
            proxy,
            selected,
            side,
        });
    }
    Ok(rows)
}

fn fit_from_rows(rows: &[BandRow], ctx: &SelectionContext, n_total: usize, rate: RateCheck) -> Result<EstimateReport> {
    let pts = |side: Side| -> Vec<(f64, f64)> {
        rows.iter()
            .filter(|r| r.selected && r.side == side)
            .map(|r| (r.score - ctx.rho, r.proxy))
            .collect()
    };
    let plus = local_linear_side(&pts(Side::Plus), Side::Plus, n_total, ctx.h)?;
    let minus = local_linear_side(&pts(Side::Minus), Side::Minus, n_total, ctx.h)?;
    let tau_hat = plus.intercept - minus.intercept;
    let sigma2_hat = plus.sigma2 + minus.sigma2;
    let se = (sigma2_hat.max(0.0) / (n_total as f64 * ctx.h)).sqrt();
    Ok(EstimateReport {
        tau_hat,
        beta_plus: (plus.intercept, plus.slope),
        beta_minus: (minus.intercept, minus.slope),
        n_plus: plus.n,
        n_minus: minus.n,
        sigma2_plus: plus.sigma2,
        sigma2_minus: minus.sigma2,
        sigma2_hat,
        se,
        ci_95: (tau_hat - 1.96 * se, tau_hat + 1.96 * se),
        h: ctx.h,
        rho: ctx.rho,
        cutoffs: ctx.cutoffs.clone(),
        n_total,
        rate,
    })
}

/// Feasible estimate at sample cutoffs `c_n`.
pub fn estimate_rd_ate(
    market: &MarketSpec,
    students: &[StudentProfile],
    outcomes: &[f64],
    pair: RdPair,
    c_n: &CutoffVector,
    policy: BandwidthPolicy,
) -> Result<EstimateReport> {
    let h = policy.bandwidth(students.len());
    let ctx = SelectionContext::new(market, pair, c_n.clone(), h)?;
    let rows = band_rows(market, students, outcomes, &ctx)?;
    fit_from_rows(&rows, &ctx, students.len(), policy.rate_check())
}

/// The same computation at population cutoffs `c`. `outcomes` should be each
/// student's outcome under the assignment `c` gives.
pub fn oracle_estimate(
    market: &MarketSpec,
    students: &[StudentProfile],
    outcomes: &[f64],
    pair: RdPair,
    c: &CutoffVector,
    policy: BandwidthPolicy,
) -> Result<EstimateReport> {
    estimate_rd_ate(market, students, outcomes, pair, c, policy)
}

/// Population target: the selected-population average of `mu_s1 - mu_s0` at
/// the cutoff, weighting types by share, running-variable density at the
/// cutoff and probability of the selection box.
pub fn true_rd_effect(dgp: &DgpSpec, pair: RdPair, c: &CutoffVector) -> Result<f64> {
    dgp.validate()?;
    let ctx = SelectionContext::new(&dgp.market, pair, c.clone(), f64::MIN_POSITIVE)?;
    let probs = dgp.type_probabilities();
    let (mut num, mut den) = (0.0, 0.0);
    for (k, spec) in dgp.types.iter().enumerate() {
        let Some(bx) = type_selection(&dgp.market, &spec.preferences, &spec.qualifiers, &ctx) else {
            continue;
        };
        let factors = bx.factors().expect("non-empty box");
        let (m1, m0) = (spec.mean(pair.preferred), spec.mean(pair.other));
        let mut weight = probs[k] * spec.density(ctx.test).pdf(ctx.rho);
        let mut effect = m1.intercept - m0.intercept + m1.term(ctx.test, ctx.rho) - m0.term(ctx.test, ctx.rho);
        for (t, iv) in factors.iter().enumerate() {
            if t == ctx.test {
                continue;
            }
            let d = spec.density(t);
            weight *= d.cdf(iv.upper) - d.cdf(iv.lower);
            if let Some(e) = d.conditional_mean(iv.lower, iv.upper, |r| m1.term(t, r) - m0.term(t, r)) {
                effect += e;
            }
        }
        num += weight * effect;
        den += weight;
    }
    if den <= 0.0 {
        return Err(Error::DegenerateDesign("no type is selected at the cutoff".into()));
    }
    Ok(num / den)
}
