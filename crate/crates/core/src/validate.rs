//! Checks a synthetic population and its cutoffs against the conditions the
//! RD estimator relies on. Every clause gets a status; nothing here errors.

use serde::Serialize;

use crate::dgp::{DgpSpec, Noise};
use crate::eligibility::school_test_cutoff;
use crate::estimator::RdPair;
use crate::market::{SchoolId, SchoolKind};
use crate::matching::CutoffVector;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Satisfied,
    Violated,
    Unverifiable,
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClauseCheck {
    /// Short assumption label, e.g. `interior-cutoffs(4)`.
    pub label: String,
    pub subject: String,
    pub status: Status,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<ClauseCheck>,
    /// Some school has no seats but positive demand, so its cutoff is pinned at 1.
    pub degenerate: bool,
}

impl ValidationReport {
    pub fn violations(&self) -> impl Iterator<Item = &ClauseCheck> {
        self.checks.iter().filter(|c| c.status == Status::Violated)
    }

    pub fn is_ok(&self) -> bool {
        self.violations().next().is_none()
    }

    pub fn with_label<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a ClauseCheck> + 'a {
        self.checks.iter().filter(move |c| c.label == label)
    }
}

pub const INTERIOR_RD: &str = "interior-cutoffs(1)";
pub const OFF_QUALIFIER_GRID: &str = "interior-cutoffs(2)";
pub const UNDERSUBSCRIBED: &str = "interior-cutoffs(3)";
pub const DISTINCT_TEST_CUTOFFS: &str = "interior-cutoffs(4)";
pub const SEATS: &str = "seats";
pub const BOUNDED_DENSITY: &str = "bounded-density";
pub const MOMENTS: &str = "moment-bounds";
pub const SMOOTH_MEAN: &str = "smooth-mean";
pub const SMOOTH_DENSITY: &str = "smooth-density";

// Equal score cutoffs are compared with this slack so values read from files match.
const TIE_EPS: f64 = 1e-12;

fn check(label: &str, subject: impl Into<String>, status: Status, detail: impl Into<String>) -> ClauseCheck {
    ClauseCheck {
        label: label.into(),
        subject: subject.into(),
        status,
        detail: detail.into(),
    }
}

/// `zero_frequency[s]` is the share of large simulated markets in which school
/// `s` ended undersubscribed (see the continuum solver); without it the
/// eventually-undersubscribed clause cannot be judged.
pub fn validate_market(
    dgp: &DgpSpec,
    c: &CutoffVector,
    zero_frequency: Option<&[f64]>,
    pair: Option<RdPair>,
) -> ValidationReport {
    let mut checks = Vec::new();
    if let Err(e) = dgp.validate().and_then(|_| c.check_market(&dgp.market)) {
        checks.push(check("config", "dgp", Status::Violated, e.to_string()));
        return ValidationReport {
            checks,
            degenerate: false,
        };
    }
    let market = &dgp.market;
    let mut degenerate = false;

    if let Some(pair) = pair {
        let school = market.school(pair.preferred);
        let status = match school.kind {
            SchoolKind::TestScore { .. } => {
                let rho = school_test_cutoff(school, c.get(pair.preferred)).unwrap_or(0.0);
                if rho > 0.0 && rho < 1.0 {
                    (Status::Satisfied, format!("rho = {rho}"))
                } else {
                    (Status::Violated, format!("rho = {rho} is not in (0, 1)"))
                }
            }
            SchoolKind::Lottery { .. } => (Status::Violated, "preferred school is a lottery school".into()),
        };
        checks.push(check(INTERIOR_RD, pair.preferred.to_string(), status.0, status.1));
    }

    let demanded = |s: SchoolId| {
        dgp.types
            .iter()
            .any(|t| t.weight > 0.0 && t.preferences.rank_of(s).is_some())
    };

    for school in &market.schools {
        let s = school.id;
        if s.0 == 0 {
            continue;
        }
        let cs = c.get(s);
        let qb = school.qualifier_max as f64 + 1.0;
        let on_grid = cs == 1.0 || (1..=school.qualifier_max).any(|k| (cs - k as f64 / qb).abs() <= TIE_EPS);
        checks.push(if on_grid {
            check(
                OFF_QUALIFIER_GRID,
                s.to_string(),
                Status::Violated,
                format!("cutoff {cs} sits on a qualifier boundary"),
            )
        } else {
            check(OFF_QUALIFIER_GRID, s.to_string(), Status::Satisfied, format!("cutoff {cs}"))
        });

        if school.capacity_share == 0.0 && demanded(s) {
            degenerate = true;
            checks.push(check(
                SEATS,
                s.to_string(),
                Status::Violated,
                "no seats but positive demand: cutoff pinned at 1 (degenerate)",
            ));
        }

        checks.push(if cs != 0.0 {
            check(UNDERSUBSCRIBED, s.to_string(), Status::NotApplicable, "school is oversubscribed")
        } else {
            match zero_frequency.and_then(|z| z.get(s.0)) {
                Some(&1.0) => check(
                    UNDERSUBSCRIBED,
                    s.to_string(),
                    Status::Satisfied,
                    "undersubscribed in every simulated market",
                ),
                Some(&f) => check(
                    UNDERSUBSCRIBED,
                    s.to_string(),
                    Status::Unverifiable,
                    format!("undersubscribed in only {f} of simulated markets; capacity may sit at the threshold"),
                ),
                None => check(
                    UNDERSUBSCRIBED,
                    s.to_string(),
                    Status::Unverifiable,
                    "no simulated markets to judge eventual undersubscription",
                ),
            }
        });
    }

    let test_schools: Vec<_> = market.schools.iter().filter(|s| !s.is_lottery()).collect();
    for (i, a) in test_schools.iter().enumerate() {
        for b in &test_schools[i + 1..] {
            if a.test_index() != b.test_index() {
                continue;
            }
            let (ca, cb) = (c.get(a.id), c.get(b.id));
            let ra = school_test_cutoff(a, ca).unwrap_or(0.0);
            let rb = school_test_cutoff(b, cb).unwrap_or(0.0);
            let subject = format!("{},{}", a.id, b.id);
            checks.push(if (ra - rb).abs() <= TIE_EPS && !(ca == 0.0 && cb == 0.0) {
                check(
                    DISTINCT_TEST_CUTOFFS,
                    subject,
                    Status::Violated,
                    format!("equal score cutoffs {ra} on a shared test"),
                )
            } else {
                check(DISTINCT_TEST_CUTOFFS, subject, Status::Satisfied, format!("score cutoffs {ra} and {rb}"))
            });
        }
    }

    for (k, ty) in dgp.types.iter().enumerate() {
        let subject = ty.label.clone().unwrap_or_else(|| format!("type {k}"));
        for t in 0..market.num_tests {
            let d = ty.density(t);
            let (lo, hi) = (d.inf(), d.sup());
            let status = if lo > 0.0 && hi.is_finite() {
                Status::Satisfied
            } else {
                Status::Violated
            };
            checks.push(check(
                BOUNDED_DENSITY,
                format!("{subject}, test {t}"),
                status,
                format!("density between {lo} and {hi}"),
            ));
            checks.push(check(
                SMOOTH_DENSITY,
                format!("{subject}, test {t}"),
                if lo > 0.0 { Status::Satisfied } else { Status::Violated },
                "polynomial density",
            ));
        }
        let (status, detail) = match ty.noise {
            Noise::Gaussian { sd } if sd > 0.0 => (Status::Satisfied, format!("gaussian noise, variance {}", sd * sd)),
            Noise::Gaussian { .. } => (
                Status::Violated,
                "noiseless outcomes: conditional variance at the cutoff is zero".to_string(),
            ),
            Noise::ShiftedPareto { shape, .. } => (
                Status::Satisfied,
                format!("pareto tail index {shape} > 2 gives a finite 2+eps moment"),
            ),
        };
        checks.push(check(MOMENTS, subject.clone(), status, detail));
        checks.push(check(SMOOTH_MEAN, subject, Status::Satisfied, "cubic means"));
    }
    checks.push(check(
        BOUNDED_DENSITY,
        "lotteries",
        Status::Satisfied,
        "independent uniform draws",
    ));

    ValidationReport { checks, degenerate }
}
