//! Exact lottery probabilities under independent uniform draws.
//!
//! Every event the library needs ("wins at s", "loses at s'") constrains one
//! draw to a half-line, so any conjunction of them is a box with one interval
//! per lottery.

use crate::market::{MarketSpec, Preferences, SchoolId, SchoolKind};

#[derive(Debug, Clone)]
pub(crate) struct LotteryWindows {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl LotteryWindows {
    pub fn new(num_lotteries: usize) -> Self {
        LotteryWindows {
            lo: vec![0.0; num_lotteries],
            hi: vec![1.0; num_lotteries],
        }
    }

    /// Restrict to `u >= threshold`.
    pub fn win(&mut self, lottery: usize, threshold: f64) {
        self.lo[lottery] = self.lo[lottery].max(threshold);
    }

    /// Restrict to `u < threshold`.
    pub fn lose(&mut self, lottery: usize, threshold: f64) {
        self.hi[lottery] = self.hi[lottery].min(threshold);
    }

    pub fn probability(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| (h - l).max(0.0))
            .product()
    }

    pub fn is_positive(&self) -> bool {
        self.lo.iter().zip(&self.hi).all(|(l, h)| h > l)
    }
}

/// Lottery windows after losing at every lottery school in `schools`.
pub(crate) fn losing_all(
    market: &MarketSpec,
    qualifiers: &[u32],
    cutoffs: &[f64],
    schools: &[SchoolId],
) -> LotteryWindows {
    let mut w = LotteryWindows::new(market.num_lotteries);
    for &s in schools {
        let school = market.school(s);
        if let SchoolKind::Lottery { lottery } = school.kind {
            w.lose(lottery, school.tiebreak_threshold(qualifiers[s.0], cutoffs[s.0]));
        }
    }
    w
}

/// Distribution of the fixed-cutoff assignment over schools, integrating out
/// lottery draws. `qualifies` decides test-score schools.
pub(crate) fn assignment_distribution(
    market: &MarketSpec,
    prefs: &Preferences,
    qualifiers: &[u32],
    cutoffs: &[f64],
    mut qualifies: impl FnMut(SchoolId) -> bool,
) -> Vec<f64> {
    let mut out = vec![0.0; market.num_schools()];
    let mut w = LotteryWindows::new(market.num_lotteries);
    for s in prefs.iter() {
        let school = market.school(s);
        match school.kind {
            SchoolKind::TestScore { .. } => {
                if qualifies(s) {
                    out[s.0] += w.probability();
                    return out;
                }
            }
            SchoolKind::Lottery { lottery } => {
                let a = school.tiebreak_threshold(qualifiers[s.0], cutoffs[s.0]);
                let mut won = w.clone();
                won.win(lottery, a);
                out[s.0] += won.probability();
                w.lose(lottery, a);
                if !w.is_positive() {
                    return out;
                }
            }
        }
    }
    out
}
