//! Schools, students and priority scores.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a school within a market. School 0 is the outside option.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SchoolId(pub usize);

impl SchoolId {
    pub const OUTSIDE: SchoolId = SchoolId(0);

    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for SchoolId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

/// How a school breaks ties within a qualifier class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchoolKind {
    Lottery { lottery: usize },
    TestScore { test: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SchoolRecord", into = "SchoolRecord")]
pub struct SchoolSpec {
    pub id: SchoolId,
    /// Seats per student in the population; `f64::INFINITY` for the outside option.
    pub capacity_share: f64,
    pub kind: SchoolKind,
    pub qualifier_max: u32,
}

impl SchoolSpec {
    pub fn lottery(id: usize, capacity_share: f64, lottery: usize, qualifier_max: u32) -> Self {
        SchoolSpec {
            id: SchoolId(id),
            capacity_share,
            kind: SchoolKind::Lottery { lottery },
            qualifier_max,
        }
    }

    pub fn test_score(id: usize, capacity_share: f64, test: usize, qualifier_max: u32) -> Self {
        SchoolSpec {
            id: SchoolId(id),
            capacity_share,
            kind: SchoolKind::TestScore { test },
            qualifier_max,
        }
    }

    pub fn is_lottery(&self) -> bool {
        matches!(self.kind, SchoolKind::Lottery { .. })
    }

    pub fn lottery_index(&self) -> Option<usize> {
        match self.kind {
            SchoolKind::Lottery { lottery } => Some(lottery),
            SchoolKind::TestScore { .. } => None,
        }
    }

    pub fn test_index(&self) -> Option<usize> {
        match self.kind {
            SchoolKind::TestScore { test } => Some(test),
            SchoolKind::Lottery { .. } => None,
        }
    }

    /// Finite-sample seat count `floor(n * capacity_share)`, `None` when unbounded.
    pub fn seats(&self, n: usize) -> Option<usize> {
        if self.capacity_share.is_infinite() {
            None
        } else {
            Some((n as f64 * self.capacity_share).floor() as usize)
        }
    }

    /// Threshold on the tie-breaker that a student with qualifier `q` must reach
    /// to clear cutoff `c`, clamped to [0, 1].
    pub fn tiebreak_threshold(&self, q: u32, c: f64) -> f64 {
        ((1.0 + self.qualifier_max as f64) * c - q as f64).clamp(0.0, 1.0)
    }

    /// Priority score from a qualifier and a tie-breaker value.
    pub fn score_from(&self, q: u32, tiebreak: f64) -> f64 {
        (q as f64 + tiebreak) / (self.qualifier_max as f64 + 1.0)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum Capacity {
    Finite(f64),
    Text(String),
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum KindTag {
    Lottery,
    Test,
}

#[derive(Serialize, Deserialize)]
struct SchoolRecord {
    id: usize,
    capacity_share: Capacity,
    kind: KindTag,
    index: usize,
    #[serde(default)]
    qualifier_max: u32,
}

impl TryFrom<SchoolRecord> for SchoolSpec {
    type Error = String;

    fn try_from(r: SchoolRecord) -> std::result::Result<Self, String> {
        let capacity_share = match r.capacity_share {
            Capacity::Finite(x) => x,
            Capacity::Text(s) if matches!(s.as_str(), "inf" | "infinity" | "Infinity") => {
                f64::INFINITY
            }
            Capacity::Text(s) => return Err(format!("school {}: bad capacity_share {s:?}", r.id)),
        };
        let kind = match r.kind {
            KindTag::Lottery => SchoolKind::Lottery { lottery: r.index },
            KindTag::Test => SchoolKind::TestScore { test: r.index },
        };
        Ok(SchoolSpec {
            id: SchoolId(r.id),
            capacity_share,
            kind,
            qualifier_max: r.qualifier_max,
        })
    }
}

impl From<SchoolSpec> for SchoolRecord {
    fn from(s: SchoolSpec) -> Self {
        let capacity_share = if s.capacity_share.is_infinite() {
            Capacity::Text("inf".into())
        } else {
            Capacity::Finite(s.capacity_share)
        };
        let (kind, index) = match s.kind {
            SchoolKind::Lottery { lottery } => (KindTag::Lottery, lottery),
            SchoolKind::TestScore { test } => (KindTag::Test, test),
        };
        SchoolRecord {
            id: s.id.0,
            capacity_share,
            kind,
            index,
            qualifier_max: s.qualifier_max,
        }
    }
}

/// A strict, duplicate-free ranking over a subset of schools ending in school 0.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Preferences(Vec<SchoolId>);

impl Preferences {
    /// Builds a ranking without validation; see [`MarketSpec::check_preferences`].
    pub fn new(ranking: Vec<SchoolId>) -> Self {
        Preferences(ranking)
    }

    pub fn from_indices(ranking: &[usize]) -> Self {
        Preferences(ranking.iter().map(|&s| SchoolId(s)).collect())
    }

    pub fn as_slice(&self) -> &[SchoolId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn rank_of(&self, s: SchoolId) -> Option<usize> {
        self.0.iter().position(|&x| x == s)
    }

    pub fn ranks(&self, s: SchoolId) -> bool {
        self.0.contains(&s)
    }

    /// `a` strictly preferred to `b`. Unranked schools sit below every ranked one.
    pub fn prefers(&self, a: SchoolId, b: SchoolId) -> bool {
        match (self.rank_of(a), self.rank_of(b)) {
            (Some(ra), Some(rb)) => ra < rb,
            (Some(_), None) => true,
            _ => false,
        }
    }

    /// Schools ranked strictly above `s`, best first. Everything ranked if `s` is unranked.
    pub fn above(&self, s: SchoolId) -> &[SchoolId] {
        match self.rank_of(s) {
            Some(r) => &self.0[..r],
            None => &self.0,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = SchoolId> + '_ {
        self.0.iter().copied()
    }
}

impl fmt::Display for Preferences {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, s) in self.0.iter().enumerate() {
            if k > 0 {
                f.write_str(">")?;
            }
            write!(f, "{}", s.0)?;
        }
        Ok(())
    }
}

/// Preference ranking plus qualifiers: everything about a student except
/// the tie-breakers.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StudentType {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub preferences: Preferences,
    pub qualifiers: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentProfile {
    pub preferences: Preferences,
    pub scores: Vec<f64>,
    pub qualifiers: Vec<u32>,
    pub lottery_draws: Vec<f64>,
}

impl StudentProfile {
    pub fn tiebreak(&self, school: &SchoolSpec) -> Option<f64> {
        match school.kind {
            SchoolKind::Lottery { lottery } => self.lottery_draws.get(lottery).copied(),
            SchoolKind::TestScore { test } => self.scores.get(test).copied(),
        }
    }
}

/// `V = (Q + H) / (qbar + 1)` where `H` is the school's tie-breaker.
pub fn priority_score(student: &StudentProfile, school: &SchoolSpec) -> Result<f64> {
    let h = student.tiebreak(school).ok_or_else(|| {
        Error::Config(format!("student lacks the tie-breaker used by school {}", school.id.0))
    })?;
    let q = *student.qualifiers.get(school.id.0).ok_or_else(|| {
        Error::Config(format!("student lacks a qualifier for school {}", school.id.0))
    })?;
    Ok(school.score_from(q, h))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketSpec {
    pub schools: Vec<SchoolSpec>,
    pub num_tests: usize,
    pub num_lotteries: usize,
}

impl MarketSpec {
    /// Validates and returns the market. Schools are sorted by id, and ids must be `0..M`.
    pub fn new(mut schools: Vec<SchoolSpec>, num_tests: usize, num_lotteries: usize) -> Result<Self> {
        schools.sort_by_key(|s| s.id);
        let m = MarketSpec {
            schools,
            num_tests,
            num_lotteries,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schools.is_empty() {
            return Err(Error::Config("market has no schools".into()));
        }
        for (k, s) in self.schools.iter().enumerate() {
            if s.id.0 != k {
                return Err(Error::Config(format!(
                    "school ids must be 0..{} without gaps or duplicates (found {} at position {k})",
                    self.schools.len(),
                    s.id.0
                )));
            }
            if s.capacity_share.is_nan() || s.capacity_share < 0.0 {
                return Err(Error::Config(format!("school {k}: capacity_share must be >= 0")));
            }
            match s.kind {
                SchoolKind::Lottery { lottery } if lottery >= self.num_lotteries => {
                    return Err(Error::Config(format!(
                        "school {k}: lottery index {lottery} out of range (L = {})",
                        self.num_lotteries
                    )))
                }
                SchoolKind::TestScore { test } if test >= self.num_tests => {
                    return Err(Error::Config(format!(
                        "school {k}: test index {test} out of range (T = {})",
                        self.num_tests
                    )))
                }
                _ => {}
            }
        }
        let s0 = &self.schools[0];
        if !s0.is_lottery() || !s0.capacity_share.is_infinite() {
            return Err(Error::Config(
                "school 0 must be a lottery school with unbounded capacity".into(),
            ));
        }
        Ok(())
    }

    pub fn num_schools(&self) -> usize {
        self.schools.len()
    }

    pub fn school(&self, s: SchoolId) -> &SchoolSpec {
        &self.schools[s.0]
    }

    pub fn school_ids(&self) -> impl Iterator<Item = SchoolId> {
        (0..self.schools.len()).map(SchoolId)
    }

    pub fn check_preferences(&self, prefs: &Preferences) -> std::result::Result<(), String> {
        let mut seen = vec![false; self.schools.len()];
        for s in prefs.iter() {
            if s.0 >= self.schools.len() {
                return Err(format!("preference list names unknown school {}", s.0));
            }
            if seen[s.0] {
                return Err(format!("school {} listed twice", s.0));
            }
            seen[s.0] = true;
        }
        if prefs.as_slice().last() != Some(&SchoolId::OUTSIDE) {
            return Err("preference list must end with school 0".into());
        }
        Ok(())
    }

    pub fn check_qualifiers(&self, qualifiers: &[u32]) -> std::result::Result<(), String> {
        if qualifiers.len() != self.schools.len() {
            return Err(format!(
                "expected {} qualifiers, found {}",
                self.schools.len(),
                qualifiers.len()
            ));
        }
        for (s, &q) in self.schools.iter().zip(qualifiers) {
            if q > s.qualifier_max {
                return Err(format!(
                    "qualifier {q} at school {} exceeds its maximum {}",
                    s.id.0, s.qualifier_max
                ));
            }
        }
        Ok(())
    }

    pub fn check_type(&self, ty: &StudentType) -> Result<()> {
        self.check_preferences(&ty.preferences)
            .and_then(|_| self.check_qualifiers(&ty.qualifiers))
            .map_err(Error::Config)
    }

    pub fn check_student(&self, index: usize, p: &StudentProfile) -> Result<()> {
        let bad = |reason: String| Error::InvalidProfile {
            student: index,
            reason,
        };
        self.check_preferences(&p.preferences).map_err(bad)?;
        self.check_qualifiers(&p.qualifiers).map_err(bad)?;
        if p.scores.len() != self.num_tests {
            return Err(bad(format!(
                "expected {} test scores, found {}",
                self.num_tests,
                p.scores.len()
            )));
        }
        if p.lottery_draws.len() != self.num_lotteries {
            return Err(bad(format!(
                "expected {} lottery draws, found {}",
                self.num_lotteries,
                p.lottery_draws.len()
            )));
        }
        let in_unit = |x: &f64| (0.0..=1.0).contains(x);
        if !p.scores.iter().all(in_unit) {
            return Err(bad("test scores must lie in [0, 1]".into()));
        }
        if !p.lottery_draws.iter().all(in_unit) {
            return Err(bad("lottery draws must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn check_students(&self, students: &[StudentProfile]) -> Result<()> {
        students
            .iter()
            .enumerate()
            .try_for_each(|(i, p)| self.check_student(i, p))
    }

    /// Priority of a student already validated against this market.
    pub(crate) fn score(&self, p: &StudentProfile, s: SchoolId) -> f64 {
        let school = &self.schools[s.0];
        let h = match school.kind {
            SchoolKind::Lottery { lottery } => p.lottery_draws[lottery],
            SchoolKind::TestScore { test } => p.scores[test],
        };
        school.score_from(p.qualifiers[s.0], h)
    }

    /// Returns a copy with an extra school appended that nobody has to rank.
    pub fn with_school(&self, school: SchoolSpec) -> Result<Self> {
        let mut schools = self.schools.clone();
        schools.push(school);
        MarketSpec::new(schools, self.num_tests, self.num_lotteries)
    }
}
