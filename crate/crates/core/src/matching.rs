//! Student-proposing deferred acceptance and cutoffs.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::{generate_population, DgpSpec};
use crate::error::{Error, Result};
use crate::market::{MarketSpec, SchoolId, StudentProfile};

/// Per-school cutoffs, `c_0 = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct CutoffVector(Vec<f64>);

impl CutoffVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Config("cutoff vector is empty".into()));
        }
        if values[0] != 0.0 {
            return Err(Error::Config("cutoff of school 0 must be 0".into()));
        }
        if let Some(bad) = values.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(Error::Config(format!("cutoff {bad} outside [0, 1]")));
        }
        Ok(CutoffVector(values))
    }

    pub fn zeros(num_schools: usize) -> Self {
        CutoffVector(vec![0.0; num_schools])
    }

    pub fn get(&self, s: SchoolId) -> f64 {
        self.0[s.0]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn check_market(&self, market: &MarketSpec) -> Result<()> {
        if self.0.len() != market.num_schools() {
            return Err(Error::Config(format!(
                "cutoff vector has {} entries for {} schools",
                self.0.len(),
                market.num_schools()
            )));
        }
        Ok(())
    }

    /// Largest absolute coordinate difference.
    pub fn max_abs_diff(&self, other: &CutoffVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl TryFrom<Vec<f64>> for CutoffVector {
    type Error = String;
    fn try_from(v: Vec<f64>) -> std::result::Result<Self, String> {
        CutoffVector::new(v).map_err(|e| e.to_string())
    }
}

impl From<CutoffVector> for Vec<f64> {
    fn from(c: CutoffVector) -> Self {
        c.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchResult {
    pub assignment: Vec<SchoolId>,
    pub cutoffs: CutoffVector,
    pub rounds: usize,
}

/// Heap key: larger means higher priority. Ties go to the lower student index.
#[derive(Clone, Copy, PartialEq)]
struct Key {
    score: f64,
    student: usize,
}

impl Eq for Key {}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.student.cmp(&self.student))
    }
}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Seat counts `floor(n * q*_s)`; `usize::MAX` for unbounded schools.
pub fn seat_counts(market: &MarketSpec, n: usize) -> Vec<usize> {
    market
        .schools
        .iter()
        .map(|s| s.seats(n).unwrap_or(usize::MAX))
        .collect()
}

/// Runs student-proposing DA with capacities `floor(n * q*_s)`.
pub fn run_da(market: &MarketSpec, students: &[StudentProfile], n: usize) -> Result<MatchResult> {
    market.check_students(students)?;
    let seats = seat_counts(market, n);
    let m = market.num_schools();
    let mut next = vec![0usize; students.len()];
    let mut held: Vec<BinaryHeap<Reverse<Key>>> = vec![BinaryHeap::new(); m];
    let mut proposing: Vec<usize> = (0..students.len()).collect();
    let cap = students.len().saturating_mul(m).max(1) + 1;
    let mut rounds = 0;
    let mut touched = vec![false; m];
    let mut touched_list = Vec::with_capacity(m);

    while !proposing.is_empty() {
        rounds += 1;
        if rounds > cap {
            return Err(Error::Invariant(format!("deferred acceptance exceeded {cap} stages")));
        }
        for &i in &proposing {
            let p = &students[i];
            let s = *p.preferences.as_slice().get(next[i]).ok_or_else(|| {
                Error::Invariant(format!("student {i} rejected by every listed school"))
            })?;
            held[s.0].push(Reverse(Key {
                score: market.score(p, s),
                student: i,
            }));
            if !touched[s.0] {
                touched[s.0] = true;
                touched_list.push(s.0);
            }
        }
        proposing.clear();
        touched_list.sort_unstable();
        for &s in &touched_list {
            touched[s] = false;
            while held[s].len() > seats[s] {
                let Reverse(k) = held[s].pop().expect("non-empty heap");
                next[k.student] += 1;
                proposing.push(k.student);
            }
        }
        touched_list.clear();
        proposing.sort_unstable();
    }

    let mut assignment = vec![SchoolId::OUTSIDE; students.len()];
    for (s, heap) in held.iter().enumerate() {
        for Reverse(k) in heap.iter() {
            assignment[k.student] = SchoolId(s);
        }
    }
    let cutoffs = extract_cutoffs(market, students, &assignment, n);
    Ok(MatchResult {
        assignment,
        cutoffs,
        rounds,
    })
}

/// Lowest matched priority at schools filled to capacity, 0 elsewhere.
/// A school with no seats gets cutoff 1.
pub fn extract_cutoffs(
    market: &MarketSpec,
    students: &[StudentProfile],
    assignment: &[SchoolId],
    n: usize,
) -> CutoffVector {
    let seats = seat_counts(market, n);
    let mut count = vec![0usize; market.num_schools()];
    let mut min_score = vec![f64::INFINITY; market.num_schools()];
    for (p, &s) in students.iter().zip(assignment) {
        count[s.0] += 1;
        min_score[s.0] = min_score[s.0].min(market.score(p, s));
    }
    let values = (0..market.num_schools())
        .map(|s| {
            if s == 0 || seats[s] == usize::MAX || count[s] < seats[s] {
                0.0
            } else if seats[s] == 0 {
                1.0
            } else {
                min_score[s]
            }
        })
        .collect();
    CutoffVector(values)
}

/// Favorite listed school whose cutoff the student clears.
pub fn assign_at_cutoffs(
    market: &MarketSpec,
    student: &StudentProfile,
    cutoffs: &CutoffVector,
) -> Result<SchoolId> {
    for s in student.preferences.iter() {
        let school = market
            .schools
            .get(s.0)
            .ok_or_else(|| Error::Config(format!("unknown school {}", s.0)))?;
        let c = *cutoffs
            .0
            .get(s.0)
            .ok_or_else(|| Error::Config(format!("no cutoff for school {}", s.0)))?;
        if crate::market::priority_score(student, school)? >= c {
            return Ok(s);
        }
    }
    Ok(SchoolId::OUTSIDE)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BlockingPair {
    pub student: usize,
    pub school: SchoolId,
}

/// Brute-force scan for student–school pairs that block `assignment`.
pub fn check_stability(
    market: &MarketSpec,
    students: &[StudentProfile],
    assignment: &[SchoolId],
    n: usize,
) -> Result<Vec<BlockingPair>> {
    market.check_students(students)?;
    if assignment.len() != students.len() {
        return Err(Error::Data("assignment and roster lengths differ".into()));
    }
    let seats = seat_counts(market, n);
    let m = market.num_schools();
    let mut count = vec![0usize; m];
    let mut min_score = vec![f64::INFINITY; m];
    for (p, &s) in students.iter().zip(assignment) {
        count[s.0] += 1;
        min_score[s.0] = min_score[s.0].min(market.score(p, s));
    }
    let mut out = Vec::new();
    for (i, p) in students.iter().enumerate() {
        let current = assignment[i];
        for s in p.preferences.iter() {
            if s == current {
                break;
            }
            let open = count[s.0] < seats[s.0];
            let outranks = count[s.0] > 0 && market.score(p, s) > min_score[s.0];
            if open || outranks {
                out.push(BlockingPair { student: i, school: s });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuumOptions {
    pub reference_n: usize,
    pub tolerance: f64,
    pub seed: u64,
    /// Independent draws per attempt.
    pub seeds_per_attempt: usize,
    /// Attempts before giving up; each retry doubles the population size.
    pub max_attempts: usize,
}

impl Default for ContinuumOptions {
    fn default() -> Self {
        ContinuumOptions {
            reference_n: 100_000,
            tolerance: 0.01,
            seed: 0,
            seeds_per_attempt: 3,
            max_attempts: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContinuumCutoffs {
    /// Seed-average of the final attempt.
    pub cutoffs: CutoffVector,
    pub converged: bool,
    /// Largest cross-seed spread of any cutoff in the final attempt.
    pub disagreement: f64,
    pub attempts: usize,
    pub population: usize,
    /// Share of final-attempt seeds with a zero cutoff, per school.
    pub zero_frequency: Vec<f64>,
    pub per_seed: Vec<CutoffVector>,
}

/// Approximates population cutoffs by running DA on large synthetic markets.
pub fn solve_continuum_cutoffs(dgp: &DgpSpec, opts: &ContinuumOptions) -> Result<ContinuumCutoffs> {
    dgp.validate()?;
    if opts.seeds_per_attempt < 2 || opts.max_attempts == 0 || opts.reference_n == 0 {
        return Err(Error::Config(
            "continuum solver needs reference_n > 0, >= 2 seeds per attempt and >= 1 attempt".into(),
        ));
    }
    let m = dgp.market.num_schools();
    let mut n = opts.reference_n;
    let mut seed_index = 0u64;
    for attempt in 1..=opts.max_attempts {
        let seeds: Vec<u64> = (0..opts.seeds_per_attempt as u64).map(|k| seed_index + k).collect();
        seed_index += opts.seeds_per_attempt as u64;
        let per_seed = seeds
            .par_iter()
            .map(|&k| {
                let pop = generate_population(dgp, n, crate::rng::derive_seed(opts.seed, k))?;
                Ok(run_da(&dgp.market, &pop.students, n)?.cutoffs)
            })
            .collect::<Result<Vec<CutoffVector>>>()?;
        let mut disagreement: f64 = 0.0;
        let mut mean = vec![0.0; m];
        let mut zero = vec![0.0; m];
        for s in 0..m {
            let vals: Vec<f64> = per_seed.iter().map(|c| c.0[s]).collect();
            let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            disagreement = disagreement.max(hi - lo);
            mean[s] = vals.iter().sum::<f64>() / vals.len() as f64;
            zero[s] = vals.iter().filter(|&&v| v == 0.0).count() as f64 / vals.len() as f64;
        }
        let converged = disagreement < opts.tolerance;
        if converged || attempt == opts.max_attempts {
            return Ok(ContinuumCutoffs {
                cutoffs: CutoffVector(mean),
                converged,
                disagreement,
                attempts: attempt,
                population: n,
                zero_frequency: zero,
                per_seed,
            });
        }
        n = n.saturating_mul(2);
    }
    unreachable!("loop returns on the final attempt")
}
