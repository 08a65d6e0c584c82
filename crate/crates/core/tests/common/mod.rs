//! Random small markets and students shared by the integration suites.

#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;
use schoolrd::rng::SimRng;
use schoolrd::{MarketSpec, Preferences, SchoolId, SchoolSpec, StudentProfile, StudentType};

pub struct MarketShape {
    pub max_schools: usize,
    pub max_tests: usize,
    pub max_lotteries: usize,
    pub max_qualifier: u32,
    /// Chance that a non-outside school admits by lottery.
    pub lottery_share: f64,
}

impl Default for MarketShape {
    fn default() -> Self {
        MarketShape {
            max_schools: 5,
            max_tests: 2,
            max_lotteries: 2,
            max_qualifier: 1,
            lottery_share: 0.5,
        }
    }
}

/// School 0 is the unbounded outside option; the others get random kinds,
/// capacities in [0.05, 0.5] and qualifier ranges.
pub fn random_market(rng: &mut SimRng, shape: &MarketShape) -> MarketSpec {
    let m = rng.random_range(2..=shape.max_schools);
    let tests = rng.random_range(1..=shape.max_tests);
    let lotteries = rng.random_range(1..=shape.max_lotteries);
    let mut schools = vec![SchoolSpec::lottery(0, f64::INFINITY, 0, 0)];
    for id in 1..m {
        let cap = rng.random_range(0.05..0.5);
        let qmax = rng.random_range(0..=shape.max_qualifier);
        schools.push(if rng.random_bool(shape.lottery_share) {
            SchoolSpec::lottery(id, cap, rng.random_range(0..lotteries), qmax)
        } else {
            SchoolSpec::test_score(id, cap, rng.random_range(0..tests), qmax)
        });
    }
    MarketSpec::new(schools, tests, lotteries).unwrap()
}

/// A random subset of the real schools in random order, then the outside option.
pub fn random_preferences(rng: &mut SimRng, market: &MarketSpec) -> Preferences {
    let mut ranked: Vec<SchoolId> = (1..market.num_schools())
        .map(SchoolId)
        .filter(|_| rng.random_bool(0.75))
        .collect();
    ranked.shuffle(rng);
    ranked.push(SchoolId::OUTSIDE);
    Preferences::new(ranked)
}

pub fn random_qualifiers(rng: &mut SimRng, market: &MarketSpec) -> Vec<u32> {
    market
        .schools
        .iter()
        .map(|s| rng.random_range(0..=s.qualifier_max))
        .collect()
}

pub fn random_type(rng: &mut SimRng, market: &MarketSpec) -> StudentType {
    StudentType {
        label: None,
        preferences: random_preferences(rng, market),
        qualifiers: random_qualifiers(rng, market),
    }
}

pub fn student_of(ty: &StudentType, scores: Vec<f64>, draws: Vec<f64>) -> StudentProfile {
    StudentProfile {
        preferences: ty.preferences.clone(),
        scores,
        qualifiers: ty.qualifiers.clone(),
        lottery_draws: draws,
    }
}

pub fn random_students(rng: &mut SimRng, market: &MarketSpec, n: usize) -> Vec<StudentProfile> {
    (0..n)
        .map(|_| {
            let ty = random_type(rng, market);
            let scores = (0..market.num_tests).map(|_| rng.random::<f64>()).collect();
            let draws = (0..market.num_lotteries).map(|_| rng.random::<f64>()).collect();
            student_of(&ty, scores, draws)
        })
        .collect()
}
