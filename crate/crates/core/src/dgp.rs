//! Synthetic superpopulations: type mix, score densities, lotteries and
//! potential outcomes.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::{Normal, Pareto};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market::{MarketSpec, Preferences, SchoolId, StudentProfile, StudentType};
use crate::rng::{stream_rng, SimRng};

/// Score density on [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Density {
    #[default]
    Uniform,
    /// `f(r) = 1 + slope * (r - 1/2)`, positive for `|slope| < 2`.
    Linear { slope: f64 },
}

impl Density {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Density::Uniform => Ok(()),
            Density::Linear { slope } if slope.is_finite() && slope.abs() < 2.0 => Ok(()),
            Density::Linear { slope } => Err(Error::Config(format!(
                "linear density slope {slope} must satisfy |slope| < 2"
            ))),
        }
    }

    pub fn pdf(&self, r: f64) -> f64 {
        if !(0.0..=1.0).contains(&r) {
            return 0.0;
        }
        match *self {
            Density::Uniform => 1.0,
            Density::Linear { slope } => 1.0 + slope * (r - 0.5),
        }
    }

    pub fn cdf(&self, r: f64) -> f64 {
        let r = r.clamp(0.0, 1.0);
        match *self {
            Density::Uniform => r,
            Density::Linear { slope } => r + 0.5 * slope * (r * r - r),
        }
    }

    pub fn quantile(&self, u: f64) -> f64 {
        match *self {
            Density::Uniform => u,
            Density::Linear { slope } => {
                // a r^2 + b r = u with a = slope/2, b = 1 - slope/2.
                let a = 0.5 * slope;
                let b = 1.0 - a;
                (2.0 * u / (b + (b * b + 4.0 * a * u).sqrt())).clamp(0.0, 1.0)
            }
        }
    }

    pub fn sup(&self) -> f64 {
        match *self {
            Density::Uniform => 1.0,
            Density::Linear { slope } => 1.0 + 0.5 * slope.abs(),
        }
    }

    pub fn inf(&self) -> f64 {
        match *self {
            Density::Uniform => 1.0,
            Density::Linear { slope } => 1.0 - 0.5 * slope.abs(),
        }
    }

    /// `E[g(R) | a <= R <= b]`, exact for polynomials `g` of degree <= 3.
    pub fn conditional_mean(&self, a: f64, b: f64, g: impl Fn(f64) -> f64) -> Option<f64> {
        let mass = self.cdf(b) - self.cdf(a);
        if mass <= 0.0 {
            return None;
        }
        Some(gauss_legendre(a, b, |r| g(r) * self.pdf(r)) / mass)
    }
}

/// Three-point Gauss–Legendre rule, exact through degree 5.
pub(crate) fn gauss_legendre(a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    let x = (0.6f64).sqrt();
    let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
    half * (5.0 / 9.0 * f(mid - half * x) + 8.0 / 9.0 * f(mid) + 5.0 / 9.0 * f(mid + half * x))
}

/// Additively separable cubic mean: `intercept + sum_t (b1 r_t + b2 r_t^2 + b3 r_t^3)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct CubicMean {
    #[serde(default)]
    pub intercept: f64,
    /// One `[b1, b2, b3]` per test; missing tests contribute nothing.
    #[serde(default)]
    pub terms: Vec<[f64; 3]>,
}

impl CubicMean {
    pub fn constant(k: f64) -> Self {
        CubicMean {
            intercept: k,
            terms: Vec::new(),
        }
    }

    pub fn term(&self, t: usize, r: f64) -> f64 {
        match self.terms.get(t) {
            Some([b1, b2, b3]) => r * (b1 + r * (b2 + r * b3)),
            None => 0.0,
        }
    }

    pub fn eval(&self, r: &[f64]) -> f64 {
        self.intercept + r.iter().enumerate().map(|(t, &x)| self.term(t, x)).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Noise {
    Gaussian { sd: f64 },
    /// Pareto(scale, shape) recentred to mean zero; finite variance needs shape > 2.
    ShiftedPareto { shape: f64, scale: f64 },
}

impl Default for Noise {
    fn default() -> Self {
        Noise::Gaussian { sd: 1.0 }
    }
}

impl Noise {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Noise::Gaussian { sd } if sd.is_finite() && sd >= 0.0 => Ok(()),
            Noise::ShiftedPareto { shape, scale } if shape > 2.0 && scale > 0.0 && scale.is_finite() => {
                Ok(())
            }
            other => Err(Error::Config(format!("invalid noise law {other:?}"))),
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Noise::Gaussian { sd } => sd * sd,
            Noise::ShiftedPareto { shape, scale } => {
                scale * scale * shape / ((shape - 1.0) * (shape - 1.0) * (shape - 2.0))
            }
        }
    }

    fn sample(&self, rng: &mut SimRng) -> f64 {
        match *self {
            Noise::Gaussian { sd } => {
                if sd == 0.0 {
                    0.0
                } else {
                    Normal::new(0.0, sd).expect("validated sd").sample(rng)
                }
            }
            Noise::ShiftedPareto { shape, scale } => {
                let x: f64 = Pareto::new(scale, shape).expect("validated pareto").sample(rng);
                x - scale * shape / (shape - 1.0)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub weight: f64,
    pub preferences: Preferences,
    pub qualifiers: Vec<u32>,
    /// One per test; empty means uniform everywhere.
    #[serde(default)]
    pub densities: Vec<Density>,
    /// One per school; empty means zero means.
    #[serde(default)]
    pub outcomes: Vec<CubicMean>,
    #[serde(default)]
    pub noise: Noise,
}

impl TypeSpec {
    pub fn density(&self, t: usize) -> Density {
        self.densities.get(t).copied().unwrap_or_default()
    }

    pub fn mean(&self, s: SchoolId) -> CubicMean {
        self.outcomes.get(s.0).cloned().unwrap_or_default()
    }

    pub fn student_type(&self) -> StudentType {
        StudentType {
            label: self.label.clone(),
            preferences: self.preferences.clone(),
            qualifiers: self.qualifiers.clone(),
        }
    }
}

/// Lottery law. Only independent uniform draws are supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LotteryLaw {
    #[default]
    IndependentUniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub market: MarketSpec,
    pub types: Vec<TypeSpec>,
    #[serde(default)]
    pub lottery_law: LotteryLaw,
}

impl DgpSpec {
    pub fn validate(&self) -> Result<()> {
        self.market.validate()?;
        if self.types.is_empty() {
            return Err(Error::Config("DGP has no student types".into()));
        }
        let total: f64 = self.types.iter().map(|t| t.weight).sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Config("type weights must sum to a positive number".into()));
        }
        for (k, t) in self.types.iter().enumerate() {
            let ctx = |e: Error| Error::Config(format!("type {k}: {e}"));
            if !(t.weight >= 0.0 && t.weight.is_finite()) {
                return Err(Error::Config(format!("type {k}: weight must be >= 0")));
            }
            self.market.check_type(&t.student_type()).map_err(ctx)?;
            if !t.densities.is_empty() && t.densities.len() != self.market.num_tests {
                return Err(Error::Config(format!(
                    "type {k}: expected {} densities, found {}",
                    self.market.num_tests,
                    t.densities.len()
                )));
            }
            for d in &t.densities {
                d.validate().map_err(ctx)?;
            }
            if !t.outcomes.is_empty() && t.outcomes.len() != self.market.num_schools() {
                return Err(Error::Config(format!(
                    "type {k}: expected {} outcome means, found {}",
                    self.market.num_schools(),
                    t.outcomes.len()
                )));
            }
            t.noise.validate().map_err(ctx)?;
        }
        Ok(())
    }

    /// Type weights normalized to sum to one.
    pub fn type_probabilities(&self) -> Vec<f64> {
        let total: f64 = self.types.iter().map(|t| t.weight).sum();
        self.types.iter().map(|t| t.weight / total).collect()
    }
}

/// Students plus oracle potential outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub students: Vec<StudentProfile>,
    pub type_index: Vec<usize>,
    /// `potential[i][s]` is student i's outcome at school s.
    pub potential: Vec<Vec<f64>>,
}

impl Population {
    pub fn len(&self) -> usize {
        self.students.len()
    }

    pub fn is_empty(&self) -> bool {
        self.students.is_empty()
    }

    pub fn observed_outcomes(&self, assignment: &[SchoolId]) -> Vec<f64> {
        self.potential
            .iter()
            .zip(assignment)
            .map(|(y, s)| y[s.0])
            .collect()
    }
}

/// Draws `n` i.i.d. students; identical `(dgp, n, seed)` give identical output.
pub fn generate_population(dgp: &DgpSpec, n: usize, seed: u64) -> Result<Population> {
    let mut rng = stream_rng(seed, 0);
    generate_population_with(dgp, n, &mut rng)
}

pub fn generate_population_with(dgp: &DgpSpec, n: usize, rng: &mut SimRng) -> Result<Population> {
    dgp.validate()?;
    let picker = WeightedIndex::new(dgp.types.iter().map(|t| t.weight))
        .map_err(|e| Error::Config(format!("type weights: {e}")))?;
    let tests = dgp.market.num_tests;
    let lotteries = dgp.market.num_lotteries;
    let m = dgp.market.num_schools();
    let means: Vec<Vec<CubicMean>> = dgp
        .types
        .iter()
        .map(|t| dgp.market.school_ids().map(|s| t.mean(s)).collect())
        .collect();

    let mut students = Vec::with_capacity(n);
    let mut type_index = Vec::with_capacity(n);
    let mut potential = Vec::with_capacity(n);
    for _ in 0..n {
        let k = picker.sample(rng);
        let spec = &dgp.types[k];
        let scores: Vec<f64> = (0..tests)
            .map(|t| spec.density(t).quantile(rng.random::<f64>()))
            .collect();
        let draws: Vec<f64> = (0..lotteries).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = (0..m)
            .map(|s| means[k][s].eval(&scores) + spec.noise.sample(rng))
            .collect();
        students.push(StudentProfile {
            preferences: spec.preferences.clone(),
            scores,
            qualifiers: spec.qualifiers.clone(),
            lottery_draws: draws,
        });
        type_index.push(k);
        potential.push(y);
    }
    Ok(Population {
        students,
        type_index,
        potential,
    })
}
