//! Monte Carlo experiments: cutoff concentration, CI coverage of the RD
//! estimator and the feasible-versus-oracle gap.
//!
//! Replication `r` at grid point `g` draws its population from
//! `derive_seed(seed, g * reps + r)`, so reports do not depend on the number
//! of threads.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::{generate_population, DgpSpec};
use crate::error::{Error, Result};
use crate::estimator::{estimate_rd_ate, oracle_estimate, true_rd_effect, BandwidthPolicy, RdPair, RateCheck};
use crate::matching::{assign_at_cutoffs, run_da, solve_continuum_cutoffs, ContinuumOptions, CutoffVector};
use crate::report::{fmt_sig, Table};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Cutoffs,
    Coverage,
    OracleGap,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Cutoffs => "cutoffs",
            Experiment::Coverage => "coverage",
            Experiment::OracleGap => "oracle-gap",
        }
    }
}

/// Grid file contents. Missing cutoffs are approximated with the continuum solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentGrid {
    pub n: Vec<usize>,
    #[serde(default)]
    pub bandwidth: Option<BandwidthPolicy>,
    #[serde(default)]
    pub pair: Option<RdPair>,
    #[serde(default)]
    pub cutoffs: Option<CutoffVector>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metric {
    pub name: String,
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: Option<f64>,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub pass: bool,
}

impl Check {
    fn within(name: impl Into<String>, value: Option<f64>, lo: Option<f64>, hi: Option<f64>) -> Self {
        let pass = value.is_some_and(|v| lo.is_none_or(|l| v >= l) && hi.is_none_or(|h| v <= h));
        Check {
            name: name.into(),
            value,
            lo,
            hi,
            pass,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub experiment: Experiment,
    pub seed: u64,
    pub reps: usize,
    pub n_grid: Vec<usize>,
    pub bandwidth: Option<BandwidthPolicy>,
    pub rate: Option<RateCheck>,
    pub pair: Option<RdPair>,
    pub population_cutoffs: CutoffVector,
    /// `"grid"` or `"continuum"`.
    pub cutoff_source: String,
    pub metrics: Vec<Metric>,
    pub checks: Vec<Check>,
    /// No variation to measure, e.g. every school undersubscribed.
    pub degenerate: bool,
    pub pass: bool,
    /// Wall-clock time; left out of the serialized report so reruns are byte-identical.
    #[serde(skip)]
    pub runtime_seconds: f64,
    #[serde(skip)]
    pub rows: Table,
}

impl ExperimentReport {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|m| m.name == name).and_then(|m| m.value)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Linear-interpolated sample quantile of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos.fract());
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile(&v, 0.5)
}

/// Least-squares slope of `ln y` on `ln x`; `None` if any `y` is not positive.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() < 2 || x.len() != y.len() || y.iter().any(|&v| v <= 0.0) {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

fn metric(name: impl Into<String>, value: f64) -> Metric {
    Metric {
        name: name.into(),
        value: value.is_finite().then_some(value),
    }
}

fn replicate<T: Send>(
    n_grid: &[usize],
    reps: usize,
    seed: u64,
    f: impl Fn(usize, u64) -> T + Sync,
) -> Vec<Vec<T>> {
    n_grid
        .iter()
        .enumerate()
        .map(|(g, &n)| {
            (0..reps)
                .into_par_iter()
                .map(|r| f(n, derive_seed(seed, (g * reps + r) as u64)))
                .collect()
        })
        .collect()
}

fn population_cutoffs(dgp: &DgpSpec, grid: &ExperimentGrid, seed: u64) -> Result<(CutoffVector, String)> {
    match &grid.cutoffs {
        Some(c) => {
            c.check_market(&dgp.market)?;
            Ok((c.clone(), "grid".into()))
        }
        None => {
            let opts = ContinuumOptions {
                seed: derive_seed(seed, u64::MAX - 1),
                ..ContinuumOptions::default()
            };
            Ok((solve_continuum_cutoffs(dgp, &opts)?.cutoffs, "continuum".into()))
        }
    }
}

fn check_inputs(dgp: &DgpSpec, grid: &ExperimentGrid, reps: usize) -> Result<()> {
    dgp.validate()?;
    if reps < 2 {
        return Err(Error::Config(format!("need at least 2 replications, got {reps}")));
    }
    if grid.n.is_empty() || grid.n.contains(&0) {
        return Err(Error::Config("grid needs at least one positive sample size".into()));
    }
    Ok(())
}

fn rd_inputs(dgp: &DgpSpec, grid: &ExperimentGrid) -> Result<(RdPair, BandwidthPolicy)> {
    let pair = grid
        .pair
        .ok_or_else(|| Error::Config("grid must name the RD pair as {\"preferred\": s1, \"other\": s0}".into()))?;
    for s in [pair.preferred, pair.other] {
        if s.0 >= dgp.market.num_schools() {
            return Err(Error::Config(format!("pair names unknown school {}", s.0)));
        }
    }
    Ok((pair, grid.bandwidth.unwrap_or_default()))
}

pub fn run_experiment(
    experiment: Experiment,
    dgp: &DgpSpec,
    grid: &ExperimentGrid,
    reps: usize,
    seed: u64,
) -> Result<ExperimentReport> {
    match experiment {
        Experiment::Cutoffs => experiment_cutoff_convergence(dgp, grid, reps, seed),
        Experiment::Coverage => experiment_coverage(dgp, grid, reps, seed),
        Experiment::OracleGap => experiment_oracle_gap(dgp, grid, reps, seed),
    }
}

/// Median over replications of `max_s |C_s,N - c_s|` at each `N`, and the
/// log-log slope of those medians against `N` (about -1/2 when cutoffs concentrate).
pub fn experiment_cutoff_convergence(
    dgp: &DgpSpec,
    grid: &ExperimentGrid,
    reps: usize,
    seed: u64,
) -> Result<ExperimentReport> {
    let start = Instant::now();
    check_inputs(dgp, grid, reps)?;
    let (c, source) = population_cutoffs(dgp, grid, seed)?;
    let runs = replicate(&grid.n, reps, seed, |n, s| -> Result<f64> {
        let pop = generate_population(dgp, n, s)?;
        Ok(run_da(&dgp.market, &pop.students, n)?.cutoffs.max_abs_diff(&c))
    });
    let mut rows = Table::new(["n", "rep", "max_abs_deviation"]);
    let mut metrics = Vec::new();
    let mut medians = Vec::new();
    for (&n, devs) in grid.n.iter().zip(runs) {
        let devs = devs.into_iter().collect::<Result<Vec<f64>>>()?;
        for (r, d) in devs.iter().enumerate() {
            rows.push([n.to_string(), r.to_string(), fmt_sig(*d)]);
        }
        let med = median(&devs);
        metrics.push(metric(format!("median_max_dev[n={n}]"), med));
        metrics.push(metric(format!("sqrt_n_median[n={n}]"), med * (n as f64).sqrt()));
        medians.push(med);
    }
    let degenerate = medians.iter().all(|&m| m == 0.0);
    let xs: Vec<f64> = grid.n.iter().map(|&n| n as f64).collect();
    let slope = log_log_slope(&xs, &medians);
    metrics.push(Metric {
        name: "log_log_slope".into(),
        value: slope,
    });
    let checks = if degenerate {
        Vec::new()
    } else {
        vec![Check::within("log_log_slope", slope, Some(-0.6), Some(-0.4))]
    };
    Ok(finish(
        Experiment::Cutoffs,
        grid,
        reps,
        seed,
        (c, source),
        metrics,
        checks,
        degenerate,
        rows,
        start,
    ))
}

/// Empirical coverage of the 95% interval for the RD target, with mean
/// standard error and bias, at each `N`.
pub fn experiment_coverage(dgp: &DgpSpec, grid: &ExperimentGrid, reps: usize, seed: u64) -> Result<ExperimentReport> {
    let start = Instant::now();
    check_inputs(dgp, grid, reps)?;
    let (pair, policy) = rd_inputs(dgp, grid)?;
    let (c, source) = population_cutoffs(dgp, grid, seed)?;
    let tau = true_rd_effect(dgp, pair, &c)?;
    let runs = replicate(&grid.n, reps, seed, |n, s| -> Result<Result<(f64, f64, bool)>> {
        let pop = generate_population(dgp, n, s)?;
        let m = run_da(&dgp.market, &pop.students, n)?;
        let y = pop.observed_outcomes(&m.assignment);
        Ok(estimate_rd_ate(&dgp.market, &pop.students, &y, pair, &m.cutoffs, policy)
            .map(|e| (e.tau_hat, e.se, e.covers(tau))))
    });
    let mut rows = Table::new(["n", "rep", "tau_hat", "se", "covers", "status"]);
    let mut metrics = vec![metric("tau_bar", tau)];
    let mut checks = Vec::new();
    for (&n, results) in grid.n.iter().zip(runs) {
        let mut ok = Vec::new();
        for (r, res) in results.into_iter().enumerate() {
            match res? {
                Ok((t, se, cov)) => {
                    rows.push([n.to_string(), r.to_string(), fmt_sig(t), fmt_sig(se), u8::from(cov).to_string(), "ok".into()]);
                    ok.push((t, se, cov));
                }
                Err(e) => rows.push([n.to_string(), r.to_string(), String::new(), String::new(), String::new(), e.to_string()]),
            }
        }
        let k = ok.len() as f64;
        let coverage = ok.iter().filter(|x| x.2).count() as f64 / k;
        let mean_se = ok.iter().map(|x| x.1).sum::<f64>() / k;
        let bias = ok.iter().map(|x| x.0).sum::<f64>() / k - tau;
        metrics.push(metric(format!("h[n={n}]"), policy.bandwidth(n)));
        metrics.push(metric(format!("coverage[n={n}]"), coverage));
        metrics.push(metric(format!("mean_se[n={n}]"), mean_se));
        metrics.push(metric(format!("bias[n={n}]"), bias));
        metrics.push(metric(format!("failed_reps[n={n}]"), (reps - ok.len()) as f64));
        checks.push(Check::within(format!("coverage[n={n}]"), coverage.is_finite().then_some(coverage), Some(0.90), Some(0.98)));
        let ratio = bias.abs() / mean_se;
        checks.push(Check::within(format!("abs_bias_over_mean_se[n={n}]"), ratio.is_finite().then_some(ratio), None, Some(0.5)));
    }
    Ok(finish(
        Experiment::Coverage,
        grid,
        reps,
        seed,
        (c, source),
        metrics,
        checks,
        false,
        rows,
        start,
    ))
}

/// Quantiles of `sqrt(N h) |tau_hat - tau_check|`, where `tau_check` runs on
/// the same draws at the population cutoffs with each student's outcome
/// under the assignment those cutoffs give. Also whether the median falls with `N`.
pub fn experiment_oracle_gap(dgp: &DgpSpec, grid: &ExperimentGrid, reps: usize, seed: u64) -> Result<ExperimentReport> {
    let start = Instant::now();
    check_inputs(dgp, grid, reps)?;
    let (pair, policy) = rd_inputs(dgp, grid)?;
    let (c, source) = population_cutoffs(dgp, grid, seed)?;
    let runs = replicate(&grid.n, reps, seed, |n, s| -> Result<Result<(f64, f64, f64)>> {
        let pop = generate_population(dgp, n, s)?;
        let m = run_da(&dgp.market, &pop.students, n)?;
        let y = pop.observed_outcomes(&m.assignment);
        let at_c = pop
            .students
            .iter()
            .map(|st| assign_at_cutoffs(&dgp.market, st, &c))
            .collect::<Result<Vec<_>>>()?;
        let y_c = pop.observed_outcomes(&at_c);
        let both = estimate_rd_ate(&dgp.market, &pop.students, &y, pair, &m.cutoffs, policy).and_then(|f| {
            oracle_estimate(&dgp.market, &pop.students, &y_c, pair, &c, policy).map(|o| (f.tau_hat, o.tau_hat))
        });
        Ok(both.map(|(f, o)| (f, o, ((n as f64) * policy.bandwidth(n)).sqrt() * (f - o).abs())))
    });
    let mut rows = Table::new(["n", "rep", "tau_hat", "tau_oracle", "scaled_gap", "status"]);
    let mut metrics = Vec::new();
    let mut medians = Vec::new();
    for (&n, results) in grid.n.iter().zip(runs) {
        let mut gaps = Vec::new();
        for (r, res) in results.into_iter().enumerate() {
            match res? {
                Ok((f, o, g)) => {
                    rows.push([n.to_string(), r.to_string(), fmt_sig(f), fmt_sig(o), fmt_sig(g), "ok".into()]);
                    gaps.push(g);
                }
                Err(e) => rows.push([n.to_string(), r.to_string(), String::new(), String::new(), String::new(), e.to_string()]),
            }
        }
        gaps.sort_by(f64::total_cmp);
        let h = policy.bandwidth(n);
        for (label, p) in [("q25", 0.25), ("median", 0.5), ("q75", 0.75), ("q90", 0.9)] {
            metrics.push(metric(format!("gap_{label}[n={n}]"), quantile(&gaps, p)));
        }
        metrics.push(metric(format!("bias_scale[n={n}]"), ((n as f64) * h).sqrt() * h * h));
        metrics.push(metric(format!("failed_reps[n={n}]"), (reps - gaps.len()) as f64));
        medians.push(quantile(&gaps, 0.5));
    }
    let worst_rise = medians
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    let worst_rise = if medians.len() < 2 { 0.0 } else { worst_rise };
    let checks = vec![Check::within(
        "median_gap_non_increasing",
        worst_rise.is_finite().then_some(worst_rise),
        None,
        Some(0.0),
    )];
    Ok(finish(
        Experiment::OracleGap,
        grid,
        reps,
        seed,
        (c, source),
        metrics,
        checks,
        false,
        rows,
        start,
    ))
}

#[allow(clippy::too_many_arguments)]
fn finish(
    experiment: Experiment,
    grid: &ExperimentGrid,
    reps: usize,
    seed: u64,
    (population_cutoffs, cutoff_source): (CutoffVector, String),
    metrics: Vec<Metric>,
    checks: Vec<Check>,
    degenerate: bool,
    rows: Table,
    start: Instant,
) -> ExperimentReport {
    let rd = experiment != Experiment::Cutoffs;
    let bandwidth = rd.then(|| grid.bandwidth.unwrap_or_default());
    ExperimentReport {
        experiment,
        seed,
        reps,
        n_grid: grid.n.clone(),
        bandwidth,
        rate: bandwidth.map(|b| b.rate_check()),
        pair: if rd { grid.pair } else { None },
        population_cutoffs,
        cutoff_source,
        pass: checks.iter().all(|c| c.pass),
        metrics,
        checks,
        degenerate,
        runtime_seconds: start.elapsed().as_secs_f64(),
        rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::example;
    use crate::market::{MarketSpec, Preferences, SchoolSpec};
    use crate::dgp::{LotteryLaw, Noise, TypeSpec};

    #[test]
    fn quantiles_and_slope() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        let x = [1e3, 1e4, 1e5];
        let y: Vec<f64> = x.iter().map(|n: &f64| 3.0 * n.powf(-0.5)).collect();
        assert!((log_log_slope(&x, &y).unwrap() + 0.5).abs() < 1e-12);
        assert_eq!(log_log_slope(&x, &[0.0, 0.0, 0.0]), None);
    }

    #[test]
    fn undersubscribed_market_is_degenerate() {
        let market = MarketSpec::new(
            vec![
                SchoolSpec::lottery(0, f64::INFINITY, 0, 0),
                SchoolSpec::lottery(1, 2.0, 0, 0),
            ],
            0,
            1,
        )
        .unwrap();
        let dgp = DgpSpec {
            market,
            types: vec![TypeSpec {
                label: None,
                weight: 1.0,
                preferences: Preferences::from_indices(&[1, 0]),
                qualifiers: vec![0, 0],
                densities: vec![],
                outcomes: vec![],
                noise: Noise::Gaussian { sd: 0.0 },
            }],
            lottery_law: LotteryLaw::IndependentUniform,
        };
        let grid = ExperimentGrid {
            n: vec![100, 1000],
            bandwidth: None,
            pair: None,
            cutoffs: Some(CutoffVector::zeros(2)),
        };
        let rep = experiment_cutoff_convergence(&dgp, &grid, 5, 1).unwrap();
        assert!(rep.degenerate);
        assert_eq!(rep.metric("log_log_slope"), None);
        assert!(rep.checks.is_empty());
    }

    #[test]
    fn reports_are_reproducible() {
        let grid = ExperimentGrid {
            n: vec![500, 2000],
            bandwidth: None,
            pair: None,
            cutoffs: Some(example::cutoffs()),
        };
        let a = experiment_cutoff_convergence(&example::dgp(), &grid, 8, 7).unwrap();
        let b = experiment_cutoff_convergence(&example::dgp(), &grid, 8, 7).unwrap();
        assert_eq!(a.rows.to_tsv(), b.rows.to_tsv());
        assert_eq!(crate::report::to_json(&a).unwrap(), crate::report::to_json(&b).unwrap());
    }

    #[test]
    fn gap_vanishes_when_cutoffs_are_known() {
        let dgp = example::rd_dgp(1.0);
        let pair = RdPair::new(example::RD_PAIR.0, example::RD_PAIR.1);
        let pop = generate_population(&dgp, 4000, 3).unwrap();
        let m = run_da(&dgp.market, &pop.students, 4000).unwrap();
        let y = pop.observed_outcomes(&m.assignment);
        let c = m.cutoffs.clone();
        let f = estimate_rd_ate(&dgp.market, &pop.students, &y, pair, &m.cutoffs, BandwidthPolicy::default()).unwrap();
        let o = oracle_estimate(&dgp.market, &pop.students, &y, pair, &c, BandwidthPolicy::default()).unwrap();
        assert_eq!(f.tau_hat.to_bits(), o.tau_hat.to_bits());
    }

    #[test]
    fn rd_experiments_need_a_pair() {
        let grid = ExperimentGrid {
            n: vec![1000],
            bandwidth: None,
            pair: None,
            cutoffs: Some(example::cutoffs()),
        };
        let err = experiment_coverage(&example::rd_dgp(1.0), &grid, 4, 1).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn small_coverage_run_is_sane() {
        let grid = ExperimentGrid {
            n: vec![5000],
            bandwidth: None,
            pair: Some(RdPair::new(example::RD_PAIR.0, example::RD_PAIR.1)),
            cutoffs: Some(example::cutoffs()),
        };
        let rep = experiment_coverage(&example::rd_dgp(1.0), &grid, 40, 11).unwrap();
        let cov = rep.metric("coverage[n=5000]").unwrap();
        assert!(cov > 0.75, "coverage {cov}");
        assert_eq!(rep.metric("failed_reps[n=5000]"), Some(0.0));
        assert!((rep.metric("tau_bar").unwrap() - 1.0).abs() < 1e-12);
    }
}
