//! Command-line interface. `main` parses arguments and calls [`run`].
//!
//! Every command collects its outputs in memory and writes them to `--out`
//! only after it has succeeded.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::diagnostic::{
    linear_estimator_weights, propensity_design, rd_flags, rd_weight_bounds, rd_weight_bounds_by_regression,
};
use crate::error::{Error, ErrorKind, Result};
use crate::estimator::{band_rows, estimate_rd_ate, BandwidthPolicy, RdPair, SelectionContext};
use crate::example;
use crate::experiments::{run_experiment, Experiment, ExperimentGrid};
use crate::io::{
    parse_school_list, parse_school_pair, read_census, read_cutoffs, read_dgp, read_json, read_market, read_roster,
    Artifacts,
};
use crate::market::{MarketSpec, SchoolId, StudentType};
use crate::matching::{check_stability, run_da, seat_counts, solve_continuum_cutoffs, ContinuumOptions, CutoffVector};
use crate::propensity::{student_local_propensity, BandPartition};
use crate::report::{fmt_sig, Table};
use crate::tables;
use crate::validate::validate_market;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_DEGENERATE: i32 = 4;
pub const EXIT_INTERNAL: i32 = 70;

pub fn exit_code(e: &Error) -> i32 {
    match e.kind() {
        ErrorKind::Config => EXIT_CONFIG,
        ErrorKind::Data => EXIT_DATA,
        ErrorKind::Degenerate => EXIT_DEGENERATE,
    }
}

#[derive(Debug, Parser)]
#[command(name = "schoolrd", version, about = "School-choice matching, identification and RD estimation")]
pub struct Cli {
    /// Worker threads for parallel sections (defaults to all cores).
    #[arg(long, global = true, env = "SCHOOLRD_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct OutDir {
    /// Directory for output files; created if missing.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct Example {
    /// Use the built-in four-school worked example instead of input files.
    #[arg(long)]
    pub example_paper: bool,
    #[arg(long, required_unless_present = "example_paper")]
    pub market: Option<PathBuf>,
    /// JSON array of population cutoffs, one per school.
    #[arg(long, required_unless_present = "example_paper")]
    pub cutoffs: Option<PathBuf>,
    /// JSON array of student types `{label, preferences, qualifiers}`.
    #[arg(long, required_unless_present = "example_paper")]
    pub census: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DesignSpec {
    /// Regress Y on `D - psi`.
    Propensity,
    /// Regress Y on `D`, a constant and `psi`.
    Linear,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run deferred acceptance on a roster.
    Match {
        #[arg(long)]
        market: PathBuf,
        #[arg(long)]
        roster: PathBuf,
        /// Seed for lottery draws missing from the roster.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: OutDir,
    },
    /// Sample cutoffs of a roster, or population cutoffs of a DGP with `--continuum`.
    Cutoffs {
        #[arg(long)]
        continuum: bool,
        #[arg(long)]
        dgp: Option<PathBuf>,
        #[arg(long)]
        market: Option<PathBuf>,
        #[arg(long)]
        roster: Option<PathBuf>,
        #[arg(long, default_value_t = 100_000)]
        reference_n: usize,
        #[arg(long, default_value_t = 0.01)]
        tolerance: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: OutDir,
    },
    /// Eligibility sets and identified contrasts per student type.
    Eligibility {
        #[command(flatten)]
        input: Example,
        #[command(flatten)]
        out: OutDir,
    },
    /// Local propensity table and the propensity-regression weight decomposition.
    Propensity {
        #[command(flatten)]
        input: Example,
        /// DGP for the weight decomposition (the worked example has its own).
        #[arg(long)]
        dgp: Option<PathBuf>,
        /// Treated schools, e.g. `s2,s3`.
        #[arg(long, default_value = "s2,s3")]
        treated: String,
        #[arg(long, default_value_t = 0.05)]
        h: f64,
        /// Comma-separated bandwidths to sweep, e.g. `0.1,0.05,0.02,0.01`.
        #[arg(long)]
        h_grid: Option<String>,
        /// Test carrying the bands.
        #[arg(long, default_value_t = 0)]
        test: usize,
        #[command(flatten)]
        out: OutDir,
    },
    /// Flag students exposed to RD variation and bound the weight on them.
    Diagnose {
        #[arg(long)]
        market: PathBuf,
        #[arg(long)]
        roster: PathBuf,
        #[arg(long)]
        treated: String,
        #[arg(long)]
        h: f64,
        #[arg(long, value_enum, default_value_t = DesignSpec::Propensity)]
        design: DesignSpec,
        /// Cutoffs to flag against; defaults to the roster's own DA cutoffs.
        #[arg(long)]
        cutoffs: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: OutDir,
    },
    /// Local-linear RD estimate of the contrast between a test school and a less preferred school.
    EstimateRd {
        #[arg(long)]
        market: PathBuf,
        /// Roster with an `outcome` column.
        #[arg(long)]
        roster: PathBuf,
        /// `s1,s0`: the test school first.
        #[arg(long)]
        pair: String,
        /// A number, `rate:KAPPA,D` for `KAPPA * N^-D`, or `default` for `N^-0.3`.
        #[arg(long, default_value = "default")]
        h: String,
        /// Cutoffs to estimate at; defaults to the roster's own DA cutoffs.
        #[arg(long)]
        cutoffs: Option<PathBuf>,
        #[command(flatten)]
        out: OutDir,
    },
    /// Monte Carlo experiments.
    Simulate {
        #[arg(long, value_enum)]
        experiment: ExperimentArg,
        #[arg(long)]
        dgp: PathBuf,
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        reps: usize,
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        out: OutDir,
    },
    /// Check a DGP and its cutoffs against the estimator's assumptions.
    Validate {
        #[arg(long)]
        dgp: PathBuf,
        /// Population cutoffs; solved by simulation if absent (needs `--seed`).
        #[arg(long)]
        cutoffs: Option<PathBuf>,
        #[arg(long)]
        pair: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        out: OutDir,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExperimentArg {
    Cutoffs,
    Coverage,
    OracleGap,
}

impl From<ExperimentArg> for Experiment {
    fn from(a: ExperimentArg) -> Self {
        match a {
            ExperimentArg::Cutoffs => Experiment::Cutoffs,
            ExperimentArg::Coverage => Experiment::Coverage,
            ExperimentArg::OracleGap => Experiment::OracleGap,
        }
    }
}

/// What a command produced: files to write and a short summary for stdout.
pub struct Outcome {
    pub dir: PathBuf,
    pub artifacts: Artifacts,
    pub summary: String,
}

pub fn parse_bandwidth(text: &str) -> Result<BandwidthPolicy> {
    let text = text.trim();
    if text == "default" {
        return Ok(BandwidthPolicy::default());
    }
    if let Some(rest) = text.strip_prefix("rate:") {
        let parts: Vec<&str> = rest.split(',').collect();
        if let [k, d] = parts.as_slice() {
            let kappa = k.trim().parse::<f64>();
            let d = d.trim().parse::<f64>();
            if let (Ok(kappa), Ok(d)) = (kappa, d) {
                if kappa > 0.0 && d > 0.0 {
                    return Ok(BandwidthPolicy::Rate { kappa, d });
                }
            }
        }
        return Err(Error::Config(format!("bad rate policy `{text}`; expected rate:KAPPA,D")));
    }
    match text.parse::<f64>() {
        Ok(h) if h > 0.0 && h.is_finite() => Ok(BandwidthPolicy::Fixed(h)),
        _ => Err(Error::Config(format!("bad bandwidth `{text}`"))),
    }
}

fn parse_h_grid(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .ok()
                .filter(|h| *h > 0.0)
                .ok_or_else(|| Error::Config(format!("bad bandwidth `{p}` in --h-grid")))
        })
        .collect()
}

fn check_schools(market: &MarketSpec, schools: &[SchoolId]) -> Result<()> {
    for s in schools {
        if s.0 >= market.num_schools() {
            return Err(Error::Config(format!("unknown school {s}")));
        }
    }
    Ok(())
}

fn load_example(input: &Example) -> Result<(MarketSpec, CutoffVector, Vec<StudentType>)> {
    if input.example_paper {
        return Ok((example::market(), example::cutoffs(), example::census()));
    }
    let path = |p: &Option<PathBuf>, name: &str| {
        p.clone()
            .ok_or_else(|| Error::Config(format!("--{name} is required without --example-paper")))
    };
    let market = read_market(&path(&input.market, "market")?)?;
    let c = read_cutoffs(&path(&input.cutoffs, "cutoffs")?, &market)?;
    let census = read_census(&path(&input.census, "census")?, &market)?;
    Ok((market, c, census))
}

#[derive(Serialize)]
struct MatchSummary<'a> {
    n: usize,
    cutoffs: &'a CutoffVector,
    seats: Vec<Option<usize>>,
    enrolled: Vec<usize>,
    rounds: usize,
    blocking_pairs: usize,
    draws_generated: bool,
}

fn cmd_match(market: &Path, roster: &Path, seed: Option<u64>, out: &Path) -> Result<Outcome> {
    let market = read_market(market)?;
    let roster = read_roster(roster, &market, seed)?;
    let n = roster.len();
    let m = run_da(&market, &roster.students, n)?;
    let blocking = check_stability(&market, &roster.students, &m.assignment, n)?;
    let mut table = Table::new(["id", "school"]);
    let mut enrolled = vec![0; market.num_schools()];
    for (id, s) in roster.ids.iter().zip(&m.assignment) {
        table.push([id.clone(), s.to_string()]);
        enrolled[s.0] += 1;
    }
    let seats = seat_counts(&market, n);
    let summary = MatchSummary {
        n,
        cutoffs: &m.cutoffs,
        seats: market
            .schools
            .iter()
            .zip(&seats)
            .map(|(s, &k)| s.seats(n).map(|_| k))
            .collect(),
        enrolled,
        rounds: m.rounds,
        blocking_pairs: blocking.len(),
        draws_generated: roster.draws_generated,
    };
    let mut a = Artifacts::new();
    a.add("assignment.csv", table.to_csv()?);
    a.add_json("match.json", &summary)?;
    let text = format!(
        "matched {n} students in {} rounds; cutoffs {}",
        m.rounds,
        fmt_list(m.cutoffs.as_slice())
    );
    Ok(Outcome {
        dir: out.to_path_buf(),
        artifacts: a,
        summary: text,
    })
}

fn fmt_list(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|&x| fmt_sig(x)).collect();
    format!("({})", parts.join(", "))
}

fn need_seed(seed: Option<u64>, what: &str) -> Result<u64> {
    seed.ok_or_else(|| Error::Config(format!("{what} is stochastic; pass --seed")))
}

#[allow(clippy::too_many_arguments)]
fn cmd_cutoffs(
    continuum: bool,
    dgp: Option<&Path>,
    market: Option<&Path>,
    roster: Option<&Path>,
    reference_n: usize,
    tolerance: f64,
    seed: Option<u64>,
    out: &Path,
) -> Result<Outcome> {
    let mut a = Artifacts::new();
    let summary;
    if continuum {
        let dgp = read_dgp(dgp.ok_or_else(|| Error::Config("--continuum needs --dgp".into()))?)?;
        let opts = ContinuumOptions {
            reference_n,
            tolerance,
            seed: need_seed(seed, "the continuum solver")?,
            ..ContinuumOptions::default()
        };
        let res = solve_continuum_cutoffs(&dgp, &opts)?;
        summary = format!(
            "continuum cutoffs {} ({}converged, spread {}, N = {})",
            fmt_list(res.cutoffs.as_slice()),
            if res.converged { "" } else { "not " },
            fmt_sig(res.disagreement),
            res.population
        );
        a.add_json("continuum.json", &res)?;
        a.add_json("cutoffs.json", &res.cutoffs)?;
    } else {
        let market = read_market(market.ok_or_else(|| Error::Config("--market is required".into()))?)?;
        let roster = read_roster(
            roster.ok_or_else(|| Error::Config("--roster is required".into()))?,
            &market,
            seed,
        )?;
        let m = run_da(&market, &roster.students, roster.len())?;
        summary = format!("sample cutoffs {}", fmt_list(m.cutoffs.as_slice()));
        a.add_json("cutoffs.json", &m.cutoffs)?;
    }
    Ok(Outcome {
        dir: out.to_path_buf(),
        artifacts: a,
        summary,
    })
}

fn cmd_eligibility(input: &Example, out: &Path) -> Result<Outcome> {
    let (market, c, census) = load_example(input)?;
    let mut a = Artifacts::new();
    a.add("eligibility.tsv", tables::eligibility_table(&market, &c, &census)?.to_tsv());
    a.add(
        "eligibility_measure.tsv",
        tables::eligibility_measure_table(&market, &c, &census)?.to_tsv(),
    );
    let ct = tables::contrast_tables(&market, &c, &census)?;
    a.add("contrasts.tsv", ct.wide.to_tsv());
    a.add("contrast_details.tsv", ct.long.to_tsv());
    a.add_json("summary.json", &ct.summary)?;
    let summary = format!(
        "{} lottery-driven, {} RD-driven, {} unidentified contrasts",
        ct.summary.lottery_driven, ct.summary.rd_driven, ct.summary.unidentified
    );
    Ok(Outcome {
        dir: out.to_path_buf(),
        artifacts: a,
        summary,
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_propensity(
    input: &Example,
    dgp: Option<&Path>,
    treated: &str,
    h: f64,
    h_grid: Option<&str>,
    test: usize,
    out: &Path,
) -> Result<Outcome> {
    let (market, c, census) = load_example(input)?;
    let treated = parse_school_list(treated)?;
    check_schools(&market, &treated)?;
    if test >= market.num_tests {
        return Err(Error::Config(format!("no test {test} in a market with {} tests", market.num_tests)));
    }
    let dgp = match dgp {
        Some(p) => Some(read_dgp(p)?),
        None if input.example_paper => Some(example::dgp()),
        None => None,
    };
    if let Some(d) = &dgp {
        if d.market != market {
            return Err(Error::Config("DGP market differs from the market file".into()));
        }
    }
    let partition = BandPartition::from_census(&market, &census, &c, test, h)?;
    let mut a = Artifacts::new();
    a.add("regions.tsv", tables::partition_table(&partition).to_tsv());
    a.add("psi.tsv", tables::psi_table(&market, &c, &census, &partition, &treated)?.to_tsv());
    let mut summary = format!("psi table over {} regions", partition.regions().len());
    if let Some(d) = &dgp {
        let (t, tau, share) = tables::decomposition_table(d, &c, &partition, &treated)?;
        a.add("decomposition.tsv", t.to_tsv());
        summary.push_str(&format!(
            "; band weight share {} and implied effect {} at h = {}",
            fmt_sig(share),
            fmt_sig(tau),
            fmt_sig(h)
        ));
        if let Some(g) = h_grid {
            let hs = parse_h_grid(g)?;
            let (t, _) = tables::bandwidth_sweep(d, &census, &c, test, &treated, &hs)?;
            a.add("h_grid.tsv", t.to_tsv());
        }
    } else if h_grid.is_some() {
        return Err(Error::Config("--h-grid needs a DGP (--dgp) for the weight decomposition".into()));
    }
    Ok(Outcome {
        dir: out.to_path_buf(),
        artifacts: a,
        summary,
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_diagnose(
    market: &Path,
    roster: &Path,
    treated: &str,
    h: f64,
    design: DesignSpec,
    cutoffs: Option<&Path>,
    seed: Option<u64>,
    out: &Path,
) -> Result<Outcome> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Config(format!("bandwidth must be positive, got {h}")));
    }
    let market = read_market(market)?;
    let roster = read_roster(roster, &market, seed)?;
    let treated = parse_school_list(treated)?;
    check_schools(&market, &treated)?;
    let n = roster.len();
    let m = run_da(&market, &roster.students, n)?;
    let c = match cutoffs {
        Some(p) => read_cutoffs(p, &market)?,
        None => m.cutoffs.clone(),
    };
    let d: Vec<bool> = m.assignment.iter().map(|s| treated.contains(s)).collect();
    let psi: Vec<f64> = roster
        .students
        .iter()
        .map(|p| student_local_propensity(&market, p, &c, &treated, h))
        .collect();
    let flags: Vec<_> = roster
        .students
        .iter()
        .map(|p| rd_flags(&market, p, &treated, &c, h))
        .collect();
    let (x, target) = match design {
        DesignSpec::Propensity => (propensity_design(&d, &psi), 0),
        DesignSpec::Linear => (
            nalgebra::DMatrix::from_fn(n, 3, |i, j| match j {
                0 => f64::from(u8::from(d[i])),
                1 => 1.0,
                _ => psi[i],
            }),
            0,
        ),
    };
    let w = linear_estimator_weights(&x, target)?;
    let bounds = rd_weight_bounds(&w, &d, &flags)?;
    let (up_reg, lo_reg) = rd_weight_bounds_by_regression(&x, target, &d, &flags)?;
    let mut table = Table::new(["id", "school", "treated", "psi", "weight", "possibly", "definitely", "witnesses"]);
    for i in 0..n {
        let wit: Vec<String> = flags[i].witnesses.iter().map(|(a, b)| format!("{a}>{b}")).collect();
        table.push([
            roster.ids[i].clone(),
            m.assignment[i].to_string(),
            u8::from(d[i]).to_string(),
            fmt_sig(psi[i]),
            fmt_sig(w[i]),
            u8::from(flags[i].possibly).to_string(),
            u8::from(flags[i].definitely).to_string(),
            wit.join(" "),
        ]);
    }
    #[derive(Serialize)]
    struct Report<'a> {
        bounds: &'a crate::diagnostic::WeightBounds,
        upper_by_regression: f64,
        lower_by_regression: f64,
        cutoffs: &'a CutoffVector,
        h: f64,
    }
    let mut a = Artifacts::new();
    a.add("flags.csv", table.to_csv()?);
    a.add_json(
        "weight_bounds.json",
        &Report {
            bounds: &bounds,
            upper_by_regression: up_reg,
            lower_by_regression: lo_reg,
            cutoffs: &c,
            h,
        },
    )?;
    let summary = format!(
        "RD weight between {} and {} ({} possibly, {} definitely exposed)",
        fmt_sig(bounds.lower),
        fmt_sig(bounds.upper),
        bounds.n_possibly,
        bounds.n_definitely
    );
    Ok(Outcome {
        dir: out.to_path_buf(),
        artifacts: a,
        summary,
    })
}

fn cmd_estimate_rd(market: &Path, roster: &Path, pair: &str, h: &str, cutoffs: Option<&Path>, out: &Path) -> Result<Outcome> {
    let policy = parse_bandwidth(h)?;
    let (s1, s0) = parse_school_pair(pair)?;
    let market = read_market(market)?;
    check_schools(&market, &[s1, s0])?;
    let roster = read_roster(roster, &market, None)?;
    let y = roster
        .outcomes
        .clone()
        .ok_or_else(|| Error::Config("roster needs an `outcome` column".into()))?;
    let c = match cutoffs {
        Some(p) => read_cutoffs(p, &market)?,
        None => run_da(&market, &roster.students, roster.len())?.cutoffs,
    };
    let pair = RdPair::new(s1, s0);
    let report = estimate_rd_ate(&market, &roster.students, &y, pair, &c, policy)?;
    let ctx = SelectionContext::new(&market, pair, c, report.h)?;
    let rows = band_rows(&market, &roster.students, &y, &ctx)?;
    let mut band = Table::new(["id", "score", "proxy", "selected", "side"]);
    for r in &rows {
        band.push([
            roster.ids[r.index].clone(),
            fmt_sig(r.score),
            fmt_sig(r.proxy),
            u8::from(r.selected).to_string(),
            r.side.name().to_string(),
        ]);
    }
    let mut a = Artifacts::new();
    a.add_json("estimate.json", &report)?;
    a.add("band.csv", band.to_csv()?);
    let summary = format!(
        "tau_hat = {} (se {}, 95% CI [{}, {}]) with h = {} at rho = {}",
        fmt_sig(report.tau_hat),
        fmt_sig(report.se),
        fmt_sig(report.ci_95.0),
        fmt_sig(report.ci_95.1),
        fmt_sig(report.h),
        fmt_sig(report.rho)
    );
    Ok(Outcome {
        dir: out.to_path_buf(),
        artifacts: a,
        summary,
    })
}

fn cmd_simulate(experiment: Experiment, dgp: &Path, grid: &Path, reps: usize, seed: u64, out: &Path) -> Result<Outcome> {
    let dgp = read_dgp(dgp)?;
    let grid: ExperimentGrid = read_json(grid)?;
    let report = run_experiment(experiment, &dgp, &grid, reps, seed)?;
    let mut a = Artifacts::new();
    a.add_json("report.json", &report)?;
    a.add("replications.csv", report.rows.to_csv()?);
    let failed: Vec<&str> = report.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
    let status = if report.degenerate {
        "degenerate".to_string()
    } else if failed.is_empty() {
        "all checks pass".to_string()
    } else {
        format!("failed: {}", failed.join(", "))
    };
    let summary = format!(
        "{} experiment, {} reps: {status} ({:.1} s)",
        experiment.name(),
        reps,
        report.runtime_seconds
    );
    Ok(Outcome {
        dir: out.to_path_buf(),
        artifacts: a,
        summary,
    })
}

fn cmd_validate(dgp: &Path, cutoffs: Option<&Path>, pair: Option<&str>, seed: Option<u64>, out: &Path) -> Result<Outcome> {
    let dgp = read_dgp(dgp)?;
    let pair = pair
        .map(parse_school_pair)
        .transpose()?
        .map(|(a, b)| RdPair::new(a, b));
    if let Some(p) = pair {
        check_schools(&dgp.market, &[p.preferred, p.other])?;
    }
    let (c, zero) = match (cutoffs, seed) {
        (Some(p), _) => (read_cutoffs(p, &dgp.market)?, None),
        (None, seed) => {
            let opts = ContinuumOptions {
                seed: need_seed(seed, "solving for population cutoffs")?,
                ..ContinuumOptions::default()
            };
            let res = solve_continuum_cutoffs(&dgp, &opts)?;
            (res.cutoffs, Some(res.zero_frequency))
        }
    };
    let report = validate_market(&dgp, &c, zero.as_deref(), pair);
    let mut a = Artifacts::new();
    a.add_json("validation.json", &report)?;
    let violated: Vec<String> = report.violations().map(|v| format!("{} [{}]", v.label, v.subject)).collect();
    let summary = if violated.is_empty() {
        format!("{} checks, no violations", report.checks.len())
    } else {
        format!("{} checks, violated: {}", report.checks.len(), violated.join(", "))
    };
    Ok(Outcome {
        dir: out.to_path_buf(),
        artifacts: a,
        summary,
    })
}

/// Runs a parsed command without touching the filesystem beyond reading inputs.
pub fn execute(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Match {
            market,
            roster,
            seed,
            out,
        } => cmd_match(market, roster, *seed, &out.out),
        Command::Cutoffs {
            continuum,
            dgp,
            market,
            roster,
            reference_n,
            tolerance,
            seed,
            out,
        } => cmd_cutoffs(
            *continuum,
            dgp.as_deref(),
            market.as_deref(),
            roster.as_deref(),
            *reference_n,
            *tolerance,
            *seed,
            &out.out,
        ),
        Command::Eligibility { input, out } => cmd_eligibility(input, &out.out),
        Command::Propensity {
            input,
            dgp,
            treated,
            h,
            h_grid,
            test,
            out,
        } => cmd_propensity(input, dgp.as_deref(), treated, *h, h_grid.as_deref(), *test, &out.out),
        Command::Diagnose {
            market,
            roster,
            treated,
            h,
            design,
            cutoffs,
            seed,
            out,
        } => cmd_diagnose(market, roster, treated, *h, *design, cutoffs.as_deref(), *seed, &out.out),
        Command::EstimateRd {
            market,
            roster,
            pair,
            h,
            cutoffs,
            out,
        } => cmd_estimate_rd(market, roster, pair, h, cutoffs.as_deref(), &out.out),
        Command::Simulate {
            experiment,
            dgp,
            grid,
            reps,
            seed,
            out,
        } => cmd_simulate((*experiment).into(), dgp, grid, *reps, *seed, &out.out),
        Command::Validate {
            dgp,
            cutoffs,
            pair,
            seed,
            out,
        } => cmd_validate(dgp, cutoffs.as_deref(), pair.as_deref(), *seed, &out.out),
    }
}

/// Runs `cli`, writes its artifacts and returns the process exit code.
/// Diagnostics go to stderr, the summary to stdout.
pub fn run(cli: Cli) -> i32 {
    if let Some(k) = cli.threads {
        if k == 0 {
            eprintln!("error: configuration error: --threads must be at least 1");
            return EXIT_CONFIG;
        }
        // Fails only if a pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
    }
    let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| {
        execute(&cli).and_then(|o| o.artifacts.commit(&o.dir).map(|files| (o.summary, files)))
    }));
    match result {
        Ok(Ok((summary, files))) => {
            // A closed stdout (e.g. piped into `head`) is not an error: the files are written.
            let mut out = std::io::stdout().lock();
            let _ = writeln!(out, "{summary}");
            for f in files {
                let _ = writeln!(out, "wrote {}", f.display());
            }
            EXIT_OK
        }
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
        Err(_) => {
            eprintln!("error: internal failure");
            EXIT_INTERNAL
        }
    }
}
