//! Reading and writing market, DGP, census, cutoff and roster files.
//!
//! Roster files are CSV with a header. Columns, in any order:
//! `id`, `prefs` (school ids joined by `>`), `score_0..score_{T-1}`,
//! `q_0..q_{M-1}`, optionally `u_0..u_{L-1}` and optionally `outcome`.
//! Omitted qualifier columns default to 0.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::dgp::DgpSpec;
use crate::error::{Error, Result};
use crate::market::{MarketSpec, Preferences, SchoolId, StudentProfile, StudentType};
use crate::matching::CutoffVector;
use crate::rng::stream_rng;

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}

/// Parses a JSON document, naming the file, line and column on failure.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| {
        Error::Config(format!(
            "{}:{}:{}: {e}",
            path.display(),
            e.line(),
            e.column()
        ))
    })
}

pub fn read_market(path: &Path) -> Result<MarketSpec> {
    let m: MarketSpec = read_json(path)?;
    m.validate()
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Ok(m)
}

pub fn read_dgp(path: &Path) -> Result<DgpSpec> {
    let d: DgpSpec = read_json(path)?;
    d.validate()
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Ok(d)
}

pub fn read_census(path: &Path, market: &MarketSpec) -> Result<Vec<StudentType>> {
    let census: Vec<StudentType> = read_json(path)?;
    for (k, ty) in census.iter().enumerate() {
        market
            .check_type(ty)
            .map_err(|e| Error::Data(format!("{}: type {k}: {e}", path.display())))?;
    }
    Ok(census)
}

pub fn read_cutoffs(path: &Path, market: &MarketSpec) -> Result<CutoffVector> {
    let c: CutoffVector = read_json(path)?;
    c.check_market(market)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Ok(c)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Roster {
    pub ids: Vec<String>,
    pub students: Vec<StudentProfile>,
    pub outcomes: Option<Vec<f64>>,
    /// Lottery draws were absent from the file and drawn from the seed.
    pub draws_generated: bool,
}

impl Roster {
    pub fn len(&self) -> usize {
        self.students.len()
    }

    pub fn is_empty(&self) -> bool {
        self.students.is_empty()
    }
}

struct Columns {
    id: usize,
    prefs: usize,
    scores: Vec<usize>,
    qualifiers: Vec<Option<usize>>,
    draws: Option<Vec<usize>>,
    outcome: Option<usize>,
}

fn locate_columns(header: &csv::StringRecord, market: &MarketSpec, origin: &str) -> Result<Columns> {
    let index: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h.trim(), i)).collect();
    let need = |name: &str| {
        index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("{}:1: missing column `{name}`", origin)))
    };
    let scores = (0..market.num_tests)
        .map(|t| need(&format!("score_{t}")))
        .collect::<Result<_>>()?;
    let qualifiers = (0..market.num_schools())
        .map(|s| index.get(format!("q_{s}").as_str()).copied())
        .collect();
    let draw_cols: Vec<Option<usize>> = (0..market.num_lotteries)
        .map(|l| index.get(format!("u_{l}").as_str()).copied())
        .collect();
    let draws = if draw_cols.iter().all(Option::is_some) {
        Some(draw_cols.into_iter().flatten().collect())
    } else if draw_cols.iter().all(Option::is_none) {
        None
    } else {
        return Err(Error::Config(format!(
            "{}:1: lottery columns u_0..u_{} must be all present or all absent",
            origin,
            market.num_lotteries.saturating_sub(1)
        )));
    };
    Ok(Columns {
        id: need("id")?,
        prefs: need("prefs")?,
        scores,
        qualifiers,
        draws,
        outcome: index.get("outcome").copied(),
    })
}

pub fn parse_preferences(text: &str) -> std::result::Result<Preferences, String> {
    let ids = text
        .split('>')
        .map(|p| {
            let p = p.trim().trim_start_matches('s');
            p.parse::<usize>().map_err(|_| format!("bad school id `{p}` in preferences `{text}`"))
        })
        .collect::<std::result::Result<Vec<usize>, String>>()?;
    Ok(Preferences::from_indices(&ids))
}

fn parse_f64(field: &str, name: &str) -> std::result::Result<f64, String> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| format!("column `{name}`: `{field}` is not a number"))
}

/// Reads a roster. Missing lottery draws are generated from `seed`; without
/// a seed that is a configuration error. Line numbers in errors count the header as line 1.
pub fn read_roster(path: &Path, market: &MarketSpec, seed: Option<u64>) -> Result<Roster> {
    parse_roster(&read_text(path)?, &path.display().to_string(), market, seed)
}

/// Roster from CSV text; `origin` names the source in error messages.
pub fn parse_roster(text: &str, origin: &str, market: &MarketSpec, seed: Option<u64>) -> Result<Roster> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::Config(format!("{}:1: {e}", origin)))?
        .clone();
    let cols = locate_columns(&header, market, origin)?;
    if cols.draws.is_none() && market.num_lotteries > 0 && seed.is_none() {
        return Err(Error::Config(format!(
            "{}: roster has no lottery draws; pass a seed to generate them",
            origin
        )));
    }
    let mut rng = seed.map(|s| stream_rng(s, 0));
    let mut roster = Roster {
        ids: Vec::new(),
        students: Vec::new(),
        outcomes: cols.outcome.map(|_| Vec::new()),
        draws_generated: cols.draws.is_none() && market.num_lotteries > 0,
    };
    for (row, rec) in reader.records().enumerate() {
        let line = rec
            .as_ref()
            .ok()
            .and_then(|r| r.position())
            .map_or(row + 2, |p| p.line() as usize);
        let bad = |msg: String| Error::Data(format!("{}:{line}: {msg}", origin));
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let get = |i: usize| rec.get(i).unwrap_or("");
        let preferences = parse_preferences(get(cols.prefs)).map_err(bad)?;
        let scores = cols
            .scores
            .iter()
            .enumerate()
            .map(|(t, &i)| parse_f64(get(i), &format!("score_{t}")))
            .collect::<std::result::Result<Vec<f64>, String>>()
            .map_err(bad)?;
        let qualifiers = cols
            .qualifiers
            .iter()
            .enumerate()
            .map(|(s, c)| match c {
                None => Ok(0),
                Some(i) => get(*i)
                    .parse::<u32>()
                    .map_err(|_| format!("column `q_{s}`: `{}` is not a non-negative integer", get(*i))),
            })
            .collect::<std::result::Result<Vec<u32>, String>>()
            .map_err(bad)?;
        let lottery_draws = match (&cols.draws, rng.as_mut()) {
            (Some(d), _) => d
                .iter()
                .enumerate()
                .map(|(l, &i)| parse_f64(get(i), &format!("u_{l}")))
                .collect::<std::result::Result<Vec<f64>, String>>()
                .map_err(bad)?,
            (None, Some(rng)) => (0..market.num_lotteries).map(|_| rng.random::<f64>()).collect(),
            (None, None) => Vec::new(),
        };
        let p = StudentProfile {
            preferences,
            scores,
            qualifiers,
            lottery_draws,
        };
        market
            .check_student(roster.students.len(), &p)
            .map_err(|e| bad(e.to_string()))?;
        if let (Some(i), Some(out)) = (cols.outcome, roster.outcomes.as_mut()) {
            out.push(parse_f64(get(i), "outcome").map_err(bad)?);
        }
        roster.ids.push(get(cols.id).to_string());
        roster.students.push(p);
    }
    Ok(roster)
}

/// Writes a roster in the format `read_roster` accepts.
pub fn roster_csv(market: &MarketSpec, students: &[StudentProfile], outcomes: Option<&[f64]>) -> Result<String> {
    let mut header = vec!["id".to_string(), "prefs".to_string()];
    header.extend((0..market.num_tests).map(|t| format!("score_{t}")));
    header.extend((0..market.num_schools()).map(|s| format!("q_{s}")));
    header.extend((0..market.num_lotteries).map(|l| format!("u_{l}")));
    if outcomes.is_some() {
        header.push("outcome".into());
    }
    let mut table = crate::report::Table::new(header);
    for (i, p) in students.iter().enumerate() {
        let mut row = vec![i.to_string(), p.preferences.to_string()];
        row.extend(p.scores.iter().map(|&x| fmt_full(x)));
        row.extend(p.qualifiers.iter().map(|q| q.to_string()));
        row.extend(p.lottery_draws.iter().map(|&x| fmt_full(x)));
        if let Some(y) = outcomes {
            row.push(fmt_full(y[i]));
        }
        table.push(row);
    }
    table.to_csv()
}

// Rosters keep full precision so that reloading reproduces the same matching.
fn fmt_full(x: f64) -> String {
    format!("{x:?}")
}

/// Collects output files in memory and writes them only once all are ready,
/// so a failing command leaves nothing behind.
#[derive(Debug, Default)]
pub struct Artifacts {
    files: Vec<(String, String)>,
}

impl Artifacts {
    pub fn new() -> Self {
        Artifacts::default()
    }

    pub fn add(&mut self, name: impl Into<String>, contents: impl Into<String>) {
        self.files.push((name.into(), contents.into()));
    }

    pub fn add_json(&mut self, name: impl Into<String>, value: &impl Serialize) -> Result<()> {
        self.add(name, crate::report::to_json(value)?);
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|(n, _)| n.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, c)| c.as_str())
    }

    /// Writes every file under `dir`, creating it if needed. Files are staged
    /// under temporary names and renamed into place.
    pub fn commit(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let mut staged = Vec::new();
        for (name, contents) in &self.files {
            let tmp = dir.join(format!(".{name}.partial"));
            if let Err(e) = fs::write(&tmp, contents) {
                for (t, _) in &staged {
                    let _ = fs::remove_file(t);
                }
                let _ = fs::remove_file(&tmp);
                return Err(e.into());
            }
            staged.push((tmp, dir.join(name)));
        }
        let mut out = Vec::new();
        for (tmp, dest) in staged {
            fs::rename(&tmp, &dest)?;
            out.push(dest);
        }
        Ok(out)
    }
}

/// Parses `s1,s0` (the `s` prefix is optional).
pub fn parse_school_pair(text: &str) -> Result<(SchoolId, SchoolId)> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let parse = |p: &str| {
        p.trim_start_matches('s')
            .parse::<usize>()
            .map(SchoolId)
            .map_err(|_| Error::Config(format!("bad school id `{p}` in `{text}`")))
    };
    match parts.as_slice() {
        [a, b] => Ok((parse(a)?, parse(b)?)),
        _ => Err(Error::Config(format!("expected two school ids like `s2,s1`, got `{text}`"))),
    }
}

pub fn parse_school_list(text: &str) -> Result<Vec<SchoolId>> {
    text.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.trim_start_matches('s')
                .parse::<usize>()
                .map(SchoolId)
                .map_err(|_| Error::Config(format!("bad school id `{p}` in `{text}`")))
        })
        .collect()
}
