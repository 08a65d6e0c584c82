//! Tab-separated tables for eligibility sets, contrasts, local propensities
//! and weight decompositions.

use serde::Serialize;

use crate::dgp::DgpSpec;
use crate::eligibility::{eligibility_set, enumerate_identified_ates, school_pairs, EnumerationSummary, Variation};
use crate::error::Result;
use crate::market::{MarketSpec, SchoolId, StudentType};
use crate::matching::CutoffVector;
use crate::propensity::{
    local_propensity, population_cells, population_regression_estimand, weight_decomposition, BandPartition,
    RegionKind,
};
use crate::report::{fmt_sig, Table};

fn type_label(ty: &StudentType, k: usize) -> String {
    ty.label.clone().unwrap_or_else(|| format!("type{k}"))
}

/// One row per type, one column per school: the eligibility set `E_s`.
pub fn eligibility_table(market: &MarketSpec, c: &CutoffVector, census: &[StudentType]) -> Result<Table> {
    c.check_market(market)?;
    let mut header = vec!["type".to_string()];
    header.extend(market.school_ids().map(|s| format!("E_{s}")));
    let mut t = Table::new(header);
    for (k, ty) in census.iter().enumerate() {
        market.check_type(ty)?;
        let mut row = vec![type_label(ty, k)];
        for s in market.school_ids() {
            row.push(eligibility_set(market, &ty.preferences, &ty.qualifiers, c, s).to_string());
        }
        t.push(row);
    }
    Ok(t)
}

/// Same layout with the Lebesgue measure of each set.
pub fn eligibility_measure_table(market: &MarketSpec, c: &CutoffVector, census: &[StudentType]) -> Result<Table> {
    c.check_market(market)?;
    let mut header = vec!["type".to_string()];
    header.extend(market.school_ids().map(|s| format!("E_{s}")));
    let mut t = Table::new(header);
    for (k, ty) in census.iter().enumerate() {
        market.check_type(ty)?;
        let mut row = vec![type_label(ty, k)];
        for s in market.school_ids() {
            row.push(fmt_sig(eligibility_set(market, &ty.preferences, &ty.qualifiers, c, s).measure()));
        }
        t.push(row);
    }
    Ok(t)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContrastTables {
    #[serde(skip)]
    pub wide: Table,
    #[serde(skip)]
    pub long: Table,
    pub summary: EnumerationSummary,
}

fn variation_name(v: Variation) -> &'static str {
    match v {
        Variation::LotteryDriven => "lottery",
        Variation::RdDriven => "rd",
        Variation::Unidentified => "none",
    }
}

/// Wide table of closure intersections per type and school pair (pairs in
/// increasing order), plus a long table with measures and variation kind.
pub fn contrast_tables(market: &MarketSpec, c: &CutoffVector, census: &[StudentType]) -> Result<ContrastTables> {
    let e = enumerate_identified_ates(market, c, census)?;
    let pairs = school_pairs(market.num_schools());
    let mut header = vec!["type".to_string()];
    header.extend(pairs.iter().map(|(a, b)| format!("({a},{b})")));
    let mut wide = Table::new(header);
    let mut long = Table::new(["type", "preferred", "other", "region", "measure", "variation", "rd_cutoff"]);
    for (k, ty) in census.iter().enumerate() {
        let mut row = vec![type_label(ty, k)];
        for &(a, b) in &pairs {
            let found = e.contrasts.iter().find(|tc| {
                tc.type_index == k
                    && ((tc.report.preferred == a && tc.report.other == b)
                        || (tc.report.preferred == b && tc.report.other == a))
            });
            match found {
                Some(tc) => {
                    let r = &tc.report;
                    row.push(r.region.to_string());
                    long.push([
                        type_label(ty, k),
                        r.preferred.to_string(),
                        r.other.to_string(),
                        r.region.to_string(),
                        fmt_sig(r.region.measure()),
                        variation_name(r.variation).to_string(),
                        r.rd_cutoff
                            .map(|x| format!("t{}={}", x.test, fmt_sig(x.value)))
                            .unwrap_or_default(),
                    ]);
                }
                None => row.push("-".into()),
            }
        }
        wide.push(row);
    }
    Ok(ContrastTables {
        wide,
        long,
        summary: e.summary,
    })
}

/// Region labels with their bounds.
pub fn partition_table(partition: &BandPartition) -> Table {
    let mut t = Table::new(["region", "kind", "lower", "upper", "cutpoint"]);
    for g in partition.regions() {
        let (kind, cut) = match g.kind {
            RegionKind::Interior => ("interior", String::new()),
            RegionKind::Band { cutpoint } => ("band", fmt_sig(cutpoint)),
        };
        t.push([g.label.clone(), kind.into(), fmt_sig(g.lower), fmt_sig(g.upper), cut]);
    }
    t
}

/// Local propensity of each type in each region. Scores on tests other than
/// the banded one are set to 0.
pub fn psi_table(
    market: &MarketSpec,
    c: &CutoffVector,
    census: &[StudentType],
    partition: &BandPartition,
    treated: &[SchoolId],
) -> Result<Table> {
    let mut header = vec!["type".to_string()];
    header.extend(partition.regions().iter().map(|g| g.label.clone()));
    let mut t = Table::new(header);
    let others = vec![0.0; market.num_tests];
    for (k, ty) in census.iter().enumerate() {
        let mut row = vec![type_label(ty, k)];
        for j in 0..partition.regions().len() {
            row.push(fmt_sig(local_propensity(market, ty, c, partition, j, treated, &others)?));
        }
        t.push(row);
    }
    Ok(t)
}

/// Cell masses, propensities, effects and regression weights for a one-test DGP.
pub fn decomposition_table(
    dgp: &DgpSpec,
    c: &CutoffVector,
    partition: &BandPartition,
    treated: &[SchoolId],
) -> Result<(Table, f64, f64)> {
    let cells = population_cells(dgp, c, partition, treated)?;
    let inputs: Vec<_> = cells.iter().map(|x| x.input.clone()).collect();
    let w = weight_decomposition(&inputs)?;
    let mut t = Table::new(["type", "region", "mass", "psi", "effect", "band", "weight"]);
    for (cell, weight) in cells.iter().zip(&w.weights) {
        let ty = &dgp.types[cell.type_index];
        t.push([
            ty.label.clone().unwrap_or_else(|| format!("type{}", cell.type_index)),
            partition.regions()[cell.region].label.clone(),
            fmt_sig(cell.input.mass),
            fmt_sig(cell.input.psi),
            fmt_sig(cell.input.effect),
            u8::from(cell.input.band).to_string(),
            fmt_sig(*weight),
        ]);
    }
    Ok((t, w.implied_tau, w.band_share))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridPoint {
    pub h: f64,
    pub band_share: f64,
    pub implied_tau: f64,
    /// Exact population value of the propensity regression at this `h`.
    pub regression_estimand: f64,
}

/// Band weight share and estimands as the bandwidth shrinks.
pub fn bandwidth_sweep(
    dgp: &DgpSpec,
    census: &[StudentType],
    c: &CutoffVector,
    test: usize,
    treated: &[SchoolId],
    hs: &[f64],
) -> Result<(Table, Vec<GridPoint>)> {
    let mut points = Vec::new();
    let mut t = Table::new(["h", "band_share", "implied_tau", "regression_estimand"]);
    for &h in hs {
        let partition = BandPartition::from_census(&dgp.market, census, c, test, h)?;
        let (_, implied_tau, band_share) = decomposition_table(dgp, c, &partition, treated)?;
        let regression_estimand = population_regression_estimand(dgp, c, &partition, treated)?;
        t.push([fmt_sig(h), fmt_sig(band_share), fmt_sig(implied_tau), fmt_sig(regression_estimand)]);
        points.push(GridPoint {
            h,
            band_share,
            implied_tau,
            regression_estimand,
        });
    }
    Ok((t, points))
}
