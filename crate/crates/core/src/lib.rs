//! School-choice matching under deferred acceptance, identification of
//! pairwise school contrasts, RD diagnostics and local-linear RD estimation.

pub mod cli;
pub mod dgp;
pub mod diagnostic;
pub mod eligibility;
pub mod error;
pub mod estimator;
pub mod example;
pub mod experiments;
pub mod io;
mod lottery;
pub mod market;
pub mod matching;
pub mod propensity;
pub mod region;
pub mod report;
pub mod rng;
pub mod tables;
pub mod validate;

pub use error::{Error, ErrorKind, Result};
pub use market::{priority_score, MarketSpec, Preferences, SchoolId, SchoolKind, SchoolSpec, StudentProfile, StudentType};
pub use matching::{assign_at_cutoffs, check_stability, extract_cutoffs, run_da, CutoffVector, MatchResult};
pub use region::{Interval, Region};
