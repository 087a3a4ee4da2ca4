//! Dataset parsing and normalization.
//!
//! Two tab-separated files feed the pipeline: one row per project and one row
//! per investor. List-valued cells (invested project ids, reward levels) use
//! `|` as an internal separator. Everything downstream works on the validated
//! [`ProjectRecord`] / [`InvestorRecord`] values produced here.

mod category;
mod config;
mod keywords;
mod location;
mod records;
mod time;

pub use category::{map_category, MetaCategory, MAIN_CATEGORIES};
pub use config::{parse_key_values, IngestConfig};
pub use keywords::{extract_keywords, KeywordExtractor};
pub use location::{normalize_location, LocationCode, LocationKind, NormalizedLocation};
pub use records::{
    parse_dataset, read_investors, read_projects, write_investors, write_projects, Dataset,
    InvestorRecord, ProjectRecord,
};
pub use time::{to_season, Season, YearMonth};

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("{file} line {line}: {message}")]
    Row {
        file: String,
        line: u64,
        message: String,
    },
    #[error("investor {investor} references unknown project id(s): {}", missing.join(", "))]
    DanglingReference {
        investor: String,
        missing: Vec<String>,
    },
    #[error("duplicate {kind} id {id:?}")]
    DuplicateId { kind: &'static str, id: String },
    #[error("goal amount must be non-negative, got {0}")]
    NegativeAmount(f64),
    #[error("unknown main category {0:?}")]
    UnknownCategory(String),
    #[error("invalid launch time {0:?}: expected YYYY-MM with month 1-12")]
    InvalidLaunchTime(String),
    #[error("invalid season {0:?}: expected YYYYQn")]
    InvalidSeason(String),
    #[error("invalid goal bin edges {0:?}: need three strictly ascending positive values")]
    InvalidBinEdges(Vec<f64>),
    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Goal-amount bins: three ascending edges split `[0, inf)` into four
/// half-open levels `[0, e0) [e0, e1) [e1, e2) [e2, inf)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalBins {
    edges: [f64; 3],
}

impl Default for GoalBins {
    fn default() -> Self {
        Self {
            edges: [1_000.0, 10_000.0, 250_000.0],
        }
    }
}

impl GoalBins {
    pub const LEVELS: usize = 4;

    pub fn new(edges: [f64; 3]) -> Result<Self, IngestError> {
        let ok = edges.iter().all(|e| e.is_finite() && *e > 0.0)
            && edges.windows(2).all(|w| w[0] < w[1]);
        if !ok {
            return Err(IngestError::InvalidBinEdges(edges.to_vec()));
        }
        Ok(Self { edges })
    }

    pub fn edges(&self) -> [f64; 3] {
        self.edges
    }

    /// Lower and upper bound of `level`; the top level is unbounded.
    pub fn bounds(&self, level: u8) -> (f64, f64) {
        let level = level as usize;
        let lo = if level == 0 { 0.0 } else { self.edges[level - 1] };
        let hi = self.edges.get(level).copied().unwrap_or(f64::INFINITY);
        (lo, hi)
    }
}

/// Index of the half-open bin containing `amount`.
pub fn bin_goal(amount: f64, bins: &GoalBins) -> Result<u8, IngestError> {
    if !(amount >= 0.0) {
        return Err(IngestError::NegativeAmount(amount));
    }
    Ok(bins.edges.iter().take_while(|e| amount >= **e).count() as u8)
}
