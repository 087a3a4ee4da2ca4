use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    map_category, normalize_location, to_season, IngestError, LocationCode, MetaCategory, Season,
    YearMonth,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectRecord {
    pub id: String,
    pub title: String,
    pub story: String,
    pub main_category: String,
    pub sub_category: String,
    pub goal_amount: f64,
    pub launch_time: YearMonth,
    pub updates_count: u32,
    pub comments_count: u32,
    pub location_raw: String,
    pub reward_levels: Vec<f64>,
    /// Derived from `main_category`.
    pub meta_category: MetaCategory,
    /// Derived from `location_raw`.
    pub location: LocationCode,
}

impl ProjectRecord {
    pub fn season(&self) -> Season {
        to_season(self.launch_time)
    }

    pub fn avg_reward_level(&self) -> Option<f64> {
        if self.reward_levels.is_empty() {
            None
        } else {
            Some(self.reward_levels.iter().sum::<f64>() / self.reward_levels.len() as f64)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvestorRecord {
    pub id: String,
    pub location_raw: String,
    pub invested_project_ids: Vec<String>,
    pub location: LocationCode,
}

impl InvestorRecord {
    pub fn investment_number(&self) -> usize {
        self.invested_project_ids.len()
    }
}

#[derive(Debug, Deserialize)]
struct ProjectRow {
    id: String,
    title: String,
    story: String,
    main_category: String,
    sub_category: String,
    goal_amount: String,
    launch_time: String,
    updates_count: String,
    comments_count: String,
    location: String,
    reward_levels: String,
}

#[derive(Debug, Deserialize)]
struct InvestorRow {
    id: String,
    location: String,
    invested_project_ids: String,
}

const PROJECT_HEADER: [&str; 11] = [
    "id",
    "title",
    "story",
    "main_category",
    "sub_category",
    "goal_amount",
    "launch_time",
    "updates_count",
    "comments_count",
    "location",
    "reward_levels",
];
const INVESTOR_HEADER: [&str; 3] = ["id", "location", "invested_project_ids"];

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(true)
        .from_reader(r)
}

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .delimiter(b'\t')
        .quote_style(csv::QuoteStyle::Necessary)
        .from_writer(w)
}

fn split_list(cell: &str) -> impl Iterator<Item = &str> {
    cell.split('|').map(str::trim).filter(|s| !s.is_empty())
}

/// Parse the project table, collecting location warnings into `warnings`.
pub fn read_projects<R: Read>(
    source: R,
    file: &str,
    warnings: &mut Vec<String>,
) -> Result<Vec<ProjectRecord>, IngestError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    let mut rdr = reader(source);
    let headers = rdr.headers().map_err(|e| row_error(file, &e))?.clone();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| row_error(file, &e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let row: ProjectRow = rec
            .deserialize(Some(&headers))
            .map_err(|e| row_error(file, &e))?;
        let err = |message: String| IngestError::Row {
            file: file.to_string(),
            line,
            message,
        };
        if row.id.trim().is_empty() {
            return Err(err("empty project id".into()));
        }
        if !seen.insert(row.id.clone()) {
            return Err(IngestError::DuplicateId {
                kind: "project",
                id: row.id,
            });
        }
        let goal_amount: f64 = row
            .goal_amount
            .trim()
            .parse()
            .map_err(|_| err(format!("goal_amount {:?} is not a number", row.goal_amount)))?;
        if !goal_amount.is_finite() || goal_amount < 0.0 {
            return Err(err(format!("goal_amount must be >= 0, got {goal_amount}")));
        }
        let launch_time: YearMonth = row.launch_time.parse().map_err(|e| err(format!("{e}")))?;
        let meta_category = map_category(&row.main_category).map_err(|e| err(format!("{e}")))?;
        let count = |name: &str, v: &str| {
            v.trim()
                .parse::<u32>()
                .map_err(|_| err(format!("{name} {v:?} is not a non-negative integer")))
        };
        let updates_count = count("updates_count", &row.updates_count)?;
        let comments_count = count("comments_count", &row.comments_count)?;
        let reward_levels = split_list(&row.reward_levels)
            .map(|v| match v.parse::<f64>() {
                Ok(x) if x.is_finite() && x >= 0.0 => Ok(x),
                _ => Err(err(format!("reward level {v:?} is not a non-negative number"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        let loc = normalize_location(&row.location);
        if let Some(w) = loc.warning {
            warnings.push(format!("{file} line {line}: {w}"));
        }
        out.push(ProjectRecord {
            id: row.id,
            title: row.title,
            story: row.story,
            main_category: row.main_category.trim().to_string(),
            sub_category: row.sub_category,
            goal_amount,
            launch_time,
            updates_count,
            comments_count,
            location_raw: row.location,
            reward_levels,
            meta_category,
            location: loc.code,
        });
    }
    Ok(out)
}

/// Parse the investor table. Referential integrity is checked by [`Dataset::new`].
pub fn read_investors<R: Read>(
    source: R,
    file: &str,
    warnings: &mut Vec<String>,
) -> Result<Vec<InvestorRecord>, IngestError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    let mut rdr = reader(source);
    let headers = rdr.headers().map_err(|e| row_error(file, &e))?.clone();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| row_error(file, &e))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let row: InvestorRow = rec
            .deserialize(Some(&headers))
            .map_err(|e| row_error(file, &e))?;
        let err = |message: String| IngestError::Row {
            file: file.to_string(),
            line,
            message,
        };
        let id = row.id.trim().to_string();
        if id.is_empty() || !id.bytes().all(|b| b.is_ascii_digit()) {
            return Err(err(format!("investor id {:?} must be numeric", row.id)));
        }
        if !seen.insert(id.clone()) {
            return Err(IngestError::DuplicateId { kind: "investor", id });
        }
        let invested: Vec<String> = split_list(&row.invested_project_ids)
            .map(str::to_string)
            .collect();
        if invested.is_empty() {
            return Err(err(format!("investor {id} has no invested projects")));
        }
        let mut uniq = HashSet::new();
        if let Some(dup) = invested.iter().find(|p| !uniq.insert(p.as_str())) {
            return Err(err(format!("investor {id} lists project {dup} twice")));
        }
        let loc = normalize_location(&row.location);
        if let Some(w) = loc.warning {
            warnings.push(format!("{file} line {line}: {w}"));
        }
        out.push(InvestorRecord {
            id,
            location_raw: row.location,
            invested_project_ids: invested,
            location: loc.code,
        });
    }
    Ok(out)
}

fn row_error(file: &str, e: &csv::Error) -> IngestError {
    IngestError::Row {
        file: file.to_string(),
        line: e.position().map(|p| p.line()).unwrap_or(0),
        message: e.to_string(),
    }
}

/// Validated projects and investors with an id index.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub projects: Vec<ProjectRecord>,
    pub investors: Vec<InvestorRecord>,
    pub warnings: Vec<String>,
    project_index: HashMap<String, usize>,
    investor_index: HashMap<String, usize>,
}

impl Dataset {
    pub fn new(
        projects: Vec<ProjectRecord>,
        investors: Vec<InvestorRecord>,
    ) -> Result<Self, IngestError> {
        let mut project_index = HashMap::with_capacity(projects.len());
        for (i, p) in projects.iter().enumerate() {
            if project_index.insert(p.id.clone(), i).is_some() {
                return Err(IngestError::DuplicateId {
                    kind: "project",
                    id: p.id.clone(),
                });
            }
        }
        let mut investor_index = HashMap::with_capacity(investors.len());
        for (i, inv) in investors.iter().enumerate() {
            if investor_index.insert(inv.id.clone(), i).is_some() {
                return Err(IngestError::DuplicateId {
                    kind: "investor",
                    id: inv.id.clone(),
                });
            }
            let missing: Vec<String> = inv
                .invested_project_ids
                .iter()
                .filter(|p| !project_index.contains_key(*p))
                .cloned()
                .collect();
            if !missing.is_empty() {
                return Err(IngestError::DanglingReference {
                    investor: inv.id.clone(),
                    missing,
                });
            }
        }
        Ok(Self {
            projects,
            investors,
            warnings: Vec::new(),
            project_index,
            investor_index,
        })
    }

    pub fn project(&self, id: &str) -> Option<&ProjectRecord> {
        self.project_index.get(id).map(|i| &self.projects[*i])
    }

    pub fn investor(&self, id: &str) -> Option<&InvestorRecord> {
        self.investor_index.get(id).map(|i| &self.investors[*i])
    }

    /// Projects invested by `investor`, in list order.
    pub fn projects_of<'a>(
        &'a self,
        investor: &'a InvestorRecord,
    ) -> impl Iterator<Item = &'a ProjectRecord> + 'a {
        investor
            .invested_project_ids
            .iter()
            .filter_map(|p| self.project(p))
    }

    /// project id -> ids of investors that invested in it, sorted.
    pub fn investors_by_project(&self) -> HashMap<&str, Vec<&str>> {
        let mut out: HashMap<&str, Vec<&str>> = HashMap::new();
        for inv in &self.investors {
            for p in &inv.invested_project_ids {
                out.entry(p.as_str()).or_default().push(inv.id.as_str());
            }
        }
        for v in out.values_mut() {
            v.sort_unstable();
        }
        out
    }
}

/// Read and validate both tables from disk.
pub fn parse_dataset(projects: &Path, investors: &Path) -> Result<Dataset, IngestError> {
    let mut warnings = Vec::new();
    let p = read_projects(
        std::fs::File::open(projects)?,
        &projects.display().to_string(),
        &mut warnings,
    )?;
    let i = read_investors(
        std::fs::File::open(investors)?,
        &investors.display().to_string(),
        &mut warnings,
    )?;
    let mut ds = Dataset::new(p, i)?;
    for w in &warnings {
        log::warn!("{w}");
    }
    log::info!(
        "accepted {} projects, {} investors ({} warnings)",
        ds.projects.len(),
        ds.investors.len(),
        warnings.len()
    );
    ds.warnings = warnings;
    Ok(ds)
}

fn fmt_list(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("|")
}

pub fn write_projects<W: Write>(w: W, projects: &[ProjectRecord]) -> Result<(), IngestError> {
    let mut wtr = writer(w);
    wtr.write_record(PROJECT_HEADER)?;
    for p in projects {
        wtr.write_record([
            p.id.as_str(),
            &p.title,
            &p.story,
            &p.main_category,
            &p.sub_category,
            &p.goal_amount.to_string(),
            &p.launch_time.to_string(),
            &p.updates_count.to_string(),
            &p.comments_count.to_string(),
            &p.location_raw,
            &fmt_list(&p.reward_levels),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_investors<W: Write>(w: W, investors: &[InvestorRecord]) -> Result<(), IngestError> {
    let mut wtr = writer(w);
    wtr.write_record(INVESTOR_HEADER)?;
    for inv in investors {
        wtr.write_record([
            inv.id.as_str(),
            &inv.location_raw,
            &inv.invested_project_ids.join("|"),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}
