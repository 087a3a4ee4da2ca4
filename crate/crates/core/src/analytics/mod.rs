//! Aggregates behind the timeline, project-investor and investor views.

mod treemap;
mod wordstream;

pub use treemap::{squarify, treemap_layout, Rect, TreemapMode, TreemapRect};
pub use wordstream::{
    keyword_cells, wordstream_layout, DroppedWord, KeywordCell, WordBox, WordStream,
    WordStreamConfig,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ingest::{bin_goal, GoalBins, IngestError, LocationCode, MetaCategory, ProjectRecord, Season};

#[derive(Debug, thiserror::Error)]
pub enum AnalyticsError {
    #[error("inverted season range {lo}..{hi}")]
    InvertedRange { lo: Season, hi: Season },
    #[error("investor {0} has no projects")]
    NoProjects(String),
    #[error("invalid treemap container {w}x{h}")]
    Container { w: f64, h: f64 },
    #[error("negative goal {goal} for project {id}")]
    NegativeGoal { id: String, goal: f64 },
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonCounts {
    pub season: Season,
    /// Indexed like [`MetaCategory::ALL`].
    pub counts: [usize; 4],
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TemporalHistogram {
    pub seasons: Vec<SeasonCounts>,
}

impl TemporalHistogram {
    pub fn total(&self) -> usize {
        self.seasons.iter().map(|s| s.total).sum()
    }
}

/// Project counts per launch season and category over the contiguous
/// range of seasons present in the selection.
pub fn temporal_histogram<'a, I>(projects: I) -> TemporalHistogram
where
    I: IntoIterator<Item = &'a ProjectRecord>,
{
    let mut cells: BTreeMap<Season, [usize; 4]> = BTreeMap::new();
    for p in projects {
        cells.entry(p.season()).or_default()[p.meta_category.index()] += 1;
    }
    let (Some(lo), Some(hi)) = (cells.keys().next().copied(), cells.keys().next_back().copied()) else {
        return TemporalHistogram::default();
    };
    let seasons = Season::range(lo, hi)
        .map(|season| {
            let counts = cells.get(&season).copied().unwrap_or_default();
            SeasonCounts {
                season,
                counts,
                total: counts.iter().sum(),
            }
        })
        .collect();
    TemporalHistogram { seasons }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationCount {
    pub location: LocationCode,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrushSummary {
    pub lo: Season,
    pub hi: Season,
    pub project_count: usize,
    pub goal_histogram: [usize; GoalBins::LEVELS],
    pub location_top5: Vec<LocationCount>,
    /// Indexed like [`MetaCategory::ALL`].
    pub category_histogram: [usize; 4],
}

/// Histograms over projects launched in the inclusive season range.
pub fn brush_summary<'a, I>(
    projects: I,
    lo: Season,
    hi: Season,
    bins: &GoalBins,
) -> Result<BrushSummary, AnalyticsError>
where
    I: IntoIterator<Item = &'a ProjectRecord>,
{
    if lo > hi {
        return Err(AnalyticsError::InvertedRange { lo, hi });
    }
    let mut s = BrushSummary {
        lo,
        hi,
        project_count: 0,
        goal_histogram: [0; GoalBins::LEVELS],
        location_top5: Vec::new(),
        category_histogram: [0; 4],
    };
    let mut locations: BTreeMap<&LocationCode, usize> = BTreeMap::new();
    for p in projects.into_iter().filter(|p| (lo..=hi).contains(&p.season())) {
        s.project_count += 1;
        s.goal_histogram[bin_goal(p.goal_amount, bins)? as usize] += 1;
        s.category_histogram[p.meta_category.index()] += 1;
        *locations.entry(&p.location).or_default() += 1;
    }
    let mut ranked: Vec<(&LocationCode, usize)> = locations.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    s.location_top5 = ranked
        .into_iter()
        .take(5)
        .map(|(l, count)| LocationCount {
            location: l.clone(),
            count,
        })
        .collect();
    Ok(s)
}

/// Unnormalized glyph attributes of one investor.
#[derive(Debug, Clone, PartialEq)]
pub struct GlyphStats {
    pub investor_id: String,
    pub category_counts: [usize; 4],
    pub avg_goal: f64,
    pub investment_count: usize,
    /// `None` when no project lists reward levels.
    pub avg_reward: Option<f64>,
}

impl GlyphStats {
    pub fn new<'a, I>(investor_id: &str, projects: I) -> Result<Self, AnalyticsError>
    where
        I: IntoIterator<Item = &'a ProjectRecord>,
    {
        let mut category_counts = [0; 4];
        let (mut goal_sum, mut n) = (0.0, 0usize);
        let (mut reward_sum, mut rewarded) = (0.0, 0usize);
        for p in projects {
            category_counts[p.meta_category.index()] += 1;
            goal_sum += p.goal_amount;
            n += 1;
            if let Some(r) = p.avg_reward_level() {
                reward_sum += r;
                rewarded += 1;
            }
        }
        if n == 0 {
            return Err(AnalyticsError::NoProjects(investor_id.to_string()));
        }
        Ok(Self {
            investor_id: investor_id.to_string(),
            category_counts,
            avg_goal: goal_sum / n as f64,
            investment_count: n,
            avg_reward: (rewarded > 0).then(|| reward_sum / rewarded as f64),
        })
    }
}

/// Largest category count; ties go to the alphabetically first label.
pub fn dominant_category(counts: &[usize; 4]) -> MetaCategory {
    let mut cats = MetaCategory::ALL;
    cats.sort_by_key(|c| c.label());
    cats.into_iter()
        .max_by(|a, b| counts[a.index()].cmp(&counts[b.index()]).then_with(|| b.label().cmp(a.label())))
        .expect("four categories")
}

/// Min-max ranges of the displayed investor set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlyphContext {
    pub goal: (f64, f64),
    pub count: (f64, f64),
    pub reward: (f64, f64),
}

impl GlyphContext {
    pub fn from_stats<'a, I>(stats: I) -> Self
    where
        I: IntoIterator<Item = &'a GlyphStats>,
    {
        let empty = (f64::INFINITY, f64::NEG_INFINITY);
        let widen = |r: &mut (f64, f64), v: f64| {
            r.0 = r.0.min(v);
            r.1 = r.1.max(v);
        };
        let mut ctx = Self {
            goal: empty,
            count: empty,
            reward: empty,
        };
        for s in stats {
            widen(&mut ctx.goal, s.avg_goal);
            widen(&mut ctx.count, s.investment_count as f64);
            if let Some(r) = s.avg_reward {
                widen(&mut ctx.reward, r);
            }
        }
        ctx
    }
}

/// `(v - min) / (max - min)` clamped to `[0, 1]`. A flat range maps positive
/// values to 1 and zero to 0.
fn min_max(v: f64, (lo, hi): (f64, f64)) -> f64 {
    if !(hi > lo) {
        return if v > 0.0 { 1.0 } else { 0.0 };
    }
    ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlyphSpec {
    pub investor_id: String,
    pub inner: MetaCategory,
    /// Clockwise: average goal, investment count, average reward level.
    pub arcs: [f64; 3],
    pub reward_missing: bool,
}

pub fn investor_glyph(stats: &GlyphStats, ctx: &GlyphContext) -> GlyphSpec {
    GlyphSpec {
        investor_id: stats.investor_id.clone(),
        inner: dominant_category(&stats.category_counts),
        arcs: [
            min_max(stats.avg_goal, ctx.goal),
            min_max(stats.investment_count as f64, ctx.count),
            stats.avg_reward.map_or(0.0, |r| min_max(r, ctx.reward)),
        ],
        reward_missing: stats.avg_reward.is_none(),
    }
}

/// Glyphs for a displayed set, normalized against that set.
pub fn investor_glyphs(stats: &[GlyphStats]) -> Vec<GlyphSpec> {
    let ctx = GlyphContext::from_stats(stats);
    stats.iter().map(|s| investor_glyph(s, &ctx)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SelectionMaxima {
    pub goal: f64,
    pub comments: f64,
    pub updates: f64,
}

impl SelectionMaxima {
    pub fn of<'a, I>(projects: I) -> Self
    where
        I: IntoIterator<Item = &'a ProjectRecord>,
    {
        projects.into_iter().fold(Self::default(), |m, p| Self {
            goal: m.goal.max(p.goal_amount),
            comments: m.comments.max(p.comments_count as f64),
            updates: m.updates.max(p.updates_count as f64),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectGlyph {
    pub project_id: String,
    pub category: MetaCategory,
    /// Goal, comments, updates, each relative to the selection maximum.
    pub bars: [f64; 3],
}

pub fn project_glyph(p: &ProjectRecord, max: &SelectionMaxima) -> ProjectGlyph {
    let ratio = |v: f64, m: f64| if m > 0.0 { (v / m).clamp(0.0, 1.0) } else { 0.0 };
    ProjectGlyph {
        project_id: p.id.clone(),
        category: p.meta_category,
        bars: [
            ratio(p.goal_amount, max.goal),
            ratio(p.comments_count as f64, max.comments),
            ratio(p.updates_count as f64, max.updates),
        ],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonGlyphs {
    pub season: Season,
    pub projects: Vec<ProjectGlyph>,
}

/// One Investor View row: treemap, word stream and per-season project glyphs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvestorDetail {
    pub investor_id: String,
    pub brush: Option<(Season, Season)>,
    pub mode: TreemapMode,
    pub treemap: Vec<TreemapRect>,
    pub wordstream: WordStream,
    pub seasons: Vec<SeasonGlyphs>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetailConfig {
    pub treemap_size: (f64, f64),
    pub lane_size: (f64, f64),
    pub words_per_cell: usize,
    pub wordstream: WordStreamConfig,
}

impl Default for DetailConfig {
    fn default() -> Self {
        Self {
            treemap_size: (1.0, 1.0),
            lane_size: (1200.0, 160.0),
            words_per_cell: 8,
            wordstream: WordStreamConfig::default(),
        }
    }
}

/// Compose the investor row from `projects` (the investor's portfolio)
/// restricted to the inclusive `brush`.
pub fn investor_detail(
    investor_id: &str,
    projects: &[&ProjectRecord],
    brush: Option<(Season, Season)>,
    mode: TreemapMode,
    cfg: &DetailConfig,
) -> Result<InvestorDetail, AnalyticsError> {
    if let Some((lo, hi)) = brush {
        if lo > hi {
            return Err(AnalyticsError::InvertedRange { lo, hi });
        }
    }
    let mut selected: Vec<&ProjectRecord> = projects
        .iter()
        .copied()
        .filter(|p| brush.is_none_or(|(lo, hi)| (lo..=hi).contains(&p.season())))
        .collect();
    selected.sort_by(|a, b| a.launch_time.cmp(&b.launch_time).then_with(|| a.id.cmp(&b.id)));

    let treemap = treemap_layout(&selected, mode, cfg.treemap_size.0, cfg.treemap_size.1)?;
    let seasons: Vec<Season> = match (brush, selected.first(), selected.last()) {
        (Some((lo, hi)), _, _) => Season::range(lo, hi).collect(),
        (None, Some(first), Some(last)) => Season::range(first.season(), last.season()).collect(),
        _ => Vec::new(),
    };
    let cells = keyword_cells(&selected, cfg.words_per_cell);
    let wordstream = wordstream_layout(&cells, &seasons, cfg.lane_size.0, cfg.lane_size.1, &cfg.wordstream);

    let max = SelectionMaxima::of(selected.iter().copied());
    let mut by_season: BTreeMap<Season, Vec<ProjectGlyph>> = BTreeMap::new();
    for p in &selected {
        by_season.entry(p.season()).or_default().push(project_glyph(p, &max));
    }
    Ok(InvestorDetail {
        investor_id: investor_id.to_string(),
        brush,
        mode,
        treemap,
        wordstream,
        seasons: by_season
            .into_iter()
            .map(|(season, projects)| SeasonGlyphs { season, projects })
            .collect(),
    })
}
