use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::Arc;

use arc_swap::ArcSwap;
use axum::body::Bytes;
use serde::Serialize;

use crowdsearch_core::analytics::{investor_glyphs, DetailConfig, GlyphSpec, GlyphStats};
use crowdsearch_core::graph::VertexKind;
use crowdsearch_core::ingest::{MetaCategory, ProjectRecord, Season};
use crowdsearch_core::snapshot::{Snapshot, SnapshotError};

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProjectionPoint {
    Project {
        id: String,
        x: f64,
        y: f64,
        category: MetaCategory,
        /// Investors that backed the project, sorted.
        investors: Vec<String>,
    },
    Investor {
        id: String,
        x: f64,
        y: f64,
        /// Absent for investors without projects.
        glyph: Option<GlyphSpec>,
    },
}

impl ProjectionPoint {
    pub fn id(&self) -> &str {
        match self {
            ProjectionPoint::Project { id, .. } | ProjectionPoint::Investor { id, .. } => id,
        }
    }

    pub fn xy(&self) -> [f64; 2] {
        match self {
            ProjectionPoint::Project { x, y, .. } | ProjectionPoint::Investor { x, y, .. } => [*x, *y],
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ProjectionBody {
    pub points: Vec<ProjectionPoint>,
}

/// A loaded snapshot plus everything derived from it once at load time.
pub struct Served {
    pub snapshot: Snapshot,
    /// project id -> sorted investor ids
    pub backers: HashMap<String, Vec<String>>,
    pub glyphs: BTreeMap<String, GlyphSpec>,
    pub projection: ProjectionBody,
    pub projection_body: Bytes,
    pub detail: DetailConfig,
    /// First and last season of the dataset.
    pub season_range: Option<(Season, Season)>,
}

impl Served {
    pub fn new(snapshot: Snapshot) -> Self {
        let ds = &snapshot.dataset;
        let backers: HashMap<String, Vec<String>> = ds
            .investors_by_project()
            .into_iter()
            .map(|(p, is)| (p.to_string(), is.into_iter().map(str::to_string).collect()))
            .collect();
        let stats: Vec<GlyphStats> = ds
            .investors
            .iter()
            .filter_map(|inv| GlyphStats::new(&inv.id, ds.projects_of(inv)).ok())
            .collect();
        let glyphs: BTreeMap<String, GlyphSpec> = investor_glyphs(&stats)
            .into_iter()
            .map(|g| (g.investor_id.clone(), g))
            .collect();

        let points = snapshot
            .layout
            .iter()
            .filter_map(|p| match p.id.kind {
                VertexKind::Project => {
                    let rec = ds.project(&p.id.key)?;
                    Some(ProjectionPoint::Project {
                        id: p.id.key.clone(),
                        x: p.x,
                        y: p.y,
                        category: rec.meta_category,
                        investors: backers.get(&p.id.key).cloned().unwrap_or_default(),
                    })
                }
                VertexKind::Investor => Some(ProjectionPoint::Investor {
                    id: p.id.key.clone(),
                    x: p.x,
                    y: p.y,
                    glyph: glyphs.get(&p.id.key).cloned(),
                }),
                VertexKind::FeatureValue => None,
            })
            .collect();
        let projection = ProjectionBody { points };
        let projection_body = Bytes::from(serde_json::to_vec(&projection).expect("projection serializes"));

        let season_range = ds
            .projects
            .iter()
            .map(ProjectRecord::season)
            .fold(None, |acc: Option<(Season, Season)>, s| match acc {
                None => Some((s, s)),
                Some((lo, hi)) => Some((lo.min(s), hi.max(s))),
            });
        Self {
            snapshot,
            backers,
            glyphs,
            projection,
            projection_body,
            detail: DetailConfig::default(),
            season_range,
        }
    }

    pub fn load(dir: &Path) -> Result<Self, SnapshotError> {
        Ok(Self::new(Snapshot::read(dir)?))
    }
}

/// Shared handle; requests read the current snapshot without locking and a
/// reload swaps it atomically.
#[derive(Clone)]
pub struct AppState {
    inner: Arc<ArcSwap<Served>>,
}

impl AppState {
    pub fn new(served: Served) -> Self {
        Self {
            inner: Arc::new(ArcSwap::from_pointee(served)),
        }
    }

    pub fn current(&self) -> Arc<Served> {
        self.inner.load_full()
    }

    pub fn replace(&self, served: Served) {
        self.inner.store(Arc::new(served));
    }
}
