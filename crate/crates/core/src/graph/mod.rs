//! Heterogeneous crowdfunding graph.
//!
//! Investors, projects and feature values (meta-category, goal bin, location,
//! season) are vertices; typed relations connect them. Every relation has an
//! inverse and both directions are stored, so message passing can pull from
//! either side. Investors are never linked to each other directly: investors
//! that backed the same project meet at that project's vertex.

mod io;
mod overlay;

pub use io::{export_graph, import_graph};
pub use overlay::{GraphOverlay, QueryFeatures};

use std::borrow::Cow;
use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ingest::{
    bin_goal, GoalBins, IngestError, InvestorRecord, LocationCode, MetaCategory, ProjectRecord,
    Season,
};

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("duplicate vertex {0}")]
    DuplicateVertex(VertexId),
    #[error("unknown vertex {0}")]
    UnknownVertex(VertexId),
    #[error("relation {relation} cannot connect {from:?} to {to:?}")]
    EndpointKind {
        relation: Relation,
        from: VertexKind,
        to: VertexKind,
    },
    #[error("graph text line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VertexKind {
    Investor,
    Project,
    #[serde(rename = "feature")]
    FeatureValue,
}

impl VertexKind {
    pub const ALL: [VertexKind; 3] = [
        VertexKind::Investor,
        VertexKind::Project,
        VertexKind::FeatureValue,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VertexKind::Investor => "investor",
            VertexKind::Project => "project",
            VertexKind::FeatureValue => "feature",
        }
    }
}

impl FromStr for VertexKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        VertexKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown vertex kind {s:?}"))
    }
}

/// Feature kinds promoted to vertices. Keys are namespaced `prefix:value`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FeatureKind {
    Category,
    Goal,
    Location,
    Season,
}

impl FeatureKind {
    pub fn prefix(self) -> &'static str {
        match self {
            FeatureKind::Category => "category",
            FeatureKind::Goal => "goal",
            FeatureKind::Location => "loc",
            FeatureKind::Season => "season",
        }
    }

    /// Relation from an entity to a value of this feature kind.
    pub fn relation(self) -> Relation {
        match self {
            FeatureKind::Category => Relation::HasCategory,
            FeatureKind::Goal => Relation::HasGoalBin,
            FeatureKind::Location => Relation::HasLocation,
            FeatureKind::Season => Relation::HasSeason,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VertexId {
    pub kind: VertexKind,
    pub key: String,
}

impl VertexId {
    pub fn investor(key: impl Into<String>) -> Self {
        Self {
            kind: VertexKind::Investor,
            key: key.into(),
        }
    }

    pub fn project(key: impl Into<String>) -> Self {
        Self {
            kind: VertexKind::Project,
            key: key.into(),
        }
    }

    pub fn feature(kind: FeatureKind, value: impl fmt::Display) -> Self {
        Self {
            kind: VertexKind::FeatureValue,
            key: format!("{}:{}", kind.prefix(), value),
        }
    }

    pub fn category(c: MetaCategory) -> Self {
        Self::feature(FeatureKind::Category, c.name())
    }

    pub fn goal_bin(level: u8) -> Self {
        Self::feature(FeatureKind::Goal, level)
    }

    pub fn location(loc: &LocationCode) -> Self {
        Self::feature(FeatureKind::Location, loc)
    }

    pub fn season(s: Season) -> Self {
        Self::feature(FeatureKind::Season, s)
    }
}

impl fmt::Display for VertexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.kind.name(), self.key)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Relation {
    Invested,
    InvestedBy,
    HasCategory,
    CategoryOf,
    HasGoalBin,
    GoalBinOf,
    HasLocation,
    LocationOf,
    HasSeason,
    SeasonOf,
}

impl Relation {
    pub const COUNT: usize = 10;
    pub const ALL: [Relation; Relation::COUNT] = [
        Relation::Invested,
        Relation::InvestedBy,
        Relation::HasCategory,
        Relation::CategoryOf,
        Relation::HasGoalBin,
        Relation::GoalBinOf,
        Relation::HasLocation,
        Relation::LocationOf,
        Relation::HasSeason,
        Relation::SeasonOf,
    ];
    /// Relations in the entity -> feature / investor -> project direction.
    pub const FORWARD: [Relation; 5] = [
        Relation::Invested,
        Relation::HasCategory,
        Relation::HasGoalBin,
        Relation::HasLocation,
        Relation::HasSeason,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn inverse(self) -> Relation {
        use Relation::*;
        match self {
            Invested => InvestedBy,
            InvestedBy => Invested,
            HasCategory => CategoryOf,
            CategoryOf => HasCategory,
            HasGoalBin => GoalBinOf,
            GoalBinOf => HasGoalBin,
            HasLocation => LocationOf,
            LocationOf => HasLocation,
            HasSeason => SeasonOf,
            SeasonOf => HasSeason,
        }
    }

    pub fn is_forward(self) -> bool {
        self.index() % 2 == 0
    }

    /// Whether an edge `from -[self]-> to` is allowed.
    pub fn allows(self, from: VertexKind, to: VertexKind) -> bool {
        use VertexKind::*;
        if !self.is_forward() {
            return self.inverse().allows(to, from);
        }
        match self {
            Relation::Invested => from == Investor && to == Project,
            Relation::HasLocation => matches!(from, Investor | Project) && to == FeatureValue,
            _ => from == Project && to == FeatureValue,
        }
    }

    pub fn name(self) -> &'static str {
        use Relation::*;
        match self {
            Invested => "Invested",
            InvestedBy => "InvestedBy",
            HasCategory => "HasCategory",
            CategoryOf => "CategoryOf",
            HasGoalBin => "HasGoalBin",
            GoalBinOf => "GoalBinOf",
            HasLocation => "HasLocation",
            LocationOf => "LocationOf",
            HasSeason => "HasSeason",
            SeasonOf => "SeasonOf",
        }
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Relation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Relation::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| format!("unknown relation {s:?}"))
    }
}

/// Numeric attributes carried by entity vertices; they become initial node
/// features rather than vertices.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Payload {
    pub goal_amount: f64,
    pub updates_count: u32,
    pub comments_count: u32,
    pub investment_number: u32,
}

/// Compressed adjacency for one relation.
#[derive(Debug, Clone, Default, PartialEq)]
struct Csr {
    offsets: Vec<u32>,
    targets: Vec<u32>,
}

impl Csr {
    fn from_pairs(n: usize, pairs: &[(u32, u32)]) -> Self {
        let mut offsets = vec![0u32; n + 1];
        for (s, _) in pairs {
            offsets[*s as usize + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        // `pairs` is sorted, so targets come out grouped and sorted per source.
        let targets = pairs.iter().map(|(_, t)| *t).collect();
        Self { offsets, targets }
    }

    fn row(&self, v: u32) -> &[u32] {
        let v = v as usize;
        &self.targets[self.offsets[v] as usize..self.offsets[v + 1] as usize]
    }
}

/// Read access shared by the immutable graph and the query overlay.
pub trait GraphView: Sync {
    fn vertex_count(&self) -> usize;
    fn vertex(&self, idx: u32) -> &VertexId;
    fn payload(&self, idx: u32) -> Payload;
    /// Out-neighbors of `idx` under `rel`, sorted by index.
    fn neighbor_slice(&self, idx: u32, rel: Relation) -> Cow<'_, [u32]>;
    fn index_of(&self, id: &VertexId) -> Option<u32>;
}

/// Immutable typed multigraph with sorted, duplicate-free adjacency.
///
/// Vertex indices follow `VertexId` order, so the same records in any order
/// build the identical graph.
#[derive(Debug, Clone, PartialEq)]
pub struct HeteroGraph {
    vertices: Vec<VertexId>,
    payloads: Vec<Payload>,
    index: HashMap<VertexId, u32>,
    adj: Vec<Csr>,
}

impl HeteroGraph {
    pub(crate) fn from_parts(
        vertices: BTreeSet<VertexId>,
        mut payloads_by_id: HashMap<VertexId, Payload>,
        edges: Vec<(VertexId, Relation, VertexId)>,
    ) -> Result<Self, GraphError> {
        let vertices: Vec<VertexId> = vertices.into_iter().collect();
        let index: HashMap<VertexId, u32> = vertices
            .iter()
            .enumerate()
            .map(|(i, v)| (v.clone(), i as u32))
            .collect();
        let payloads = vertices
            .iter()
            .map(|v| payloads_by_id.remove(v).unwrap_or_default())
            .collect();
        let mut pairs: Vec<Vec<(u32, u32)>> = vec![Vec::new(); Relation::COUNT];
        for (from, rel, to) in edges {
            if !rel.allows(from.kind, to.kind) {
                return Err(GraphError::EndpointKind {
                    relation: rel,
                    from: from.kind,
                    to: to.kind,
                });
            }
            let f = *index.get(&from).ok_or(GraphError::UnknownVertex(from))?;
            let t = *index.get(&to).ok_or(GraphError::UnknownVertex(to))?;
            pairs[rel.index()].push((f, t));
            pairs[rel.inverse().index()].push((t, f));
        }
        let n = vertices.len();
        let adj = pairs
            .into_iter()
            .map(|mut p| {
                p.sort_unstable();
                p.dedup();
                Csr::from_pairs(n, &p)
            })
            .collect();
        Ok(Self {
            vertices,
            payloads,
            index,
            adj,
        })
    }

    pub fn vertices(&self) -> &[VertexId] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn contains(&self, id: &VertexId) -> bool {
        self.index.contains_key(id)
    }

    pub fn index(&self, id: &VertexId) -> Result<u32, GraphError> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| GraphError::UnknownVertex(id.clone()))
    }

    pub fn neighbor_indices(&self, idx: u32, rel: Relation) -> &[u32] {
        self.adj[rel.index()].row(idx)
    }

    /// Sorted out-neighbors of `v` under `rel`.
    pub fn neighbors(&self, v: &VertexId, rel: Relation) -> Result<Vec<VertexId>, GraphError> {
        let idx = self.index(v)?;
        Ok(self
            .neighbor_indices(idx, rel)
            .iter()
            .map(|j| self.vertices[*j as usize].clone())
            .collect())
    }

    pub fn degree(&self, idx: u32, rel: Relation) -> usize {
        self.neighbor_indices(idx, rel).len()
    }

    pub fn edge_count(&self, rel: Relation) -> usize {
        self.adj[rel.index()].targets.len()
    }

    pub fn total_edge_count(&self) -> usize {
        self.adj.iter().map(|a| a.targets.len()).sum()
    }

    pub fn count_kind(&self, kind: VertexKind) -> usize {
        self.vertices.iter().filter(|v| v.kind == kind).count()
    }

    /// Indices of all vertices of `kind`, ascending.
    pub fn indices_of_kind(&self, kind: VertexKind) -> Vec<u32> {
        (0..self.len() as u32)
            .filter(|i| self.vertices[*i as usize].kind == kind)
            .collect()
    }

    /// All `(from, rel, to)` index triples of one relation.
    pub fn edges(&self, rel: Relation) -> impl Iterator<Item = (u32, u32)> + '_ {
        (0..self.len() as u32)
            .flat_map(move |s| self.neighbor_indices(s, rel).iter().map(move |t| (s, *t)))
    }

    /// Copy of this graph without the given Invested pairs (and their inverses).
    pub fn without_invested(&self, removed: &[(u32, u32)]) -> HeteroGraph {
        let drop: std::collections::HashSet<(u32, u32)> = removed.iter().copied().collect();
        let mut g = self.clone();
        let n = self.len();
        let keep = |rel: Relation, flip: bool| -> Csr {
            let pairs: Vec<(u32, u32)> = self
                .edges(rel)
                .filter(|(s, t)| {
                    let key = if flip { (*t, *s) } else { (*s, *t) };
                    !drop.contains(&key)
                })
                .collect();
            Csr::from_pairs(n, &pairs)
        };
        g.adj[Relation::Invested.index()] = keep(Relation::Invested, false);
        g.adj[Relation::InvestedBy.index()] = keep(Relation::InvestedBy, true);
        g
    }
}

impl GraphView for HeteroGraph {
    fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    fn vertex(&self, idx: u32) -> &VertexId {
        &self.vertices[idx as usize]
    }

    fn payload(&self, idx: u32) -> Payload {
        self.payloads[idx as usize]
    }

    fn neighbor_slice(&self, idx: u32, rel: Relation) -> Cow<'_, [u32]> {
        Cow::Borrowed(self.neighbor_indices(idx, rel))
    }

    fn index_of(&self, id: &VertexId) -> Option<u32> {
        self.index.get(id).copied()
    }
}

/// Build the graph from validated records.
pub fn build_graph(
    projects: &[ProjectRecord],
    investors: &[InvestorRecord],
    bins: &GoalBins,
) -> Result<HeteroGraph, GraphError> {
    let mut vertices = BTreeSet::new();
    let mut payloads = HashMap::new();
    let mut edges = Vec::new();
    for p in projects {
        let v = VertexId::project(&p.id);
        if !vertices.insert(v.clone()) {
            return Err(GraphError::DuplicateVertex(v));
        }
        payloads.insert(
            v.clone(),
            Payload {
                goal_amount: p.goal_amount,
                updates_count: p.updates_count,
                comments_count: p.comments_count,
                investment_number: 0,
            },
        );
        let features = [
            (Relation::HasCategory, VertexId::category(p.meta_category)),
            (
                Relation::HasGoalBin,
                VertexId::goal_bin(bin_goal(p.goal_amount, bins)?),
            ),
            (Relation::HasLocation, VertexId::location(&p.location)),
            (Relation::HasSeason, VertexId::season(p.season())),
        ];
        for (rel, f) in features {
            vertices.insert(f.clone());
            edges.push((v.clone(), rel, f));
        }
    }
    for inv in investors {
        let v = VertexId::investor(&inv.id);
        if !vertices.insert(v.clone()) {
            return Err(GraphError::DuplicateVertex(v));
        }
        payloads.insert(
            v.clone(),
            Payload {
                investment_number: inv.investment_number() as u32,
                ..Payload::default()
            },
        );
        let loc = VertexId::location(&inv.location);
        vertices.insert(loc.clone());
        edges.push((v.clone(), Relation::HasLocation, loc));
        for p in &inv.invested_project_ids {
            edges.push((v.clone(), Relation::Invested, VertexId::project(p)));
        }
    }
    HeteroGraph::from_parts(vertices, payloads, edges)
}
