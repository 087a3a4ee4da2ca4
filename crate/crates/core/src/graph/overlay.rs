use std::borrow::Cow;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{GraphError, GraphView, HeteroGraph, Payload, Relation, VertexId, VertexKind};
use crate::ingest::{LocationCode, MetaCategory, Season};

/// Founder-specified characteristics of a hypothetical project.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QueryFeatures {
    pub category: MetaCategory,
    pub goal_bin: u8,
    pub location: LocationCode,
    pub season: Season,
}

impl QueryFeatures {
    pub fn feature_vertices(&self) -> [(Relation, VertexId); 4] {
        [
            (Relation::HasCategory, VertexId::category(self.category)),
            (Relation::HasGoalBin, VertexId::goal_bin(self.goal_bin)),
            (Relation::HasLocation, VertexId::location(&self.location)),
            (Relation::HasSeason, VertexId::season(self.season)),
        ]
    }
}

#[derive(Debug, Clone)]
struct Extra {
    id: VertexId,
    removed: bool,
}

/// Copy-on-write view over a shared [`HeteroGraph`] that can hold virtual
/// query projects. The base graph is never touched, so readers of the base
/// never observe a partially inserted vertex.
///
/// Overlay vertices get indices after the base vertices; adjacency lists stay
/// sorted by index.
#[derive(Debug, Clone)]
pub struct GraphOverlay<'g> {
    base: &'g HeteroGraph,
    extra: Vec<Extra>,
    extra_index: HashMap<VertexId, u32>,
    extra_adj: HashMap<(u32, Relation), Vec<u32>>,
    next_virtual: usize,
}

impl<'g> GraphOverlay<'g> {
    pub const VIRTUAL_PREFIX: &'static str = "~virtual-";

    pub fn new(base: &'g HeteroGraph) -> Self {
        Self {
            base,
            extra: Vec::new(),
            extra_index: HashMap::new(),
            extra_adj: HashMap::new(),
            next_virtual: 0,
        }
    }

    pub fn base(&self) -> &'g HeteroGraph {
        self.base
    }

    pub fn is_virtual(&self, id: &VertexId) -> bool {
        id.kind == VertexKind::Project && id.key.starts_with(Self::VIRTUAL_PREFIX)
    }

    fn live_index(&self, id: &VertexId) -> Option<u32> {
        self.base.index_of(id).or_else(|| {
            self.extra_index.get(id).copied().filter(|i| {
                !self.extra[*i as usize - self.base.len()].removed
            })
        })
    }

    fn push_vertex(&mut self, id: VertexId) -> u32 {
        let idx = (self.base.len() + self.extra.len()) as u32;
        self.extra_index.insert(id.clone(), idx);
        self.extra.push(Extra { id, removed: false });
        idx
    }

    fn push_edge(&mut self, from: u32, rel: Relation, to: u32) {
        for (s, r, t) in [(from, rel, to), (to, rel.inverse(), from)] {
            let list = self.extra_adj.entry((s, r)).or_default();
            if let Err(pos) = list.binary_search(&t) {
                list.insert(pos, t);
            }
        }
    }

    /// Insert a virtual project with only feature edges. Missing feature
    /// values are created. Every call yields a new vertex.
    pub fn add_virtual_project(&mut self, features: &QueryFeatures) -> VertexId {
        let id = VertexId::project(format!("{}{}", Self::VIRTUAL_PREFIX, self.next_virtual));
        self.next_virtual += 1;
        let v = self.push_vertex(id.clone());
        for (rel, fid) in features.feature_vertices() {
            let f = match self.live_index(&fid) {
                Some(f) => f,
                None => self.push_vertex(fid),
            };
            self.push_edge(v, rel, f);
        }
        id
    }

    /// Remove a virtual project and its edges. Feature values created for it stay.
    pub fn remove_virtual(&mut self, id: &VertexId) -> Result<(), GraphError> {
        let idx = match self.extra_index.get(id) {
            Some(i) if self.is_virtual(id) && !self.extra[*i as usize - self.base.len()].removed => *i,
            _ => return Err(GraphError::UnknownVertex(id.clone())),
        };
        self.extra[idx as usize - self.base.len()].removed = true;
        for rel in Relation::ALL {
            if let Some(targets) = self.extra_adj.remove(&(idx, rel)) {
                for t in targets {
                    if let Some(list) = self.extra_adj.get_mut(&(t, rel.inverse())) {
                        list.retain(|x| *x != idx);
                    }
                }
            }
        }
        Ok(())
    }

    pub fn neighbors(&self, id: &VertexId, rel: Relation) -> Result<Vec<VertexId>, GraphError> {
        let idx = self
            .live_index(id)
            .ok_or_else(|| GraphError::UnknownVertex(id.clone()))?;
        Ok(self
            .neighbor_slice(idx, rel)
            .iter()
            .map(|j| self.vertex(*j).clone())
            .collect())
    }
}

impl GraphView for GraphOverlay<'_> {
    fn vertex_count(&self) -> usize {
        self.base.len() + self.extra.len()
    }

    fn vertex(&self, idx: u32) -> &VertexId {
        let i = idx as usize;
        if i < self.base.len() {
            GraphView::vertex(self.base, idx)
        } else {
            &self.extra[i - self.base.len()].id
        }
    }

    fn payload(&self, idx: u32) -> Payload {
        if (idx as usize) < self.base.len() {
            GraphView::payload(self.base, idx)
        } else {
            Payload::default()
        }
    }

    fn neighbor_slice(&self, idx: u32, rel: Relation) -> Cow<'_, [u32]> {
        let base: &[u32] = if (idx as usize) < self.base.len() {
            self.base.neighbor_indices(idx, rel)
        } else {
            &[]
        };
        match self.extra_adj.get(&(idx, rel)) {
            None => Cow::Borrowed(base),
            Some(extra) if base.is_empty() => Cow::Borrowed(extra.as_slice()),
            // Overlay indices are all larger than base indices.
            Some(extra) => Cow::Owned(base.iter().chain(extra.iter()).copied().collect()),
        }
    }

    fn index_of(&self, id: &VertexId) -> Option<u32> {
        self.live_index(id)
    }
}
