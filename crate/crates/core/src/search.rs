//! Nearest-neighbor queries over embeddings and investor recommendation.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::graph::{GraphError, GraphOverlay, HeteroGraph, QueryFeatures, Relation, VertexId, VertexKind};
use crate::rgcn::{forward_subset, EmbeddingTable, ModelParams, RgcnError};

/// Similar projects gathered per query. Most projects have only a handful of
/// backers, so the pool must be wide enough to yield a useful investor list.
pub const DEFAULT_K_PROJECTS: usize = 50;
pub const DEFAULT_K_INVESTORS: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum SearchError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("no trained model loaded")]
    NoModel,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Rgcn(#[from] RgcnError),
}

pub fn euclidean(a: &[f64], b: &[f64]) -> Result<f64, SearchError> {
    if a.len() != b.len() {
        return Err(SearchError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(crate::numeric::squared_distance(a, b).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: VertexId,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnnResult {
    pub neighbors: Vec<Neighbor>,
    /// Fewer than `k` candidates existed; every candidate was returned.
    pub truncated: bool,
}

fn by_distance_then_id(a: &Neighbor, b: &Neighbor) -> Ordering {
    a.distance.total_cmp(&b.distance).then_with(|| a.id.cmp(&b.id))
}

/// Exact k nearest rows of `kind` by linear scan; ties go to the lower key.
pub fn knn(
    table: &EmbeddingTable,
    query: &[f64],
    k: usize,
    kind: Option<VertexKind>,
) -> Result<KnnResult, SearchError> {
    if k == 0 {
        return Err(SearchError::ZeroK);
    }
    if query.len() != table.dim() {
        return Err(SearchError::DimensionMismatch {
            left: query.len(),
            right: table.dim(),
        });
    }
    let mut all: Vec<Neighbor> = table
        .iter()
        .filter(|(id, _)| kind.is_none_or(|k| id.kind == k))
        .map(|(id, row)| Neighbor {
            id: id.clone(),
            distance: crate::numeric::squared_distance(row, query).sqrt(),
        })
        .collect();
    let truncated = all.len() < k;
    if all.len() > k {
        all.select_nth_unstable_by(k - 1, by_distance_then_id);
        all.truncate(k);
    }
    all.sort_by(by_distance_then_id);
    Ok(KnnResult {
        neighbors: all,
        truncated,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedInvestor {
    pub investor_id: String,
    pub distance: f64,
    /// Similar projects this investor backed, nearest to the query first.
    pub supporting_project_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationQuery {
    pub features: QueryFeatures,
    pub k_projects: usize,
    pub k_investors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarProject {
    pub project_id: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationResult {
    pub query: RecommendationQuery,
    pub similar_projects: Vec<SimilarProject>,
    pub investors: Vec<RankedInvestor>,
}

/// Embed a virtual project carrying `features`, take its `k_projects`
/// nearest real projects, and rank their investors by distance to the
/// virtual project.
pub fn recommend_investors(
    g: &HeteroGraph,
    params: Option<&ModelParams>,
    emb: &EmbeddingTable,
    features: &QueryFeatures,
    k_projects: usize,
    k_investors: usize,
) -> Result<RecommendationResult, SearchError> {
    let params = params.ok_or(SearchError::NoModel)?;
    if emb.is_empty() {
        return Err(SearchError::NoModel);
    }
    let mut result = RecommendationResult {
        query: RecommendationQuery {
            features: features.clone(),
            k_projects,
            k_investors,
        },
        similar_projects: Vec::new(),
        investors: Vec::new(),
    };

    let mut overlay = GraphOverlay::new(g);
    let v = overlay.add_virtual_project(features);
    let table = forward_subset(&overlay, params, std::slice::from_ref(&v))?;
    let q = table.get(&v).expect("target is embedded");

    if k_projects == 0 {
        return Ok(result);
    }
    let similar = knn(emb, q, k_projects, Some(VertexKind::Project))?.neighbors;

    // investor key -> supporting projects in similarity order
    let mut backers: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for n in &similar {
        let Ok(p) = g.index(&n.id) else { continue };
        for &i in g.neighbor_indices(p, Relation::InvestedBy) {
            backers
                .entry(g.vertices()[i as usize].key.as_str())
                .or_default()
                .push(n.id.key.clone());
        }
    }
    result.similar_projects = similar
        .into_iter()
        .map(|n| SimilarProject {
            project_id: n.id.key,
            distance: n.distance,
        })
        .collect();

    let mut ranked: Vec<RankedInvestor> = Vec::with_capacity(backers.len());
    for (key, supporting) in backers {
        let Some(row) = emb.get(&VertexId::investor(key)) else { continue };
        ranked.push(RankedInvestor {
            investor_id: key.to_string(),
            distance: euclidean(row, q)?,
            supporting_project_ids: supporting,
        });
    }
    ranked.sort_by(|a, b| {
        a.distance
            .total_cmp(&b.distance)
            .then_with(|| a.investor_id.cmp(&b.investor_id))
    });
    ranked.truncate(k_investors);
    result.investors = ranked;
    Ok(result)
}
