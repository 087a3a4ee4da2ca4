//! HTTP/JSON endpoints. Every handler is a pure read of the current snapshot.

use std::collections::{BTreeSet, HashMap};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use serde_json::{json, Map, Value};

use crowdsearch_core::analytics::{
    brush_summary, investor_detail, temporal_histogram, BrushSummary, InvestorDetail, TemporalHistogram,
    TreemapMode,
};
use crowdsearch_core::graph::QueryFeatures;
use crowdsearch_core::ingest::{
    bin_goal, map_category, GoalBins, LocationCode, MetaCategory, ProjectRecord, Season, MAIN_CATEGORIES,
};
use crowdsearch_core::search::{recommend_investors, RecommendationResult, DEFAULT_K_INVESTORS, DEFAULT_K_PROJECTS};

use crate::polygon::Polygon;
use crate::state::{AppState, ProjectionPoint, Served};

pub const DEFAULT_PAGE_SIZE: usize = 50;
pub const MAX_PAGE_SIZE: usize = 1000;

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/projection", get(projection))
        .route("/recommend", post(recommend))
        .route("/selection/temporal", post(selection_temporal))
        .route("/investor/{id}/detail", get(detail))
        .route("/meta/categories", get(meta_categories))
        .route("/meta/bins", get(meta_bins))
        .route("/meta/seasons", get(meta_seasons))
        .fallback(|| async { ApiError::not_found("route", None) })
        .with_state(state)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
    pub field: Option<String>,
    pub id: Option<String>,
}

impl ApiError {
    fn bad_field(field: &str, message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            message: message.into(),
            field: Some(field.to_string()),
            id: None,
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            message: message.into(),
            field: None,
            id: None,
        }
    }

    fn not_found(what: &str, id: Option<&str>) -> Self {
        Self {
            status: StatusCode::NOT_FOUND,
            message: match id {
                Some(id) => format!("unknown {what} {id:?}"),
                None => format!("unknown {what}"),
            },
            field: None,
            id: id.map(str::to_string),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            message: message.into(),
            field: None,
            id: None,
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = Map::new();
        body.insert("error".into(), Value::String(self.message));
        if let Some(f) = self.field {
            body.insert("field".into(), Value::String(f));
        }
        if let Some(id) = self.id {
            body.insert("id".into(), Value::String(id));
        }
        (self.status, Json(Value::Object(body))).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

async fn health(State(state): State<AppState>) -> Json<Value> {
    let s = state.current();
    Json(json!({ "status": "ok", "meta": s.snapshot.meta }))
}

async fn projection(State(state): State<AppState>) -> Response {
    let s = state.current();
    (
        [(header::CONTENT_TYPE, "application/json")],
        s.projection_body.clone(),
    )
        .into_response()
}

/// JSON object with typed field accessors that report the offending field.
struct Fields(Map<String, Value>);

impl Fields {
    fn parse(body: &[u8], allowed: &[&str]) -> Result<Self, ApiError> {
        let v: Value =
            serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed JSON: {e}")))?;
        let Value::Object(map) = v else {
            return Err(ApiError::bad_request("request body must be a JSON object"));
        };
        if let Some(k) = map.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(ApiError::bad_field(k, format!("unknown field {k:?}")));
        }
        Ok(Self(map))
    }

    fn get(&self, k: &str) -> Option<&Value> {
        self.0.get(k).filter(|v| !v.is_null())
    }

    fn str(&self, k: &str) -> Result<Option<&str>, ApiError> {
        match self.get(k) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(_) => Err(ApiError::bad_field(k, format!("{k} must be a string"))),
        }
    }

    fn required_str(&self, k: &str) -> Result<&str, ApiError> {
        self.str(k)?
            .ok_or_else(|| ApiError::bad_field(k, format!("{k} is required")))
    }

    fn count(&self, k: &str) -> Result<Option<usize>, ApiError> {
        match self.get(k) {
            None => Ok(None),
            Some(v) => v
                .as_u64()
                .map(|n| Some(n as usize))
                .ok_or_else(|| ApiError::bad_field(k, format!("{k} must be a non-negative integer"))),
        }
    }

    fn strings(&self, k: &str) -> Result<Vec<String>, ApiError> {
        match self.get(k) {
            None => Ok(Vec::new()),
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| {
                    v.as_str()
                        .map(str::to_string)
                        .ok_or_else(|| ApiError::bad_field(k, format!("{k} must be an array of strings")))
                })
                .collect(),
            Some(_) => Err(ApiError::bad_field(k, format!("{k} must be an array of strings"))),
        }
    }
}

/// `YYYYQn..YYYYQn` or a single season; the range must be ordered.
pub fn parse_brush(s: &str) -> Result<(Season, Season), String> {
    let (lo, hi) = s.split_once("..").unwrap_or((s, s));
    let lo: Season = lo.trim().parse().map_err(|e| format!("{e}"))?;
    let hi: Season = hi.trim().parse().map_err(|e| format!("{e}"))?;
    if lo > hi {
        return Err(format!("brush {lo}..{hi} is inverted"));
    }
    Ok((lo, hi))
}

fn parse_category(s: &str) -> Option<MetaCategory> {
    s.parse().ok().or_else(|| map_category(s).ok())
}

/// Validated recommendation request.
#[derive(Debug, Clone, PartialEq)]
pub struct RecommendRequest {
    pub features: QueryFeatures,
    pub k: usize,
    pub k_projects: usize,
}

impl RecommendRequest {
    pub const FIELDS: [&'static str; 7] = [
        "category",
        "goal_bin",
        "goal_amount",
        "location",
        "season",
        "k",
        "k_projects",
    ];

    pub fn parse(body: &[u8], bins: &GoalBins) -> Result<Self, ApiError> {
        let f = Fields::parse(body, &Self::FIELDS)?;
        let raw = f.required_str("category")?;
        let category = parse_category(raw)
            .ok_or_else(|| ApiError::bad_field("category", format!("unknown category {raw:?}")))?;
        let goal_bin = match (f.get("goal_bin"), f.get("goal_amount")) {
            (Some(_), Some(_)) => {
                return Err(ApiError::bad_field("goal_amount", "give goal_bin or goal_amount, not both"))
            }
            (Some(_), None) => {
                let b = f.count("goal_bin")?.expect("present");
                if b >= GoalBins::LEVELS {
                    return Err(ApiError::bad_field("goal_bin", format!("goal_bin must be below {}", GoalBins::LEVELS)));
                }
                b as u8
            }
            (None, Some(v)) => {
                let amount = v
                    .as_f64()
                    .ok_or_else(|| ApiError::bad_field("goal_amount", "goal_amount must be a number"))?;
                bin_goal(amount, bins).map_err(|e| ApiError::bad_field("goal_amount", e.to_string()))?
            }
            (None, None) => return Err(ApiError::bad_field("goal_bin", "goal_bin or goal_amount is required")),
        };
        let raw = f.required_str("location")?;
        let location: LocationCode = raw.parse().map_err(|e: String| ApiError::bad_field("location", e))?;
        let raw = f.required_str("season")?;
        let season: Season = raw
            .parse()
            .map_err(|e: crowdsearch_core::ingest::IngestError| ApiError::bad_field("season", e.to_string()))?;
        Ok(Self {
            features: QueryFeatures {
                category,
                goal_bin,
                location,
                season,
            },
            k: f.count("k")?.unwrap_or(DEFAULT_K_INVESTORS),
            k_projects: f.count("k_projects")?.unwrap_or(DEFAULT_K_PROJECTS),
        })
    }
}

pub fn run_recommend(s: &Served, req: &RecommendRequest) -> Result<RecommendationResult, ApiError> {
    let snap = &s.snapshot;
    recommend_investors(
        &snap.graph,
        Some(&snap.params),
        &snap.embeddings,
        &req.features,
        req.k_projects,
        req.k,
    )
    .map_err(|e| ApiError::internal(e.to_string()))
}

async fn recommend(State(state): State<AppState>, body: Bytes) -> ApiResult<RecommendationResult> {
    let s = state.current();
    let req = RecommendRequest::parse(&body, &s.snapshot.bins)?;
    let out = tokio::task::spawn_blocking(move || run_recommend(&s, &req))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(out))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionRequest {
    pub investor_ids: Vec<String>,
    pub project_ids: Vec<String>,
    pub polygon: Option<Polygon>,
    pub brush: Option<(Season, Season)>,
    pub page: usize,
    pub page_size: usize,
}

impl SelectionRequest {
    pub const FIELDS: [&'static str; 6] = ["investor_ids", "project_ids", "polygon", "brush", "page", "page_size"];

    pub fn parse(body: &[u8]) -> Result<Self, ApiError> {
        let f = Fields::parse(body, &Self::FIELDS)?;
        let polygon = match f.get("polygon") {
            None => None,
            Some(v) => {
                let bad = || ApiError::bad_field("polygon", "polygon must be an array of [x, y] pairs");
                let pts = v.as_array().ok_or_else(bad)?;
                let pts: Vec<[f64; 2]> = pts
                    .iter()
                    .map(|p| match p.as_array().map(Vec::as_slice) {
                        Some([x, y]) => Ok([x.as_f64().ok_or_else(bad)?, y.as_f64().ok_or_else(bad)?]),
                        _ => Err(bad()),
                    })
                    .collect::<Result<_, _>>()?;
                Some(Polygon::new(pts).map_err(|e| ApiError::bad_field("polygon", e.to_string()))?)
            }
        };
        let brush = f
            .str("brush")?
            .map(|b| parse_brush(b).map_err(|e| ApiError::bad_field("brush", e)))
            .transpose()?;
        let page_size = f.count("page_size")?.unwrap_or(DEFAULT_PAGE_SIZE);
        if page_size == 0 || page_size > MAX_PAGE_SIZE {
            return Err(ApiError::bad_field("page_size", format!("page_size must be in 1..={MAX_PAGE_SIZE}")));
        }
        Ok(Self {
            investor_ids: f.strings("investor_ids")?,
            project_ids: f.strings("project_ids")?,
            polygon,
            brush,
            page: f.count("page")?.unwrap_or(0),
            page_size,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvestorPage {
    pub total: usize,
    pub page: usize,
    pub page_size: usize,
    pub ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionResponse {
    pub investors: InvestorPage,
    /// Projects invested by the selected investors.
    pub project_count: usize,
    pub histogram: TemporalHistogram,
    pub summary: Option<BrushSummary>,
}

/// Selected investors: those named, those hit by the polygon, and the
/// backers of named or hit projects.
pub fn resolve_investors(s: &Served, req: &SelectionRequest) -> Result<BTreeSet<String>, ApiError> {
    let ds = &s.snapshot.dataset;
    let mut out = BTreeSet::new();
    for id in &req.investor_ids {
        if ds.investor(id).is_none() {
            return Err(ApiError::not_found("investor", Some(id)));
        }
        out.insert(id.clone());
    }
    let mut projects: Vec<&str> = Vec::new();
    for id in &req.project_ids {
        if ds.project(id).is_none() {
            return Err(ApiError::not_found("project", Some(id)));
        }
        projects.push(id);
    }
    if let Some(poly) = &req.polygon {
        for p in &s.projection.points {
            if poly.contains(p.xy()) {
                match p {
                    ProjectionPoint::Investor { id, .. } => {
                        out.insert(id.clone());
                    }
                    ProjectionPoint::Project { id, .. } => projects.push(id),
                }
            }
        }
    }
    for p in projects {
        out.extend(s.backers.get(p).into_iter().flatten().cloned());
    }
    Ok(out)
}

pub fn run_selection(s: &Served, req: &SelectionRequest) -> Result<SelectionResponse, ApiError> {
    let ds = &s.snapshot.dataset;
    let investors = resolve_investors(s, req)?;
    let mut seen = BTreeSet::new();
    let projects: Vec<&ProjectRecord> = investors
        .iter()
        .filter_map(|id| ds.investor(id))
        .flat_map(|inv| ds.projects_of(inv))
        .filter(|p| seen.insert(p.id.as_str()))
        .collect();
    let histogram = temporal_histogram(projects.iter().copied());
    let summary = req
        .brush
        .map(|(lo, hi)| brush_summary(projects.iter().copied(), lo, hi, &s.snapshot.bins))
        .transpose()
        .map_err(|e| ApiError::bad_field("brush", e.to_string()))?;
    let ids: Vec<String> = investors
        .iter()
        .skip(req.page.saturating_mul(req.page_size))
        .take(req.page_size)
        .cloned()
        .collect();
    Ok(SelectionResponse {
        investors: InvestorPage {
            total: investors.len(),
            page: req.page,
            page_size: req.page_size,
            ids,
        },
        project_count: projects.len(),
        histogram,
        summary,
    })
}

async fn selection_temporal(State(state): State<AppState>, body: Bytes) -> ApiResult<SelectionResponse> {
    let s = state.current();
    let req = SelectionRequest::parse(&body)?;
    Ok(Json(run_selection(&s, &req)?))
}

pub fn run_detail(
    s: &Served,
    id: &str,
    brush: Option<(Season, Season)>,
    mode: TreemapMode,
) -> Result<InvestorDetail, ApiError> {
    let ds = &s.snapshot.dataset;
    let inv = ds.investor(id).ok_or_else(|| ApiError::not_found("investor", Some(id)))?;
    let projects: Vec<&ProjectRecord> = ds.projects_of(inv).collect();
    investor_detail(id, &projects, brush, mode, &s.detail).map_err(|e| ApiError::bad_request(e.to_string()))
}

async fn detail(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<InvestorDetail> {
    let s = state.current();
    let brush = q
        .get("brush")
        .filter(|b| !b.is_empty())
        .map(|b| parse_brush(b).map_err(|e| ApiError::bad_field("brush", e)))
        .transpose()?;
    let mode = match q.get("mode") {
        None => TreemapMode::Category,
        Some(m) => m.parse().map_err(|e: String| ApiError::bad_field("mode", e))?,
    };
    Ok(Json(run_detail(&s, &id, brush, mode)?))
}

#[derive(Debug, Clone, Serialize)]
pub struct CategoryInfo {
    pub name: &'static str,
    pub label: &'static str,
    pub index: usize,
    pub main_categories: Vec<&'static str>,
}

async fn meta_categories() -> Json<Vec<CategoryInfo>> {
    Json(
        MetaCategory::ALL
            .iter()
            .map(|c| CategoryInfo {
                name: c.name(),
                label: c.label(),
                index: c.index(),
                main_categories: MAIN_CATEGORIES
                    .iter()
                    .copied()
                    .filter(|m| map_category(m).ok() == Some(*c))
                    .collect(),
            })
            .collect(),
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct BinInfo {
    pub level: u8,
    pub lo: f64,
    /// `None` for the unbounded top level.
    pub hi: Option<f64>,
}

async fn meta_bins(State(state): State<AppState>) -> Json<Vec<BinInfo>> {
    let s = state.current();
    Json(
        (0..GoalBins::LEVELS as u8)
            .map(|level| {
                let (lo, hi) = s.snapshot.bins.bounds(level);
                BinInfo {
                    level,
                    lo,
                    hi: hi.is_finite().then_some(hi),
                }
            })
            .collect(),
    )
}

async fn meta_seasons(State(state): State<AppState>) -> Json<Value> {
    let s = state.current();
    Json(match s.season_range {
        Some((lo, hi)) => json!({
            "first": lo,
            "last": hi,
            "seasons": Season::range(lo, hi).collect::<Vec<_>>(),
        }),
        None => json!({ "first": null, "last": null, "seasons": [] }),
    })
}
