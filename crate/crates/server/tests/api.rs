use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::OnceLock;

use axum::body::{to_bytes, Body};
use axum::http::{Request, StatusCode};
use axum::Router;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use tower::ServiceExt;

use crowdsearch_core::analytics::{brush_summary, investor_detail, temporal_histogram, TreemapMode};
use crowdsearch_core::graph::QueryFeatures;
use crowdsearch_core::ingest::{
    normalize_location, Dataset, GoalBins, InvestorRecord, MetaCategory, ProjectRecord, Season, YearMonth,
};
use crowdsearch_core::projection::ProjectionConfig;
use crowdsearch_core::rgcn::TrainConfig;
use crowdsearch_core::search::recommend_investors;
use crowdsearch_core::snapshot::{build, Snapshot};
use crowdsearch_core::synth::{generate, SynthConfig};
use crowdsearch_server::api::{run_selection, SelectionRequest};
use crowdsearch_server::polygon::Polygon;
use crowdsearch_server::state::ProjectionPoint;
use crowdsearch_server::{router, AppState, Served};

struct Fixture {
    dir: PathBuf,
    state: AppState,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap().keep();
        let corpus = generate(&SynthConfig::default()).unwrap();
        let cfg = TrainConfig {
            epochs: 40,
            layer_dims: vec![16, 8],
            ..TrainConfig::default()
        };
        let mut snap = build(corpus.dataset, GoalBins::default(), &cfg, false).unwrap();
        snap.project(&ProjectionConfig { epochs: 60, ..ProjectionConfig::default() }, false)
            .unwrap();
        snap.write(&dir).unwrap();
        let state = AppState::new(Served::load(&dir).unwrap());
        Fixture { dir, state }
    })
}

fn app() -> Router {
    router(fixture().state.clone())
}

async fn call(app: Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.oneshot(req).await.unwrap();
    let status = resp.status();
    (status, to_bytes(resp.into_body(), usize::MAX).await.unwrap().to_vec())
}

async fn call_json(method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (s, b) = call(app(), method, uri, body).await;
    (s, serde_json::from_slice(&b).unwrap())
}

fn validate(schema: &str, instance: &Value) {
    let path = format!("{}/schemas/{schema}.json", env!("CARGO_MANIFEST_DIR"));
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let v = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = v.iter_errors(instance).map(|e| format!("{} at {}", e, e.instance_path)).collect();
    assert!(errors.is_empty(), "{errors:#?}");
}

fn served() -> std::sync::Arc<Served> {
    fixture().state.current()
}

fn query() -> Value {
    json!({ "category": "TechnologyInnovation", "goal_amount": 60000, "location": "US-CA", "season": "2016Q2" })
}

#[tokio::test]
async fn health_reports_metadata() {
    let (s, v) = call_json("GET", "/health", None).await;
    assert_eq!(s, StatusCode::OK);
    validate("health", &v);
    assert_eq!(v["meta"]["counts"]["projects"], 300);
    assert_eq!(v["meta"]["counts"]["layout_points"], 390);
}

#[tokio::test]
async fn projection_lists_every_layout_point() {
    let (s, v) = call_json("GET", "/projection", None).await;
    assert_eq!(s, StatusCode::OK);
    validate("projection", &v);
    let points = v["points"].as_array().unwrap();
    assert_eq!(points.len(), served().snapshot.layout.len());
    let kinds: BTreeSet<&str> = points.iter().map(|p| p["kind"].as_str().unwrap()).collect();
    assert_eq!(kinds, BTreeSet::from(["investor", "project"]));
    for p in points.iter().filter(|p| p["kind"] == "project") {
        let want = served().backers.get(p["id"].as_str().unwrap()).cloned().unwrap_or_default();
        assert_eq!(p["investors"], json!(want));
    }
}

#[tokio::test]
async fn recommend_equals_library_call() {
    let (s, v) = call_json("POST", "/recommend", Some(query())).await;
    assert_eq!(s, StatusCode::OK);
    validate("recommend", &v);
    let snap = &served().snapshot;
    let features = QueryFeatures {
        category: MetaCategory::TechnologyInnovation,
        goal_bin: 2,
        location: "US-CA".parse().unwrap(),
        season: "2016Q2".parse().unwrap(),
    };
    let direct = recommend_investors(&snap.graph, Some(&snap.params), &snap.embeddings, &features, 50, 10).unwrap();
    assert_eq!(v, serde_json::to_value(&direct).unwrap());
    assert_eq!(v["investors"].as_array().unwrap().len(), 10);

    let mut q = query();
    q["k"] = json!(0);
    let (s, v) = call_json("POST", "/recommend", Some(q)).await;
    assert_eq!(s, StatusCode::OK);
    assert!(v["investors"].as_array().unwrap().is_empty());

    // labels, main categories and goal bins are accepted too
    let q = json!({ "category": "Technology & Innovation", "goal_bin": 2, "location": "US-CA", "season": "2016Q2" });
    assert_eq!(call_json("POST", "/recommend", Some(q)).await.1, serde_json::to_value(&direct).unwrap());
    let q = json!({ "category": "Design", "goal_bin": 2, "location": "US-CA", "season": "2016Q2" });
    assert_eq!(call_json("POST", "/recommend", Some(q)).await.0, StatusCode::OK);
}

#[tokio::test]
async fn recommend_rejects_bad_fields_by_name() {
    let cases = [
        ("category", json!("Kitchenware")),
        ("category", json!(3)),
        ("location", json!("Atlantis")),
        ("season", json!("2016Q5")),
        ("goal_amount", json!(-5)),
        ("k", json!(-1)),
        ("k_projects", json!("many")),
        ("extra", json!(1)),
    ];
    for (field, value) in cases {
        let mut q = query();
        q[field] = value;
        let (s, v) = call_json("POST", "/recommend", Some(q)).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{field}");
        assert_eq!(v["field"], field);
        validate("error", &v);
    }
    let mut q = query();
    q.as_object_mut().unwrap().remove("season");
    assert_eq!(call_json("POST", "/recommend", Some(q)).await.1["field"], "season");
    let mut q = query();
    q["goal_bin"] = json!(1);
    assert_eq!(call_json("POST", "/recommend", Some(q)).await.0, StatusCode::BAD_REQUEST);
    let mut q = query();
    q.as_object_mut().unwrap().remove("goal_amount");
    q["goal_bin"] = json!(4);
    assert_eq!(call_json("POST", "/recommend", Some(q)).await.1["field"], "goal_bin");

    let req = Request::post("/recommend").body(Body::from("{not json")).unwrap();
    let resp = app().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn selection_of_one_investor() {
    let s = served();
    let ds = &s.snapshot.dataset;
    let inv = ds.investors.iter().find(|i| i.invested_project_ids.len() == 3).unwrap_or(&ds.investors[0]);
    let (st, v) = call_json("POST", "/selection/temporal", Some(json!({ "investor_ids": [inv.id] }))).await;
    assert_eq!(st, StatusCode::OK);
    validate("selection_temporal", &v);
    let n = inv.invested_project_ids.len();
    assert_eq!(v["project_count"], n);
    let total: u64 = v["histogram"]["seasons"].as_array().unwrap().iter().map(|s| s["total"].as_u64().unwrap()).sum();
    assert_eq!(total as usize, n);
    assert_eq!(v["investors"]["ids"], json!([inv.id]));
    assert!(v["summary"].is_null());
}

#[tokio::test]
async fn selection_brush_matches_direct_aggregates() {
    let s = served();
    let ds = &s.snapshot.dataset;
    let ids: Vec<&str> = ds.investors.iter().take(7).map(|i| i.id.as_str()).collect();
    let body = json!({ "investor_ids": ids, "brush": "2016Q1..2017Q2" });
    let (st, v) = call_json("POST", "/selection/temporal", Some(body)).await;
    assert_eq!(st, StatusCode::OK);
    validate("selection_temporal", &v);

    let mut seen = BTreeSet::new();
    let projects: Vec<&ProjectRecord> = ids
        .iter()
        .flat_map(|id| ds.projects_of(ds.investor(id).unwrap()))
        .filter(|p| seen.insert(p.id.clone()))
        .collect();
    let lo: Season = "2016Q1".parse().unwrap();
    let hi: Season = "2017Q2".parse().unwrap();
    assert_eq!(v["histogram"], serde_json::to_value(temporal_histogram(projects.iter().copied())).unwrap());
    let summary = brush_summary(projects.iter().copied(), lo, hi, &s.snapshot.bins).unwrap();
    assert_eq!(v["summary"], serde_json::to_value(summary).unwrap());

    let (st, v) = call_json("POST", "/selection/temporal", Some(json!({ "investor_ids": ids, "brush": "2017Q2..2016Q1" }))).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    assert_eq!(v["field"], "brush");
}

#[tokio::test]
async fn polygon_around_everything_equals_all_ids() {
    let s = served();
    let all: Vec<&str> = s.snapshot.dataset.investors.iter().map(|i| i.id.as_str()).collect();
    let by_ids = json!({ "investor_ids": all, "brush": "2014Q1..2017Q4", "page_size": 1000 });
    let by_poly = json!({
        "polygon": [[-0.1, -0.1], [1.1, -0.1], [1.1, 1.1], [-0.1, 1.1]],
        "brush": "2014Q1..2017Q4",
        "page_size": 1000
    });
    let (a, va) = call_json("POST", "/selection/temporal", Some(by_ids)).await;
    let (b, vb) = call_json("POST", "/selection/temporal", Some(by_poly)).await;
    assert_eq!((a, b), (StatusCode::OK, StatusCode::OK));
    assert_eq!(va, vb);
    assert_eq!(va["investors"]["total"], 90);
}

#[tokio::test]
async fn malformed_selections_are_rejected() {
    let bad = [
        json!({ "polygon": [[0, 0], [1, 1]] }),
        json!({ "polygon": [[0, 0], [1, 1], [1, 0], [0, 1]] }),
        json!({ "polygon": [[0, 0], [1, "x"], [1, 0]] }),
        json!({ "polygon": "square" }),
    ];
    for body in bad {
        let (s, v) = call_json("POST", "/selection/temporal", Some(body)).await;
        assert_eq!(s, StatusCode::BAD_REQUEST);
        assert_eq!(v["field"], "polygon");
    }
    let (s, v) = call_json("POST", "/selection/temporal", Some(json!({ "page_size": 0 }))).await;
    assert_eq!((s, v["field"].as_str()), (StatusCode::BAD_REQUEST, Some("page_size")));
    let (s, v) = call_json("POST", "/selection/temporal", Some(json!({ "investor_ids": ["nobody"] }))).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["id"], "nobody");
    validate("error", &v);
}

#[tokio::test]
async fn pages_partition_the_selection() {
    let poly = json!([[-1, -1], [2, -1], [2, 2], [-1, 2]]);
    let mut ids = Vec::new();
    for page in 0..5 {
        let body = json!({ "polygon": poly, "page": page, "page_size": 25 });
        let (_, v) = call_json("POST", "/selection/temporal", Some(body)).await;
        ids.extend(v["investors"]["ids"].as_array().unwrap().iter().map(|x| x.as_str().unwrap().to_string()));
    }
    let mut sorted = ids.clone();
    sorted.sort();
    sorted.dedup();
    assert_eq!(ids, sorted);
    assert_eq!(ids.len(), 90);
}

/// Winding number of `poly` around `p`; nonzero means inside.
fn winding(poly: &[[f64; 2]], p: [f64; 2]) -> i32 {
    let mut w = 0;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        let side = (b[0] - a[0]) * (p[1] - a[1]) - (p[0] - a[0]) * (b[1] - a[1]);
        if a[1] <= p[1] {
            if b[1] > p[1] && side > 0.0 {
                w += 1;
            }
        } else if b[1] <= p[1] && side < 0.0 {
            w -= 1;
        }
    }
    w
}

/// Star-shaped polygon: sorted angles, random radii, so it never self-intersects.
fn star(rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    let n = rng.gen_range(3..12);
    let c = [rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8)];
    let mut angles: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
    angles.sort_by(f64::total_cmp);
    angles
        .iter()
        .map(|t| {
            let r = rng.gen_range(0.05..0.6);
            [c[0] + r * t.cos(), c[1] + r * t.sin()]
        })
        .collect()
}

#[test]
fn polygon_hits_agree_with_winding_oracle() {
    let s = served();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..40 {
        let verts = star(&mut rng);
        let Ok(poly) = Polygon::new(verts.clone()) else { continue };
        let mut want_investors = BTreeSet::new();
        let mut want_projects = Vec::new();
        for p in &s.projection.points {
            let inside = winding(&verts, p.xy()) != 0;
            assert_eq!(poly.contains(p.xy()), inside, "{:?}", p.xy());
            if inside {
                match p {
                    ProjectionPoint::Investor { id, .. } => {
                        want_investors.insert(id.clone());
                    }
                    ProjectionPoint::Project { id, .. } => want_projects.push(id.clone()),
                }
            }
        }
        for p in want_projects {
            want_investors.extend(s.backers.get(&p).into_iter().flatten().cloned());
        }
        let req = SelectionRequest {
            investor_ids: vec![],
            project_ids: vec![],
            polygon: Some(poly),
            brush: None,
            page: 0,
            page_size: 1000,
        };
        let got = run_selection(&s, &req).unwrap();
        assert_eq!(got.investors.ids, want_investors.into_iter().collect::<Vec<_>>());
    }
}

proptest! {
    #[test]
    fn ray_casting_matches_winding_number(seed in any::<u64>(), px in -0.2f64..1.2, py in -0.2f64..1.2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let verts = star(&mut rng);
        if let Ok(poly) = Polygon::new(verts.clone()) {
            prop_assert_eq!(poly.contains([px, py]), winding(&verts, [px, py]) != 0);
        }
    }
}

#[tokio::test]
async fn detail_equals_direct_analytics() {
    let s = served();
    let ds = &s.snapshot.dataset;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..5 {
        let inv = &ds.investors[rng.gen_range(0..ds.investors.len())];
        let uri = format!("/investor/{}/detail?brush=2015Q1..2016Q4&mode=goal", inv.id);
        let (st, v) = call_json("GET", &uri, None).await;
        assert_eq!(st, StatusCode::OK);
        validate("investor_detail", &v);
        let projects: Vec<&ProjectRecord> = ds.projects_of(inv).collect();
        let brush = Some(("2015Q1".parse().unwrap(), "2016Q4".parse().unwrap()));
        let direct = investor_detail(&inv.id, &projects, brush, TreemapMode::Goal, &s.detail).unwrap();
        assert_eq!(v, serde_json::to_value(direct).unwrap());
    }
    let id = &ds.investors[0].id;
    let (st, v) = call_json("GET", &format!("/investor/{id}/detail?brush=2030Q1..2030Q4"), None).await;
    assert_eq!(st, StatusCode::OK);
    validate("investor_detail", &v);
    assert!(v["treemap"].as_array().unwrap().is_empty());
    assert!(v["wordstream"]["boxes"].as_array().unwrap().is_empty());
    assert!(v["seasons"].as_array().unwrap().is_empty());
    let (st, v) = call_json("GET", &format!("/investor/{id}/detail"), None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(v["mode"], "category");

    for (uri, field) in [
        (format!("/investor/{id}/detail?brush=2016Q3..2016Q1"), "brush"),
        (format!("/investor/{id}/detail?brush=soon"), "brush"),
        (format!("/investor/{id}/detail?mode=pie"), "mode"),
    ] {
        let (st, v) = call_json("GET", &uri, None).await;
        assert_eq!(st, StatusCode::BAD_REQUEST);
        assert_eq!(v["field"], field);
    }
    let (st, v) = call_json("GET", "/investor/nobody/detail", None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    assert_eq!(v["id"], "nobody");
    validate("error", &v);
}

fn project(id: &str, main: &str, ym: &str) -> ProjectRecord {
    let meta = crowdsearch_core::ingest::map_category(main).unwrap();
    ProjectRecord {
        id: id.into(),
        title: id.into(),
        story: "dice board quest".into(),
        main_category: main.into(),
        sub_category: String::new(),
        goal_amount: 5000.0,
        launch_time: ym.parse::<YearMonth>().unwrap(),
        updates_count: 2,
        comments_count: 5,
        location_raw: "Austin, TX".into(),
        reward_levels: vec![10.0],
        meta_category: meta,
        location: normalize_location("Austin, TX").code,
    }
}

#[tokio::test]
async fn games_only_investor_has_one_color_treemap() {
    let projects = vec![
        project("1", "Games", "2016-01"),
        project("2", "Games", "2016-05"),
        project("3", "Games", "2016-11"),
        project("4", "Art", "2016-02"),
    ];
    let inv = |id: &str, ps: &[&str]| InvestorRecord {
        id: id.into(),
        location_raw: "Austin, TX".into(),
        location: normalize_location("Austin, TX").code,
        invested_project_ids: ps.iter().map(|s| s.to_string()).collect(),
    };
    let ds = Dataset::new(projects, vec![inv("10", &["1", "2", "3"]), inv("11", &["3", "4"])]).unwrap();
    let cfg = TrainConfig { epochs: 2, layer_dims: vec![4], ..TrainConfig::default() };
    let snap: Snapshot = build(ds, GoalBins::default(), &cfg, false).unwrap();
    let app = router(AppState::new(Served::new(snap)));
    let (st, body) = call(app.clone(), "GET", "/investor/10/detail?mode=goal", None).await;
    assert_eq!(st, StatusCode::OK);
    let v: Value = serde_json::from_slice(&body).unwrap();
    let cats: BTreeSet<&str> = v["treemap"].as_array().unwrap().iter().map(|r| r["category"].as_str().unwrap()).collect();
    assert_eq!(cats, BTreeSet::from(["Games"]));

    let (_, body) = call(app.clone(), "POST", "/selection/temporal", Some(json!({ "investor_ids": ["10"] }))).await;
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["project_count"], 3);

    // an unprojected snapshot serves an empty projection
    let (st, body) = call(app, "GET", "/projection", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(serde_json::from_slice::<Value>(&body).unwrap(), json!({ "points": [] }));
}

#[tokio::test]
async fn meta_endpoints() {
    let (s, v) = call_json("GET", "/meta/categories", None).await;
    assert_eq!(s, StatusCode::OK);
    validate("meta_categories", &v);
    let n: usize = v.as_array().unwrap().iter().map(|c| c["main_categories"].as_array().unwrap().len()).sum();
    assert_eq!(n, 15);

    let (_, v) = call_json("GET", "/meta/bins", None).await;
    validate("meta_bins", &v);
    assert_eq!(v[0]["lo"], 0.0);
    assert_eq!(v[3]["hi"], Value::Null);
    assert_eq!(v[1]["lo"], v[0]["hi"]);

    let (_, v) = call_json("GET", "/meta/seasons", None).await;
    validate("meta_seasons", &v);
    let seasons: Vec<Season> = serde_json::from_value(v["seasons"].clone()).unwrap();
    assert!(seasons.windows(2).all(|w| w[0].next() == w[1]));
    assert_eq!(v["first"], json!(seasons[0]));
}

#[tokio::test]
async fn unknown_routes_are_404() {
    let (s, v) = call_json("GET", "/nothing/here", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    validate("error", &v);
    let (s, _) = call(app(), "GET", "/recommend", None).await;
    assert_eq!(s, StatusCode::METHOD_NOT_ALLOWED);
}

#[tokio::test]
async fn repeated_calls_are_byte_identical() {
    let inv = served().snapshot.dataset.investors[3].id.clone();
    let requests = [
        ("GET", "/health".to_string(), None),
        ("GET", "/projection".to_string(), None),
        ("POST", "/recommend".to_string(), Some(query())),
        ("POST", "/selection/temporal".to_string(), Some(json!({ "investor_ids": [inv], "brush": "2016Q1" }))),
        ("GET", format!("/investor/{inv}/detail?mode=goal"), None),
        ("GET", "/meta/seasons".to_string(), None),
    ];
    for (m, uri, body) in requests {
        let a = call(app(), m, &uri, body.clone()).await;
        let b = call(app(), m, &uri, body).await;
        assert_eq!(a.0, StatusCode::OK, "{uri}");
        assert!(a == b, "{uri}");
    }
}

async fn spawn_server() -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app()).await.unwrap() });
    format!("http://{addr}")
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_identical_requests_return_identical_bodies() {
    let base = spawn_server().await;
    let client = reqwest::Client::new();
    let mut tasks = Vec::new();
    for i in 0..100 {
        let (client, base) = (client.clone(), base.clone());
        tasks.push(tokio::spawn(async move {
            let r = if i % 2 == 0 {
                client.get(format!("{base}/projection")).send().await.unwrap()
            } else {
                client.post(format!("{base}/recommend")).json(&query()).send().await.unwrap()
            };
            assert_eq!(r.status(), 200);
            (i % 2, r.bytes().await.unwrap())
        }));
    }
    let mut bodies: [BTreeSet<Vec<u8>>; 2] = Default::default();
    for t in tasks {
        let (k, b) = t.await.unwrap();
        bodies[k].insert(b.to_vec());
    }
    assert_eq!(bodies[0].len(), 1);
    assert_eq!(bodies[1].len(), 1);
    assert_eq!(bodies[0].iter().next().unwrap(), &served().projection_body.to_vec());
}

#[tokio::test]
async fn reload_swaps_the_snapshot() {
    let state = AppState::new(Served::load(&fixture().dir).unwrap());
    let app = router(state.clone());
    let before = call(app.clone(), "GET", "/health", None).await;
    let mut snap = Snapshot::read(&fixture().dir).unwrap();
    snap.layout.clear();
    state.replace(Served::new(snap));
    let (_, body) = call(app.clone(), "GET", "/projection", None).await;
    assert_eq!(serde_json::from_slice::<Value>(&body).unwrap(), json!({ "points": [] }));
    assert_eq!(call(app, "GET", "/health", None).await, before);
}
