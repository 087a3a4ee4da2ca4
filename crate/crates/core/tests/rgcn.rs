use std::collections::HashSet;

use crowdsearch_core::graph::{
    build_graph, FeatureKind, GraphOverlay, GraphView, HeteroGraph, QueryFeatures, Relation,
    VertexId, VertexKind,
};
use crowdsearch_core::ingest::{GoalBins, LocationCode, MetaCategory, Season};
use crowdsearch_core::rgcn::{
    forward, forward_subset, gradient_check, GradCheckConfig, loss, loss_and_gradients, read_params, sample_negatives, train,
    write_params, EdgeBatch, FeatureMap, ModelParams, TrainConfig, BLOCKS, SELF_LOOP,
};
use crowdsearch_core::synth::{generate, SynthConfig};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_graph(projects: usize, investors: usize, seed: u64) -> HeteroGraph {
    let c = generate(&SynthConfig {
        projects,
        investors,
        seed,
        ..SynthConfig::default()
    })
    .unwrap();
    build_graph(&c.dataset.projects, &c.dataset.investors, &GoalBins::default()).unwrap()
}

/// Dense input matrix built straight from the vertex list and payloads.
fn dense_inputs<G: GraphView>(g: &G) -> (Vec<Vec<f64>>, FeatureMap) {
    let n = g.vertex_count();
    let mut vocab: Vec<String> = (0..n as u32)
        .map(|i| g.vertex(i))
        .filter(|v| v.kind == VertexKind::FeatureValue)
        .map(|v| v.key.clone())
        .collect();
    vocab.sort();
    let cols = |i: u32| {
        let p = g.payload(i);
        [
            p.goal_amount,
            p.updates_count as f64,
            p.comments_count as f64,
            p.investment_number as f64,
        ]
    };
    let mut max = [0.0f64; 4];
    for i in 0..n as u32 {
        for (m, x) in max.iter_mut().zip(cols(i)) {
            *m = m.max(x);
        }
    }
    let dim = 3 + vocab.len() + 4;
    let x = (0..n as u32)
        .map(|i| {
            let v = g.vertex(i);
            let mut row = vec![0.0; dim];
            row[match v.kind {
                VertexKind::Investor => 0,
                VertexKind::Project => 1,
                VertexKind::FeatureValue => 2,
            }] = 1.0;
            if let Ok(k) = vocab.binary_search(&v.key) {
                if v.kind == VertexKind::FeatureValue {
                    row[3 + k] = 1.0;
                }
            }
            for (k, (c, m)) in cols(i).iter().zip(max).enumerate() {
                if m > 0.0 {
                    row[3 + vocab.len() + k] = c.ln_1p() / m.ln_1p();
                }
            }
            row
        })
        .collect();
    let fm = FeatureMap::new(vocab, max.map(f64::ln_1p));
    (x, fm)
}

/// H' = act( sum_r A_r H W_r^T + H W_0^T ) with A_r the row-normalized adjacency.
fn dense_forward<G: GraphView>(g: &G, x: &[Vec<f64>], p: &ModelParams) -> Vec<Vec<f64>> {
    let n = g.vertex_count();
    let mut h = x.to_vec();
    for (l, layer) in p.layers.iter().enumerate() {
        let (di, d_o) = (layer.d_in, layer.d_out);
        let mut a = vec![vec![vec![0.0; n]; n]; Relation::COUNT];
        for r in Relation::ALL {
            for i in 0..n {
                let nb = g.neighbor_slice(i as u32, r);
                for &j in nb.iter() {
                    a[r.index()][i][j as usize] += 1.0 / nb.len() as f64;
                }
            }
        }
        let mut out = vec![vec![0.0; d_o]; n];
        for i in 0..n {
            for o in 0..d_o {
                let mut s = 0.0;
                for r in 0..Relation::COUNT {
                    let w = layer.block(r);
                    for j in 0..n {
                        if a[r][i][j] != 0.0 {
                            for k in 0..di {
                                s += a[r][i][j] * w[o * di + k] * h[j][k];
                            }
                        }
                    }
                }
                let w0 = layer.block(SELF_LOOP);
                for k in 0..di {
                    s += w0[o * di + k] * h[i][k];
                }
                out[i][o] = if l + 1 < p.layers.len() { s.max(0.0) } else { s };
            }
        }
        h = out;
    }
    h
}

#[test]
fn forward_matches_dense_oracle() {
    let g = small_graph(14, 5, 1);
    let (x, fm) = dense_inputs(&g);
    assert_eq!(fm, FeatureMap::from_graph(&g));
    for dims in [vec![3], vec![5, 4], vec![6, 4, 2]] {
        let p = ModelParams::init(fm.clone(), &dims, 9).unwrap();
        let want = dense_forward(&g, &x, &p);
        let got = forward(&g, &p).unwrap();
        assert_eq!(got.len(), g.vertex_count());
        for (i, row) in want.iter().enumerate() {
            assert_eq!(got.ids()[i], *g.vertex(i as u32));
            for (a, b) in row.iter().zip(got.row(i)) {
                assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()), "{dims:?} vertex {i}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn zero_weights_give_zero_embeddings() {
    let g = small_graph(10, 4, 2);
    let p = ModelParams::zeros(FeatureMap::from_graph(&g), &[4, 3]);
    let e = forward(&g, &p).unwrap();
    assert!(e.iter().all(|(_, r)| r.iter().all(|x| *x == 0.0)));
}

#[test]
fn self_loop_only_is_a_per_vertex_map() {
    // with every relation block zeroed, neighbors cannot influence a vertex
    let g = small_graph(10, 4, 3);
    let mut p = ModelParams::init(FeatureMap::from_graph(&g), &[3], 5).unwrap();
    for b in 0..BLOCKS {
        if b != SELF_LOOP {
            p.layers[0].block_mut(b).iter_mut().for_each(|w| *w = 0.0);
        }
    }
    let e = forward(&g, &p).unwrap();
    let (x, _) = dense_inputs(&g);
    let w0 = p.layers[0].self_loop();
    let d_in = p.layers[0].d_in;
    for (i, xi) in x.iter().enumerate() {
        for o in 0..3 {
            let want: f64 = (0..d_in).map(|k| w0[o * d_in + k] * xi[k]).sum();
            assert!((e.row(i)[o] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn subset_forward_matches_full_forward() {
    let g = small_graph(60, 20, 4);
    let p = ModelParams::init(FeatureMap::from_graph(&g), &[8, 4], 3).unwrap();
    let full = forward(&g, &p).unwrap();
    let targets: Vec<VertexId> = g.vertices().iter().step_by(7).cloned().collect();
    let sub = forward_subset(&g, &p, &targets).unwrap();
    assert_eq!(sub.len(), targets.len());
    for t in &targets {
        assert_eq!(sub.get(t).unwrap(), full.get(t).unwrap(), "{t}");
    }
    assert!(forward_subset(&g, &p, &[VertexId::project("missing")]).is_err());
}

#[test]
fn virtual_project_embedding_matches_full_overlay_forward() {
    let g = small_graph(40, 12, 5);
    let p = ModelParams::init(FeatureMap::from_graph(&g), &[8, 4], 3).unwrap();
    let mut ov = GraphOverlay::new(&g);
    let q = QueryFeatures {
        category: MetaCategory::Games,
        goal_bin: 2,
        location: "US-TX".parse::<LocationCode>().unwrap(),
        season: "2016Q3".parse::<Season>().unwrap(),
    };
    let v = ov.add_virtual_project(&q);
    let full = forward(&ov, &p).unwrap();
    let sub = forward_subset(&ov, &p, std::slice::from_ref(&v)).unwrap();
    let (a, b) = (full.get(&v).unwrap(), sub.get(&v).unwrap());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() < 1e-12);
    }
    // the base graph is untouched
    assert!(!g.contains(&v));
    let cat = VertexId::feature(FeatureKind::Category, MetaCategory::Games.name());
    assert!(ov.neighbors(&cat, Relation::CategoryOf).unwrap().contains(&v));
}

fn batch_for(g: &HeteroGraph, seed: u64, max_pos: usize) -> EdgeBatch {
    let edges: Vec<(u32, u32)> = g.edges(Relation::Invested).collect();
    let known: HashSet<(u32, u32)> = edges.iter().copied().collect();
    let positives: Vec<(u32, u32)> = edges.into_iter().take(max_pos).collect();
    let projects = g.indices_of_kind(VertexKind::Project);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let negatives = sample_negatives(&positives, &projects, &known, 2, &mut rng);
    EdgeBatch { positives, negatives }
}

#[test]
fn gradients_match_finite_differences_linear() {
    let g = small_graph(12, 5, 6);
    let p = ModelParams::init(FeatureMap::from_graph(&g), &[3], 2).unwrap();
    let batch = batch_for(&g, 1, 8);
    // the decoder makes the loss non-polynomial in the weights, so the
    // two-point stencil bottoms out near 1e-8
    let cfg = GradCheckConfig {
        eps: 5e-3,
        fourth_order: true,
        ..GradCheckConfig::default()
    };
    let r = gradient_check(&g, &p, &batch, &cfg).unwrap();
    assert_eq!(r.skipped_kinks, 0);
    assert!(r.checked > 200);
    assert!(r.max_rel_error < 1e-8, "{r:?}");
}

#[test]
fn gradients_match_finite_differences_two_layers() {
    let g = small_graph(12, 5, 7);
    let p = ModelParams::init(FeatureMap::from_graph(&g), &[4, 3], 8).unwrap();
    let batch = batch_for(&g, 2, 8);
    let r = gradient_check(&g, &p, &batch, &GradCheckConfig::default()).unwrap();
    assert!(r.checked > 500, "{r:?}");
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}

#[test]
fn zero_weight_gradients_are_defined() {
    let g = small_graph(12, 5, 7);
    let p = ModelParams::zeros(FeatureMap::from_graph(&g), &[4, 3]);
    let batch = batch_for(&g, 2, 8);
    let (_, grads) = loss_and_gradients(&g, &p, &batch).unwrap();
    assert!(grads.flat().all(f64::is_finite));
    let r = gradient_check(&g, &p, &batch, &GradCheckConfig::default()).unwrap();
    assert!(r.max_rel_error.is_finite());
}

#[test]
fn untrained_symmetric_loss_is_ln2() {
    let g = small_graph(12, 5, 8);
    let p = ModelParams::zeros(FeatureMap::from_graph(&g), &[3]);
    let batch = batch_for(&g, 3, 10);
    let l = loss(&g, &p, &batch).unwrap();
    assert!((l - std::f64::consts::LN_2).abs() < 1e-12, "{l}");
    assert!(loss(&g, &p, &EdgeBatch::default()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn loss_is_invariant_to_edge_order(seed in 0u64..1000) {
        let g = small_graph(16, 6, 9);
        let p = ModelParams::init(FeatureMap::from_graph(&g), &[4, 3], 4).unwrap();
        let batch = batch_for(&g, seed, 20);
        let mut shuffled = batch.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        shuffled.positives.shuffle(&mut rng);
        shuffled.negatives.shuffle(&mut rng);
        let (a, b) = (loss(&g, &p, &batch).unwrap(), loss(&g, &p, &shuffled).unwrap());
        prop_assert!((a - b).abs() <= 1e-12, "{} vs {}", a, b);
    }

    #[test]
    fn gradient_check_on_random_small_graphs(seed in 0u64..10_000) {
        let g = small_graph(14, 5, seed);
        prop_assume!(g.vertex_count() <= 50);
        let p = ModelParams::init(FeatureMap::from_graph(&g), &[8, 8], seed ^ 0x5eed).unwrap();
        let batch = batch_for(&g, seed, 10);
        let r = gradient_check(&g, &p, &batch, &GradCheckConfig { max_entries: 1500, ..Default::default() }).unwrap();
        prop_assert!(r.checked > 1000);
        prop_assert!(r.max_rel_error < 1e-4, "{:?}", r);
    }

    #[test]
    fn params_container_roundtrip(dims in prop::collection::vec(1usize..6, 1..4), seed in any::<u64>()) {
        let g = small_graph(8, 3, 10);
        let p = ModelParams::init(FeatureMap::from_graph(&g), &dims, seed).unwrap();
        let mut buf = Vec::new();
        write_params(&p, &mut buf).unwrap();
        prop_assert_eq!(read_params(buf.as_slice()).unwrap(), p);
    }
}

#[test]
fn embeddings_do_not_depend_on_record_order() {
    let c = generate(&SynthConfig {
        projects: 50,
        investors: 15,
        seed: 11,
        ..SynthConfig::default()
    })
    .unwrap();
    let (mut projects, mut investors) = (c.dataset.projects.clone(), c.dataset.investors.clone());
    let g1 = build_graph(&projects, &investors, &GoalBins::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    projects.shuffle(&mut rng);
    investors.shuffle(&mut rng);
    for i in &mut investors {
        i.invested_project_ids.shuffle(&mut rng);
    }
    let g2 = build_graph(&projects, &investors, &GoalBins::default()).unwrap();
    let p = ModelParams::init(FeatureMap::from_graph(&g1), &[6, 4], 1).unwrap();
    let (e1, e2) = (forward(&g1, &p).unwrap(), forward(&g2, &p).unwrap());
    for (id, row) in e1.iter() {
        assert_eq!(e2.get(id).unwrap(), row);
    }
}

fn quick_config() -> TrainConfig {
    TrainConfig {
        epochs: 40,
        learning_rate: 0.02,
        layer_dims: vec![16, 8],
        holdout_fraction: 0.1,
        ..TrainConfig::default()
    }
}

#[test]
fn training_is_deterministic_across_thread_counts() {
    let g = small_graph(150, 45, 12);
    let cfg = quick_config();
    let a = train(&g, &cfg).unwrap();
    let b = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| train(&g, &cfg).unwrap());
    assert_eq!(a.params, b.params);
    assert_eq!(a.loss_trace, b.loss_trace);
    assert_eq!(a.embeddings, b.embeddings);
    let c = train(&g, &TrainConfig { seed: 8, ..cfg }).unwrap();
    assert_ne!(a.params, c.params);
}

#[test]
fn training_reduces_loss_and_ranks_heldout_edges() {
    let g = small_graph(300, 90, 13);
    let out = train(
        &g,
        &TrainConfig {
            epochs: 120,
            ..quick_config()
        },
    )
    .unwrap();
    let first = out.loss_trace[0];
    let last = *out.loss_trace.last().unwrap();
    assert!(last < 0.7 * first, "{first} -> {last}");
    assert!(out.embeddings.is_finite());
    let auc = out.heldout_auc.unwrap();
    assert!(auc > 0.75, "held-out AUC {auc}");
    assert!(!out.heldout.is_empty());
}

#[test]
fn loss_trace_file_is_written() {
    let g = small_graph(40, 12, 14);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("loss.tsv");
    let out = train(
        &g,
        &TrainConfig {
            epochs: 5,
            loss_trace: Some(path.clone()),
            ..quick_config()
        },
    )
    .unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "epoch\tloss");
    assert_eq!(lines.len(), 6);
    let l4: f64 = lines[5].split('\t').nth(1).unwrap().parse().unwrap();
    assert_eq!(l4, out.loss_trace[4]);
}


