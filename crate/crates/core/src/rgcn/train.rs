use std::collections::HashSet;
use std::io::Write;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::forward::{backward, forward_cached, Cache};
use super::{forward, EmbeddingTable, FeatureMap, Gradients, ModelParams, RgcnError};
use crate::graph::{GraphView, HeteroGraph, Relation, VertexKind};
use crate::numeric::{compensated_sum, dot, sigmoid, softplus};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub negative_ratio: usize,
    pub seed: u64,
    /// Output size of each layer; the last entry is the embedding dimension.
    pub layer_dims: Vec<usize>,
    /// Positives per optimizer step; `None` uses every training edge each step.
    pub batch_size: Option<usize>,
    /// Share of Invested edges withheld from message passing and the loss,
    /// scored afterwards as a link-prediction AUC.
    pub holdout_fraction: f64,
    /// Share of projects whose Invested edges are hidden from message passing
    /// each epoch while still serving as positives, so projects can be
    /// embedded from their features alone.
    pub cold_start_fraction: f64,
    pub loss_trace: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            learning_rate: 0.01,
            negative_ratio: 5,
            seed: 7,
            layer_dims: vec![32, 16],
            batch_size: None,
            holdout_fraction: 0.0,
            cold_start_fraction: 0.2,
            loss_trace: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), RgcnError> {
        if self.epochs == 0 {
            return Err(RgcnError::Config("epochs must be >= 1".into()));
        }
        if self.negative_ratio == 0 {
            return Err(RgcnError::Config("negative_ratio must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(RgcnError::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(RgcnError::Config("holdout_fraction must be in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.cold_start_fraction) {
            return Err(RgcnError::Config("cold_start_fraction must be in [0, 1)".into()));
        }
        if self.batch_size == Some(0) {
            return Err(RgcnError::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Labelled (investor, project) index pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EdgeBatch {
    pub positives: Vec<(u32, u32)>,
    pub negatives: Vec<(u32, u32)>,
}

impl EdgeBatch {
    pub fn len(&self) -> usize {
        self.positives.len() + self.negatives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn labelled(&self) -> impl Iterator<Item = ((u32, u32), f64)> + '_ {
        self.positives
            .iter()
            .map(|e| (*e, 1.0))
            .chain(self.negatives.iter().map(|e| (*e, 0.0)))
    }
}

/// Dot-product edge score.
pub fn score_edge(a: &[f64], b: &[f64]) -> Result<f64, RgcnError> {
    if a.len() != b.len() {
        return Err(RgcnError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(dot(a, b))
}

fn bce(score: f64, label: f64) -> f64 {
    softplus(score) - label * score
}

/// Mean binary cross-entropy of the batch and its gradient with respect to
/// the output embeddings.
pub(crate) fn batch_loss(
    output: &[f64],
    d: usize,
    batch: &EdgeBatch,
    want_grad: bool,
) -> Result<(f64, Vec<f64>), RgcnError> {
    if batch.is_empty() {
        return Err(RgcnError::EmptyBatch);
    }
    let m = batch.len() as f64;
    let row = |v: u32| &output[v as usize * d..(v as usize + 1) * d];
    let loss = compensated_sum(batch.labelled().map(|((u, v), y)| bce(dot(row(u), row(v)), y))) / m;
    let mut grad = Vec::new();
    if want_grad {
        grad = vec![0.0; output.len()];
        for ((u, v), y) in batch.labelled() {
            let g = (sigmoid(dot(row(u), row(v))) - y) / m;
            for k in 0..d {
                let (eu, ev) = (output[u as usize * d + k], output[v as usize * d + k]);
                grad[u as usize * d + k] += g * ev;
                grad[v as usize * d + k] += g * eu;
            }
        }
    }
    Ok((loss, grad))
}

/// Mean BCE of the batch under a full forward pass.
pub fn loss<G: GraphView + ?Sized>(
    g: &G,
    p: &ModelParams,
    batch: &EdgeBatch,
) -> Result<f64, RgcnError> {
    if batch.is_empty() {
        return Err(RgcnError::EmptyBatch);
    }
    let cache = forward_cached(g, p)?;
    Ok(batch_loss(&cache.output, p.output_dim(), batch, false)?.0)
}

/// Loss plus analytic gradients with respect to every weight.
pub fn loss_and_gradients<G: GraphView + ?Sized>(
    g: &G,
    p: &ModelParams,
    batch: &EdgeBatch,
) -> Result<(f64, Gradients), RgcnError> {
    let cache: Cache = forward_cached(g, p)?;
    let (l, grad_out) = batch_loss(&cache.output, p.output_dim(), batch, true)?;
    Ok((l, backward(g, p, &cache, grad_out)))
}

/// `ratio` corrupted copies of each positive: same investor, a project drawn
/// uniformly among those the investor did not back.
pub fn sample_negatives(
    positives: &[(u32, u32)],
    projects: &[u32],
    known: &HashSet<(u32, u32)>,
    ratio: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<(u32, u32)> {
    let mut out = Vec::with_capacity(positives.len() * ratio);
    for &(inv, _) in positives {
        for _ in 0..ratio {
            // bounded rejection; an investor who backed every project gets no negatives
            for _ in 0..64 {
                let p = projects[rng.gen_range(0..projects.len())];
                if !known.contains(&(inv, p)) {
                    out.push((inv, p));
                    break;
                }
            }
        }
    }
    out
}

/// Area under the ROC curve via average ranks (Mann-Whitney U).
pub fn auc(positive_scores: &[f64], negative_scores: &[f64]) -> f64 {
    let mut all: Vec<(f64, bool)> = positive_scores
        .iter()
        .map(|s| (*s, true))
        .chain(negative_scores.iter().map(|s| (*s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j + 1 < all.len() && all[j + 1].0 == all[i].0 {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += avg_rank * all[i..=j].iter().filter(|x| x.1).count() as f64;
        i = j + 1;
    }
    let (np, nn) = (positive_scores.len() as f64, negative_scores.len() as f64);
    (rank_sum - np * (np + 1.0) / 2.0) / (np * nn)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Embeddings of every vertex of the graph used for message passing.
    pub embeddings: EmbeddingTable,
    /// Mean training loss per epoch.
    pub loss_trace: Vec<f64>,
    /// Withheld Invested edges, as `(investor, project)` indices of the input graph.
    pub heldout: Vec<(u32, u32)>,
    /// Negatives the held-out edges were scored against.
    pub heldout_negatives: Vec<(u32, u32)>,
    pub heldout_auc: Option<f64>,
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(p: &ModelParams) -> Self {
        let z = Gradients::zeros_like(p).layers;
        Self {
            m: z.clone(),
            v: z,
            t: 0,
        }
    }

    fn step(&mut self, p: &mut ModelParams, g: &Gradients, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for (l, layer) in p.layers.iter_mut().enumerate() {
            for (k, w) in layer.weights.iter_mut().enumerate() {
                let gk = g.layers[l][k];
                let m = &mut self.m[l][k];
                let v = &mut self.v[l][k];
                *m = Self::BETA1 * *m + (1.0 - Self::BETA1) * gk;
                *v = Self::BETA2 * *v + (1.0 - Self::BETA2) * gk * gk;
                *w -= lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
            }
        }
    }
}

/// Independent random streams derived from one seed.
fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

const STREAM_INIT: u64 = 1;
const STREAM_SPLIT: u64 = 2;
const STREAM_SHUFFLE: u64 = 3;
const STREAM_NEGATIVES: u64 = 4;
const STREAM_EVAL: u64 = 5;
const STREAM_COLD: u64 = 6;

pub fn train(g: &HeteroGraph, cfg: &TrainConfig) -> Result<TrainOutcome, RgcnError> {
    cfg.validate()?;
    let mut edges: Vec<(u32, u32)> = g.edges(Relation::Invested).collect();
    if edges.is_empty() {
        return Err(RgcnError::NoInvestedEdges);
    }
    let known: HashSet<(u32, u32)> = edges.iter().copied().collect();
    let projects = g.indices_of_kind(VertexKind::Project);

    let n_heldout = (edges.len() as f64 * cfg.holdout_fraction).round() as usize;
    let heldout: Vec<(u32, u32)> = if n_heldout > 0 {
        edges.shuffle(&mut stream(cfg.seed, STREAM_SPLIT));
        let mut h = edges.split_off(edges.len() - n_heldout);
        h.sort_unstable();
        edges.sort_unstable();
        h
    } else {
        Vec::new()
    };
    if edges.is_empty() {
        return Err(RgcnError::NoInvestedEdges);
    }
    let train_graph = if heldout.is_empty() {
        None
    } else {
        Some(g.without_invested(&heldout))
    };
    let tg: &HeteroGraph = train_graph.as_ref().unwrap_or(g);

    let mut params = ModelParams::init(FeatureMap::from_graph(g), &cfg.layer_dims, {
        let mut r = stream(cfg.seed, STREAM_INIT);
        r.gen()
    })?;
    let mut adam = Adam::new(&params);
    let mut shuffle_rng = stream(cfg.seed, STREAM_SHUFFLE);
    let mut neg_rng = stream(cfg.seed, STREAM_NEGATIVES);
    let batch_size = cfg.batch_size.unwrap_or(edges.len()).min(edges.len());
    let mut trace = Vec::with_capacity(cfg.epochs);

    let mut cold_rng = stream(cfg.seed, STREAM_COLD);
    for epoch in 0..cfg.epochs {
        let cold_graph = if cfg.cold_start_fraction > 0.0 {
            let cold: HashSet<u32> = projects
                .iter()
                .copied()
                .filter(|_| cold_rng.gen_bool(cfg.cold_start_fraction))
                .collect();
            let hidden: Vec<(u32, u32)> = edges.iter().copied().filter(|e| cold.contains(&e.1)).collect();
            Some(tg.without_invested(&hidden))
        } else {
            None
        };
        let eg: &HeteroGraph = cold_graph.as_ref().unwrap_or(tg);
        edges.shuffle(&mut shuffle_rng);
        let mut weighted = Vec::new();
        for chunk in edges.chunks(batch_size) {
            let batch = EdgeBatch {
                positives: chunk.to_vec(),
                negatives: sample_negatives(chunk, &projects, &known, cfg.negative_ratio, &mut neg_rng),
            };
            let (l, grads) = loss_and_gradients(eg, &params, &batch)?;
            if !l.is_finite() || grads.flat().any(|x| !x.is_finite()) {
                return Err(RgcnError::Divergence { epoch, loss: l });
            }
            weighted.push(l * chunk.len() as f64);
            adam.step(&mut params, &grads, cfg.learning_rate);
        }
        let epoch_loss = compensated_sum(weighted) / edges.len() as f64;
        log::debug!("epoch {epoch}: loss {epoch_loss:.6}");
        trace.push(epoch_loss);
    }

    let embeddings = forward(tg, &params)?;
    let mut heldout_negatives = Vec::new();
    let heldout_auc = if heldout.is_empty() {
        None
    } else {
        heldout_negatives =
            sample_negatives(&heldout, &projects, &known, cfg.negative_ratio, &mut stream(cfg.seed, STREAM_EVAL));
        let score = |(u, v): &(u32, u32)| dot(embeddings.row(*u as usize), embeddings.row(*v as usize));
        let pos: Vec<f64> = heldout.iter().map(score).collect();
        let neg: Vec<f64> = heldout_negatives.iter().map(score).collect();
        Some(auc(&pos, &neg))
    };

    if let Some(path) = &cfg.loss_trace {
        write_trace(path, &trace)?;
    }
    Ok(TrainOutcome {
        params,
        embeddings,
        loss_trace: trace,
        heldout,
        heldout_negatives,
        heldout_auc,
    })
}

/// `epoch<TAB>loss` lines.
pub(crate) fn write_trace(path: &std::path::Path, trace: &[f64]) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "epoch\tloss")?;
    for (i, l) in trace.iter().enumerate() {
        writeln!(w, "{i}\t{l}")?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_is_dot_product() {
        assert_eq!(score_edge(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let e = [0.5, -2.0, 3.0];
        assert_eq!(score_edge(&e, &e).unwrap(), 0.25 + 4.0 + 9.0);
        assert!(matches!(
            score_edge(&[1.0], &[1.0, 2.0]),
            Err(RgcnError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn bce_values() {
        let out = vec![0.0, 0.0, 0.0, 0.0];
        let batch = EdgeBatch {
            positives: vec![(0, 1)],
            negatives: vec![],
        };
        let (l, _) = batch_loss(&out, 2, &batch, false).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        // large correct-margin scores drive the loss towards zero
        let big = vec![30.0, 0.0, 30.0, 0.0, -30.0, 0.0];
        let batch = EdgeBatch {
            positives: vec![(0, 1)],
            negatives: vec![(0, 2)],
        };
        let (l, _) = batch_loss(&big, 2, &batch, false).unwrap();
        assert!(l < 1e-300 || l < 1e-12, "{l}");
        assert!(batch_loss(&big, 2, &EdgeBatch::default(), false).is_err());
    }

    #[test]
    fn auc_matches_pair_counting() {
        let pos = [0.9, 0.4, 0.4, 0.7, -1.0];
        let neg = [0.1, 0.4, 0.8, -2.0];
        let mut wins = 0.0;
        for p in pos {
            for n in neg {
                wins += if p > n { 1.0 } else if p == n { 0.5 } else { 0.0 };
            }
        }
        let oracle = wins / (pos.len() * neg.len()) as f64;
        assert!((auc(&pos, &neg) - oracle).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { epochs: 0, ..Default::default() },
            TrainConfig { negative_ratio: 0, ..Default::default() },
            TrainConfig { holdout_fraction: 1.0, ..Default::default() },
            TrainConfig { cold_start_fraction: -0.1, ..Default::default() },
            TrainConfig { batch_size: Some(0), ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
