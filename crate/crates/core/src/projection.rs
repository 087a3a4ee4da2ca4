//! Two-dimensional neighbor-embedding layout (UMAP-style).
//!
//! Stages: exact kNN, smooth-kNN membership strengths with fuzzy union,
//! spectral initialization, then SGD on the fuzzy cross-entropy.
//! Points are processed in ascending vertex-id order, so the layout depends
//! on the set of ids and their vectors, never on input order.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, Matrix2, SymmetricEigen, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::graph::VertexId;
use crate::numeric::squared_distance;
use crate::rgcn::EmbeddingTable;

#[derive(Debug, thiserror::Error)]
pub enum ProjectionError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("non-finite coordinate at epoch {epoch}")]
    NonFinite { epoch: usize },
    #[error("point sets differ: {0}")]
    Mismatch(String),
    #[error("layout file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConfig {
    pub n_neighbors: usize,
    pub min_dist: f64,
    pub spread: f64,
    pub epochs: usize,
    pub negative_sample_rate: usize,
    pub seed: u64,
}

impl Default for ProjectionConfig {
    fn default() -> Self {
        Self {
            n_neighbors: 15,
            min_dist: 0.1,
            spread: 1.0,
            epochs: 300,
            negative_sample_rate: 5,
            seed: 42,
        }
    }
}

impl ProjectionConfig {
    pub fn validate(&self) -> Result<(), ProjectionError> {
        if self.n_neighbors < 2 {
            return Err(ProjectionError::Config("n_neighbors must be >= 2".into()));
        }
        if self.epochs == 0 {
            return Err(ProjectionError::Config("epochs must be >= 1".into()));
        }
        if !(self.spread > 0.0 && self.min_dist >= 0.0 && self.min_dist < self.spread * 3.0) {
            return Err(ProjectionError::Config(
                "need spread > 0 and 0 <= min_dist < 3 * spread".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutPoint {
    pub id: VertexId,
    pub x: f64,
    pub y: f64,
}

/// Directed kNN lists over points in ascending id order.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnGraph {
    pub ids: Vec<VertexId>,
    /// `(neighbor, distance)` nearest first; ties go to the lower id.
    pub neighbors: Vec<Vec<(u32, f64)>>,
}

/// Rows of `emb` sorted by id.
fn canonical(emb: &EmbeddingTable) -> (Vec<VertexId>, Vec<&[f64]>) {
    let mut rows: Vec<(&VertexId, &[f64])> = emb.iter().collect();
    rows.sort_by(|a, b| a.0.cmp(b.0));
    rows.into_iter().map(|(id, r)| (id.clone(), r)).unzip()
}

pub fn knn_graph(emb: &EmbeddingTable, n_neighbors: usize) -> Result<KnnGraph, ProjectionError> {
    if n_neighbors == 0 {
        return Err(ProjectionError::Config("n_neighbors must be >= 1".into()));
    }
    if emb.len() < n_neighbors + 1 {
        return Err(ProjectionError::TooFewPoints {
            needed: n_neighbors + 1,
            got: emb.len(),
        });
    }
    let (ids, rows) = canonical(emb);
    let neighbors = (0..rows.len())
        .into_par_iter()
        .map(|i| {
            let mut d: Vec<(u32, f64)> = (0..rows.len())
                .filter(|&j| j != i)
                .map(|j| (j as u32, squared_distance(rows[i], rows[j])))
                .collect();
            let cmp = |a: &(u32, f64), b: &(u32, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
            d.select_nth_unstable_by(n_neighbors - 1, cmp);
            d.truncate(n_neighbors);
            d.sort_by(cmp);
            // fresh allocation: an in-place collect would keep the n-sized buffer
            d.iter().map(|&(j, s)| (j, s.sqrt())).collect()
        })
        .collect();
    Ok(KnnGraph { ids, neighbors })
}

/// Per-point smooth-kNN calibration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub rho: f64,
    pub sigma: f64,
    pub converged: bool,
}

const CALIBRATION_TOL: f64 = 1e-5;
const CALIBRATION_ITERS: usize = 64;

/// Solve `sum_j exp(-max(0, d_j - rho) / sigma) = log2(k)` for sigma by bisection.
pub fn calibrate(distances: &[f64]) -> Calibration {
    let target = (distances.len() as f64).log2();
    let rho = distances.iter().copied().fold(f64::INFINITY, f64::min);
    let sum = |sigma: f64| -> f64 {
        distances
            .iter()
            .map(|d| (-(d - rho).max(0.0) / sigma).exp())
            .sum()
    };
    let (mut lo, mut hi, mut mid) = (0.0, f64::INFINITY, 1.0);
    for _ in 0..CALIBRATION_ITERS {
        let s = sum(mid);
        if (s - target).abs() < CALIBRATION_TOL {
            return Calibration {
                rho,
                sigma: mid,
                converged: true,
            };
        }
        if s > target {
            hi = mid;
            mid = (lo + hi) / 2.0;
        } else {
            lo = mid;
            mid = if hi.is_infinite() { mid * 2.0 } else { (lo + hi) / 2.0 };
        }
    }
    Calibration {
        rho,
        sigma: mid,
        converged: false,
    }
}

/// Symmetric weighted graph; every `(i, j, w)` has its mirror `(j, i, w)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FuzzyGraph {
    pub ids: Vec<VertexId>,
    /// Sorted by `(i, j)`.
    pub edges: Vec<(u32, u32, f64)>,
    pub calibration: Vec<Calibration>,
}

pub fn fuzzy_weights(knn: &KnnGraph) -> FuzzyGraph {
    let n = knn.ids.len();
    let calibration: Vec<Calibration> = knn
        .neighbors
        .iter()
        .map(|nb| calibrate(&nb.iter().map(|x| x.1).collect::<Vec<_>>()))
        .collect();
    let unconverged = calibration.iter().filter(|c| !c.converged).count();
    if unconverged > 0 {
        log::warn!("smooth-kNN calibration did not converge for {unconverged} of {n} points");
    }
    let mut directed = std::collections::BTreeMap::new();
    for (i, nb) in knn.neighbors.iter().enumerate() {
        let c = calibration[i];
        for &(j, d) in nb {
            let w = (-(d - c.rho).max(0.0) / c.sigma).exp();
            if w > 0.0 {
                directed.insert((i as u32, j), w);
            }
        }
    }
    let mut edges = Vec::with_capacity(directed.len() * 2);
    for (&(i, j), &a) in &directed {
        let b = directed.get(&(j, i)).copied().unwrap_or(0.0);
        let w = a + b - a * b;
        edges.push((i, j, w));
        if b == 0.0 {
            edges.push((j, i, w));
        }
    }
    edges.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
    FuzzyGraph {
        ids: knn.ids.clone(),
        edges,
        calibration,
    }
}

/// Least-squares fit of `1 / (1 + a x^(2b))` to the target membership curve
/// (1 below `min_dist`, exponential decay with scale `spread` above), via
/// Levenberg-Marquardt on 300 points over `[0, 3 spread]`.
pub fn fit_ab(min_dist: f64, spread: f64) -> (f64, f64) {
    let xs: Vec<f64> = (0..300).map(|i| 3.0 * spread * i as f64 / 299.0).collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|&x| if x < min_dist { 1.0 } else { (-(x - min_dist) / spread).exp() })
        .collect();
    let cost = |a: f64, b: f64| -> f64 {
        xs.iter()
            .zip(&ys)
            .map(|(&x, &y)| {
                let r = 1.0 / (1.0 + a * x.powf(2.0 * b)) - y;
                r * r
            })
            .sum()
    };
    let (mut a, mut b, mut lambda) = (1.0, 1.0, 1e-3);
    let mut c = cost(a, b);
    for _ in 0..500 {
        let mut jtj = Matrix2::zeros();
        let mut jtr = Vector2::zeros();
        for (&x, &y) in xs.iter().zip(&ys) {
            if x == 0.0 {
                continue;
            }
            let p = x.powf(2.0 * b);
            let f = 1.0 / (1.0 + a * p);
            let df = -f * f;
            let j = Vector2::new(df * p, df * a * p * 2.0 * x.ln());
            jtj += j * j.transpose();
            jtr += j * (f - y);
        }
        let mut damped = jtj;
        damped[(0, 0)] *= 1.0 + lambda;
        damped[(1, 1)] *= 1.0 + lambda;
        let Some(step) = damped.lu().solve(&(-jtr)) else { break };
        let (na, nb) = (a + step[0], b + step[1]);
        let nc = if na > 0.0 && nb > 0.0 { cost(na, nb) } else { f64::INFINITY };
        if nc < c {
            let done = (c - nc) <= 1e-15 * c.max(1e-300) && step.norm() < 1e-12;
            a = na;
            b = nb;
            c = nc;
            lambda = (lambda / 10.0).max(1e-12);
            if done {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
    }
    (a, b)
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(id);
    r
}

const STREAM_INIT: u64 = 1;
const STREAM_SGD: u64 = 2;
const SPECTRAL_BLOCK: usize = 6;
const SPECTRAL_ITERS: usize = 400;

/// Leading non-trivial eigenvectors of `D^-1/2 W D^-1/2` by block power
/// iteration with Rayleigh-Ritz extraction. `None` when the graph is too
/// small or the iteration degenerates.
fn spectral(n: usize, edges: &[(u32, u32, f64)], rng: &mut ChaCha8Rng) -> Option<Vec<[f64; 2]>> {
    if n < 4 {
        return None;
    }
    let mut deg = vec![0.0; n];
    for &(i, _, w) in edges {
        deg[i as usize] += w;
    }
    if deg.iter().any(|d| *d <= 0.0) {
        return None;
    }
    let inv_sqrt: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
    // trivial eigenvector sqrt(deg), eigenvalue 1
    let mut top: Vec<f64> = deg.iter().map(|d| d.sqrt()).collect();
    let tn = top.iter().map(|x| x * x).sum::<f64>().sqrt();
    top.iter_mut().for_each(|x| *x /= tn);

    // (I + M) / 2 has spectrum in [0, 1] with the same eigenvectors as M
    let apply = |v: &[f64]| -> Vec<f64> {
        let mut out: Vec<f64> = v.iter().map(|x| 0.5 * x).collect();
        for &(i, j, w) in edges {
            out[i as usize] += 0.5 * w * inv_sqrt[i as usize] * inv_sqrt[j as usize] * v[j as usize];
        }
        out
    };
    let orthonormalize = |block: &mut [Vec<f64>]| -> bool {
        for c in 0..block.len() {
            for prev in std::iter::once(&top).chain(block[..c].to_vec().iter()) {
                let p: f64 = block[c].iter().zip(prev).map(|(a, b)| a * b).sum();
                block[c].iter_mut().zip(prev).for_each(|(a, b)| *a -= p * b);
            }
            let norm = block[c].iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(norm > 1e-12) {
                return false;
            }
            block[c].iter_mut().for_each(|x| *x /= norm);
        }
        true
    };

    let m = SPECTRAL_BLOCK.min(n - 2);
    let mut block: Vec<Vec<f64>> = (0..m)
        .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    if !orthonormalize(&mut block) {
        return None;
    }
    for _ in 0..SPECTRAL_ITERS {
        block = block.iter().map(|v| apply(v)).collect();
        if !orthonormalize(&mut block) {
            return None;
        }
    }
    let images: Vec<Vec<f64>> = block.iter().map(|v| apply(v)).collect();
    let h = DMatrix::from_fn(m, m, |r, c| block[r].iter().zip(&images[c]).map(|(a, b)| a * b).sum());
    let h = (&h + h.transpose()) * 0.5;
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]).then(a.cmp(b)));
    let mut coords = vec![[0.0; 2]; n];
    for (axis, &k) in order.iter().take(2).enumerate() {
        let u = eig.eigenvectors.column(k);
        let mut v: Vec<f64> = (0..n).map(|i| (0..m).map(|r| u[r] * block[r][i]).sum()).collect();
        // fix the sign so the largest-magnitude entry is positive
        let pivot = v
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(0.0);
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        for (c, x) in coords.iter_mut().zip(v) {
            c[axis] = x;
        }
    }
    coords
        .iter()
        .all(|c| c[0].is_finite() && c[1].is_finite())
        .then_some(coords)
}

/// Spectral initialization scaled to `[-10, 10]` with a little seeded
/// jitter; seeded uniform noise when the eigensolver cannot be used.
pub fn initialize(graph: &FuzzyGraph, seed: u64) -> Vec<[f64; 2]> {
    let n = graph.ids.len();
    let mut rng = stream(seed, STREAM_INIT);
    match spectral(n, &graph.edges, &mut rng) {
        Some(mut c) => {
            let max = c.iter().flat_map(|p| [p[0].abs(), p[1].abs()]).fold(0.0, f64::max);
            if max > 0.0 {
                let scale = 10.0 / max;
                let jitter = rand_distr::Normal::new(0.0, 1e-4).expect("valid sd");
                for p in &mut c {
                    for x in p.iter_mut() {
                        *x = *x * scale + rng.sample(jitter);
                    }
                }
                return c;
            }
            log::warn!("spectral initialization degenerate; using random layout");
            random_init(n, &mut rng)
        }
        None => {
            if n >= 4 {
                log::warn!("spectral initialization failed; using random layout");
            }
            random_init(n, &mut rng)
        }
    }
}

fn random_init(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    (0..n)
        .map(|_| [rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)])
        .collect()
}

fn clip(x: f64) -> f64 {
    x.clamp(-4.0, 4.0)
}

/// SGD over edge samples with negative sampling.
pub fn optimize(
    graph: &FuzzyGraph,
    mut y: Vec<[f64; 2]>,
    cfg: &ProjectionConfig,
) -> Result<Vec<[f64; 2]>, ProjectionError> {
    cfg.validate()?;
    let n = y.len();
    if graph.edges.is_empty() || n < 2 {
        return Ok(y);
    }
    let (a, b) = fit_ab(cfg.min_dist, cfg.spread);
    let w_max = graph.edges.iter().map(|e| e.2).fold(0.0, f64::max);
    let per_sample: Vec<f64> = graph.edges.iter().map(|e| w_max / e.2).collect();
    let per_negative: Vec<f64> = per_sample
        .iter()
        .map(|e| e / cfg.negative_sample_rate.max(1) as f64)
        .collect();
    let mut next_sample = per_sample.clone();
    let mut next_negative = per_negative.clone();
    let mut rng = stream(cfg.seed, STREAM_SGD);
    let epochs = cfg.epochs as f64;

    for epoch in 0..cfg.epochs {
        let alpha = 1.0 - epoch as f64 / epochs;
        let now = epoch as f64;
        for (e, &(i, j, _)) in graph.edges.iter().enumerate() {
            if next_sample[e] > now {
                continue;
            }
            let (i, j) = (i as usize, j as usize);
            let d2 = (y[i][0] - y[j][0]).powi(2) + (y[i][1] - y[j][1]).powi(2);
            if d2 > 0.0 {
                let coeff = -2.0 * a * b * d2.powf(b - 1.0) / (a * d2.powf(b) + 1.0);
                for k in 0..2 {
                    let g = clip(coeff * (y[i][k] - y[j][k]));
                    y[i][k] += g * alpha;
                    y[j][k] -= g * alpha;
                }
            }
            next_sample[e] += per_sample[e];

            let n_neg = if cfg.negative_sample_rate == 0 {
                0
            } else {
                ((now - next_negative[e]) / per_negative[e]).floor().max(0.0) as usize
            };
            for _ in 0..n_neg {
                let k = rng.gen_range(0..n);
                if k == i {
                    continue;
                }
                let d2 = (y[i][0] - y[k][0]).powi(2) + (y[i][1] - y[k][1]).powi(2);
                for c in 0..2 {
                    let g = if d2 > 0.0 {
                        let coeff = 2.0 * b / ((0.001 + d2) * (a * d2.powf(b) + 1.0));
                        clip(coeff * (y[i][c] - y[k][c]))
                    } else {
                        4.0
                    };
                    y[i][c] += g * alpha;
                }
            }
            next_negative[e] += n_neg as f64 * per_negative[e];
        }
        if y.iter().any(|p| !(p[0].is_finite() && p[1].is_finite())) {
            return Err(ProjectionError::NonFinite { epoch });
        }
    }
    Ok(y)
}

/// Uniformly scale into `[0, 1]^2`, keeping the aspect ratio; the longer
/// side spans the full unit interval and the shorter one is centered.
pub fn normalize(coords: &[[f64; 2]]) -> Vec<[f64; 2]> {
    if coords.is_empty() {
        return Vec::new();
    }
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in coords {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]);
    coords
        .iter()
        .map(|p| {
            let mut q = [0.5; 2];
            if span > 0.0 {
                for k in 0..2 {
                    let offset = (span - (hi[k] - lo[k])) / 2.0;
                    q[k] = ((p[k] - lo[k] + offset) / span).clamp(0.0, 1.0);
                }
            }
            q
        })
        .collect()
}

/// Full pipeline: kNN, fuzzy weights, initialization, SGD, rescale.
pub fn project(emb: &EmbeddingTable, cfg: &ProjectionConfig) -> Result<Vec<LayoutPoint>, ProjectionError> {
    cfg.validate()?;
    let knn = knn_graph(emb, cfg.n_neighbors)?;
    let fuzzy = fuzzy_weights(&knn);
    let init = initialize(&fuzzy, cfg.seed);
    let raw = optimize(&fuzzy, init, cfg)?;
    Ok(fuzzy
        .ids
        .into_iter()
        .zip(normalize(&raw))
        .map(|(id, p)| LayoutPoint { id, x: p[0], y: p[1] })
        .collect())
}

/// Neighborhood-preservation score of `low` against `high`:
///
/// ```text
/// T(k) = 1 - 2 / (n k (2n - 3k - 1)) * sum_i sum_{j in U_k(i)} (r(i, j) - k)
/// ```
///
/// where `U_k(i)` are the low-dimensional k nearest neighbors of `i` that are
/// not among its high-dimensional ones and `r(i, j)` is the rank of `j` by
/// high-dimensional distance from `i`. Ties rank by ascending id.
pub fn trustworthiness(
    high: &EmbeddingTable,
    low: &[LayoutPoint],
    k: usize,
) -> Result<f64, ProjectionError> {
    let n = high.len();
    if k == 0 || 2 * k >= n {
        return Err(ProjectionError::Config(format!(
            "trustworthiness needs 1 <= k < n/2 (k={k}, n={n})"
        )));
    }
    if low.len() != n {
        return Err(ProjectionError::Mismatch(format!("{} vs {} points", n, low.len())));
    }
    let (ids, rows) = canonical(high);
    let mut pts: Vec<&LayoutPoint> = low.iter().collect();
    pts.sort_by(|a, b| a.id.cmp(&b.id));
    for (a, b) in ids.iter().zip(&pts) {
        if *a != b.id {
            return Err(ProjectionError::Mismatch(format!("{a} vs {}", b.id)));
        }
    }
    let penalty: f64 = (0..n)
        .into_par_iter()
        .map(|i| {
            let order = |dist: &dyn Fn(usize) -> f64| -> Vec<usize> {
                let mut o: Vec<(f64, usize)> = (0..n).filter(|&j| j != i).map(|j| (dist(j), j)).collect();
                o.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                o.into_iter().map(|x| x.1).collect()
            };
            let high_order = order(&|j| squared_distance(rows[i], rows[j]));
            let low_order = order(&|j| (pts[i].x - pts[j].x).powi(2) + (pts[i].y - pts[j].y).powi(2));
            let mut rank = vec![0usize; n];
            for (r, &j) in high_order.iter().enumerate() {
                rank[j] = r + 1;
            }
            low_order[..k]
                .iter()
                .map(|&j| rank[j])
                .filter(|&r| r > k)
                .map(|r| (r - k) as f64)
                .sum::<f64>()
        })
        .collect::<Vec<f64>>()
        .into_iter()
        .sum();
    let (nf, kf) = (n as f64, k as f64);
    Ok(1.0 - 2.0 / (nf * kf * (2.0 * nf - 3.0 * kf - 1.0)) * penalty)
}

/// `kind<TAB>key<TAB>x<TAB>y` lines under a header.
pub fn write_layout<W: Write>(points: &[LayoutPoint], mut w: W) -> std::io::Result<()> {
    writeln!(w, "kind\tkey\tx\ty")?;
    for p in points {
        writeln!(w, "{}\t{}\t{}\t{}", p.id.kind.name(), p.id.key, p.x, p.y)?;
    }
    w.flush()
}

pub fn read_layout<R: BufRead>(r: R) -> Result<Vec<LayoutPoint>, ProjectionError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if i == 0 || line.is_empty() {
            continue;
        }
        let bad = |m: &str| ProjectionError::Format(format!("line {}: {m}", i + 1));
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(bad("expected 4 fields"));
        }
        let kind = f[0].parse().map_err(|_| bad("bad kind"))?;
        let x: f64 = f[2].parse().map_err(|_| bad("bad x"))?;
        let y: f64 = f[3].parse().map_err(|_| bad("bad y"))?;
        if !(x.is_finite() && y.is_finite()) {
            return Err(bad("non-finite coordinate"));
        }
        out.push(LayoutPoint {
            id: VertexId {
                kind,
                key: f[1].to_string(),
            },
            x,
            y,
        });
    }
    Ok(out)
}
