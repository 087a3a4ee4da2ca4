use std::collections::{BTreeSet, HashMap};

use rayon::prelude::*;

use super::{EmbeddingTable, Gradients, Layer, ModelParams, RgcnError, SELF_LOOP};
use crate::graph::{GraphView, Relation, VertexId};

/// Fixed work partition for gradient reductions; partial sums are combined
/// in chunk order so results do not depend on the thread count.
const REDUCE_CHUNK: usize = 512;

#[derive(Debug, Clone, Copy)]
pub(crate) enum RowRef<'a> {
    Sparse(&'a [(u32, f64)]),
    Dense(&'a [f64]),
}

#[derive(Debug, Clone)]
pub(crate) enum Rows {
    Sparse(Vec<Vec<(u32, f64)>>),
    Dense { dim: usize, data: Vec<f64> },
}

impl Rows {
    fn row(&self, pos: usize) -> RowRef<'_> {
        match self {
            Rows::Sparse(rows) => RowRef::Sparse(&rows[pos]),
            Rows::Dense { dim, data } => RowRef::Dense(&data[pos * dim..(pos + 1) * dim]),
        }
    }
}

/// Layer activations for a set of vertices (all of them, or a receptive field).
#[derive(Debug, Clone)]
pub(crate) struct Acts {
    pos: Option<HashMap<u32, usize>>,
    rows: Rows,
}

impl Acts {
    fn get(&self, v: u32) -> RowRef<'_> {
        let p = match &self.pos {
            None => v as usize,
            Some(m) => m[&v],
        };
        self.rows.row(p)
    }
}

enum Agg {
    Sparse(Vec<(u32, f64)>),
    Dense(Vec<f64>),
}

impl Agg {
    fn as_ref(&self) -> RowRef<'_> {
        match self {
            Agg::Sparse(v) => RowRef::Sparse(v),
            Agg::Dense(v) => RowRef::Dense(v),
        }
    }
}

/// Mean of the neighbor rows, summed in the order given.
fn aggregate(input: &Acts, nbrs: &[u32], d_in: usize, scratch: &mut [f64]) -> Agg {
    let inv = 1.0 / nbrs.len() as f64;
    match &input.rows {
        Rows::Dense { .. } => {
            let mut s = vec![0.0; d_in];
            for j in nbrs {
                if let RowRef::Dense(row) = input.get(*j) {
                    for (a, x) in s.iter_mut().zip(row) {
                        *a += x;
                    }
                }
            }
            s.iter_mut().for_each(|a| *a *= inv);
            Agg::Dense(s)
        }
        Rows::Sparse(_) => {
            let mut touched = Vec::new();
            for j in nbrs {
                if let RowRef::Sparse(row) = input.get(*j) {
                    for (k, x) in row {
                        let k = *k as usize;
                        if scratch[k] == 0.0 {
                            touched.push(k);
                        }
                        scratch[k] += x;
                    }
                }
            }
            touched.sort_unstable();
            touched.dedup();
            let out = touched
                .into_iter()
                .map(|k| {
                    let v = scratch[k] * inv;
                    scratch[k] = 0.0;
                    (k as u32, v)
                })
                .filter(|(_, v)| *v != 0.0)
                .collect();
            Agg::Sparse(out)
        }
    }
}

/// `out += W x` for row-major `W` with `d_in` columns.
fn matvec_acc(w: &[f64], d_in: usize, x: RowRef<'_>, out: &mut [f64]) {
    match x {
        RowRef::Dense(x) => {
            for (o, wrow) in out.iter_mut().zip(w.chunks_exact(d_in)) {
                *o += wrow.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        RowRef::Sparse(x) => {
            for (r, o) in out.iter_mut().enumerate() {
                let wrow = &w[r * d_in..(r + 1) * d_in];
                *o += x.iter().map(|(k, v)| wrow[*k as usize] * v).sum::<f64>();
            }
        }
    }
}

/// `dw += delta x^T`
fn outer_acc(dw: &mut [f64], d_in: usize, delta: &[f64], x: RowRef<'_>) {
    for (r, d) in delta.iter().enumerate() {
        if *d == 0.0 {
            continue;
        }
        let row = &mut dw[r * d_in..(r + 1) * d_in];
        match x {
            RowRef::Dense(x) => row.iter_mut().zip(x).for_each(|(a, b)| *a += d * b),
            RowRef::Sparse(x) => x.iter().for_each(|(k, v)| row[*k as usize] += d * v),
        }
    }
}

/// `out += W^T delta`
fn matvec_t_acc(w: &[f64], d_in: usize, delta: &[f64], out: &mut [f64]) {
    for (d, wrow) in delta.iter().zip(w.chunks_exact(d_in)) {
        if *d == 0.0 {
            continue;
        }
        out.iter_mut().zip(wrow).for_each(|(o, a)| *o += d * a);
    }
}

fn pre_activation<G: GraphView + ?Sized>(
    g: &G,
    layer: &Layer,
    input: &Acts,
    v: u32,
    scratch: &mut [f64],
) -> Vec<f64> {
    let mut out = vec![0.0; layer.d_out];
    for r in Relation::ALL {
        let nbrs = g.neighbor_slice(v, r);
        if nbrs.is_empty() {
            continue;
        }
        let agg = aggregate(input, &nbrs, layer.d_in, scratch);
        matvec_acc(layer.relation(r), layer.d_in, agg.as_ref(), &mut out);
    }
    matvec_acc(layer.self_loop(), layer.d_in, input.get(v), &mut out);
    out
}

/// Pre-activations of `targets` (in order), flattened.
fn layer_pre<G: GraphView + ?Sized>(
    g: &G,
    layer: &Layer,
    input: &Acts,
    targets: &[u32],
) -> Vec<f64> {
    let rows: Vec<Vec<f64>> = targets
        .par_iter()
        .map_init(
            || vec![0.0; layer.d_in],
            |scratch, &v| pre_activation(g, layer, input, v, scratch),
        )
        .collect();
    rows.concat()
}

fn check_finite<G: GraphView + ?Sized>(
    g: &G,
    layer: usize,
    d: usize,
    targets: &[u32],
    values: &[f64],
) -> Result<(), RgcnError> {
    match values.iter().position(|x| !x.is_finite()) {
        None => Ok(()),
        Some(i) => Err(RgcnError::NonFinite {
            layer,
            vertex: g.vertex(targets[i / d]).clone(),
        }),
    }
}

fn relu(values: &[f64]) -> Vec<f64> {
    values.iter().map(|x| x.max(0.0)).collect()
}

fn input_acts<G: GraphView + ?Sized>(g: &G, p: &ModelParams, vertices: Option<&[u32]>) -> Acts {
    let feat = |v: u32| p.features.features(g.vertex(v), &g.payload(v));
    match vertices {
        None => Acts {
            pos: None,
            rows: Rows::Sparse((0..g.vertex_count() as u32).map(feat).collect()),
        },
        Some(vs) => Acts {
            pos: Some(vs.iter().enumerate().map(|(i, v)| (*v, i)).collect()),
            rows: Rows::Sparse(vs.iter().map(|v| feat(*v)).collect()),
        },
    }
}

/// Everything the backward pass needs from a full-graph forward pass.
pub(crate) struct Cache {
    inputs: Vec<Acts>,
    pre: Vec<Vec<f64>>,
    pub(crate) output: Vec<f64>,
}

pub(crate) fn forward_cached<G: GraphView + ?Sized>(
    g: &G,
    p: &ModelParams,
) -> Result<Cache, RgcnError> {
    p.validate()?;
    let n = g.vertex_count();
    let all: Vec<u32> = (0..n as u32).collect();
    let mut inputs = vec![input_acts(g, p, None)];
    let mut pre = Vec::with_capacity(p.layers.len());
    let last = p.layers.len() - 1;
    for (l, layer) in p.layers.iter().enumerate() {
        let z = layer_pre(g, layer, &inputs[l], &all);
        check_finite(g, l, layer.d_out, &all, &z)?;
        if l < last {
            inputs.push(Acts {
                pos: None,
                rows: Rows::Dense {
                    dim: layer.d_out,
                    data: relu(&z),
                },
            });
        }
        pre.push(z);
    }
    let output = pre[last].clone();
    Ok(Cache {
        inputs,
        pre,
        output,
    })
}

/// Embed every vertex of `g`.
pub fn forward<G: GraphView + ?Sized>(g: &G, p: &ModelParams) -> Result<EmbeddingTable, RgcnError> {
    let cache = forward_cached(g, p)?;
    let ids = (0..g.vertex_count() as u32)
        .map(|i| g.vertex(i).clone())
        .collect();
    EmbeddingTable::new(ids, p.output_dim(), cache.output)
}

/// Embed only `targets`, evaluating each layer on the receptive field alone.
/// Gives the same vectors as [`forward`] on the same graph.
pub fn forward_subset<G: GraphView + ?Sized>(
    g: &G,
    p: &ModelParams,
    targets: &[VertexId],
) -> Result<EmbeddingTable, RgcnError> {
    p.validate()?;
    let target_idx: Vec<u32> = targets
        .iter()
        .map(|t| g.index_of(t).ok_or_else(|| RgcnError::UnknownVertex(t.clone())))
        .collect::<Result<_, _>>()?;
    // fields[l] = vertices whose layer-l activation is needed
    let depth = p.layers.len();
    let mut fields: Vec<Vec<u32>> = vec![Vec::new(); depth + 1];
    let mut current: BTreeSet<u32> = target_idx.iter().copied().collect();
    fields[depth] = current.iter().copied().collect();
    for l in (0..depth).rev() {
        let mut next = current.clone();
        for v in &current {
            for r in Relation::ALL {
                next.extend(g.neighbor_slice(*v, r).iter().copied());
            }
        }
        fields[l] = next.iter().copied().collect();
        current = next;
    }
    let mut acts = input_acts(g, p, Some(&fields[0]));
    let mut out = Vec::new();
    for (l, layer) in p.layers.iter().enumerate() {
        let vs = &fields[l + 1];
        let z = layer_pre(g, layer, &acts, vs);
        check_finite(g, l, layer.d_out, vs, &z)?;
        let data = if l + 1 < depth { relu(&z) } else { z };
        if l + 1 == depth {
            out = data;
            break;
        }
        acts = Acts {
            pos: Some(vs.iter().enumerate().map(|(i, v)| (*v, i)).collect()),
            rows: Rows::Dense {
                dim: layer.d_out,
                data,
            },
        };
    }
    let d = p.output_dim();
    let pos: HashMap<u32, usize> = fields[depth].iter().enumerate().map(|(i, v)| (*v, i)).collect();
    let data = target_idx
        .iter()
        .flat_map(|v| out[pos[v] * d..(pos[v] + 1) * d].iter().copied())
        .collect();
    EmbeddingTable::new(targets.to_vec(), d, data)
}

/// Gradients of a scalar loss with respect to all weights, given
/// `grad_output = dLoss/dEmbedding` (row-major, one row per vertex).
pub(crate) fn backward<G: GraphView + ?Sized>(
    g: &G,
    p: &ModelParams,
    cache: &Cache,
    grad_output: Vec<f64>,
) -> Gradients {
    let n = g.vertex_count();
    let depth = p.layers.len();
    let mut grads = Gradients::zeros_like(p);
    let mut grad = grad_output;
    let all: Vec<u32> = (0..n as u32).collect();
    for l in (0..depth).rev() {
        let layer = &p.layers[l];
        let (d_in, d_out) = (layer.d_in, layer.d_out);
        let mut delta = grad;
        if l + 1 < depth {
            for (d, z) in delta.iter_mut().zip(&cache.pre[l]) {
                if *z <= 0.0 {
                    *d = 0.0;
                }
            }
        }
        let active: Vec<bool> = delta
            .chunks_exact(d_out)
            .map(|row| row.iter().any(|x| *x != 0.0))
            .collect();
        let input = &cache.inputs[l];

        let block = layer.block_len();
        let partials: Vec<Vec<f64>> = all
            .par_chunks(REDUCE_CHUNK)
            .map(|chunk| {
                let mut local = vec![0.0; layer.weights.len()];
                let mut scratch = vec![0.0; d_in];
                for &i in chunk {
                    if !active[i as usize] {
                        continue;
                    }
                    let di = &delta[i as usize * d_out..(i as usize + 1) * d_out];
                    outer_acc(
                        &mut local[SELF_LOOP * block..(SELF_LOOP + 1) * block],
                        d_in,
                        di,
                        input.get(i),
                    );
                    for r in Relation::ALL {
                        let nbrs = g.neighbor_slice(i, r);
                        if nbrs.is_empty() {
                            continue;
                        }
                        let agg = aggregate(input, &nbrs, d_in, &mut scratch);
                        let b = r.index();
                        outer_acc(&mut local[b * block..(b + 1) * block], d_in, di, agg.as_ref());
                    }
                }
                local
            })
            .collect();
        let gl = &mut grads.layers[l];
        for part in partials {
            gl.iter_mut().zip(part).for_each(|(a, b)| *a += b);
        }

        if l == 0 {
            break;
        }
        // dL/dx_j = W_0^T d_j + sum_r W_r^T sum_{i : j in N_i^r} d_i / |N_i^r|,
        // and i has j as an r-neighbor exactly when i is an inverse-r neighbor of j.
        let rows: Vec<Vec<f64>> = all
            .par_iter()
            .map(|&j| {
                let mut out = vec![0.0; d_in];
                if active[j as usize] {
                    let dj = &delta[j as usize * d_out..(j as usize + 1) * d_out];
                    matvec_t_acc(layer.self_loop(), d_in, dj, &mut out);
                }
                let mut s = vec![0.0; d_out];
                for r in Relation::ALL {
                    let sources = g.neighbor_slice(j, r.inverse());
                    let mut any = false;
                    s.iter_mut().for_each(|x| *x = 0.0);
                    for &i in sources.iter() {
                        if !active[i as usize] {
                            continue;
                        }
                        any = true;
                        let c = g.neighbor_slice(i, r).len() as f64;
                        let di = &delta[i as usize * d_out..(i as usize + 1) * d_out];
                        s.iter_mut().zip(di).for_each(|(a, d)| *a += d / c);
                    }
                    if any {
                        matvec_t_acc(layer.relation(r), d_in, &s, &mut out);
                    }
                }
                out
            })
            .collect();
        grad = rows.concat();
    }
    grads
}

/// ReLU on/off pattern of every hidden unit; used to detect kink crossings.
pub(crate) fn relu_pattern(cache: &Cache) -> Vec<bool> {
    let hidden = cache.pre.len().saturating_sub(1);
    cache.pre[..hidden]
        .iter()
        .flat_map(|z| z.iter().map(|x| *x > 0.0))
        .collect()
}
