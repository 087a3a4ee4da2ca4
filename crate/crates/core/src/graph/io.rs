//! Line-oriented text form of a [`HeteroGraph`].
//!
//! ```text
//! # crowdsearch-graph 1
//! V <TAB> kind <TAB> key <TAB> goal_amount <TAB> updates <TAB> comments <TAB> investments
//! E <TAB> from_kind <TAB> from_key <TAB> relation <TAB> to_kind <TAB> to_key
//! ```
//!
//! Vertices come first in index order, then edges of the forward relations
//! (`Invested`, `Has*`) in relation and index order; inverses are implied.
//! Keys escape `\`, tab and newline as `\\`, `\t`, `\n`.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};

use super::{GraphError, GraphView, HeteroGraph, Payload, Relation, VertexId};

const HEADER: &str = "# crowdsearch-graph 1";

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\")
        .replace('\t', "\\t")
        .replace('\n', "\\n")
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('t') => out.push('\t'),
                Some('n') => out.push('\n'),
                Some(other) => out.push(other),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

pub fn export_graph<W: Write>(g: &HeteroGraph, mut w: W) -> Result<(), GraphError> {
    writeln!(w, "{HEADER}")?;
    for (i, v) in g.vertices().iter().enumerate() {
        let p = GraphView::payload(g, i as u32);
        writeln!(
            w,
            "V\t{}\t{}\t{}\t{}\t{}\t{}",
            v.kind.name(),
            escape(&v.key),
            p.goal_amount,
            p.updates_count,
            p.comments_count,
            p.investment_number
        )?;
    }
    for rel in Relation::FORWARD {
        for (s, t) in g.edges(rel) {
            let (a, b) = (&g.vertices()[s as usize], &g.vertices()[t as usize]);
            writeln!(
                w,
                "E\t{}\t{}\t{}\t{}\t{}",
                a.kind.name(),
                escape(&a.key),
                rel,
                b.kind.name(),
                escape(&b.key)
            )?;
        }
    }
    Ok(())
}

pub fn import_graph<R: BufRead>(r: R) -> Result<HeteroGraph, GraphError> {
    let mut vertices = BTreeSet::new();
    let mut payloads = HashMap::new();
    let mut edges = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let bad = |message: String| GraphError::Parse {
            line: lineno,
            message,
        };
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let vid = |kind: &str, key: &str| -> Result<VertexId, GraphError> {
            Ok(VertexId {
                kind: kind.parse().map_err(bad)?,
                key: unescape(key),
            })
        };
        match f.as_slice() {
            ["V", kind, key, goal, upd, com, inv] => {
                let v = vid(kind, key)?;
                let num = |s: &str| s.parse::<u32>().map_err(|e| bad(format!("{s:?}: {e}")));
                let payload = Payload {
                    goal_amount: goal.parse().map_err(|e| bad(format!("{goal:?}: {e}")))?,
                    updates_count: num(upd)?,
                    comments_count: num(com)?,
                    investment_number: num(inv)?,
                };
                if !vertices.insert(v.clone()) {
                    return Err(GraphError::DuplicateVertex(v));
                }
                payloads.insert(v, payload);
            }
            ["E", fk, fkey, rel, tk, tkey] => {
                let rel: Relation = rel.parse().map_err(bad)?;
                edges.push((vid(fk, fkey)?, rel, vid(tk, tkey)?));
            }
            _ => return Err(bad(format!("unrecognized line {line:?}"))),
        }
    }
    HeteroGraph::from_parts(vertices, payloads, edges)
}
