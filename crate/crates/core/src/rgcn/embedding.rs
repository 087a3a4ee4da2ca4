use std::collections::HashMap;
use std::io::{BufRead, Write};

use super::RgcnError;
use crate::graph::{VertexId, VertexKind};

/// Dense `n x dim` table of vertex embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    ids: Vec<VertexId>,
    index: HashMap<VertexId, usize>,
    dim: usize,
    data: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(ids: Vec<VertexId>, dim: usize, data: Vec<f64>) -> Result<Self, RgcnError> {
        if data.len() != ids.len() * dim {
            return Err(RgcnError::DimensionMismatch {
                left: data.len(),
                right: ids.len() * dim,
            });
        }
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(RgcnError::Config(format!("duplicate embedding id {id}")));
            }
        }
        Ok(Self {
            ids,
            index,
            dim,
            data,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[VertexId] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn get(&self, id: &VertexId) -> Option<&[f64]> {
        self.index.get(id).map(|i| self.row(*i))
    }

    pub fn position(&self, id: &VertexId) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&VertexId, &[f64])> {
        self.ids.iter().zip(self.data.chunks_exact(self.dim.max(1)))
    }

    /// Rows whose vertex kind is in `kinds`, preserving order.
    pub fn filter_kinds(&self, kinds: &[VertexKind]) -> EmbeddingTable {
        let (ids, data): (Vec<VertexId>, Vec<&[f64]>) = self
            .iter()
            .filter(|(id, _)| kinds.contains(&id.kind))
            .map(|(id, row)| (id.clone(), row))
            .unzip();
        let data = data.concat();
        EmbeddingTable::new(ids, self.dim, data).expect("subset of a valid table")
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Tab-separated text: `kind key v_1 ... v_dim`, one row per vertex.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "# embeddings {} {}", self.len(), self.dim)?;
        for (id, row) in self.iter() {
            write!(w, "{}\t{}", id.kind.name(), id.key)?;
            for x in row {
                write!(w, "\t{x}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(r: R) -> Result<Self, RgcnError> {
        let mut ids = Vec::new();
        let mut data = Vec::new();
        let mut dim = None;
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let bad = |m: String| RgcnError::Format(format!("embeddings line {}: {m}", i + 1));
            if let Some(header) = line.strip_prefix("# embeddings ") {
                let d = header
                    .split_whitespace()
                    .nth(1)
                    .and_then(|d| d.parse().ok())
                    .ok_or_else(|| bad("bad header".into()))?;
                dim = Some(d);
                continue;
            }
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut f = line.split('\t');
            let kind = f.next().unwrap_or_default().parse().map_err(bad)?;
            let key = f.next().ok_or_else(|| bad("missing key".into()))?.to_string();
            let before = data.len();
            for x in f {
                data.push(x.parse::<f64>().map_err(|e| bad(e.to_string()))?);
            }
            let d = *dim.get_or_insert(data.len() - before);
            if data.len() - before != d {
                return Err(bad(format!("expected {d} values")));
            }
            ids.push(VertexId { kind, key });
        }
        Self::new(ids, dim.unwrap_or(0), data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tsv_roundtrip_is_exact() {
        let t = EmbeddingTable::new(
            vec![VertexId::investor("1"), VertexId::project("P 1")],
            3,
            vec![0.1, -2.0e-300, 1.0 / 3.0, f64::MAX, 0.0, -0.0],
        )
        .unwrap();
        let mut buf = Vec::new();
        t.write_tsv(&mut buf).unwrap();
        let back = EmbeddingTable::read_tsv(buf.as_slice()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.get(&VertexId::project("P 1")).unwrap()[0], f64::MAX);
    }

    #[test]
    fn rejects_shape_errors() {
        assert!(EmbeddingTable::new(vec![VertexId::investor("1")], 2, vec![1.0]).is_err());
        assert!(EmbeddingTable::new(
            vec![VertexId::investor("1"), VertexId::investor("1")],
            1,
            vec![1.0, 2.0]
        )
        .is_err());
    }
}
