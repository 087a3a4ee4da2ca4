use std::collections::HashMap;

use crate::graph::{GraphView, Payload, VertexId, VertexKind};

/// Initial vertex features.
///
/// Layout: `[kind one-hot (3) | feature-value identity one-hot (V) | numeric (4)]`.
/// The numeric block holds `ln(1 + x) / ln(1 + max x)` for goal amount,
/// update count, comment count and investment number, with maxima taken
/// over the graph the map was built from.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    vocabulary: Vec<String>,
    vocab_index: HashMap<String, usize>,
    log_max: [f64; 4],
}

pub(crate) const KIND_DIMS: usize = 3;
pub(crate) const NUMERIC_DIMS: usize = 4;

impl FeatureMap {
    pub fn new(vocabulary: Vec<String>, log_max: [f64; 4]) -> Self {
        let vocab_index = vocabulary
            .iter()
            .enumerate()
            .map(|(i, k)| (k.clone(), i))
            .collect();
        Self {
            vocabulary,
            vocab_index,
            log_max,
        }
    }

    pub fn from_graph<G: GraphView + ?Sized>(g: &G) -> Self {
        let mut vocabulary = Vec::new();
        let mut max = [0.0f64; 4];
        for i in 0..g.vertex_count() as u32 {
            let v = g.vertex(i);
            if v.kind == VertexKind::FeatureValue {
                vocabulary.push(v.key.clone());
            }
            for (m, x) in max.iter_mut().zip(numeric(&g.payload(i))) {
                *m = m.max(x);
            }
        }
        vocabulary.sort();
        Self::new(vocabulary, max.map(f64::ln_1p))
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn log_max(&self) -> [f64; 4] {
        self.log_max
    }

    pub fn dim(&self) -> usize {
        KIND_DIMS + self.vocabulary.len() + NUMERIC_DIMS
    }

    /// Sparse feature vector, entries in ascending index order.
    pub fn features(&self, id: &VertexId, payload: &Payload) -> Vec<(u32, f64)> {
        let kind = match id.kind {
            VertexKind::Investor => 0,
            VertexKind::Project => 1,
            VertexKind::FeatureValue => 2,
        };
        let mut out = vec![(kind, 1.0)];
        if id.kind == VertexKind::FeatureValue {
            if let Some(i) = self.vocab_index.get(&id.key) {
                out.push(((KIND_DIMS + i) as u32, 1.0));
            }
        }
        let base = (KIND_DIMS + self.vocabulary.len()) as u32;
        for (k, (x, m)) in numeric(payload).into_iter().zip(self.log_max).enumerate() {
            if x > 0.0 && m > 0.0 {
                out.push((base + k as u32, x.ln_1p() / m));
            }
        }
        out
    }
}

fn numeric(p: &Payload) -> [f64; 4] {
    [
        p.goal_amount.max(0.0),
        p.updates_count as f64,
        p.comments_count as f64,
        p.investment_number as f64,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_and_normalization() {
        let fm = FeatureMap::new(
            vec!["category:Arts".into(), "category:Games".into()],
            [1000f64.ln_1p(), 0.0, 10f64.ln_1p(), 4f64.ln_1p()],
        );
        assert_eq!(fm.dim(), 3 + 2 + 4);
        let f = fm.features(&VertexId::feature(crate::graph::FeatureKind::Category, "Games"), &Payload::default());
        assert_eq!(f, vec![(2, 1.0), (4, 1.0)]);
        let p = Payload {
            goal_amount: 1000.0,
            updates_count: 3,
            comments_count: 10,
            investment_number: 0,
        };
        let f = fm.features(&VertexId::project("P"), &p);
        // updates max is zero, so that column stays empty
        assert_eq!(f, vec![(1, 1.0), (5, 1.0), (7, 1.0)]);
        let unseen = fm.features(&VertexId::feature(crate::graph::FeatureKind::Season, "2030Q1"), &Payload::default());
        assert_eq!(unseen, vec![(2, 1.0)]);
    }
}
