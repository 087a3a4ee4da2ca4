//! Immutable bundle of everything the API serves, stored as a directory:
//!
//! ```text
//! meta.json       build metadata
//! projects.tsv    project table
//! investors.tsv   investor table
//! graph.txt       heterogeneous graph
//! params.bin      model parameters
//! embeddings.tsv  vertex embeddings
//! loss.tsv        training loss per epoch
//! layout.tsv      2D layout (after `project`)
//! ```
//!
//! Nothing time-dependent is written unless a timestamp is requested, so two
//! builds with the same inputs and seeds are byte-identical.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::graph::{build_graph, export_graph, import_graph, GraphError, HeteroGraph, VertexKind};
use crate::ingest::{
    read_investors, read_projects, write_investors, write_projects, Dataset, GoalBins, IngestError,
};
use crate::projection::{project, read_layout, write_layout, LayoutPoint, ProjectionConfig, ProjectionError};
use crate::rgcn::{read_params, train, write_params, EmbeddingTable, ModelParams, RgcnError, TrainConfig};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum SnapshotError {
    #[error("inconsistent snapshot: {0}")]
    Inconsistent(String),
    #[error("{file}: {message}")]
    Format { file: String, message: String },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Rgcn(#[from] RgcnError),
    #[error(transparent)]
    Projection(#[from] ProjectionError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs: usize,
    pub learning_rate: f64,
    pub negative_ratio: usize,
    pub seed: u64,
    pub layer_dims: Vec<usize>,
    pub batch_size: Option<usize>,
    pub holdout_fraction: f64,
    pub cold_start_fraction: f64,
}

impl From<&TrainConfig> for TrainSummary {
    fn from(c: &TrainConfig) -> Self {
        Self {
            epochs: c.epochs,
            learning_rate: c.learning_rate,
            negative_ratio: c.negative_ratio,
            seed: c.seed,
            layer_dims: c.layer_dims.clone(),
            batch_size: c.batch_size,
            holdout_fraction: c.holdout_fraction,
            cold_start_fraction: c.cold_start_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub projects: usize,
    pub investors: usize,
    pub vertices: usize,
    pub edges: usize,
    pub layout_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildMeta {
    pub format_version: u32,
    pub goal_edges: [f64; 3],
    pub train: TrainSummary,
    pub projection: Option<ProjectionConfig>,
    /// SHA-256 of the canonical JSON of `goal_edges`, `train` and `projection`.
    pub config_hash: String,
    /// SHA-256 over the two dataset tables as written.
    pub data_hash: String,
    pub counts: Counts,
    pub final_loss: Option<f64>,
    pub heldout_auc: Option<f64>,
    /// Seconds since the Unix epoch at build and at projection time.
    pub built_at: Option<u64>,
    pub projected_at: Option<u64>,
}

impl BuildMeta {
    fn compute_config_hash(&self) -> String {
        let canonical = serde_json::json!({
            "goal_edges": self.goal_edges,
            "train": self.train,
            "projection": self.projection,
        });
        hex(&Sha256::digest(canonical.to_string().as_bytes()))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub meta: BuildMeta,
    pub dataset: Dataset,
    pub bins: GoalBins,
    pub graph: HeteroGraph,
    pub params: ModelParams,
    pub embeddings: EmbeddingTable,
    pub loss_trace: Vec<f64>,
    /// Projects and investors in one 2D space; empty before `project`.
    pub layout: Vec<LayoutPoint>,
}

fn table_bytes(ds: &Dataset) -> Result<(Vec<u8>, Vec<u8>), IngestError> {
    let mut p = Vec::new();
    write_projects(&mut p, &ds.projects)?;
    let mut i = Vec::new();
    write_investors(&mut i, &ds.investors)?;
    Ok((p, i))
}

fn data_hash(ds: &Dataset) -> Result<String, IngestError> {
    let (p, i) = table_bytes(ds)?;
    let mut h = Sha256::new();
    h.update((p.len() as u64).to_le_bytes());
    h.update(&p);
    h.update(&i);
    Ok(hex(&h.finalize()))
}

/// Build the graph from `dataset` and train the model on it.
pub fn build(
    dataset: Dataset,
    bins: GoalBins,
    cfg: &TrainConfig,
    timestamp: bool,
) -> Result<Snapshot, SnapshotError> {
    let graph = build_graph(&dataset.projects, &dataset.investors, &bins)?;
    log::info!(
        "graph: {} vertices, {} edges",
        graph.len(),
        graph.total_edge_count()
    );
    let outcome = train(&graph, cfg)?;
    let mut meta = BuildMeta {
        format_version: FORMAT_VERSION,
        goal_edges: bins.edges(),
        train: TrainSummary::from(cfg),
        projection: None,
        config_hash: String::new(),
        data_hash: data_hash(&dataset)?,
        counts: Counts {
            projects: dataset.projects.len(),
            investors: dataset.investors.len(),
            vertices: graph.len(),
            edges: graph.total_edge_count(),
            layout_points: 0,
        },
        final_loss: outcome.loss_trace.last().copied(),
        heldout_auc: outcome.heldout_auc,
        built_at: timestamp.then(unix_now),
        projected_at: None,
    };
    meta.config_hash = meta.compute_config_hash();
    let snap = Snapshot {
        meta,
        dataset,
        bins,
        graph,
        params: outcome.params,
        embeddings: outcome.embeddings,
        loss_trace: outcome.loss_trace,
        layout: Vec::new(),
    };
    snap.validate()?;
    Ok(snap)
}

impl Snapshot {
    /// Lay out project and investor embeddings in 2D, replacing any previous layout.
    pub fn project(&mut self, cfg: &ProjectionConfig, timestamp: bool) -> Result<(), SnapshotError> {
        let points = self
            .embeddings
            .filter_kinds(&[VertexKind::Investor, VertexKind::Project]);
        self.layout = project(&points, cfg)?;
        self.meta.projection = Some(cfg.clone());
        self.meta.counts.layout_points = self.layout.len();
        self.meta.projected_at = timestamp.then(unix_now);
        self.meta.config_hash = self.meta.compute_config_hash();
        self.validate()
    }

    /// Layout ids are embedded, embedded ids are graph vertices, and the
    /// graph is exactly the one the dataset induces.
    pub fn validate(&self) -> Result<(), SnapshotError> {
        let bad = |m: String| Err(SnapshotError::Inconsistent(m));
        if let Some(id) = self.embeddings.ids().iter().find(|id| !self.graph.contains(id)) {
            return bad(format!("embedded vertex {id} is not in the graph"));
        }
        if self.embeddings.len() != self.graph.len() {
            return bad(format!(
                "{} embeddings for {} vertices",
                self.embeddings.len(),
                self.graph.len()
            ));
        }
        if !self.embeddings.is_finite() {
            return bad("non-finite embedding".into());
        }
        let mut seen = HashSet::with_capacity(self.layout.len());
        for p in &self.layout {
            if self.embeddings.get(&p.id).is_none() {
                return bad(format!("layout point {} has no embedding", p.id));
            }
            if !seen.insert(&p.id) {
                return bad(format!("layout point {} appears twice", p.id));
            }
            if !(p.x.is_finite() && p.y.is_finite()) {
                return bad(format!("layout point {} is not finite", p.id));
            }
        }
        if self.params.output_dim() != self.embeddings.dim() {
            return bad(format!(
                "model output size {} but embeddings have {}",
                self.params.output_dim(),
                self.embeddings.dim()
            ));
        }
        if self.meta.goal_edges != self.bins.edges() {
            return bad("goal edges differ from metadata".into());
        }
        let derived = build_graph(&self.dataset.projects, &self.dataset.investors, &self.bins)?;
        if graph_text(&derived)? != graph_text(&self.graph)? {
            return bad("graph does not match the dataset".into());
        }
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<(), SnapshotError> {
        std::fs::create_dir_all(dir)?;
        let create = |name: &str| -> std::io::Result<BufWriter<File>> {
            Ok(BufWriter::new(File::create(dir.join(name))?))
        };
        let mut w = create("meta.json")?;
        serde_json::to_writer_pretty(&mut w, &self.meta).map_err(std::io::Error::from)?;
        writeln!(w)?;
        w.flush()?;

        let (p, i) = table_bytes(&self.dataset)?;
        std::fs::write(dir.join("projects.tsv"), p)?;
        std::fs::write(dir.join("investors.tsv"), i)?;

        let mut w = create("graph.txt")?;
        export_graph(&self.graph, &mut w)?;
        w.flush()?;

        let mut w = create("params.bin")?;
        write_params(&self.params, &mut w)?;
        w.flush()?;

        self.embeddings.write_tsv(create("embeddings.tsv")?)?;

        let mut w = create("loss.tsv")?;
        writeln!(w, "epoch\tloss")?;
        for (e, l) in self.loss_trace.iter().enumerate() {
            writeln!(w, "{e}\t{l}")?;
        }
        w.flush()?;

        let layout = dir.join("layout.tsv");
        if self.layout.is_empty() {
            if layout.exists() {
                std::fs::remove_file(layout)?;
            }
        } else {
            write_layout(&self.layout, create("layout.tsv")?)?;
        }
        Ok(())
    }

    /// Load and validate a snapshot directory.
    pub fn read(dir: &Path) -> Result<Self, SnapshotError> {
        let open = |name: &str| -> std::io::Result<BufReader<File>> {
            Ok(BufReader::new(File::open(dir.join(name))?))
        };
        let meta: BuildMeta =
            serde_json::from_reader(open("meta.json")?).map_err(|e| SnapshotError::Format {
                file: "meta.json".into(),
                message: e.to_string(),
            })?;
        if meta.format_version != FORMAT_VERSION {
            return Err(SnapshotError::Format {
                file: "meta.json".into(),
                message: format!("unsupported format version {}", meta.format_version),
            });
        }
        if meta.compute_config_hash() != meta.config_hash {
            return Err(SnapshotError::Inconsistent("config hash mismatch".into()));
        }
        let bins = GoalBins::new(meta.goal_edges)?;

        let mut warnings = Vec::new();
        let projects = read_projects(open("projects.tsv")?, "projects.tsv", &mut warnings)?;
        let investors = read_investors(open("investors.tsv")?, "investors.tsv", &mut warnings)?;
        if !warnings.is_empty() {
            return Err(SnapshotError::Inconsistent(format!(
                "dataset tables dropped rows: {}",
                warnings.join("; ")
            )));
        }
        let dataset = Dataset::new(projects, investors)?;
        if data_hash(&dataset)? != meta.data_hash {
            return Err(SnapshotError::Inconsistent("data hash mismatch".into()));
        }

        let graph = import_graph(open("graph.txt")?)?;
        let params = read_params(open("params.bin")?)?;
        let embeddings = EmbeddingTable::read_tsv(open("embeddings.tsv")?)?;
        let loss_trace = read_loss(open("loss.tsv")?)?;
        let layout = if dir.join("layout.tsv").exists() {
            read_layout(open("layout.tsv")?)?
        } else {
            Vec::new()
        };
        if layout.len() != meta.counts.layout_points {
            return Err(SnapshotError::Inconsistent(format!(
                "{} layout points, metadata says {}",
                layout.len(),
                meta.counts.layout_points
            )));
        }
        let snap = Snapshot {
            meta,
            dataset,
            bins,
            graph,
            params,
            embeddings,
            loss_trace,
            layout,
        };
        snap.validate()?;
        Ok(snap)
    }
}

fn graph_text(g: &HeteroGraph) -> Result<Vec<u8>, GraphError> {
    let mut out = Vec::new();
    export_graph(g, &mut out)?;
    Ok(out)
}

fn read_loss<R: std::io::BufRead>(r: R) -> Result<Vec<f64>, SnapshotError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if i == 0 || line.is_empty() {
            continue;
        }
        let bad = || SnapshotError::Format {
            file: "loss.tsv".into(),
            message: format!("line {}: expected `epoch<TAB>loss`", i + 1),
        };
        let (_, l) = line.split_once('\t').ok_or_else(bad)?;
        out.push(l.parse().map_err(|_| bad())?);
    }
    Ok(out)
}
