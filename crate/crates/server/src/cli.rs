use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use crowdsearch_core::ingest::{parse_dataset, write_investors, write_projects, IngestConfig};
use crowdsearch_core::projection::ProjectionConfig;
use crowdsearch_core::rgcn::TrainConfig;
use crowdsearch_core::snapshot::{build, Snapshot};
use crowdsearch_core::synth::{generate, SynthConfig};

use crate::config::ServerConfig;
use crate::state::{AppState, Served};

#[derive(Debug, Parser)]
#[command(name = "crowdsearch", version, about = "Investor search for crowdfunding projects")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a snapshot from a dataset and train the embedding model.
    Train(TrainArgs),
    /// Compute the 2D layout of a snapshot in place.
    Project(ProjectArgs),
    /// Serve a snapshot over HTTP.
    Serve(ServeArgs),
    /// Dump a snapshot's embeddings, layout, graph and glyphs as text.
    Export(ExportArgs),
    /// Generate a synthetic dataset with planted investor communities.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory holding projects.tsv and investors.tsv.
    #[arg(long)]
    pub data: PathBuf,
    /// Output snapshot directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Preprocessing settings (`goal_edges = a, b, c`).
    #[arg(long)]
    pub ingest_config: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    /// Layer output sizes; the last is the embedding dimension.
    #[arg(long, value_delimiter = ',', default_values_t = [32, 16])]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 0.01)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 5)]
    pub negatives: usize,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Share of Invested edges withheld for a link-prediction AUC.
    #[arg(long, default_value_t = 0.0)]
    pub holdout: f64,
    #[arg(long, default_value_t = 0.2)]
    pub cold_start: f64,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Record the build time in the metadata (breaks byte-identical rebuilds).
    #[arg(long)]
    pub timestamp: bool,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    #[arg(long)]
    pub snapshot: PathBuf,
    #[arg(long, default_value_t = 15)]
    pub neighbors: usize,
    #[arg(long, default_value_t = 0.1)]
    pub min_dist: f64,
    #[arg(long, default_value_t = 300)]
    pub epochs: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long)]
    pub timestamp: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Key-value config file with `bind` and `snapshot`.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config file and CROWDSEARCH_BIND.
    #[arg(long)]
    pub bind: Option<std::net::SocketAddr>,
    /// Overrides the config file and CROWDSEARCH_SNAPSHOT.
    #[arg(long)]
    pub snapshot: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub snapshot: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Kickstarter-sized corpus: 41,277 projects and 762 investors.
    #[arg(long)]
    pub paper_scale: bool,
    #[arg(long)]
    pub projects: Option<usize>,
    #[arg(long)]
    pub investors: Option<usize>,
    #[arg(long)]
    pub communities: Option<usize>,
    #[arg(long)]
    pub p_in: Option<f64>,
    #[arg(long)]
    pub p_out: Option<f64>,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train(a) => train(&a),
        Command::Project(a) => project(&a),
        Command::Serve(a) => serve(&a),
        Command::Export(a) => export(&a),
        Command::Synth(a) => synth(&a),
    }
}

pub fn train(a: &TrainArgs) -> anyhow::Result<()> {
    let ingest = match &a.ingest_config {
        Some(p) => IngestConfig::load(p)?,
        None => IngestConfig::default(),
    };
    let ds = parse_dataset(&a.data.join("projects.tsv"), &a.data.join("investors.tsv"))
        .with_context(|| format!("reading dataset from {}", a.data.display()))?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        learning_rate: a.learning_rate,
        negative_ratio: a.negatives,
        seed: a.seed,
        layer_dims: a.dims.clone(),
        batch_size: a.batch_size,
        holdout_fraction: a.holdout,
        cold_start_fraction: a.cold_start,
        loss_trace: None,
    };
    let snap = build(ds, ingest.bins, &cfg, a.timestamp)?;
    snap.write(&a.out)?;
    log::info!(
        "wrote {} (final loss {:?}, held-out AUC {:?})",
        a.out.display(),
        snap.meta.final_loss,
        snap.meta.heldout_auc
    );
    Ok(())
}

pub fn project(a: &ProjectArgs) -> anyhow::Result<()> {
    let mut snap = Snapshot::read(&a.snapshot)?;
    let cfg = ProjectionConfig {
        n_neighbors: a.neighbors,
        min_dist: a.min_dist,
        epochs: a.epochs,
        seed: a.seed,
        ..ProjectionConfig::default()
    };
    snap.project(&cfg, a.timestamp)?;
    snap.write(&a.snapshot)?;
    log::info!("laid out {} points", snap.layout.len());
    Ok(())
}

pub fn resolve_serve_config(a: &ServeArgs) -> anyhow::Result<ServerConfig> {
    let mut cfg = match &a.config {
        Some(p) => ServerConfig::load(p)?,
        None => ServerConfig::default(),
    }
    .with_env(|k| std::env::var(k).ok())?;
    if let Some(b) = a.bind {
        cfg.bind = b;
    }
    if let Some(s) = &a.snapshot {
        cfg.snapshot = Some(s.clone());
    }
    Ok(cfg)
}

pub fn serve(a: &ServeArgs) -> anyhow::Result<()> {
    let cfg = resolve_serve_config(a)?;
    let Some(dir) = cfg.snapshot.clone() else {
        bail!("no snapshot given (--snapshot, CROWDSEARCH_SNAPSHOT or `snapshot =` in the config file)");
    };
    let served = Served::load(&dir).with_context(|| format!("loading snapshot {}", dir.display()))?;
    if served.snapshot.layout.is_empty() {
        log::warn!("snapshot has no layout; run `crowdsearch project` first");
    }
    let state = AppState::new(served);
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(cfg.bind)
            .await
            .with_context(|| format!("binding {}", cfg.bind))?;
        log::info!("listening on {}", listener.local_addr()?);
        tokio::spawn(reload_on_hangup(state.clone(), dir));
        axum::serve(listener, crate::api::router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

#[cfg(unix)]
async fn reload_on_hangup(state: AppState, dir: PathBuf) {
    use tokio::signal::unix::{signal, SignalKind};
    let Ok(mut hup) = signal(SignalKind::hangup()) else { return };
    while hup.recv().await.is_some() {
        let d = dir.clone();
        match tokio::task::spawn_blocking(move || Served::load(&d)).await {
            Ok(Ok(s)) => {
                state.replace(s);
                log::info!("reloaded {}", dir.display());
            }
            Ok(Err(e)) => log::error!("reload failed, keeping the current snapshot: {e}"),
            Err(e) => log::error!("reload failed: {e}"),
        }
    }
}

#[cfg(not(unix))]
async fn reload_on_hangup(_: AppState, _: PathBuf) {}

pub fn export(a: &ExportArgs) -> anyhow::Result<()> {
    let snap = Snapshot::read(&a.snapshot)?;
    std::fs::create_dir_all(&a.out)?;
    for name in ["embeddings.tsv", "layout.tsv", "graph.txt", "loss.tsv"] {
        let src = a.snapshot.join(name);
        if src.exists() {
            std::fs::copy(&src, a.out.join(name))?;
        }
    }
    let served = Served::new(snap);
    let mut w = std::io::BufWriter::new(std::fs::File::create(a.out.join("glyphs.tsv"))?);
    writeln!(w, "investor\tinner\tgoal\tcount\treward\treward_missing")?;
    for g in served.glyphs.values() {
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}",
            g.investor_id,
            g.inner.name(),
            g.arcs[0],
            g.arcs[1],
            g.arcs[2],
            g.reward_missing
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn synth(a: &SynthArgs) -> anyhow::Result<()> {
    let mut cfg = if a.paper_scale {
        SynthConfig::paper_scale(a.seed)
    } else {
        SynthConfig {
            seed: a.seed,
            ..SynthConfig::default()
        }
    };
    if let Some(n) = a.projects {
        cfg.projects = n;
    }
    if let Some(n) = a.investors {
        cfg.investors = n;
    }
    if let Some(n) = a.communities {
        cfg.communities = n;
    }
    if let Some(p) = a.p_in {
        cfg.p_in = p;
    }
    if let Some(p) = a.p_out {
        cfg.p_out = p;
    }
    let corpus = generate(&cfg)?;
    write_synth(&corpus, &a.out)
}

pub fn write_synth(corpus: &crowdsearch_core::synth::SynthCorpus, out: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(out)?;
    let ds = &corpus.dataset;
    write_projects(std::fs::File::create(out.join("projects.tsv"))?, &ds.projects)?;
    write_investors(std::fs::File::create(out.join("investors.tsv"))?, &ds.investors)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(out.join("communities.tsv"))?);
    writeln!(w, "kind\tid\tcommunity")?;
    for (p, c) in ds.projects.iter().zip(&corpus.project_community) {
        writeln!(w, "project\t{}\t{c}", p.id)?;
    }
    for (i, c) in ds.investors.iter().zip(&corpus.investor_community) {
        writeln!(w, "investor\t{}\t{c}", i.id)?;
    }
    w.flush()?;
    Ok(())
}
