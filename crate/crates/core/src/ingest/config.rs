use std::path::{Path, PathBuf};

use super::{GoalBins, IngestError, KeywordExtractor};

/// Preprocessing settings, read from a `key = value` text file.
///
/// ```text
/// # goal bin edges in USD
/// goal_edges = 1000, 10000, 250000
/// top_n = 20
/// stopwords = /path/to/list.txt
/// ```
#[derive(Debug, Clone)]
pub struct IngestConfig {
    pub bins: GoalBins,
    pub top_n: usize,
    pub stopwords: Option<PathBuf>,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            bins: GoalBins::default(),
            top_n: 20,
            stopwords: None,
        }
    }
}

/// Split a `key = value` file into `(line, key, value)` triples.
/// Blank lines and `#` comments are skipped.
pub fn parse_key_values(text: &str) -> Result<Vec<(usize, String, String)>, IngestError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| IngestError::Config {
            line: i + 1,
            message: format!("expected `key = value`, got {raw:?}"),
        })?;
        out.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl IngestConfig {
    pub fn parse(text: &str) -> Result<Self, IngestError> {
        let mut cfg = Self::default();
        for (line, key, value) in parse_key_values(text)? {
            let bad = |message: String| IngestError::Config { line, message };
            match key.as_str() {
                "goal_edges" => {
                    let edges: Vec<f64> = value
                        .split(',')
                        .map(|e| e.trim().parse::<f64>())
                        .collect::<Result<_, _>>()
                        .map_err(|e| bad(format!("goal_edges: {e}")))?;
                    let edges: [f64; 3] = edges
                        .clone()
                        .try_into()
                        .map_err(|_| IngestError::InvalidBinEdges(edges))?;
                    cfg.bins = GoalBins::new(edges)?;
                }
                "top_n" => {
                    cfg.top_n = value
                        .parse()
                        .ok()
                        .filter(|n| *n >= 1)
                        .ok_or_else(|| bad(format!("top_n must be a positive integer, got {value:?}")))?;
                }
                "stopwords" => cfg.stopwords = Some(PathBuf::from(value)),
                other => return Err(bad(format!("unknown key {other:?}"))),
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, IngestError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn keyword_extractor(&self) -> Result<KeywordExtractor, IngestError> {
        match &self.stopwords {
            Some(p) => KeywordExtractor::from_file(p),
            None => Ok(KeywordExtractor::default()),
        }
    }
}
