//! Server settings from a `key = value` file with environment overrides.
//!
//! ```text
//! bind = 127.0.0.1:8080
//! snapshot = /var/lib/crowdsearch/snapshot
//! ```
//!
//! `CROWDSEARCH_BIND` and `CROWDSEARCH_SNAPSHOT` override the file.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use crowdsearch_core::ingest::parse_key_values;

pub const ENV_BIND: &str = "CROWDSEARCH_BIND";
pub const ENV_SNAPSHOT: &str = "CROWDSEARCH_SNAPSHOT";

#[derive(Debug, Clone, PartialEq)]
pub struct ServerConfig {
    pub bind: SocketAddr,
    pub snapshot: Option<PathBuf>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            snapshot: None,
        }
    }
}

impl ServerConfig {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        let mut cfg = Self::default();
        for (line, key, value) in parse_key_values(text)? {
            match key.as_str() {
                "bind" => {
                    cfg.bind = value
                        .parse()
                        .with_context(|| format!("config line {line}: bad bind address {value:?}"))?
                }
                "snapshot" => cfg.snapshot = Some(PathBuf::from(value)),
                other => bail!("config line {line}: unknown key {other:?}"),
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Apply overrides from `lookup` (the process environment in production).
    pub fn with_env(mut self, lookup: impl Fn(&str) -> Option<String>) -> anyhow::Result<Self> {
        if let Some(b) = lookup(ENV_BIND) {
            self.bind = b.parse().with_context(|| format!("{ENV_BIND}: bad bind address {b:?}"))?;
        }
        if let Some(s) = lookup(ENV_SNAPSHOT) {
            self.snapshot = Some(PathBuf::from(s));
        }
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_env() {
        let cfg = ServerConfig::parse("# comment\nbind = 0.0.0.0:9000\nsnapshot = /a\n").unwrap();
        assert_eq!(cfg.bind.port(), 9000);
        assert_eq!(cfg.snapshot.as_deref(), Some(Path::new("/a")));
        let cfg = cfg
            .with_env(|k| (k == ENV_SNAPSHOT).then(|| "/b".to_string()))
            .unwrap();
        assert_eq!(cfg.bind.port(), 9000);
        assert_eq!(cfg.snapshot.as_deref(), Some(Path::new("/b")));
        assert!(ServerConfig::parse("port = 1").is_err());
        assert!(ServerConfig::parse("bind = nowhere").is_err());
        assert!(ServerConfig::default().with_env(|_| Some("x".into())).is_err());
    }
}
