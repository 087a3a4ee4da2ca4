use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LocationKind {
    Country,
    UsState,
}

/// Normalized location: a US state for US records, an ISO country code otherwise.
///
/// The string form is `US-TX` for states and the bare country code (`GB`)
/// for everything else; `UNKNOWN` marks locations that could not be parsed.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LocationCode {
    pub kind: LocationKind,
    pub code: String,
}

impl LocationCode {
    pub const UNKNOWN: &'static str = "UNKNOWN";

    pub fn country(code: impl Into<String>) -> Self {
        Self {
            kind: LocationKind::Country,
            code: code.into(),
        }
    }

    pub fn us_state(code: impl Into<String>) -> Self {
        Self {
            kind: LocationKind::UsState,
            code: code.into(),
        }
    }

    pub fn unknown() -> Self {
        Self::country(Self::UNKNOWN)
    }

    pub fn is_unknown(&self) -> bool {
        self.kind == LocationKind::Country && self.code == Self::UNKNOWN
    }
}

impl fmt::Display for LocationCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            LocationKind::UsState => write!(f, "US-{}", self.code),
            LocationKind::Country => f.write_str(&self.code),
        }
    }
}

impl FromStr for LocationCode {
    type Err = String;

    /// Parses the canonical string form only; use [`normalize_location`] for raw input.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(state) = s.strip_prefix("US-") {
            if states().contains(state) {
                return Ok(Self::us_state(state));
            }
        } else if s == Self::UNKNOWN
            || (s.len() == 2 && countries().values().any(|c| *c == s))
        {
            return Ok(Self::country(s));
        }
        Err(format!("invalid location code {s:?}"))
    }
}

impl Serialize for LocationCode {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for LocationCode {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?
            .parse()
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormalizedLocation {
    pub code: LocationCode,
    pub warning: Option<String>,
}

fn states() -> &'static HashSet<&'static str> {
    static STATES: OnceLock<HashSet<&'static str>> = OnceLock::new();
    STATES.get_or_init(|| {
        include_str!("../../data/us_states.txt")
            .split_whitespace()
            .collect()
    })
}

fn countries() -> &'static HashMap<&'static str, &'static str> {
    static COUNTRIES: OnceLock<HashMap<&'static str, &'static str>> = OnceLock::new();
    COUNTRIES.get_or_init(|| {
        include_str!("../../data/countries.tsv")
            .lines()
            .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
            .map(|l| l.split_once('\t').expect("countries.tsv: missing tab"))
            .collect()
    })
}

const US_ALIASES: [&str; 5] = ["us", "usa", "u.s.", "united states", "united states of america"];

fn lookup_country(part: &str) -> Option<&'static str> {
    let lower = part.to_ascii_lowercase();
    if let Some(code) = countries().get(lower.as_str()) {
        return Some(code);
    }
    let upper = part.to_ascii_uppercase();
    countries().values().copied().find(|c| *c == upper)
}

/// Normalize a free-form location (`"Austin, TX"`, `"London, UK"`, `"Berlin, Germany"`).
///
/// Never fails: input that cannot be resolved maps to `UNKNOWN` and carries a warning.
pub fn normalize_location(raw: &str) -> NormalizedLocation {
    let unknown = |why: &str| NormalizedLocation {
        code: LocationCode::unknown(),
        warning: Some(format!("unresolved location {raw:?}: {why}")),
    };
    if let Ok(code) = raw.trim().parse::<LocationCode>() {
        if !code.is_unknown() {
            return NormalizedLocation {
                code,
                warning: None,
            };
        }
    }

    let mut parts: Vec<&str> = raw
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .collect();
    let Some(last) = parts.last().copied() else {
        return unknown("empty");
    };

    let us_suffix = US_ALIASES.contains(&last.to_ascii_lowercase().as_str());
    if us_suffix {
        parts.pop();
    }
    if let Some(state) = parts.last().map(|p| p.to_ascii_uppercase()) {
        if state.len() == 2 && states().contains(state.as_str()) {
            return NormalizedLocation {
                code: LocationCode::us_state(state),
                warning: None,
            };
        }
    }
    if us_suffix {
        return unknown("US location without a state");
    }
    match lookup_country(last) {
        Some(code) => NormalizedLocation {
            code: LocationCode::country(code),
            warning: None,
        },
        None => unknown("no matching state or country"),
    }
}
