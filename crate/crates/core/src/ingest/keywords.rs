use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::sync::OnceLock;

use super::IngestError;

/// Story keyword counter: ASCII-fold, lowercase, strip punctuation, drop stopwords.
/// No stemming.
#[derive(Debug, Clone)]
pub struct KeywordExtractor {
    stopwords: HashSet<String>,
}

impl Default for KeywordExtractor {
    fn default() -> Self {
        Self::from_word_list(include_str!("../../data/stopwords_en.txt"))
    }
}

impl KeywordExtractor {
    pub fn from_word_list(list: &str) -> Self {
        Self {
            stopwords: list.split_whitespace().map(str::to_lowercase).collect(),
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, IngestError> {
        Ok(Self::from_word_list(&std::fs::read_to_string(path)?))
    }

    pub fn is_stopword(&self, term: &str) -> bool {
        self.stopwords.contains(term)
    }

    /// Normalized, stopword-filtered tokens in story order.
    pub fn tokens<'a>(&'a self, story: &str) -> impl Iterator<Item = String> + 'a {
        let folded = deunicode::deunicode(story).to_ascii_lowercase().replace('\'', "");
        folded
            .split(|c: char| !c.is_ascii_alphanumeric())
            .filter(|t| !t.is_empty() && !self.stopwords.contains(*t))
            .map(str::to_string)
            .collect::<Vec<_>>()
            .into_iter()
    }

    /// Term frequencies sorted by frequency descending, then term ascending;
    /// at most `top_n` entries.
    pub fn extract(&self, story: &str, top_n: usize) -> Vec<(String, u32)> {
        let mut counts: HashMap<String, u32> = HashMap::new();
        for t in self.tokens(story) {
            *counts.entry(t).or_default() += 1;
        }
        let mut out: Vec<(String, u32)> = counts.into_iter().collect();
        out.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        out.truncate(top_n);
        out
    }
}

/// [`KeywordExtractor::extract`] with the built-in English stopword list.
pub fn extract_keywords(story: &str, top_n: usize) -> Vec<(String, u32)> {
    static DEFAULT: OnceLock<KeywordExtractor> = OnceLock::new();
    DEFAULT.get_or_init(KeywordExtractor::default).extract(story, top_n)
}
