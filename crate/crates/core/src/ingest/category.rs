use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::IngestError;

/// Display grouping of the 15 Kickstarter main categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MetaCategory {
    Games,
    Arts,
    PublishingWriting,
    TechnologyInnovation,
}

impl MetaCategory {
    pub const ALL: [MetaCategory; 4] = [
        MetaCategory::Games,
        MetaCategory::Arts,
        MetaCategory::PublishingWriting,
        MetaCategory::TechnologyInnovation,
    ];

    pub fn label(self) -> &'static str {
        match self {
            MetaCategory::Games => "Games",
            MetaCategory::Arts => "Arts",
            MetaCategory::PublishingWriting => "Publishing & Writing",
            MetaCategory::TechnologyInnovation => "Technology & Innovation",
        }
    }

    /// Stable identifier used in vertex keys and the wire format.
    pub fn name(self) -> &'static str {
        match self {
            MetaCategory::Games => "Games",
            MetaCategory::Arts => "Arts",
            MetaCategory::PublishingWriting => "PublishingWriting",
            MetaCategory::TechnologyInnovation => "TechnologyInnovation",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for MetaCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetaCategory {
    type Err = IngestError;

    /// Accepts either the identifier (`PublishingWriting`) or the label
    /// (`Publishing & Writing`), case-insensitively.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        MetaCategory::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(t) || c.label().eq_ignore_ascii_case(t))
            .ok_or_else(|| IngestError::UnknownCategory(s.to_string()))
    }
}

/// The 15 main categories, in table order.
pub const MAIN_CATEGORIES: [&str; 15] = [
    "Art",
    "Comics",
    "Crafts",
    "Dance",
    "Design",
    "Fashion",
    "Film & Video",
    "Food",
    "Games",
    "Journalism",
    "Music",
    "Photography",
    "Publishing",
    "Technology",
    "Theater",
];

fn table() -> &'static [(String, MetaCategory)] {
    static TABLE: OnceLock<Vec<(String, MetaCategory)>> = OnceLock::new();
    TABLE.get_or_init(|| {
        include_str!("../../data/categories.tsv")
            .lines()
            .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
            .map(|l| {
                let (main, meta) = l.split_once('\t').expect("categories.tsv: missing tab");
                let meta = meta.parse().expect("categories.tsv: bad meta-category");
                (main.to_ascii_lowercase(), meta)
            })
            .collect()
    })
}

/// Map a Kickstarter main category onto its display meta-category.
pub fn map_category(main_category: &str) -> Result<MetaCategory, IngestError> {
    let key = main_category.trim().to_ascii_lowercase();
    table()
        .iter()
        .find(|(main, _)| *main == key)
        .map(|(_, meta)| *meta)
        .ok_or_else(|| IngestError::UnknownCategory(main_category.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn table_covers_the_fifteen_main_categories() {
        assert_eq!(table().len(), 15);
        for main in MAIN_CATEGORIES {
            map_category(main).unwrap();
        }
    }

    #[test]
    fn every_meta_category_is_reachable() {
        let hit: BTreeSet<_> = MAIN_CATEGORIES
            .iter()
            .map(|m| map_category(m).unwrap())
            .collect();
        assert_eq!(hit.len(), 4);
    }

    #[test]
    fn known_mappings() {
        assert_eq!(map_category("Games").unwrap(), MetaCategory::Games);
        assert_eq!(
            map_category("Publishing").unwrap(),
            MetaCategory::PublishingWriting
        );
        assert_eq!(
            map_category("technology").unwrap(),
            MetaCategory::TechnologyInnovation
        );
        assert_eq!(map_category("Film & Video").unwrap(), MetaCategory::Arts);
    }

    #[test]
    fn unknown_category_names_the_input() {
        let err = map_category("").unwrap_err();
        assert!(matches!(err, IngestError::UnknownCategory(ref s) if s.is_empty()));
        let err = map_category("Knitting").unwrap_err();
        assert!(err.to_string().contains("Knitting"));
    }

    #[test]
    fn labels_parse_back() {
        for c in MetaCategory::ALL {
            assert_eq!(c.label().parse::<MetaCategory>().unwrap(), c);
            assert_eq!(c.name().parse::<MetaCategory>().unwrap(), c);
        }
    }
}
