use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ingest::{extract_keywords, MetaCategory, ProjectRecord, Season};

/// Term frequencies of one (season, category) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordCell {
    pub season: Season,
    pub category: MetaCategory,
    pub terms: Vec<(String, u32)>,
}

/// Aggregate story keywords per (season, category); keeps the `top_n` most
/// frequent terms of each cell, ties by term.
pub fn keyword_cells(projects: &[&ProjectRecord], top_n: usize) -> Vec<KeywordCell> {
    let mut cells: BTreeMap<(Season, MetaCategory), BTreeMap<String, u32>> = BTreeMap::new();
    for p in projects {
        let cell = cells.entry((p.season(), p.meta_category)).or_default();
        for (term, f) in extract_keywords(&p.story, usize::MAX) {
            *cell.entry(term).or_default() += f;
        }
    }
    cells
        .into_iter()
        .map(|((season, category), terms)| {
            let mut terms: Vec<(String, u32)> = terms.into_iter().collect();
            terms.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            terms.truncate(top_n);
            KeywordCell { season, category, terms }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordStreamConfig {
    pub min_height: f64,
    pub max_height: f64,
    /// Box width per character, as a fraction of box height.
    pub char_aspect: f64,
    /// Candidate-position grid step.
    pub step: f64,
}

impl Default for WordStreamConfig {
    fn default() -> Self {
        Self {
            min_height: 10.0,
            max_height: 30.0,
            char_aspect: 0.6,
            step: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordBox {
    pub term: String,
    pub frequency: u32,
    pub category: MetaCategory,
    pub season: Season,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl WordBox {
    /// Interiors intersect; shared edges do not count.
    pub fn overlaps(&self, o: &WordBox) -> bool {
        self.x < o.x + o.w && o.x < self.x + self.w && self.y < o.y + o.h && o.y < self.y + self.h
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedWord {
    pub term: String,
    pub frequency: u32,
    pub category: MetaCategory,
    pub season: Season,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct WordStream {
    pub boxes: Vec<WordBox>,
    /// Words that found no collision-free spot.
    pub dropped: Vec<DroppedWord>,
}

/// Greedy placement: one column per season across a `width x height` lane;
/// within a column, words go most-frequent first to the free grid position
/// nearest the column center. Box height is linear in frequency between
/// the configured bounds.
pub fn wordstream_layout(
    cells: &[KeywordCell],
    seasons: &[Season],
    width: f64,
    height: f64,
    cfg: &WordStreamConfig,
) -> WordStream {
    let mut out = WordStream::default();
    let mut words: Vec<DroppedWord> = cells
        .iter()
        .flat_map(|c| {
            c.terms.iter().map(move |(t, f)| DroppedWord {
                term: t.clone(),
                frequency: (*f).max(1),
                category: c.category,
                season: c.season,
            })
        })
        .collect();
    let usable = width > 0.0 && height > 0.0 && !seasons.is_empty() && cfg.step > 0.0;
    if !usable {
        out.dropped = words;
        return out;
    }
    let (fmin, fmax) = words
        .iter()
        .fold((u32::MAX, 0), |(lo, hi), w| (lo.min(w.frequency), hi.max(w.frequency)));
    let box_height = |f: u32| {
        if fmax > fmin {
            cfg.min_height + (f - fmin) as f64 / (fmax - fmin) as f64 * (cfg.max_height - cfg.min_height)
        } else {
            cfg.max_height
        }
    };
    words.sort_by(|a, b| {
        a.season
            .cmp(&b.season)
            .then(b.frequency.cmp(&a.frequency))
            .then_with(|| a.term.cmp(&b.term))
            .then(a.category.cmp(&b.category))
    });

    let col_w = width / seasons.len() as f64;
    // grid offsets from the column center, nearest first
    let (nx, ny) = ((col_w / 2.0 / cfg.step) as i64, (height / 2.0 / cfg.step) as i64);
    let mut offsets: Vec<(i64, i64)> = (-nx..=nx).flat_map(|dx| (-ny..=ny).map(move |dy| (dx, dy))).collect();
    offsets.sort_by_key(|&(dx, dy)| (dx * dx + dy * dy, dy.abs(), dy, dx.abs(), dx));

    let mut column: Vec<WordBox> = Vec::new();
    let mut current = None;
    for word in words {
        let Some(col) = seasons.iter().position(|s| *s == word.season) else {
            out.dropped.push(word);
            continue;
        };
        if current != Some(col) {
            out.boxes.append(&mut column);
            current = Some(col);
        }
        let h = box_height(word.frequency);
        let w = h * cfg.char_aspect * word.term.chars().count().max(1) as f64;
        let (x0, cx, cy) = (col as f64 * col_w, (col as f64 + 0.5) * col_w, height / 2.0);
        let spot = offsets.iter().find_map(|&(dx, dy)| {
            let b = WordBox {
                term: word.term.clone(),
                frequency: word.frequency,
                category: word.category,
                season: word.season,
                x: cx + dx as f64 * cfg.step - w / 2.0,
                y: cy + dy as f64 * cfg.step - h / 2.0,
                w,
                h,
            };
            let inside = b.x >= x0 && b.x + b.w <= x0 + col_w && b.y >= 0.0 && b.y + b.h <= height;
            (inside && !column.iter().any(|o| o.overlaps(&b))).then_some(b)
        });
        match spot {
            Some(b) => column.push(b),
            None => out.dropped.push(word),
        }
    }
    out.boxes.append(&mut column);
    out
}
