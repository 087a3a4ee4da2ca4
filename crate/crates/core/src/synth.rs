//! Synthetic crowdfunding corpus with planted investor communities.
//!
//! Each community has a feature profile (meta-category, goal scale, a few home
//! states, a story vocabulary). Projects draw their features from their
//! community profile, with probability `feature_noise` from a random other
//! profile instead. Investors back same-community projects with probability
//! `p_in` and other projects with probability `p_out`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

use crate::graph::QueryFeatures;
use crate::ingest::{
    bin_goal, map_category, normalize_location, Dataset, GoalBins, IngestError, InvestorRecord,
    MetaCategory, ProjectRecord, Season, YearMonth, MAIN_CATEGORIES,
};

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub communities: usize,
    pub projects: usize,
    pub investors: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_noise: f64,
    pub first_year: i32,
    pub years: i32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            communities: 3,
            projects: 300,
            investors: 90,
            p_in: 0.3,
            p_out: 0.01,
            feature_noise: 0.15,
            first_year: 2014,
            years: 4,
            seed: 42,
        }
    }
}

impl SynthConfig {
    /// Corpus with the size of the original Kickstarter crawl: 41,277 projects
    /// and 762 investors, with sparser investment probabilities so that each
    /// investor backs a few dozen projects.
    pub fn paper_scale(seed: u64) -> Self {
        Self {
            projects: 41_277,
            investors: 762,
            p_in: 0.003,
            p_out: 0.0001,
            seed,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct CommunityProfile {
    pub category: MetaCategory,
    /// Median goal in USD.
    pub goal_median: f64,
    pub states: Vec<&'static str>,
    pub vocabulary: Vec<&'static str>,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub dataset: Dataset,
    pub profiles: Vec<CommunityProfile>,
    /// Community of each project, parallel to `dataset.projects`.
    pub project_community: Vec<usize>,
    /// Community of each investor, parallel to `dataset.investors`.
    pub investor_community: Vec<usize>,
}

const STATE_GROUPS: [[&str; 3]; 6] = [
    ["TX", "OK", "NM"],
    ["NY", "NJ", "CT"],
    ["CA", "OR", "WA"],
    ["IL", "OH", "MI"],
    ["FL", "GA", "SC"],
    ["CO", "UT", "AZ"],
];

const VOCABULARIES: [&[&str]; 4] = [
    &["dice", "board", "quest", "cards", "dungeon", "miniatures", "campaign", "rpg", "tabletop", "heroes"],
    &["canvas", "album", "gallery", "film", "dance", "studio", "mural", "portrait", "stage", "song"],
    &["pan", "kitchen", "gadget", "sensor", "battery", "wearable", "app", "cookware", "steel", "smart"],
    &["novel", "comic", "zine", "poetry", "chapters", "illustrated", "anthology", "print", "story", "author"],
];

const COMMON_WORDS: [&str; 8] = [
    "project", "backers", "support", "design", "launch", "community", "goal", "help",
];

const FILLER_STOPWORDS: [&str; 6] = ["the", "and", "with", "for", "our", "this"];

const CATEGORY_CYCLE: [MetaCategory; 4] = [
    MetaCategory::Games,
    MetaCategory::Arts,
    MetaCategory::TechnologyInnovation,
    MetaCategory::PublishingWriting,
];

const GOAL_MEDIANS: [f64; 4] = [600.0, 5_000.0, 60_000.0, 400_000.0];

fn vocabulary_for(c: MetaCategory) -> &'static [&'static str] {
    match c {
        MetaCategory::Games => VOCABULARIES[0],
        MetaCategory::Arts => VOCABULARIES[1],
        MetaCategory::TechnologyInnovation => VOCABULARIES[2],
        MetaCategory::PublishingWriting => VOCABULARIES[3],
    }
}

pub fn profiles(communities: usize) -> Vec<CommunityProfile> {
    (0..communities)
        .map(|c| {
            let category = CATEGORY_CYCLE[c % CATEGORY_CYCLE.len()];
            CommunityProfile {
                category,
                goal_median: GOAL_MEDIANS[c % GOAL_MEDIANS.len()],
                states: STATE_GROUPS[c % STATE_GROUPS.len()].to_vec(),
                vocabulary: vocabulary_for(category).to_vec(),
            }
        })
        .collect()
}

impl CommunityProfile {
    /// Query features matching this profile's modal values.
    pub fn query(&self, bins: &GoalBins, season: Season) -> QueryFeatures {
        QueryFeatures {
            category: self.category,
            goal_bin: bin_goal(self.goal_median, bins).expect("positive median"),
            location: crate::ingest::LocationCode::us_state(self.states[0]),
            season,
        }
    }
}

fn main_categories_of(meta: MetaCategory) -> Vec<&'static str> {
    MAIN_CATEGORIES
        .iter()
        .copied()
        .filter(|m| map_category(m).ok() == Some(meta))
        .collect()
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthCorpus, IngestError> {
    assert!(cfg.communities >= 1, "need at least one community");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let profiles = profiles(cfg.communities);
    let pick_profile = |rng: &mut ChaCha8Rng, own: usize| -> usize {
        if cfg.communities > 1 && rng.gen_bool(cfg.feature_noise) {
            let other = rng.gen_range(0..cfg.communities - 1);
            if other >= own {
                other + 1
            } else {
                other
            }
        } else {
            own
        }
    };

    let mut projects = Vec::with_capacity(cfg.projects);
    let mut project_community = Vec::with_capacity(cfg.projects);
    let width = cfg.projects.max(1).to_string().len().max(5);
    for i in 0..cfg.projects {
        let c = i % cfg.communities;
        let cat_p = &profiles[pick_profile(&mut rng, c)];
        let goal_p = &profiles[pick_profile(&mut rng, c)];
        let loc_p = &profiles[pick_profile(&mut rng, c)];
        let mains = main_categories_of(cat_p.category);
        let main = mains[rng.gen_range(0..mains.len())];
        let goal = LogNormal::new(goal_p.goal_median.ln(), 0.6)
            .expect("finite parameters")
            .sample(&mut rng)
            .round();
        let state = loc_p.states[rng.gen_range(0..loc_p.states.len())];
        let location_raw = format!("Springfield, {state}");
        let year = cfg.first_year + rng.gen_range(0..cfg.years.max(1));
        let month = rng.gen_range(1..=12u8);
        let story_len = rng.gen_range(12..40);
        let story: Vec<&str> = (0..story_len)
            .map(|_| {
                let roll: f64 = rng.gen();
                if roll < 0.5 {
                    *cat_p.vocabulary.choose(&mut rng).expect("non-empty")
                } else if roll < 0.75 {
                    *COMMON_WORDS.choose(&mut rng).expect("non-empty")
                } else {
                    *FILLER_STOPWORDS.choose(&mut rng).expect("non-empty")
                }
            })
            .collect();
        let title = format!(
            "{} {}",
            cat_p.vocabulary.choose(&mut rng).expect("non-empty"),
            COMMON_WORDS.choose(&mut rng).expect("non-empty")
        );
        let rewards = if rng.gen_bool(0.9) {
            let tiers = rng.gen_range(1..5);
            (0..tiers)
                .map(|t| (5.0 * (1 << t) as f64 * rng.gen_range(1.0..3.0f64)).round())
                .collect()
        } else {
            Vec::new()
        };
        let launch_time = YearMonth::new(year, month)?;
        projects.push(ProjectRecord {
            id: format!("P{i:0width$}"),
            title,
            story: story.join(" "),
            main_category: main.to_string(),
            sub_category: format!("{main} (general)"),
            goal_amount: goal.max(1.0),
            launch_time,
            updates_count: rng.gen_range(0..25),
            comments_count: rng.gen_range(0..200),
            meta_category: cat_p.category,
            location: normalize_location(&location_raw).code,
            location_raw,
            reward_levels: rewards,
        });
        project_community.push(c);
    }

    let mut investors = Vec::with_capacity(cfg.investors);
    let mut investor_community = Vec::with_capacity(cfg.investors);
    for i in 0..cfg.investors {
        let c = i % cfg.communities;
        let mut invested: Vec<String> = projects
            .iter()
            .zip(&project_community)
            .filter(|(_, pc)| {
                let p = if **pc == c { cfg.p_in } else { cfg.p_out };
                rng.gen_bool(p)
            })
            .map(|(p, _)| p.id.clone())
            .collect();
        if invested.is_empty() && !projects.is_empty() {
            let own: Vec<&ProjectRecord> = projects
                .iter()
                .zip(&project_community)
                .filter(|(_, pc)| **pc == c)
                .map(|(p, _)| p)
                .collect();
            let pool = if own.is_empty() { projects.iter().collect() } else { own };
            invested.push(pool[rng.gen_range(0..pool.len())].id.clone());
        }
        let loc_p = &profiles[pick_profile(&mut rng, c)];
        let state = loc_p.states[rng.gen_range(0..loc_p.states.len())];
        let location_raw = format!("Riverside, {state}");
        investors.push(InvestorRecord {
            id: (1000 + i).to_string(),
            location: normalize_location(&location_raw).code,
            location_raw,
            invested_project_ids: invested,
        });
        investor_community.push(c);
    }

    Ok(SynthCorpus {
        dataset: Dataset::new(projects, investors)?,
        profiles,
        project_community,
        investor_community,
    })
}
