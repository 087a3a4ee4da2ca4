use serde::{Deserialize, Serialize};

use super::AnalyticsError;
use crate::ingest::{MetaCategory, ProjectRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreemapMode {
    /// Every project gets the same area.
    Category,
    /// Area proportional to goal amount.
    Goal,
}

impl std::str::FromStr for TreemapMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "category" => Ok(Self::Category),
            "goal" => Ok(Self::Goal),
            _ => Err(format!("unknown treemap mode {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl Rect {
    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreemapRect {
    pub project_id: String,
    pub category: MetaCategory,
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

fn worst(row: &[f64], side: f64) -> f64 {
    let sum: f64 = row.iter().sum();
    let (lo, hi) = row
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), a| (lo.min(*a), hi.max(*a)));
    let s2 = side * side;
    let sum2 = sum * sum;
    (s2 * hi / sum2).max(sum2 / (s2 * lo))
}

/// Squarified tiling of `bounds` by `weights` (positive, in the order given;
/// descending order gives the best aspect ratios). The final row and the
/// final cell of each row absorb rounding so the tiling covers `bounds`.
pub fn squarify(weights: &[f64], bounds: Rect) -> Vec<Rect> {
    let total: f64 = weights.iter().sum();
    if weights.is_empty() || !(total > 0.0) {
        return Vec::new();
    }
    let scale = bounds.area() / total;
    let areas: Vec<f64> = weights.iter().map(|w| w * scale).collect();
    let mut out = Vec::with_capacity(areas.len());
    let mut rest = bounds;
    let mut i = 0;
    while i < areas.len() {
        let side = rest.w.min(rest.h);
        let mut j = i + 1;
        while j < areas.len() && worst(&areas[i..=j], side) <= worst(&areas[i..j], side) {
            j += 1;
        }
        let row = &areas[i..j];
        let last_row = j == areas.len();
        let row_sum: f64 = row.iter().sum();
        let vertical = rest.w >= rest.h;
        let extent = if vertical { rest.h } else { rest.w };
        let thickness = if last_row {
            if vertical { rest.w } else { rest.h }
        } else {
            row_sum / extent
        };
        let mut offset = 0.0;
        for (k, a) in row.iter().enumerate() {
            let len = if k + 1 == row.len() { extent - offset } else { a / thickness };
            out.push(if vertical {
                Rect { x: rest.x, y: rest.y + offset, w: thickness, h: len }
            } else {
                Rect { x: rest.x + offset, y: rest.y, w: len, h: thickness }
            });
            offset += len;
        }
        if vertical {
            rest.x += thickness;
            rest.w -= thickness;
        } else {
            rest.y += thickness;
            rest.h -= thickness;
        }
        i = j;
    }
    out
}

/// Category regions first, then one cell per project inside its region.
///
/// Category mode weighs projects equally; goal mode by goal amount, with
/// zero-goal projects given a weight one millionth of the smallest positive
/// goal (or 1 when every goal is zero).
pub fn treemap_layout(
    projects: &[&ProjectRecord],
    mode: TreemapMode,
    width: f64,
    height: f64,
) -> Result<Vec<TreemapRect>, AnalyticsError> {
    if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
        return Err(AnalyticsError::Container { w: width, h: height });
    }
    if let Some(p) = projects.iter().find(|p| !(p.goal_amount >= 0.0)) {
        return Err(AnalyticsError::NegativeGoal {
            id: p.id.clone(),
            goal: p.goal_amount,
        });
    }
    let eps = projects
        .iter()
        .map(|p| p.goal_amount)
        .filter(|g| *g > 0.0)
        .fold(f64::INFINITY, f64::min);
    let eps = if eps.is_finite() { eps * 1e-6 } else { 1.0 };
    let weight = |p: &ProjectRecord| match mode {
        TreemapMode::Category => 1.0,
        TreemapMode::Goal if p.goal_amount > 0.0 => p.goal_amount,
        TreemapMode::Goal => eps,
    };

    let mut groups: Vec<(MetaCategory, Vec<(&ProjectRecord, f64)>)> = MetaCategory::ALL
        .iter()
        .map(|c| {
            let mut members: Vec<(&ProjectRecord, f64)> = projects
                .iter()
                .filter(|p| p.meta_category == *c)
                .map(|p| (*p, weight(p)))
                .collect();
            members.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.id.cmp(&b.0.id)));
            (*c, members)
        })
        .filter(|(_, m)| !m.is_empty())
        .collect();
    let group_weight = |m: &[(&ProjectRecord, f64)]| m.iter().map(|x| x.1).sum::<f64>();
    groups.sort_by(|a, b| group_weight(&b.1).total_cmp(&group_weight(&a.1)).then(a.0.cmp(&b.0)));

    let regions = squarify(
        &groups.iter().map(|g| group_weight(&g.1)).collect::<Vec<_>>(),
        Rect { x: 0.0, y: 0.0, w: width, h: height },
    );
    let mut out = Vec::with_capacity(projects.len());
    for ((category, members), region) in groups.iter().zip(regions) {
        let cells = squarify(&members.iter().map(|m| m.1).collect::<Vec<_>>(), region);
        for ((p, _), r) in members.iter().zip(cells) {
            out.push(TreemapRect {
                project_id: p.id.clone(),
                category: *category,
                x: r.x,
                y: r.y,
                w: r.w,
                h: r.h,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_equal_weights_in_a_square() {
        let r = squarify(&[1.0; 4], Rect { x: 0.0, y: 0.0, w: 1.0, h: 1.0 });
        assert_eq!(r.len(), 4);
        for c in &r {
            assert!((c.area() - 0.25).abs() < 1e-12, "{c:?}");
        }
    }

    #[test]
    fn one_to_three() {
        let r = squarify(&[3.0, 1.0], Rect { x: 0.0, y: 0.0, w: 2.0, h: 1.0 });
        assert!((r[0].area() / r[1].area() - 3.0).abs() < 1e-9);
    }
}
