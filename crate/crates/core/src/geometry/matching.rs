use nalgebra::Vector2;
use rayon::prelude::*;

use super::{Match, MatchSet};

/// Nearest and second-nearest reference descriptor for one query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Neighbors {
    pub nearest: usize,
    pub dist_sq: f64,
    /// `None` when the reference set has a single descriptor.
    pub second_dist_sq: Option<f64>,
}

/// Rejection thresholds on squared descriptor distances.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchThresholds {
    /// Upper bound on nearest / second-nearest.
    pub second_ratio: f64,
    /// Upper bound on this match / globally best match.
    pub global_ratio: f64,
}

impl Default for MatchThresholds {
    fn default() -> Self {
        Self {
            second_ratio: 0.7,
            global_ratio: 20.0,
        }
    }
}

fn dist_sq(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = (x - y) as f64;
            d * d
        })
        .sum()
}

/// Brute-force nearest neighbors of every query among `refs`. Ties go to the
/// lower reference index.
pub fn nearest_neighbors(queries: &[Vec<f32>], refs: &[Vec<f32>]) -> Vec<Option<Neighbors>> {
    queries
        .par_iter()
        .map(|q| {
            let mut best: Option<(usize, f64)> = None;
            let mut second = f64::INFINITY;
            for (j, r) in refs.iter().enumerate() {
                let d = dist_sq(q, r);
                match best {
                    Some((_, bd)) if d >= bd => second = second.min(d),
                    Some((_, bd)) => {
                        second = bd;
                        best = Some((j, d));
                    }
                    None => best = Some((j, d)),
                }
            }
            best.map(|(nearest, dist_sq)| Neighbors {
                nearest,
                dist_sq,
                second_dist_sq: second.is_finite().then_some(second),
            })
        })
        .collect()
}

/// Keeps the dark-to-day nearest-neighbor matches that are mutual, pass the
/// second-neighbor ratio test, and are not much worse than the best match
/// overall. All ratios are on squared distances.
pub fn filter_matches(
    dark_points: &[Vector2<f64>],
    day_points: &[Vector2<f64>],
    dark_to_day: &[Option<Neighbors>],
    day_to_dark: &[Option<Neighbors>],
    thresholds: &MatchThresholds,
) -> MatchSet {
    let global_best = dark_to_day
        .iter()
        .flatten()
        .map(|n| n.dist_sq)
        .fold(f64::INFINITY, f64::min);
    let matches = dark_to_day
        .iter()
        .enumerate()
        .filter_map(|(i, n)| {
            let n = n.as_ref()?;
            let back = day_to_dark.get(n.nearest)?.as_ref()?;
            if back.nearest != i {
                return None;
            }
            if let Some(second) = n.second_dist_sq {
                if n.dist_sq > thresholds.second_ratio * second {
                    return None;
                }
            }
            if n.dist_sq > thresholds.global_ratio * global_best {
                return None;
            }
            Some(Match {
                day: day_points[n.nearest],
                dark: dark_points[i],
                dist_sq: Some(n.dist_sq),
            })
        })
        .collect();
    MatchSet::new(matches)
}
