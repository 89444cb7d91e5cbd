//! Two-view geometry between a daytime and a dark view: putative matching,
//! fundamental matrix estimation, pose recovery with metric scale, and
//! depth-based forward warping of the daytime prediction.

mod detect;
mod essential;
mod fundamental;
mod matching;
mod motion;
mod warp;

use nalgebra::Vector2;

pub use detect::{detect_and_match, detect_keypoints, Keypoint, MAX_KEYPOINTS, PATCH_RADIUS};
pub use essential::{essential_and_decompose, refine_pose, triangulate, RelativePose};
pub use fundamental::{
    fundamental_7point, fundamental_8point, ransac_fundamental, sampson_distance,
    FundamentalMatrix, RansacParams, RansacResult,
};
pub use matching::{filter_matches, nearest_neighbors, MatchThresholds, Neighbors};
pub use motion::{estimate_motion, median_scale, motion_from_fit, recover_scale, MotionEstimate};
pub use warp::{
    backproject_reproject, build_warp_mesh, forward_warp, reproject, QuadState, WarpAssignment,
    WarpMesh, IRREGULAR_RATIO,
};

/// A day/dark correspondence in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Match {
    pub day: Vector2<f64>,
    pub dark: Vector2<f64>,
    /// Squared descriptor distance, when the match came from descriptors.
    pub dist_sq: Option<f64>,
}

/// Ordered list of correspondences.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MatchSet {
    matches: Vec<Match>,
}

impl MatchSet {
    pub fn new(matches: Vec<Match>) -> Self {
        Self { matches }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (Vector2<f64>, Vector2<f64>)>) -> Self {
        Self {
            matches: pairs
                .into_iter()
                .map(|(day, dark)| Match {
                    day,
                    dark,
                    dist_sq: None,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.matches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matches.is_empty()
    }

    pub fn as_slice(&self) -> &[Match] {
        &self.matches
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Match> {
        self.matches.iter()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            matches: indices.iter().map(|&i| self.matches[i]).collect(),
        }
    }

    /// Drops matches whose points fall outside either image.
    pub fn within_bounds(&self, day: (usize, usize), dark: (usize, usize)) -> Self {
        let inside = |p: &Vector2<f64>, (h, w): (usize, usize)| {
            p.x >= 0.0 && p.y >= 0.0 && p.x <= (w - 1) as f64 && p.y <= (h - 1) as f64
        };
        Self {
            matches: self
                .matches
                .iter()
                .filter(|m| inside(&m.day, day) && inside(&m.dark, dark))
                .copied()
                .collect(),
        }
    }
}

impl<'a> IntoIterator for &'a MatchSet {
    type Item = &'a Match;
    type IntoIter = std::slice::Iter<'a, Match>;

    fn into_iter(self) -> Self::IntoIter {
        self.matches.iter()
    }
}
