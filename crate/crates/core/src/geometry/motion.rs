use super::{essential_and_decompose, ransac_fundamental, refine_pose, triangulate, MatchSet, RansacParams, RansacResult, RelativePose};
use crate::error::{Error, Result};
use crate::types::{CameraModel, CameraMotion, DepthMap};

/// Median of `depth / z` over the pairs `(depth, z)` with a positive, finite
/// triangulated `z`. Even counts average the two middle ratios.
pub fn median_scale(pairs: &[(f64, f64)]) -> Result<f64> {
    let mut ratios: Vec<f64> = pairs
        .iter()
        .filter(|(d, z)| z.is_finite() && *z > 0.0 && d.is_finite() && *d > 0.0)
        .map(|(d, z)| d / z)
        .collect();
    if ratios.is_empty() {
        return Err(Error::NoValidTriangulation);
    }
    ratios.sort_by(f64::total_cmp);
    let mid = ratios.len() / 2;
    Ok(if ratios.len() % 2 == 1 {
        ratios[mid]
    } else {
        (ratios[mid - 1] + ratios[mid]) / 2.0
    })
}

/// Rescales a unit-translation motion so triangulated inlier depths agree
/// with the daytime depth map in the median.
pub fn recover_scale(
    motion: &CameraMotion,
    inliers: &MatchSet,
    k_day: &CameraModel,
    k_dark: &CameraModel,
    depth_day: &DepthMap,
) -> Result<CameraMotion> {
    let pairs: Vec<(f64, f64)> = inliers
        .iter()
        .filter_map(|m| {
            let x = triangulate(m, motion, k_day, k_dark)?;
            if motion.transform(&x).z <= 0.0 {
                return None;
            }
            Some((depth_day.sample_nearest(m.day.x, m.day.y)?, x.z))
        })
        .collect();
    let s = median_scale(&pairs)?;
    Ok(motion.with_translation(motion.translation() * s))
}

/// Metric relative motion from the day view to the dark view.
#[derive(Clone, Debug)]
pub struct MotionEstimate {
    pub motion: CameraMotion,
    pub inlier_count: usize,
    /// Indices of the RANSAC inliers in the input match set.
    pub inliers: Vec<usize>,
    pub pose: RelativePose,
}

/// Decomposition, pose polishing and scale recovery for an already computed
/// RANSAC fit.
pub fn motion_from_fit(
    fit: &RansacResult,
    matches: &MatchSet,
    k_day: &CameraModel,
    k_dark: &CameraModel,
    depth_day: &DepthMap,
) -> Result<MotionEstimate> {
    let inliers = matches.subset(&fit.inliers);
    let pose = essential_and_decompose(&fit.fundamental, k_day, k_dark, &inliers)?;
    let polished = refine_pose(&pose.motion, &inliers, k_day, k_dark);
    let motion = recover_scale(&polished, &inliers, k_day, k_dark, depth_day)?;
    Ok(MotionEstimate {
        motion,
        inlier_count: fit.inliers.len(),
        inliers: fit.inliers.clone(),
        pose,
    })
}

/// RANSAC, essential decomposition, pose polishing and median scale recovery
/// in sequence.
pub fn estimate_motion(
    matches: &MatchSet,
    k_day: &CameraModel,
    k_dark: &CameraModel,
    depth_day: &DepthMap,
    params: &RansacParams,
) -> Result<MotionEstimate> {
    let fit = ransac_fundamental(matches, params)?;
    motion_from_fit(&fit, matches, k_day, k_dark, depth_day)
}
