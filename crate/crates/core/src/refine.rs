//! Pseudo-label refinement: align the daytime prediction to the dark view,
//! then fuse it with the dark prediction.

use image::RgbImage;
use log::{debug, info};

use crate::bilateral::{cross_bilateral_align, cross_bilateral_align_grid, srgb_to_lab, BilateralParams};
use crate::error::{Error, Result};
use crate::fusion::{compute_alpha, fuse, FusionParams};
use crate::geometry::{
    build_warp_mesh, detect_and_match, forward_warp, motion_from_fit, ransac_fundamental, MatchSet,
    MatchThresholds, RansacParams,
};
use crate::types::{argmax_with_confidence, CameraModel, CameraMotion, ClassCatalog, DepthMap, HardLabelMap, SoftPredictionMap};

/// How the daytime prediction is brought into the dark view.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AlignmentMode {
    Bilateral,
    Warp,
    /// Warp, but use the bilateral filter when motion estimation fails or
    /// finds too few inliers.
    WarpWithFallback,
}

impl std::str::FromStr for AlignmentMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bilateral" => Ok(Self::Bilateral),
            "warp" => Ok(Self::Warp),
            "warp_with_fallback" => Ok(Self::WarpWithFallback),
            _ => Err(Error::InvalidValue(format!("unknown alignment mode {s:?}"))),
        }
    }
}

/// Which implementation evaluates the bilateral filter.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum BilateralImpl {
    #[default]
    Grid,
    Direct,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefineConfig {
    pub mode: AlignmentMode,
    pub min_inliers: usize,
    pub bilateral: BilateralParams,
    pub bilateral_impl: BilateralImpl,
    pub fusion: FusionParams,
    /// Iterations, threshold and seed of the fundamental-matrix search.
    pub ransac: RansacParams,
    pub matching: MatchThresholds,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            mode: AlignmentMode::WarpWithFallback,
            min_inliers: 14,
            bilateral: BilateralParams::default(),
            bilateral_impl: BilateralImpl::Grid,
            fusion: FusionParams::default(),
            ransac: RansacParams::default(),
            matching: MatchThresholds::default(),
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_inliers < 7 {
            return Err(Error::InvalidValue(format!("min_inliers {} < 7", self.min_inliers)));
        }
        FusionParams::new(self.fusion.alpha_low, self.fusion.alpha_high, self.fusion.eta)?;
        BilateralParams::with_radius(self.bilateral.sigma_s, self.bilateral.sigma_r, self.bilateral.radius)?;
        Ok(())
    }
}

/// Everything known about one dark/day pair.
#[derive(Clone, Copy, Debug)]
pub struct RefineInputs<'a> {
    pub s_dark: &'a SoftPredictionMap,
    pub img_dark: &'a RgbImage,
    pub s_day: &'a SoftPredictionMap,
    pub img_day: &'a RgbImage,
    pub depth_day: Option<&'a DepthMap>,
    /// Intrinsics of the day and dark cameras, in that order.
    pub cameras: Option<(CameraModel, CameraModel)>,
    /// Correspondences to use instead of detecting them.
    pub matches: Option<&'a MatchSet>,
    /// Known day-to-dark motion; skips estimation entirely.
    pub motion: Option<CameraMotion>,
}

/// Alignment that was actually applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AppliedAlignment {
    Bilateral,
    Warp,
}

impl AppliedAlignment {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Bilateral => "bilateral",
            Self::Warp => "warp",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefineReport {
    pub mode: AppliedAlignment,
    /// RANSAC inliers, when motion estimation got that far.
    pub inlier_count: Option<usize>,
    /// Why a requested warp fell back to the bilateral filter.
    pub fallback_reason: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Refined {
    pub soft: SoftPredictionMap,
    pub labels: HardLabelMap,
    pub report: RefineReport,
}

fn check_inputs(inputs: &RefineInputs) -> Result<()> {
    let dims = inputs.s_dark.dims();
    let img_dims = |img: &RgbImage| (img.height() as usize, img.width() as usize);
    for other in [
        inputs.s_day.dims(),
        img_dims(inputs.img_dark),
        img_dims(inputs.img_day),
    ]
    .into_iter()
    .chain(inputs.depth_day.map(DepthMap::dims))
    {
        if other != dims {
            return Err(Error::dims(dims, other));
        }
    }
    if inputs.s_dark.channels() != inputs.s_day.channels() {
        return Err(Error::ChannelMismatch {
            expected: inputs.s_dark.channels(),
            found: inputs.s_day.channels(),
        });
    }
    Ok(())
}

fn bilateral_align(inputs: &RefineInputs, config: &RefineConfig) -> Result<SoftPredictionMap> {
    let reference = srgb_to_lab(inputs.img_dark);
    match config.bilateral_impl {
        BilateralImpl::Grid => cross_bilateral_align_grid(inputs.s_day, &reference, &config.bilateral),
        BilateralImpl::Direct => cross_bilateral_align(inputs.s_day, &reference, &config.bilateral),
    }
}

/// Outcome of the motion stage of the warp path.
enum MotionOutcome {
    Motion(CameraMotion, Option<usize>),
    TooFewInliers(usize),
}

fn estimate(inputs: &RefineInputs, config: &RefineConfig, depth: &DepthMap, cams: (CameraModel, CameraModel), enforce_min: bool) -> Result<MotionOutcome> {
    if let Some(m) = inputs.motion {
        return Ok(MotionOutcome::Motion(m, None));
    }
    let detected;
    let matches = match inputs.matches {
        Some(m) => m,
        None => {
            detected = detect_and_match(inputs.img_day, inputs.img_dark, &config.matching)?;
            &detected
        }
    };
    let fit = ransac_fundamental(matches, &config.ransac)?;
    let count = fit.inliers.len();
    debug!("{} matches, {count} inliers", matches.len());
    if enforce_min && count < config.min_inliers {
        return Ok(MotionOutcome::TooFewInliers(count));
    }
    let est = motion_from_fit(&fit, matches, &cams.0, &cams.1, depth)?;
    Ok(MotionOutcome::Motion(est.motion, Some(count)))
}

fn warp_align(
    inputs: &RefineInputs,
    motion: &CameraMotion,
    depth: &DepthMap,
    cams: (CameraModel, CameraModel),
    catalog: &ClassCatalog,
) -> Result<SoftPredictionMap> {
    let sky_mask: Option<Vec<bool>> = catalog.index_of("sky").map(|sky| {
        let (labels, _) = argmax_with_confidence(inputs.s_day);
        labels.labels().iter().map(|&l| l as usize == sky).collect()
    });
    let mesh = build_warp_mesh(depth, motion, &cams.0, &cams.1, sky_mask.as_deref())?;
    Ok(forward_warp(inputs.s_day, &mesh)?.0)
}

/// Aligns, fuses and takes the argmax. In fallback mode geometry failures
/// never surface as errors; they are recorded in the report.
pub fn refine_prediction(inputs: &RefineInputs, config: &RefineConfig, catalog: &ClassCatalog) -> Result<Refined> {
    config.validate()?;
    check_inputs(inputs)?;
    if inputs.s_dark.channels() != catalog.num_classes() {
        return Err(Error::ChannelMismatch {
            expected: catalog.num_classes(),
            found: inputs.s_dark.channels(),
        });
    }

    let (aligned, report) = match config.mode {
        AlignmentMode::Bilateral => (
            bilateral_align(inputs, config)?,
            RefineReport {
                mode: AppliedAlignment::Bilateral,
                inlier_count: None,
                fallback_reason: None,
            },
        ),
        mode => {
            let depth = inputs.depth_day.ok_or(Error::MissingDepth)?;
            let cams = inputs.cameras.ok_or(Error::MissingCameras)?;
            let strict = mode == AlignmentMode::Warp;
            let attempt = estimate(inputs, config, depth, cams, !strict).and_then(|outcome| match outcome {
                MotionOutcome::Motion(m, count) => {
                    warp_align(inputs, &m, depth, cams, catalog).map(|s| (Some(s), count, None))
                }
                MotionOutcome::TooFewInliers(count) => Ok((
                    None,
                    Some(count),
                    Some(format!("{count} inliers < {}", config.min_inliers)),
                )),
            });
            let (warped, inlier_count, reason) = match attempt {
                Ok(v) => v,
                Err(e) if !strict => (None, None, Some(e.to_string())),
                Err(e) => return Err(e),
            };
            match warped {
                Some(s) => (
                    s,
                    RefineReport {
                        mode: AppliedAlignment::Warp,
                        inlier_count,
                        fallback_reason: None,
                    },
                ),
                None => {
                    info!("falling back to bilateral alignment: {}", reason.as_deref().unwrap_or(""));
                    (
                        bilateral_align(inputs, config)?,
                        RefineReport {
                            mode: AppliedAlignment::Bilateral,
                            inlier_count,
                            fallback_reason: reason,
                        },
                    )
                }
            }
        }
    };

    let alpha = compute_alpha(inputs.s_dark, &aligned, catalog, &config.fusion)?;
    let soft = fuse(inputs.s_dark, &aligned, &alpha)?;
    let (labels, _) = argmax_with_confidence(&soft);
    Ok(Refined { soft, labels, report })
}
