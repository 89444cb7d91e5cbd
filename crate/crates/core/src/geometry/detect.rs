//! Harris corners with raw intensity-patch descriptors. A plain fallback for
//! when no external match file is supplied.

use image::RgbImage;
use nalgebra::Vector2;
use rayon::prelude::*;

use super::{filter_matches, nearest_neighbors, MatchSet, MatchThresholds};
use crate::error::{Error, Result};

pub const MAX_KEYPOINTS: usize = 2000;
/// Descriptor patches are `(2 * PATCH_RADIUS + 1)^2` pixels.
pub const PATCH_RADIUS: usize = 5;

const HARRIS_K: f64 = 0.04;
const TENSOR_SIGMA: f64 = 1.5;
const NMS_RADIUS: usize = 3;
const RELATIVE_THRESHOLD: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct Keypoint {
    pub x: usize,
    pub y: usize,
    pub response: f64,
    /// Zero-mean, unit-norm patch intensities.
    pub descriptor: Vec<f32>,
}

impl Keypoint {
    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.x as f64, self.y as f64)
    }
}

fn luma(img: &RgbImage) -> Vec<f64> {
    img.pixels()
        .map(|p| (0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64) / 255.0)
        .collect()
}

fn at(buf: &[f64], w: usize, h: usize, x: isize, y: isize) -> f64 {
    let xc = x.clamp(0, w as isize - 1) as usize;
    let yc = y.clamp(0, h as isize - 1) as usize;
    buf[yc * w + xc]
}

/// Separable Gaussian with replicated borders.
fn gaussian_blur(buf: &[f64], w: usize, h: usize, sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-r..=r).map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f64 = taps.iter().sum();
    let mut tmp = vec![0.0; buf.len()];
    tmp.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            *o = (-r..=r)
                .map(|d| taps[(d + r) as usize] * at(buf, w, h, x as isize + d, y as isize))
                .sum::<f64>()
                / norm;
        }
    });
    let mut out = vec![0.0; buf.len()];
    out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, o) in row.iter_mut().enumerate() {
            *o = (-r..=r)
                .map(|d| taps[(d + r) as usize] * at(&tmp, w, h, x as isize, y as isize + d))
                .sum::<f64>()
                / norm;
        }
    });
    out
}

fn harris_response(gray: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut ixx = vec![0.0; gray.len()];
    let mut iyy = vec![0.0; gray.len()];
    let mut ixy = vec![0.0; gray.len()];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let g = |dx: isize, dy: isize| at(gray, w, h, x + dx, y + dy);
            let gx = (g(1, -1) + 2.0 * g(1, 0) + g(1, 1)) - (g(-1, -1) + 2.0 * g(-1, 0) + g(-1, 1));
            let gy = (g(-1, 1) + 2.0 * g(0, 1) + g(1, 1)) - (g(-1, -1) + 2.0 * g(0, -1) + g(1, -1));
            let i = y as usize * w + x as usize;
            ixx[i] = gx * gx;
            iyy[i] = gy * gy;
            ixy[i] = gx * gy;
        }
    }
    let (sxx, syy, sxy) = (
        gaussian_blur(&ixx, w, h, TENSOR_SIGMA),
        gaussian_blur(&iyy, w, h, TENSOR_SIGMA),
        gaussian_blur(&ixy, w, h, TENSOR_SIGMA),
    );
    (0..gray.len())
        .map(|i| {
            let tr = sxx[i] + syy[i];
            sxx[i] * syy[i] - sxy[i] * sxy[i] - HARRIS_K * tr * tr
        })
        .collect()
}

fn descriptor(gray: &[f64], w: usize, x: usize, y: usize) -> Option<Vec<f32>> {
    let r = PATCH_RADIUS;
    let mut patch = Vec::with_capacity((2 * r + 1) * (2 * r + 1));
    for yy in y - r..=y + r {
        patch.extend_from_slice(&gray[yy * w + x - r..=yy * w + x + r]);
    }
    let mean = patch.iter().sum::<f64>() / patch.len() as f64;
    patch.iter_mut().for_each(|v| *v -= mean);
    let norm = patch.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-9 {
        return None;
    }
    Some(patch.iter().map(|v| (v / norm) as f32).collect())
}

/// Harris corners after non-maximum suppression, strongest first, each with
/// a patch descriptor. Corners too close to the border for a full patch are
/// dropped.
pub fn detect_keypoints(img: &RgbImage) -> Vec<Keypoint> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let r = PATCH_RADIUS;
    if w <= 2 * r || h <= 2 * r {
        return Vec::new();
    }
    let gray = luma(img);
    let resp = harris_response(&gray, w, h);
    let max = resp.iter().copied().fold(0.0, f64::max);
    let threshold = (RELATIVE_THRESHOLD * max).max(1e-10);
    let n = NMS_RADIUS;
    let mut kps: Vec<Keypoint> = (r..h - r)
        .into_par_iter()
        .flat_map_iter(|y| {
            let (gray, resp) = (&gray, &resp);
            (r..w - r).filter_map(move |x| {
                let v = resp[y * w + x];
                if v <= threshold {
                    return None;
                }
                // Plateaus resolve to the first pixel in raster order.
                for yy in y.saturating_sub(n)..=(y + n).min(h - 1) {
                    for xx in x.saturating_sub(n)..=(x + n).min(w - 1) {
                        let o = resp[yy * w + xx];
                        let earlier = (yy, xx) < (y, x);
                        if o > v || (earlier && o == v) {
                            return None;
                        }
                    }
                }
                Some(Keypoint {
                    x,
                    y,
                    response: v,
                    descriptor: descriptor(gray, w, x, y)?,
                })
            })
        })
        .collect();
    kps.sort_by(|a, b| b.response.total_cmp(&a.response).then((a.y, a.x).cmp(&(b.y, b.x))));
    kps.truncate(MAX_KEYPOINTS);
    kps
}

/// Detects keypoints in both images and keeps the filtered mutual matches.
pub fn detect_and_match(img_day: &RgbImage, img_dark: &RgbImage, thresholds: &MatchThresholds) -> Result<MatchSet> {
    let day = detect_keypoints(img_day);
    let dark = detect_keypoints(img_dark);
    if day.is_empty() || dark.is_empty() {
        return Err(Error::NoKeypoints);
    }
    let day_desc: Vec<Vec<f32>> = day.iter().map(|k| k.descriptor.clone()).collect();
    let dark_desc: Vec<Vec<f32>> = dark.iter().map(|k| k.descriptor.clone()).collect();
    let fwd = nearest_neighbors(&dark_desc, &day_desc);
    let bwd = nearest_neighbors(&day_desc, &dark_desc);
    let day_pts: Vec<Vector2<f64>> = day.iter().map(Keypoint::position).collect();
    let dark_pts: Vec<Vector2<f64>> = dark.iter().map(Keypoint::position).collect();
    Ok(filter_matches(&dark_pts, &day_pts, &fwd, &bwd, thresholds))
}
