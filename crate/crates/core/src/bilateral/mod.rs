//! Cross bilateral alignment of a soft prediction to a reference image.
//!
//! Each output pixel is the normalized sum of input distributions over a
//! square window, weighted by a spatial Gaussian on pixel distance and a range
//! Gaussian on CIELAB distance in the *reference* image. [`cross_bilateral_align`]
//! evaluates that sum directly; [`cross_bilateral_align_grid`] approximates it
//! on a downsampled (x, y, L, a, b) lattice.

mod grid;

use std::ops::Range;

use image::RgbImage;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::SoftPredictionMap;

pub use grid::cross_bilateral_align_grid;

/// CIELAB image, one `[L, a, b]` triple per pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct LabImage {
    height: usize,
    width: usize,
    data: Vec<[f64; 3]>,
}

impl LabImage {
    pub fn new(height: usize, width: usize, data: Vec<[f64; 3]>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::InvalidValue(format!(
                "{} Lab pixels for a {height}x{width} image",
                data.len()
            )));
        }
        if let Some(px) = data
            .iter()
            .find(|p| !p.iter().all(|v| v.is_finite()) || p[0] < 0.0 || p[0] > 100.0)
        {
            return Err(Error::InvalidValue(format!("Lab pixel {px:?}")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Every pixel the same color.
    pub fn constant(height: usize, width: usize, lab: [f64; 3]) -> Result<Self> {
        Self::new(height, width, vec![lab; height * width])
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.data
    }

    pub fn at(&self, y: usize, x: usize) -> [f64; 3] {
        self.data[y * self.width + x]
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks_exact(self.width) {
            data.extend(row.iter().rev());
        }
        Self { data, ..*self }
    }
}

/// Filter parameters. `radius` bounds the square window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BilateralParams {
    pub sigma_s: f64,
    pub sigma_r: f64,
    pub radius: usize,
}

impl BilateralParams {
    /// Window radius defaults to `ceil(2 * sigma_s)`.
    pub fn new(sigma_s: f64, sigma_r: f64) -> Result<Self> {
        let radius = (2.0 * sigma_s).ceil().max(1.0) as usize;
        Self::with_radius(sigma_s, sigma_r, radius)
    }

    pub fn with_radius(sigma_s: f64, sigma_r: f64, radius: usize) -> Result<Self> {
        if !(sigma_s > 0.0 && sigma_s.is_finite() && sigma_r > 0.0 && sigma_r.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "bilateral sigmas must be positive: ({sigma_s}, {sigma_r})"
            )));
        }
        if radius < 1 {
            return Err(Error::InvalidValue("bilateral radius must be >= 1".into()));
        }
        Ok(Self {
            sigma_s,
            sigma_r,
            radius,
        })
    }
}

impl Default for BilateralParams {
    fn default() -> Self {
        Self::new(80.0, 10.0).expect("default parameters are valid")
    }
}

// sRGB primaries to XYZ (D65).
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

fn srgb_decode(v: u8) -> f64 {
    let c = v as f64 / 255.0;
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

/// Converts one sRGB triple to CIELAB. The reference white is the XYZ image of
/// sRGB white under the same matrix, so (255, 255, 255) maps to (100, 0, 0).
pub fn srgb_pixel_to_lab(rgb: [u8; 3]) -> [f64; 3] {
    let lin = rgb.map(srgb_decode);
    let mut xyz = [0.0; 3];
    for (row, out) in RGB_TO_XYZ.iter().zip(xyz.iter_mut()) {
        let white: f64 = row.iter().sum();
        *out = (row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2]) / white;
    }
    let [fx, fy, fz] = xyz.map(lab_f);
    let l = (116.0 * fy - 16.0).clamp(0.0, 100.0);
    [l, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

pub fn srgb_to_lab(img: &RgbImage) -> LabImage {
    let (w, h) = img.dimensions();
    LabImage {
        height: h as usize,
        width: w as usize,
        data: img.pixels().map(|p| srgb_pixel_to_lab(p.0)).collect(),
    }
}

fn check_dims(s1: &SoftPredictionMap, reference: &LabImage) -> Result<()> {
    if s1.dims() != reference.dims() {
        return Err(Error::dims(s1.dims(), reference.dims()));
    }
    Ok(())
}

/// Direct evaluation of the cross bilateral filter.
pub fn cross_bilateral_align(
    s1: &SoftPredictionMap,
    reference: &LabImage,
    params: &BilateralParams,
) -> Result<SoftPredictionMap> {
    let data = cross_bilateral_align_rows(s1, reference, params, 0..s1.height())?;
    Ok(SoftPredictionMap::from_normalized(
        s1.height(),
        s1.width(),
        s1.channels(),
        data,
    ))
}

/// Direct evaluation restricted to a band of output rows; returns the band's
/// values row-major, channel-fastest.
pub fn cross_bilateral_align_rows(
    s1: &SoftPredictionMap,
    reference: &LabImage,
    params: &BilateralParams,
    rows: Range<usize>,
) -> Result<Vec<f64>> {
    check_dims(s1, reference)?;
    if rows.end > s1.height() {
        return Err(Error::InvalidValue(format!(
            "row band {rows:?} exceeds height {}",
            s1.height()
        )));
    }
    let (h, w, c) = (s1.height(), s1.width(), s1.channels());
    let r = params.radius;
    let spatial: Vec<f64> = (0..=r)
        .map(|d| (-((d * d) as f64) / (2.0 * params.sigma_s * params.sigma_s)).exp())
        .collect();
    let range_scale = -1.0 / (2.0 * params.sigma_r * params.sigma_r);
    let lab = reference.pixels();
    let src = s1.data();

    let mut out = vec![0.0; rows.len() * w * c];
    out.par_chunks_mut(w * c)
        .zip(rows)
        .for_each(|(out_row, y)| {
            let y0 = y.saturating_sub(r);
            let y1 = (y + r + 1).min(h);
            for x in 0..w {
                let x0 = x.saturating_sub(r);
                let x1 = (x + r + 1).min(w);
                let center = lab[y * w + x];
                let acc = &mut out_row[x * c..(x + 1) * c];
                let mut norm = 0.0;
                for qy in y0..y1 {
                    let wy = spatial[qy.abs_diff(y)];
                    for qx in x0..x1 {
                        let q = qy * w + qx;
                        let l = lab[q];
                        let d2 = (l[0] - center[0]).powi(2)
                            + (l[1] - center[1]).powi(2)
                            + (l[2] - center[2]).powi(2);
                        let wt = wy * spatial[qx.abs_diff(x)] * (d2 * range_scale).exp();
                        norm += wt;
                        for (a, &v) in acc.iter_mut().zip(&src[q * c..(q + 1) * c]) {
                            *a += wt * v;
                        }
                    }
                }
                // The center pixel always contributes weight 1.
                acc.iter_mut().for_each(|a| *a /= norm);
            }
        });
    Ok(out)
}
