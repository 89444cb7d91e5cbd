//! Synthetic fixtures shared by the integration suites.
#![allow(dead_code)]

use nalgebra::{Matrix3, Rotation3, Unit, Vector2, Vector3};
use nightguide::bilateral::{srgb_pixel_to_lab, LabImage};
use nightguide::geometry::MatchSet;
use nightguide::types::{CameraModel, CameraMotion, DepthMap, SoftPredictionMap};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Reference image made of random Voronoi regions with flat sRGB colors plus
/// mild per-pixel noise.
pub fn voronoi_lab(rng: &mut impl Rng, h: usize, w: usize) -> LabImage {
    let k = rng.random_range(4..12);
    let seeds: Vec<(f64, f64, [f64; 3])> = (0..k)
        .map(|_| {
            (
                rng.random_range(0.0..h as f64),
                rng.random_range(0.0..w as f64),
                [
                    rng.random_range(0.0..255.0),
                    rng.random_range(0.0..255.0),
                    rng.random_range(0.0..255.0),
                ],
            )
        })
        .collect();
    let noise = Normal::new(0.0, 2.0).unwrap();
    let mut data = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (_, _, col) = seeds
                .iter()
                .min_by(|a, b| {
                    let da = (a.0 - y as f64).powi(2) + (a.1 - x as f64).powi(2);
                    let db = (b.0 - y as f64).powi(2) + (b.1 - x as f64).powi(2);
                    da.total_cmp(&db)
                })
                .unwrap();
            let rgb = col.map(|c| (c + noise.sample(rng)).round().clamp(0.0, 255.0) as u8);
            data.push(srgb_pixel_to_lab(rgb));
        }
    }
    LabImage::new(h, w, data).unwrap()
}

/// Independent random distribution per pixel.
pub fn random_soft(rng: &mut impl Rng, h: usize, w: usize, c: usize) -> SoftPredictionMap {
    let mut data = Vec::with_capacity(h * w * c);
    for _ in 0..h * w {
        let v: Vec<f64> = (0..c).map(|_| -rng.random::<f64>().max(1e-12).ln()).collect();
        let s: f64 = v.iter().sum();
        data.extend(v.iter().map(|x| x / s));
    }
    SoftPredictionMap::new(h, w, c, data).unwrap()
}

/// Random distribution per pixel with a sharpened peak on `labels`.
pub fn peaked_soft(rng: &mut impl Rng, labels: &[u8], h: usize, w: usize, c: usize, peak: f64) -> SoftPredictionMap {
    let mut data = Vec::with_capacity(h * w * c);
    for &l in labels {
        let mut v: Vec<f64> = (0..c).map(|_| rng.random::<f64>()).collect();
        v[l as usize] += peak;
        let s: f64 = v.iter().sum();
        data.extend(v.iter().map(|x| x / s));
    }
    SoftPredictionMap::new(h, w, c, data).unwrap()
}

pub fn angle_deg(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    (a.dot(b) / (a.norm() * b.norm())).clamp(-1.0, 1.0).acos().to_degrees()
}

pub fn rotation_error_deg(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let r = a.transpose() * b;
    ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos().to_degrees()
}

/// A random two-view scene: points in front of both cameras, their exact
/// projections, and the ground-truth motion.
pub struct Scene {
    pub camera: CameraModel,
    pub motion: CameraMotion,
    pub points: Vec<Vector3<f64>>,
    pub day: Vec<Vector2<f64>>,
    pub dark: Vec<Vector2<f64>>,
    pub width: usize,
    pub height: usize,
}

impl Scene {
    pub fn random(rng: &mut impl Rng, n: usize, max_rot_deg: f64, t_norm: f64) -> Scene {
        let (width, height) = (640usize, 480usize);
        let camera = CameraModel::new(500.0, 500.0, 320.0, 240.0).unwrap();
        let axis = Unit::new_normalize(Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        ));
        let angle = rng.random_range(0.0..max_rot_deg).to_radians();
        let rot = Rotation3::from_axis_angle(&axis, angle).into_inner();
        let dir = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-0.3..0.3),
            rng.random_range(-1.0..1.0),
        )
        .normalize();
        let motion = CameraMotion::new(rot, dir * t_norm).unwrap();
        let mut points = Vec::new();
        let mut day = Vec::new();
        let mut dark = Vec::new();
        while points.len() < n {
            let px = Vector2::new(
                rng.random_range(0.0..width as f64),
                rng.random_range(0.0..height as f64),
            );
            let z = rng.random_range(4.0..40.0);
            let nrm = camera.normalize(&px);
            let x = Vector3::new(nrm.x * z, nrm.y * z, z);
            let y = motion.transform(&x);
            if let Some(q) = camera.project(&y) {
                if q.x >= 0.0 && q.y >= 0.0 && q.x < width as f64 && q.y < height as f64 {
                    points.push(x);
                    day.push(px);
                    dark.push(q);
                }
            }
        }
        Scene {
            camera,
            motion,
            points,
            day,
            dark,
            width,
            height,
        }
    }

    pub fn matches(&self) -> MatchSet {
        MatchSet::from_pairs(self.day.iter().zip(&self.dark).map(|(a, b)| (*a, *b)))
    }

    /// Depth map whose value at each observed day pixel is the true depth;
    /// every other pixel gets a constant background depth.
    pub fn depth_map(&self) -> DepthMap {
        let mut d = vec![30.0; self.width * self.height];
        for (p, x) in self.day.iter().zip(&self.points) {
            let (xi, yi) = (p.x.round() as usize, p.y.round() as usize);
            if xi < self.width && yi < self.height {
                d[yi * self.width + xi] = x.z;
            }
        }
        DepthMap::new(self.height, self.width, d, 540.0).unwrap()
    }

    /// Adds Gaussian pixel noise to the dark observations and replaces a
    /// fraction of them with uniform outliers. Returns the outlier flags.
    pub fn corrupt(&mut self, rng: &mut impl Rng, noise_px: f64, outlier_fraction: f64) -> Vec<bool> {
        let normal = Normal::new(0.0, noise_px).unwrap();
        let n = self.dark.len();
        let n_out = (n as f64 * outlier_fraction).round() as usize;
        let mut flags = vec![false; n];
        for i in 0..n {
            if i < n_out {
                self.dark[i] = Vector2::new(
                    rng.random_range(0.0..self.width as f64),
                    rng.random_range(0.0..self.height as f64),
                );
                flags[i] = true;
            } else if noise_px > 0.0 {
                self.dark[i] += Vector2::new(normal.sample(rng), normal.sample(rng));
            }
        }
        flags
    }
}
