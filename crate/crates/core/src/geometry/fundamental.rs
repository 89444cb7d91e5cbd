use nalgebra::{DMatrix, Matrix3, Vector2, Vector3, SVD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{Match, MatchSet};
use crate::error::{Error, Result};

/// Rank-2 fundamental matrix with unit Frobenius norm, mapping day points to
/// epipolar lines in the dark view: `x_darkᵀ F x_day = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FundamentalMatrix(Matrix3<f64>);

impl FundamentalMatrix {
    /// Projects onto rank 2 and rescales to unit norm. `None` for a (near)
    /// zero matrix.
    pub fn new(m: Matrix3<f64>) -> Option<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return None;
        }
        let svd = m.svd(true, true);
        let (u, v_t) = (svd.u?, svd.v_t?);
        let mut s = svd.singular_values;
        let smallest = s.imin();
        s[smallest] = 0.0;
        let r = u * Matrix3::from_diagonal(&s) * v_t;
        let norm = r.norm();
        if norm < 1e-300 || !norm.is_finite() {
            return None;
        }
        Some(Self(r / norm))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    /// True when `other` is the same matrix up to sign.
    pub fn approx_eq_up_to_sign(&self, other: &Self, tol: f64) -> bool {
        (self.0 - other.0).abs().max() <= tol || (self.0 + other.0).abs().max() <= tol
    }
}

/// Sampson error with the sign of the algebraic epipolar residual.
pub(crate) fn signed_sampson(f: &Matrix3<f64>, day: &Vector2<f64>, dark: &Vector2<f64>) -> f64 {
    let x1 = Vector3::new(day.x, day.y, 1.0);
    let x2 = Vector3::new(dark.x, dark.y, 1.0);
    let fx1 = f * x1;
    let ftx2 = f.transpose() * x2;
    let denom = fx1.x * fx1.x + fx1.y * fx1.y + ftx2.x * ftx2.x + ftx2.y * ftx2.y;
    if denom <= 0.0 {
        return 0.0;
    }
    x2.dot(&fx1) / denom.sqrt()
}

/// First-order geometric (Sampson) distance of a correspondence, in pixels.
pub fn sampson_distance(f: &Matrix3<f64>, day: &Vector2<f64>, dark: &Vector2<f64>) -> f64 {
    let x1 = Vector3::new(day.x, day.y, 1.0);
    let x2 = Vector3::new(dark.x, dark.y, 1.0);
    let fx1 = f * x1;
    let ftx2 = f.transpose() * x2;
    let e = x2.dot(&fx1);
    let denom = fx1.x * fx1.x + fx1.y * fx1.y + ftx2.x * ftx2.x + ftx2.y * ftx2.y;
    if denom <= 0.0 {
        return if e == 0.0 { 0.0 } else { f64::INFINITY };
    }
    (e * e / denom).sqrt()
}

/// Similarity taking points to zero mean and mean distance sqrt(2).
fn normalizing_transform(points: impl Iterator<Item = Vector2<f64>> + Clone) -> Matrix3<f64> {
    let n = points.clone().count().max(1) as f64;
    let mean = points.clone().fold(Vector2::zeros(), |a, p| a + p) / n;
    let spread = points.map(|p| (p - mean).norm()).sum::<f64>() / n;
    let s = if spread > 1e-12 {
        std::f64::consts::SQRT_2 / spread
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * mean.x, 0.0, s, -s * mean.y, 0.0, 0.0, 1.0)
}

fn apply(t: &Matrix3<f64>, p: &Vector2<f64>) -> Vector2<f64> {
    Vector2::new(t[(0, 0)] * p.x + t[(0, 2)], t[(1, 1)] * p.y + t[(1, 2)])
}

/// Design matrix for `x2ᵀ F x1 = 0` in normalized coordinates, padded with
/// zero rows to at least 9 rows.
fn design_matrix(sample: &[Match], t1: &Matrix3<f64>, t2: &Matrix3<f64>) -> DMatrix<f64> {
    let rows = sample.len().max(9);
    let mut a = DMatrix::zeros(rows, 9);
    for (i, m) in sample.iter().enumerate() {
        let p1 = apply(t1, &m.day);
        let p2 = apply(t2, &m.dark);
        let row = [
            p2.x * p1.x,
            p2.x * p1.y,
            p2.x,
            p2.y * p1.x,
            p2.y * p1.y,
            p2.y,
            p1.x,
            p1.y,
            1.0,
        ];
        for (j, v) in row.into_iter().enumerate() {
            a[(i, j)] = v;
        }
    }
    a
}

/// Right singular vectors of `a` ordered by increasing singular value.
fn null_vectors(a: DMatrix<f64>, count: usize) -> Option<Vec<Matrix3<f64>>> {
    let svd = SVD::new(a, false, true);
    let v_t = svd.v_t?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    Some(
        order
            .into_iter()
            .take(count)
            .map(|k| {
                let r = v_t.row(k);
                Matrix3::new(r[0], r[1], r[2], r[3], r[4], r[5], r[6], r[7], r[8])
            })
            .collect(),
    )
}

/// Real roots of `c3 x^3 + c2 x^2 + c1 x + c0`, falling back to lower degree
/// when leading coefficients vanish.
pub(crate) fn real_cubic_roots(c3: f64, c2: f64, c1: f64, c0: f64) -> Vec<f64> {
    let scale = c3.abs().max(c2.abs()).max(c1.abs()).max(c0.abs());
    if scale == 0.0 {
        return Vec::new();
    }
    let (c3, c2, c1, c0) = (c3 / scale, c2 / scale, c1 / scale, c0 / scale);
    let mut roots = if c3.abs() < 1e-12 {
        if c2.abs() < 1e-12 {
            if c1.abs() < 1e-12 {
                Vec::new()
            } else {
                vec![-c0 / c1]
            }
        } else {
            let disc = c1 * c1 - 4.0 * c2 * c0;
            if disc < 0.0 {
                Vec::new()
            } else {
                let q = -0.5 * (c1 + c1.signum() * disc.sqrt());
                let mut r = Vec::new();
                if q != 0.0 {
                    r.push(c0 / q);
                }
                r.push(q / c2);
                r
            }
        }
    } else {
        let (a, b, c) = (c2 / c3, c1 / c3, c0 / c3);
        // Depressed cubic t^3 + p t + q with x = t - a/3.
        let p = b - a * a / 3.0;
        let q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
        let shift = -a / 3.0;
        let disc = q * q / 4.0 + p * p * p / 27.0;
        if disc > 0.0 {
            let sq = disc.sqrt();
            vec![(-q / 2.0 + sq).cbrt() + (-q / 2.0 - sq).cbrt() + shift]
        } else if p.abs() < 1e-300 {
            vec![shift]
        } else {
            let m = 2.0 * (-p / 3.0).sqrt();
            let arg = (3.0 * q / (p * m)).clamp(-1.0, 1.0);
            let theta = arg.acos() / 3.0;
            (0..3)
                .map(|k| m * (theta - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos() + shift)
                .collect()
        }
    };
    // Newton polish on the original polynomial.
    for r in roots.iter_mut() {
        for _ in 0..3 {
            let f = ((c3 * *r + c2) * *r + c1) * *r + c0;
            let d = (3.0 * c3 * *r + 2.0 * c2) * *r + c1;
            if d.abs() < 1e-300 {
                break;
            }
            let step = f / d;
            if !step.is_finite() {
                break;
            }
            *r -= step;
        }
    }
    roots.retain(|r| r.is_finite());
    roots
}

/// Minimal solver: up to three fundamental matrices through seven
/// correspondences.
pub fn fundamental_7point(sample: &[Match]) -> Result<Vec<FundamentalMatrix>> {
    if sample.len() != 7 {
        return Err(Error::InsufficientMatches {
            required: 7,
            found: sample.len(),
        });
    }
    let t1 = normalizing_transform(sample.iter().map(|m| m.day));
    let t2 = normalizing_transform(sample.iter().map(|m| m.dark));
    let Some(basis) = null_vectors(design_matrix(sample, &t1, &t2), 2) else {
        return Ok(Vec::new());
    };
    let (f1, f2) = (basis[0], basis[1]);
    // det(f2 + x (f1 - f2)) is a cubic in x; recover it from four samples.
    let diff = f1 - f2;
    let det_at = |x: f64| (f2 + diff * x).determinant();
    let (d0, d1, dm1, d2) = (det_at(0.0), det_at(1.0), det_at(-1.0), det_at(2.0));
    let a0 = d0;
    let a2 = (d1 + dm1) / 2.0 - a0;
    let s = (d1 - dm1) / 2.0;
    let u = (d2 - a0 - 4.0 * a2) / 2.0;
    let a3 = (u - s) / 3.0;
    let a1 = s - a3;
    let mut out = Vec::new();
    for x in real_cubic_roots(a3, a2, a1, a0) {
        let fnorm = f2 + diff * x;
        if let Some(f) = FundamentalMatrix::new(t2.transpose() * fnorm * t1) {
            out.push(f);
        }
    }
    Ok(out)
}

/// Normalized linear least-squares estimate from eight or more matches.
pub fn fundamental_8point(matches: &[Match]) -> Result<FundamentalMatrix> {
    if matches.len() < 8 {
        return Err(Error::InsufficientMatches {
            required: 8,
            found: matches.len(),
        });
    }
    let t1 = normalizing_transform(matches.iter().map(|m| m.day));
    let t2 = normalizing_transform(matches.iter().map(|m| m.dark));
    let f = null_vectors(design_matrix(matches, &t1, &t2), 1)
        .and_then(|v| FundamentalMatrix::new(t2.transpose() * v[0] * t1))
        .ok_or(Error::DegenerateSample)?;
    Ok(f)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RansacParams {
    pub iterations: usize,
    /// Inlier threshold on the Sampson distance, in pixels.
    pub threshold: f64,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            iterations: 1000,
            threshold: 2.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RansacResult {
    pub fundamental: FundamentalMatrix,
    /// Indices into the input match set, ascending.
    pub inliers: Vec<usize>,
}

#[derive(Clone, Debug)]
struct Hypothesis {
    f: FundamentalMatrix,
    count: usize,
    residual: f64,
    iteration: usize,
}

impl Hypothesis {
    /// Total order: more inliers, then lower residual, then earlier iteration.
    fn better_than(&self, other: &Self) -> bool {
        (self.count, other.residual, other.iteration) > (other.count, self.residual, self.iteration)
            && !(self.count == other.count
                && self.residual == other.residual
                && self.iteration == other.iteration)
    }
}

fn score(f: &FundamentalMatrix, matches: &[Match], threshold: f64) -> (usize, f64) {
    matches.iter().fold((0, 0.0), |(n, r), m| {
        let d = sampson_distance(f.matrix(), &m.day, &m.dark);
        if d <= threshold {
            (n + 1, r + d * d)
        } else {
            (n, r)
        }
    })
}

fn inlier_indices(f: &FundamentalMatrix, matches: &[Match], threshold: f64) -> Vec<usize> {
    matches
        .iter()
        .enumerate()
        .filter(|(_, m)| sampson_distance(f.matrix(), &m.day, &m.dark) <= threshold)
        .map(|(i, _)| i)
        .collect()
}

/// Seven-point RANSAC. Iteration `i` draws its sample from a generator keyed
/// by `(seed, i)`, so the result does not depend on scheduling. The winning
/// model is refit by least squares on its inliers while that does not lose
/// inliers.
pub fn ransac_fundamental(matches: &MatchSet, params: &RansacParams) -> Result<RansacResult> {
    let data = matches.as_slice();
    if data.len() < 7 {
        return Err(Error::InsufficientMatches {
            required: 7,
            found: data.len(),
        });
    }
    let best = (0..params.iterations)
        .into_par_iter()
        .filter_map(|iteration| {
            let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
            rng.set_stream(iteration as u64);
            let idx = rand::seq::index::sample(&mut rng, data.len(), 7);
            let sample: Vec<Match> = idx.iter().map(|i| data[i]).collect();
            let candidates = fundamental_7point(&sample).ok()?;
            candidates
                .into_iter()
                .map(|f| {
                    let (count, residual) = score(&f, data, params.threshold);
                    Hypothesis {
                        f,
                        count,
                        residual,
                        iteration,
                    }
                })
                .reduce(|a, b| if b.better_than(&a) { b } else { a })
        })
        .reduce_with(|a, b| if b.better_than(&a) { b } else { a })
        .ok_or(Error::DegenerateSample)?;

    let mut f = best.f;
    let mut inliers = inlier_indices(&f, data, params.threshold);
    for _ in 0..3 {
        let subset: Vec<Match> = inliers.iter().map(|&i| data[i]).collect();
        let Ok(refit) = fundamental_8point(&subset) else {
            break;
        };
        let refit_inliers = inlier_indices(&refit, data, params.threshold);
        if refit_inliers.len() < inliers.len() {
            break;
        }
        let done = refit_inliers == inliers;
        f = refit;
        inliers = refit_inliers;
        if done {
            break;
        }
    }
    Ok(RansacResult {
        fundamental: f,
        inliers,
    })
}
