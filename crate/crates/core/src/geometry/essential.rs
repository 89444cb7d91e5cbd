use nalgebra::{Matrix3, Matrix3x4, Matrix4, Matrix5, Rotation3, Vector2, Vector3, Vector5};

use super::{FundamentalMatrix, Match, MatchSet};
use super::fundamental::signed_sampson;
use crate::error::{Error, Result};
use crate::types::{CameraModel, CameraMotion};

/// Relative pose with unit-norm translation, plus the cheirality vote that
/// selected it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RelativePose {
    pub motion: CameraMotion,
    /// Inliers triangulating in front of both cameras for the chosen pose.
    pub in_front: usize,
    /// Same count for the best competing candidate.
    pub runner_up: usize,
    /// Median angle between the two viewing rays of the in-front points.
    /// Near zero for (almost) pure rotation, where the translation direction
    /// is unreliable.
    pub median_parallax_deg: f64,
}

fn projection(motion: &CameraMotion) -> Matrix3x4<f64> {
    let mut p = Matrix3x4::zeros();
    p.fixed_view_mut::<3, 3>(0, 0).copy_from(motion.rotation());
    p.fixed_view_mut::<3, 1>(0, 3).copy_from(motion.translation());
    p
}

fn dlt(p1: &Matrix3x4<f64>, p2: &Matrix3x4<f64>, x1: &Vector2<f64>, x2: &Vector2<f64>) -> Option<Vector3<f64>> {
    let mut a = Matrix4::zeros();
    a.set_row(0, &(p1.row(2) * x1.x - p1.row(0)));
    a.set_row(1, &(p1.row(2) * x1.y - p1.row(1)));
    a.set_row(2, &(p2.row(2) * x2.x - p2.row(0)));
    a.set_row(3, &(p2.row(2) * x2.y - p2.row(1)));
    let svd = a.svd(false, true);
    let v_t = svd.v_t?;
    let k = svd.singular_values.imin();
    let h = v_t.row(k);
    if h[3].abs() < 1e-12 * h.norm() {
        return None;
    }
    let x = Vector3::new(h[0], h[1], h[2]) / h[3];
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Linear triangulation of one correspondence. The point is returned in the
/// day camera frame; `None` when it lies at infinity.
pub fn triangulate(
    m: &Match,
    motion: &CameraMotion,
    k_day: &CameraModel,
    k_dark: &CameraModel,
) -> Option<Vector3<f64>> {
    let p1 = projection(&CameraMotion::identity());
    let p2 = projection(motion);
    dlt(&p1, &p2, &k_day.normalize(&m.day), &k_dark.normalize(&m.dark))
}

/// Projects onto SO(3) via SVD.
fn orthonormalize(r: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = r.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut out = u * v_t;
    if out.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        out = u * v_t;
    }
    out
}

fn parallax_deg(x: &Vector3<f64>, motion: &CameraMotion) -> f64 {
    let c2 = -motion.rotation().transpose() * motion.translation();
    let (r1, r2) = (x, x - c2);
    let cos = r1.dot(&r2) / (r1.norm() * r2.norm());
    cos.clamp(-1.0, 1.0).acos().to_degrees()
}

/// Builds the essential matrix from `f` and the intrinsics, projects it onto
/// the essential manifold, and selects among its four pose decompositions by
/// counting inliers triangulated in front of both cameras.
pub fn essential_and_decompose(
    f: &FundamentalMatrix,
    k_day: &CameraModel,
    k_dark: &CameraModel,
    inliers: &MatchSet,
) -> Result<RelativePose> {
    if inliers.is_empty() {
        return Err(Error::InsufficientMatches {
            required: 1,
            found: 0,
        });
    }
    let e = k_dark.matrix().transpose() * f.matrix() * k_day.matrix();
    let svd = e.svd(true, true);
    let (mut u, mut v_t) = (svd.u.ok_or(Error::DegenerateSample)?, svd.v_t.ok_or(Error::DegenerateSample)?);
    // Sort singular values in decreasing order so the null direction is last.
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    u = Matrix3::from_columns(&[u.column(order[0]), u.column(order[1]), u.column(order[2])]);
    v_t = Matrix3::from_rows(&[v_t.row(order[0]), v_t.row(order[1]), v_t.row(order[2])]);
    if u.determinant() < 0.0 {
        u.column_mut(2).neg_mut();
    }
    if v_t.determinant() < 0.0 {
        v_t.row_mut(2).neg_mut();
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let t = u.column(2).into_owned();
    let candidates = [
        (u * w * v_t, t),
        (u * w * v_t, -t),
        (u * w.transpose() * v_t, t),
        (u * w.transpose() * v_t, -t),
    ];

    let mut scored: Vec<(usize, CameraMotion, Vec<f64>)> = Vec::with_capacity(4);
    for (r, t) in candidates {
        let motion = CameraMotion::new(orthonormalize(&r), t)?;
        let mut parallax = Vec::new();
        for m in inliers {
            let Some(x) = triangulate(m, &motion, k_day, k_dark) else {
                continue;
            };
            if x.z > 0.0 && motion.transform(&x).z > 0.0 {
                parallax.push(parallax_deg(&x, &motion));
            }
        }
        scored.push((parallax.len(), motion, parallax));
    }
    // Stable sort keeps candidate order among equal counts.
    scored.sort_by_key(|s| std::cmp::Reverse(s.0));
    let runner_up = scored[1].0;
    let (best, motion, mut parallax) = scored.swap_remove(0);
    if best <= runner_up {
        return Err(Error::CheiralityAmbiguous { best, runner_up });
    }
    parallax.sort_by(f64::total_cmp);
    let mid = parallax.len() / 2;
    let median_parallax_deg = if parallax.len() % 2 == 1 {
        parallax[mid]
    } else {
        (parallax[mid - 1] + parallax[mid]) / 2.0
    };
    Ok(RelativePose {
        motion,
        in_front: best,
        runner_up,
        median_parallax_deg,
    })
}

fn skew(t: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -t.z, t.y, t.z, 0.0, -t.x, -t.y, t.x, 0.0)
}

/// Unit vectors spanning the plane orthogonal to unit `t`.
fn tangent_basis(t: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = if t.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    let b1 = t.cross(&helper).normalize();
    (b1, t.cross(&b1))
}

/// Rotation update then translation update within the tangent plane.
fn perturb(motion: &CameraMotion, d: &Vector5<f64>) -> Option<CameraMotion> {
    let rot = Rotation3::new(Vector3::new(d[0], d[1], d[2])).into_inner() * motion.rotation();
    let t = motion.translation();
    let (b1, b2) = tangent_basis(t);
    let t = (t + b1 * d[3] + b2 * d[4]).normalize();
    CameraMotion::new(orthonormalize(&rot), t).ok()
}

fn sampson_residuals(motion: &CameraMotion, inliers: &MatchSet, k_day: &CameraModel, k_dark: &CameraModel, out: &mut Vec<f64>) {
    let ki_day = k_day.matrix().try_inverse().unwrap_or_else(Matrix3::identity);
    let ki_dark = k_dark.matrix().try_inverse().unwrap_or_else(Matrix3::identity);
    let f = ki_dark.transpose() * skew(motion.translation()) * motion.rotation() * ki_day;
    out.clear();
    out.extend(inliers.iter().map(|m| signed_sampson(&f, &m.day, &m.dark)));
}

/// Polishes a unit-translation pose by Levenberg-Marquardt on the Sampson
/// error of the inliers. Returns the input when no step lowers the error.
pub fn refine_pose(motion: &CameraMotion, inliers: &MatchSet, k_day: &CameraModel, k_dark: &CameraModel) -> CameraMotion {
    const H: f64 = 1e-7;
    if inliers.len() < 6 {
        return *motion;
    }
    let mut current = *motion;
    let mut r = Vec::new();
    let mut probe = Vec::new();
    sampson_residuals(&current, inliers, k_day, k_dark, &mut r);
    let mut cost: f64 = r.iter().map(|v| v * v).sum();
    let mut lambda = 1e-3;
    for _ in 0..50 {
        let mut jac = vec![Vector5::zeros(); r.len()];
        for k in 0..5 {
            let mut d = Vector5::zeros();
            d[k] = H;
            let Some(m) = perturb(&current, &d) else {
                return current;
            };
            sampson_residuals(&m, inliers, k_day, k_dark, &mut probe);
            for (j, (p, v)) in jac.iter_mut().zip(probe.iter().zip(&r)) {
                j[k] = (p - v) / H;
            }
        }
        let mut jtj = Matrix5::zeros();
        let mut jtr = Vector5::zeros();
        for (j, v) in jac.iter().zip(&r) {
            jtj += j * j.transpose();
            jtr += j * *v;
        }
        let mut improved = false;
        while lambda < 1e8 {
            let mut a = jtj;
            for k in 0..5 {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-12);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&(-jtr))) else {
                lambda *= 10.0;
                continue;
            };
            if let Some(m) = perturb(&current, &step) {
                sampson_residuals(&m, inliers, k_day, k_dark, &mut probe);
                let c: f64 = probe.iter().map(|v| v * v).sum();
                if c < cost {
                    let gain = cost - c;
                    current = m;
                    cost = c;
                    std::mem::swap(&mut r, &mut probe);
                    lambda = (lambda / 10.0).max(1e-12);
                    improved = gain > 1e-12 * cost.max(1e-300);
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    current
}
