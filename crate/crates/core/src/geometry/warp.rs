use nalgebra::{Vector2, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::types::{CameraModel, CameraMotion, DepthMap, SoftPredictionMap};

/// Side-length ratio above which a deformed quad is treated as stretched
/// across a depth edge.
pub const IRREGULAR_RATIO: f64 = 5.0;

const INSIDE_EPS: f64 = 1e-9;
const SNAP_EPS: f64 = 1e-12;
const MAX_BANDS: usize = 8;

/// Moves a day pixel with known depth into the dark view.
pub fn reproject(
    p: &Vector2<f64>,
    depth: f64,
    motion: &CameraMotion,
    k_day: &CameraModel,
    k_dark: &CameraModel,
) -> Result<Vector2<f64>> {
    let n = k_day.normalize(p);
    let x = Vector3::new(n.x * depth, n.y * depth, depth);
    let y = motion.transform(&x);
    if y.z <= 0.0 {
        return Err(Error::BehindCamera);
    }
    Ok(Vector2::new(
        k_dark.fx * y.x / y.z + k_dark.cx,
        k_dark.fy * y.y / y.z + k_dark.cy,
    ))
}

/// [`reproject`] for the integer pixel `(x, y)` using its depth-map value.
pub fn backproject_reproject(
    x: usize,
    y: usize,
    depth_day: &DepthMap,
    motion: &CameraMotion,
    k_day: &CameraModel,
    k_dark: &CameraModel,
) -> Result<Vector2<f64>> {
    let p = Vector2::new(x as f64, y as f64);
    reproject(&p, depth_day.at(y, x), motion, k_day, k_dark)
}

/// Classification of a deformed quad.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuadState {
    Regular,
    /// Stretched across a depth edge; only the flagged vertices (the far side
    /// of the cut) take part in interpolation.
    Irregular { keep: [bool; 4] },
    /// A vertex landed behind the dark camera.
    Unusable,
}

/// The daytime pixel grid deformed into the dark view. Quad `q = y*(w-1)+x`
/// has vertices (x,y), (x+1,y), (x+1,y+1), (x,y+1) in that order.
#[derive(Clone, Debug)]
pub struct WarpMesh {
    height: usize,
    width: usize,
    vertices: Vec<Option<Vector2<f64>>>,
    quad_depth: Vec<f64>,
    states: Vec<QuadState>,
}

fn side_lengths(v: &[Vector2<f64>; 4]) -> [f64; 4] {
    std::array::from_fn(|i| (v[(i + 1) % 4] - v[i]).norm())
}

/// Irregularity test and cut. Removing the two longest sides splits the four
/// vertices into two groups; the group with the larger mean depth is kept.
fn classify(v: &[Vector2<f64>; 4], depth: &[f64; 4]) -> QuadState {
    let sides = side_lengths(v);
    let mut order = [0usize, 1, 2, 3];
    order.sort_by(|&a, &b| sides[b].total_cmp(&sides[a]).then(a.cmp(&b)));
    let (second, third) = (sides[order[1]], sides[order[2]]);
    if !(second > IRREGULAR_RATIO * third) {
        return QuadState::Regular;
    }
    // Side i joins vertices i and i+1; union the two surviving sides.
    let mut group = [0usize, 1, 2, 3];
    for &s in &order[2..] {
        let (a, b) = (s, (s + 1) % 4);
        let (ga, gb) = (group[a], group[b]);
        for g in group.iter_mut() {
            if *g == gb {
                *g = ga;
            }
        }
    }
    let first = group[0];
    let mean = |in_first: bool| {
        let (sum, n) = (0..4)
            .filter(|&i| (group[i] == first) == in_first)
            .fold((0.0, 0), |(s, n), i| (s + depth[i], n + 1));
        sum / n as f64
    };
    let keep_first = mean(true) >= mean(false);
    QuadState::Irregular {
        keep: std::array::from_fn(|i| (group[i] == first) == keep_first),
    }
}

impl WarpMesh {
    /// Mesh from explicit vertex positions (`None` for vertices behind the
    /// camera) and per-vertex source depths, both row-major over `height x
    /// width` vertices.
    pub fn from_vertices(
        height: usize,
        width: usize,
        vertices: Vec<Option<Vector2<f64>>>,
        depth: &[f64],
    ) -> Result<Self> {
        if vertices.len() != height * width || depth.len() != height * width {
            return Err(Error::InvalidValue(format!(
                "mesh of {height}x{width} needs {} vertices and depths",
                height * width
            )));
        }
        if let Some(d) = depth.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
            return Err(Error::InvalidValue(format!("vertex depth {d}")));
        }
        let (qh, qw) = (height.saturating_sub(1), width.saturating_sub(1));
        let quads: Vec<(f64, QuadState)> = (0..qh * qw)
            .into_par_iter()
            .map(|q| {
                let (y, x) = (q / qw, q % qw);
                let ids = [y * width + x, y * width + x + 1, (y + 1) * width + x + 1, (y + 1) * width + x];
                let d = ids.map(|i| depth[i]);
                let mean = d.iter().sum::<f64>() / 4.0;
                let state = match ids.map(|i| vertices[i]) {
                    [Some(a), Some(b), Some(c), Some(e)] => classify(&[a, b, c, e], &d),
                    _ => QuadState::Unusable,
                };
                (mean, state)
            })
            .collect();
        let (quad_depth, states) = quads.into_iter().unzip();
        Ok(Self {
            height,
            width,
            vertices,
            quad_depth,
            states,
        })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn vertex(&self, y: usize, x: usize) -> Option<Vector2<f64>> {
        self.vertices[y * self.width + x]
    }

    pub fn num_quads(&self) -> usize {
        self.states.len()
    }

    pub fn quad_depth(&self, q: usize) -> f64 {
        self.quad_depth[q]
    }

    pub fn quad_state(&self, q: usize) -> QuadState {
        self.states[q]
    }

    /// Source pixel indices of the quad's vertices.
    pub fn quad_vertex_ids(&self, q: usize) -> [usize; 4] {
        let qw = self.width - 1;
        let (y, x) = (q / qw, q % qw);
        let w = self.width;
        [y * w + x, y * w + x + 1, (y + 1) * w + x + 1, (y + 1) * w + x]
    }

    fn quad_vertices(&self, q: usize) -> Option<[Vector2<f64>; 4]> {
        let ids = self.quad_vertex_ids(q);
        Some([
            self.vertices[ids[0]]?,
            self.vertices[ids[1]]?,
            self.vertices[ids[2]]?,
            self.vertices[ids[3]]?,
        ])
    }
}

/// Deforms the daytime pixel grid into the dark view. Pixels flagged in
/// `sky_mask` are first pushed to the depth ceiling.
pub fn build_warp_mesh(
    depth_day: &DepthMap,
    motion: &CameraMotion,
    k_day: &CameraModel,
    k_dark: &CameraModel,
    sky_mask: Option<&[bool]>,
) -> Result<WarpMesh> {
    let clamped;
    let depth = match sky_mask {
        Some(mask) => {
            clamped = depth_day.clamp_to_max(mask)?;
            &clamped
        }
        None => depth_day,
    };
    let (h, w) = depth.dims();
    let vertices: Vec<Option<Vector2<f64>>> = (0..h * w)
        .into_par_iter()
        .map(|i| backproject_reproject(i % w, i / w, depth, motion, k_day, k_dark).ok())
        .collect();
    WarpMesh::from_vertices(h, w, vertices, depth.values())
}

/// Per dark pixel, the quad it was assigned and the interpolation weights on
/// that quad's four source vertices.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpAssignment {
    height: usize,
    width: usize,
    entries: Vec<Option<(usize, [f64; 4])>>,
}

impl WarpAssignment {
    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// `None` when no quad covers the pixel.
    pub fn get(&self, y: usize, x: usize) -> Option<(usize, [f64; 4])> {
        self.entries[y * self.width + x]
    }

    pub fn covered(&self) -> usize {
        self.entries.iter().filter(|e| e.is_some()).count()
    }
}

fn cross(a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

/// Barycentric coordinates of `p` in triangle `(a, b, c)`.
fn barycentric(p: Vector2<f64>, a: Vector2<f64>, b: Vector2<f64>, c: Vector2<f64>) -> Option<[f64; 3]> {
    let area = cross(b - a, c - a);
    if area.abs() < 1e-300 {
        return None;
    }
    let l1 = cross(c - b, p - b) / area;
    let l2 = cross(a - c, p - c) / area;
    Some([l1, l2, 1.0 - l1 - l2])
}

fn inside(l: &[f64; 3]) -> bool {
    l.iter().all(|&v| v >= -INSIDE_EPS)
}

/// Containment in either triangle of the fixed (v0, v2) split.
fn contains(v: &[Vector2<f64>; 4], p: Vector2<f64>) -> bool {
    [(v[0], v[1], v[2]), (v[0], v[2], v[3])]
        .iter()
        .any(|&(a, b, c)| barycentric(p, a, b, c).is_some_and(|l| inside(&l)))
}

fn snap(t: f64) -> f64 {
    if t.abs() <= SNAP_EPS {
        0.0
    } else if (t - 1.0).abs() <= SNAP_EPS {
        1.0
    } else {
        t
    }
}

/// Parameters `(u, v)` of `p` in the bilinear patch through `v`.
fn inverse_bilinear(v: &[Vector2<f64>; 4], p: Vector2<f64>) -> Option<(f64, f64)> {
    let e = v[1] - v[0];
    let f = v[3] - v[0];
    let g = v[0] - v[1] + v[2] - v[3];
    let h = p - v[0];
    let k2 = cross(g, f);
    let k1 = cross(e, f) + cross(h, g);
    let k0 = cross(h, e);
    let scale = e.norm().max(f.norm()).max(1e-300);
    let candidates: Vec<f64> = if k2.abs() <= 1e-12 * scale * scale {
        if k1.abs() < 1e-300 {
            return None;
        }
        vec![-k0 / k1]
    } else {
        let disc = k1 * k1 - 4.0 * k0 * k2;
        if disc < 0.0 {
            return None;
        }
        let q = -0.5 * (k1 + k1.signum() * disc.sqrt());
        let mut r = vec![q / k2];
        if q != 0.0 {
            r.push(k0 / q);
        }
        r
    };
    let tol = 1e-9;
    for vv in candidates {
        let vv = snap(vv);
        if !(-tol..=1.0 + tol).contains(&vv) {
            continue;
        }
        let den = e + g * vv;
        let u = if den.x.abs() >= den.y.abs() {
            if den.x == 0.0 {
                continue;
            }
            (h.x - f.x * vv) / den.x
        } else {
            (h.y - f.y * vv) / den.y
        };
        let u = snap(u);
        if (-tol..=1.0 + tol).contains(&u) {
            return Some((u.clamp(0.0, 1.0), vv.clamp(0.0, 1.0)));
        }
    }
    None
}

fn interpolation_weights(v: &[Vector2<f64>; 4], p: Vector2<f64>) -> [f64; 4] {
    if let Some((u, t)) = inverse_bilinear(v, p) {
        return [(1.0 - u) * (1.0 - t), u * (1.0 - t), u * t, (1.0 - u) * t];
    }
    // Folded or degenerate quad: fall back to the containing triangle.
    for (ids, (a, b, c)) in [([0, 1, 2], (v[0], v[1], v[2])), ([0, 2, 3], (v[0], v[2], v[3]))] {
        if let Some(l) = barycentric(p, a, b, c).filter(inside) {
            let mut w = [0.0; 4];
            for (k, &i) in ids.iter().enumerate() {
                w[i] = l[k].max(0.0);
            }
            return w;
        }
    }
    [0.25; 4]
}

/// Keeps the weights allowed by the quad state and rescales them to sum to 1.
fn finalize_weights(mut w: [f64; 4], state: QuadState) -> [f64; 4] {
    let keep = match state {
        QuadState::Irregular { keep } => keep,
        _ => [true; 4],
    };
    for (wi, k) in w.iter_mut().zip(keep) {
        if !k {
            *wi = 0.0;
        }
    }
    let sum: f64 = w.iter().sum();
    if sum > 0.0 {
        w.map(|x| x / sum)
    } else {
        let n = keep.iter().filter(|&&k| k).count() as f64;
        std::array::from_fn(|i| if keep[i] { 1.0 / n } else { 0.0 })
    }
}

/// Z-buffer entry ordering: nearer quad first, then lower quad id.
fn closer(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && a.1 < b.1)
}

fn rasterize_rows(mesh: &WarpMesh, quad_rows: std::ops::Range<usize>, zbuf: &mut [Option<(f64, usize)>]) {
    let (h, w) = mesh.dims();
    let qw = w - 1;
    for q in quad_rows.start * qw..quad_rows.end * qw {
        if mesh.states[q] == QuadState::Unusable {
            continue;
        }
        let Some(v) = mesh.quad_vertices(q) else {
            continue;
        };
        let depth = mesh.quad_depth[q];
        let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &v {
            x0 = x0.min(p.x);
            y0 = y0.min(p.y);
            x1 = x1.max(p.x);
            y1 = y1.max(p.y);
        }
        let xa = (x0 - INSIDE_EPS).ceil().max(0.0);
        let ya = (y0 - INSIDE_EPS).ceil().max(0.0);
        let xb = (x1 + INSIDE_EPS).floor().min((w - 1) as f64);
        let yb = (y1 + INSIDE_EPS).floor().min((h - 1) as f64);
        if xa > xb || ya > yb {
            continue;
        }
        for py in ya as usize..=yb as usize {
            for px in xa as usize..=xb as usize {
                let slot = &mut zbuf[py * w + px];
                if slot.is_some_and(|cur| !closer((depth, q), cur)) {
                    continue;
                }
                if contains(&v, Vector2::new(px as f64, py as f64)) {
                    *slot = Some((depth, q));
                }
            }
        }
    }
}

/// Resamples `s1` into the dark view through `mesh`. Each dark pixel takes
/// the nearest covering quad, bilinearly interpolated from that quad's
/// source vertices; stretched quads only use their far side; uncovered
/// pixels copy `s1` at the same position.
pub fn forward_warp(s1: &SoftPredictionMap, mesh: &WarpMesh) -> Result<(SoftPredictionMap, WarpAssignment)> {
    if s1.dims() != mesh.dims() {
        return Err(Error::dims(s1.dims(), mesh.dims()));
    }
    let (h, w) = s1.dims();
    let c = s1.channels();
    let mut zbuf: Vec<Option<(f64, usize)>> = vec![None; h * w];
    if h >= 2 && w >= 2 {
        // A bounded number of row bands, each with its own z-buffer, merged
        // with the same ordering used inside a band.
        let bands = rayon::current_num_threads().clamp(1, MAX_BANDS).min(h - 1);
        let per_band = (h - 1).div_ceil(bands);
        zbuf = (0..bands)
            .into_par_iter()
            .map(|b| {
                let mut acc = vec![None; h * w];
                let rows = b * per_band..((b + 1) * per_band).min(h - 1);
                rasterize_rows(mesh, rows, &mut acc);
                acc
            })
            .reduce_with(|mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    match (*x, y) {
                        (None, y) => *x = y,
                        (Some(cur), Some(other)) if closer(other, cur) => *x = Some(other),
                        _ => {}
                    }
                }
                a
            })
            .unwrap_or(zbuf);
    }

    let entries: Vec<Option<(usize, [f64; 4])>> = zbuf
        .par_iter()
        .enumerate()
        .map(|(i, slot)| {
            let (_, q) = (*slot)?;
            let v = mesh.quad_vertices(q)?;
            let p = Vector2::new((i % w) as f64, (i / w) as f64);
            Some((q, finalize_weights(interpolation_weights(&v, p), mesh.states[q])))
        })
        .collect();

    let mut out = vec![0.0; h * w * c];
    out.par_chunks_mut(c.max(1)).zip(entries.par_iter()).enumerate().for_each(|(i, (o, entry))| match entry {
        Some((q, wts)) => {
            let ids = mesh.quad_vertex_ids(*q);
            for (&id, &wt) in ids.iter().zip(wts) {
                if wt == 0.0 {
                    continue;
                }
                for (a, &b) in o.iter_mut().zip(s1.pixel(id)) {
                    *a += wt * b;
                }
            }
        }
        None => o.copy_from_slice(s1.pixel(i)),
    });
    // Interpolated pixels are convex combinations; renormalize away rounding.
    // Copied pixels stay bit-identical to the input.
    for (px, _) in out.chunks_exact_mut(c.max(1)).zip(&entries).filter(|(_, e)| e.is_some()) {
        let s: f64 = px.iter().sum();
        if s > 0.0 && s != 1.0 {
            px.iter_mut().for_each(|v| *v /= s);
        }
    }
    Ok((
        SoftPredictionMap::from_normalized(h, w, c, out),
        WarpAssignment {
            height: h,
            width: w,
            entries,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_translation() {
        let k = CameraModel::new(100.0, 100.0, 0.0, 0.0).unwrap();
        let m = CameraMotion::new(nalgebra::Matrix3::identity(), Vector3::new(1.0, 0.0, 0.0)).unwrap();
        let p = reproject(&Vector2::new(10.0, 5.0), 10.0, &m, &k, &k).unwrap();
        assert!((p - Vector2::new(20.0, 5.0)).norm() < 1e-12);
    }

    #[test]
    fn behind_camera() {
        let k = CameraModel::new(100.0, 100.0, 0.0, 0.0).unwrap();
        let m = CameraMotion::new(nalgebra::Matrix3::identity(), Vector3::new(0.0, 0.0, -11.0)).unwrap();
        assert!(matches!(
            reproject(&Vector2::new(10.0, 5.0), 10.0, &m, &k, &k),
            Err(Error::BehindCamera)
        ));
    }

    #[test]
    fn stretched_quad_keeps_far_side() {
        // Left edge far, right edge near and pushed 19 px away.
        let v = [
            Vector2::new(0.0, 0.0),
            Vector2::new(20.0, 0.0),
            Vector2::new(20.0, 1.0),
            Vector2::new(0.0, 1.0),
        ];
        let state = classify(&v, &[50.0, 5.0, 5.0, 50.0]);
        assert_eq!(state, QuadState::Irregular { keep: [true, false, false, true] });
        let w = finalize_weights(interpolation_weights(&v, Vector2::new(10.0, 0.0)), state);
        assert_eq!(w, [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(classify(&v.map(|p| Vector2::new(p.x / 20.0, p.y)), &[1.0; 4]), QuadState::Regular);
    }

    #[test]
    fn three_one_cut() {
        // Vertex 1 dragged far away: sides 0 and 1 are the two longest.
        let v = [
            Vector2::new(0.0, 0.0),
            Vector2::new(30.0, -30.0),
            Vector2::new(1.0, 1.0),
            Vector2::new(0.0, 1.0),
        ];
        assert_eq!(
            classify(&v, &[10.0, 2.0, 10.0, 10.0]),
            QuadState::Irregular { keep: [true, false, true, true] }
        );
    }

    #[test]
    fn bilinear_weights_on_unit_square() {
        let v = [
            Vector2::new(0.0, 0.0),
            Vector2::new(1.0, 0.0),
            Vector2::new(1.0, 1.0),
            Vector2::new(0.0, 1.0),
        ];
        let w = interpolation_weights(&v, Vector2::new(0.25, 0.5));
        let expect = [0.375, 0.125, 0.125, 0.375];
        for (a, b) in w.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(interpolation_weights(&v, Vector2::new(1.0, 1.0)), [0.0, 0.0, 1.0, 0.0]);
    }
}
