//! Bilateral grid over (x, y, L, a, b).
//!
//! Pixels are splatted with multilinear weights onto a lattice with spacing
//! `sigma_s / 2` in space and `sigma_r / 2` in color, blurred along every
//! axis, and sliced back with the same multilinear weights. The spatial axes
//! are stored densely. The color axes are sparse: only lattice nodes touched
//! by some pixel are kept, and the color blur is evaluated exactly on the
//! closure of nodes it needs, so it matches a dense grid.
//!
//! Splat followed by slice adds a tent-squared blur of variance 1/3 cell^2 per
//! axis; the color blur subtracts it so the effective kernel keeps the
//! requested sigma. The spatial kernel is instead fitted to the direct
//! filter's truncated window.

use std::collections::{HashMap, HashSet};

use log::debug;
use rayon::prelude::*;

use super::{check_dims, BilateralParams, LabImage};
use crate::error::Result;
use crate::types::SoftPredictionMap;

const SPATIAL_SUBDIV: f64 = 2.0;
const RANGE_SUBDIV: f64 = 2.0;
const RANGE_TRUNCATION: f64 = 3.0;
const SPATIAL_BLOCK_NODES: usize = 64;
/// Largest grid allocation, in bytes. Reference images with many distinct
/// colors at a small spatial sigma would exceed it; the direct filter is
/// cheap in exactly that regime and is used instead.
const GRID_MEMORY_BUDGET: usize = 2 << 30;

type NodeKey = [i32; 3];

/// Gaussian taps for a lattice blur of `subdiv` cells, truncated at `taps`.
fn lattice_kernel(subdiv: f64, taps: usize) -> Vec<f64> {
    let var = subdiv * subdiv - 1.0 / 3.0;
    (0..=2 * taps)
        .map(|i| {
            let d = i as f64 - taps as f64;
            (-(d * d) / (2.0 * var)).exp()
        })
        .collect()
}

/// Symmetric non-negative lattice kernel, `2 * taps + 1` long, whose
/// splat-blur-slice response best matches (least squares over pixel pairs) the
/// direct filter's spatial weight: a Gaussian cut off at `radius` pixels.
/// The window is square, so one axis suffices.
fn fitted_spatial_kernel(cell: f64, sigma: f64, radius: usize, taps: usize) -> Vec<f64> {
    let n = taps + 1;
    let mut q = vec![0.0; n * n];
    let mut b = vec![0.0; n];
    let reach = radius as i64 + (2.0 * cell).ceil() as i64 + 2;
    let phases = ((4.0 * cell).ceil() as i64).max(8);
    let mut a = vec![0.0; n];
    for x in 0..phases {
        let u = x as f64 / cell;
        let (i0, fu) = lattice_pos(u);
        for d in -reach..=reach {
            let v = (x + d) as f64 / cell;
            let (j0, fv) = lattice_pos(v);
            a.fill(0.0);
            for (i, wi) in [(i0, 1.0 - fu), (i0 + 1, fu)] {
                for (j, wj) in [(j0, 1.0 - fv), (j0 + 1, fv)] {
                    let m = (i - j).unsigned_abs() as usize;
                    if m < n {
                        a[m] += wi * wj;
                    }
                }
            }
            let target = if d.unsigned_abs() as usize <= radius {
                (-((d * d) as f64) / (2.0 * sigma * sigma)).exp()
            } else {
                0.0
            };
            for r in 0..n {
                b[r] += a[r] * target;
                for c in 0..n {
                    q[r * n + c] += a[r] * a[c];
                }
            }
        }
    }
    // Coordinate descent on the normal equations with k >= 0.
    let mut k: Vec<f64> = (0..n).map(|m| (-((m * m) as f64) * cell * cell / (2.0 * sigma * sigma)).exp()).collect();
    for _ in 0..2000 {
        let mut change = 0.0f64;
        for m in 0..n {
            if q[m * n + m] <= 0.0 {
                continue;
            }
            let off: f64 = (0..n).filter(|&c| c != m).map(|c| q[m * n + c] * k[c]).sum();
            let next = ((b[m] - off) / q[m * n + m]).max(0.0);
            change = change.max((next - k[m]).abs());
            k[m] = next;
        }
        if change < 1e-13 {
            break;
        }
    }
    (0..=2 * taps).map(|i| k[i.abs_diff(taps)]).collect()
}

/// One pass of the sparse color blur: for each output node, the input nodes on
/// its line along `axis` and their kernel weights.
struct Stencil {
    rows: Vec<Vec<(u32, f64)>>,
}

impl Stencil {
    fn build(
        outputs: &[NodeKey],
        inputs: &HashMap<NodeKey, usize>,
        axis: usize,
        kernel: &[f64],
    ) -> Self {
        let taps = (kernel.len() / 2) as i32;
        let rows = outputs
            .iter()
            .map(|key| {
                let mut row = Vec::new();
                for k in -taps..=taps {
                    let mut probe = *key;
                    probe[axis] += k;
                    if let Some(&src) = inputs.get(&probe) {
                        row.push((src as u32, kernel[(k + taps) as usize]));
                    }
                }
                row
            })
            .collect();
        Self { rows }
    }

    fn apply(&self, input: &[f64], output: &mut [f64], stride: usize) {
        for (row, out) in self.rows.iter().zip(output.chunks_exact_mut(stride)) {
            out.fill(0.0);
            for &(src, wt) in row {
                let v = &input[src as usize * stride..(src as usize + 1) * stride];
                // Last slot is the homogeneous weight; zero means empty.
                if v[stride - 1] == 0.0 {
                    continue;
                }
                for (o, &x) in out.iter_mut().zip(v) {
                    *o += wt * x;
                }
            }
        }
    }
}

/// Every node within `taps` of some seed along `axis`, in first-seen order.
fn dilate(seeds: &[NodeKey], axis: usize, taps: i32) -> Vec<NodeKey> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for key in seeds {
        for k in -taps..=taps {
            let mut n = *key;
            n[axis] += k;
            if seen.insert(n) {
                out.push(n);
            }
        }
    }
    out
}

fn index_of(keys: &[NodeKey]) -> HashMap<NodeKey, usize> {
    keys.iter().enumerate().map(|(i, k)| (*k, i)).collect()
}

/// Drops candidates with no `sources` entry on their line along `axis`.
fn keep_reachable(
    candidates: Vec<NodeKey>,
    sources: &HashMap<NodeKey, usize>,
    axis: usize,
    taps: i32,
) -> Vec<NodeKey> {
    candidates
        .into_iter()
        .filter(|key| {
            (-taps..=taps).any(|k| {
                let mut n = *key;
                n[axis] += k;
                sources.contains_key(&n)
            })
        })
        .collect()
}

/// Blurs a cell-major `(gh, gw)` buffer along one spatial axis; `inner` is the
/// per-cell vector length.
fn blur_axis(
    buf: &[f64],
    out: &mut [f64],
    dims: (usize, usize),
    along_x: bool,
    inner: usize,
    kernel: &[f64],
) {
    let (gh, gw) = dims;
    let taps = kernel.len() / 2;
    out.par_chunks_mut(inner).enumerate().for_each(|(cell, o)| {
        let (cy, cx) = (cell / gw, cell % gw);
        o.fill(0.0);
        let (pos, extent) = if along_x { (cx, gw) } else { (cy, gh) };
        let lo = pos.saturating_sub(taps);
        let hi = (pos + taps).min(extent - 1);
        for q in lo..=hi {
            let wt = kernel[q + taps - pos];
            let src = if along_x { cy * gw + q } else { q * gw + cx };
            let v = &buf[src * inner..(src + 1) * inner];
            for (a, &x) in o.iter_mut().zip(v) {
                *a += wt * x;
            }
        }
    });
}

/// Separable spatial blur of the whole grid, a block of nodes at a time so
/// the scratch space stays small.
fn blur_spatial(grid: &mut [f64], dims: (usize, usize), n_nodes: usize, stride: usize, kernel: &[f64]) {
    let n_cells = dims.0 * dims.1;
    let inner = n_nodes * stride;
    let block = SPATIAL_BLOCK_NODES.min(n_nodes).max(1);
    let mut a = vec![0.0; n_cells * block * stride];
    let mut b = vec![0.0; n_cells * block * stride];
    for first in (0..n_nodes).step_by(block) {
        let count = block.min(n_nodes - first);
        let width = count * stride;
        let (a, b) = (&mut a[..n_cells * width], &mut b[..n_cells * width]);
        for cell in 0..n_cells {
            let src = cell * inner + first * stride;
            a[cell * width..(cell + 1) * width].copy_from_slice(&grid[src..src + width]);
        }
        blur_axis(a, b, dims, true, width, kernel);
        blur_axis(b, a, dims, false, width, kernel);
        for cell in 0..n_cells {
            let dst = cell * inner + first * stride;
            grid[dst..dst + width].copy_from_slice(&a[cell * width..(cell + 1) * width]);
        }
    }
}

/// Splat position: lower lattice index and the fractional offset.
#[inline]
fn lattice_pos(v: f64) -> (i64, f64) {
    let f = v.floor();
    (f as i64, v - f)
}

/// Grid-accelerated approximation of [`super::cross_bilateral_align`].
pub fn cross_bilateral_align_grid(
    s1: &SoftPredictionMap,
    reference: &LabImage,
    params: &BilateralParams,
) -> Result<SoftPredictionMap> {
    check_dims(s1, reference)?;
    let (h, w, c) = (s1.height(), s1.width(), s1.channels());
    if h == 0 || w == 0 {
        return Ok(s1.clone());
    }
    let stride = c + 1;
    let hs = params.sigma_s / SPATIAL_SUBDIV;
    let hr = params.sigma_r / RANGE_SUBDIV;
    let gw = ((w - 1) as f64 / hs).floor() as usize + 2;
    let gh = ((h - 1) as f64 / hs).floor() as usize + 2;

    let lab = reference.pixels();
    let mut lo = [f64::INFINITY; 3];
    for px in lab {
        for d in 0..3 {
            lo[d] = lo[d].min(px[d]);
        }
    }

    // Per-pixel lattice coordinates, reused by splat and slice.
    struct Footprint {
        cell: [usize; 4],
        cell_w: [f64; 4],
        node: [usize; 8],
        node_w: [f64; 8],
    }
    let mut nodes: HashMap<NodeKey, usize> = HashMap::new();
    let mut node_keys: Vec<NodeKey> = Vec::new();
    let mut footprints = Vec::with_capacity(h * w);
    for y in 0..h {
        let (gy, fy) = lattice_pos(y as f64 / hs);
        for x in 0..w {
            let (gx, fx) = lattice_pos(x as f64 / hs);
            let (gy, gx) = (gy as usize, gx as usize);
            let cell = [
                gy * gw + gx,
                gy * gw + gx + 1,
                (gy + 1) * gw + gx,
                (gy + 1) * gw + gx + 1,
            ];
            let cell_w = [
                (1.0 - fy) * (1.0 - fx),
                (1.0 - fy) * fx,
                fy * (1.0 - fx),
                fy * fx,
            ];
            let px = lab[y * w + x];
            let pos: [(i64, f64); 3] = std::array::from_fn(|d| lattice_pos((px[d] - lo[d]) / hr));
            let mut node = [0usize; 8];
            let mut node_w = [0.0; 8];
            for corner in 0..8 {
                let mut key = [0i32; 3];
                let mut wt = 1.0;
                for d in 0..3 {
                    let bit = (corner >> d) & 1;
                    key[d] = (pos[d].0 + bit as i64) as i32;
                    wt *= if bit == 1 { pos[d].1 } else { 1.0 - pos[d].1 };
                }
                let next = node_keys.len();
                node[corner] = *nodes.entry(key).or_insert_with(|| {
                    node_keys.push(key);
                    next
                });
                node_w[corner] = wt;
            }
            footprints.push(Footprint {
                cell,
                cell_w,
                node,
                node_w,
            });
        }
    }

    let n_nodes = node_keys.len();
    let inner = n_nodes * stride;
    let n_cells = gh * gw;
    let bytes = n_cells.saturating_mul(inner).saturating_mul(std::mem::size_of::<f64>());
    if bytes > GRID_MEMORY_BUDGET {
        debug!("grid would need {} MiB for {n_nodes} color nodes; filtering directly", bytes >> 20);
        drop(footprints);
        return super::cross_bilateral_align(s1, reference, params);
    }
    let mut grid = vec![0.0f64; n_cells * inner];
    for (i, fp) in footprints.iter().enumerate() {
        let v = s1.pixel(i);
        for (&cell, &cw) in fp.cell.iter().zip(&fp.cell_w) {
            if cw == 0.0 {
                continue;
            }
            for (&node, &nw) in fp.node.iter().zip(&fp.node_w) {
                let wt = cw * nw;
                if wt == 0.0 {
                    continue;
                }
                let base = cell * inner + node * stride;
                let slot = &mut grid[base..base + stride];
                for (s, &p) in slot.iter_mut().zip(v) {
                    *s += wt * p;
                }
                slot[c] += wt;
            }
        }
    }

    let spatial_taps = (params.radius as f64 / hs).ceil() as usize + 1;
    let spatial_kernel = fitted_spatial_kernel(hs, params.sigma_s, params.radius, spatial_taps);
    blur_spatial(&mut grid, (gh, gw), n_nodes, stride, &spatial_kernel);

    // Color blur: L, then a, then b. Work backwards to find which nodes each
    // pass must produce so that the final pass can fill every splatted node.
    let range_taps = (RANGE_TRUNCATION * RANGE_SUBDIV).ceil() as i32;
    let range_kernel = lattice_kernel(RANGE_SUBDIV, range_taps as usize);
    let need2 = dilate(&node_keys, 2, range_taps);
    let need1 = dilate(&need2, 1, range_taps);
    let need1 = keep_reachable(need1, &nodes, 0, range_taps);
    let need1_index = index_of(&need1);
    let need2 = keep_reachable(need2, &need1_index, 1, range_taps);
    let need2_index = index_of(&need2);
    let pass_l = Stencil::build(&need1, &nodes, 0, &range_kernel);
    let pass_a = Stencil::build(&need2, &need1_index, 1, &range_kernel);
    let pass_b = Stencil::build(&node_keys, &need2_index, 2, &range_kernel);

    grid.par_chunks_mut(inner).for_each_init(
        || {
            (
                vec![0.0f64; need1.len() * stride],
                vec![0.0f64; need2.len() * stride],
            )
        },
        |(buf1, buf2), cell| {
            if cell.chunks_exact(stride).all(|v| v[c] == 0.0) {
                return;
            }
            pass_l.apply(cell, buf1, stride);
            pass_a.apply(buf1, buf2, stride);
            pass_b.apply(buf2, cell, stride);
        },
    );

    let mut out = vec![0.0f64; h * w * c];
    out.par_chunks_mut(c)
        .zip(footprints.par_iter())
        .enumerate()
        .for_each(|(i, (o, fp))| {
            let mut acc = vec![0.0f64; stride];
            for (&cell, &cw) in fp.cell.iter().zip(&fp.cell_w) {
                for (&node, &nw) in fp.node.iter().zip(&fp.node_w) {
                    let wt = cw * nw;
                    if wt == 0.0 {
                        continue;
                    }
                    let base = cell * inner + node * stride;
                    for (a, &g) in acc.iter_mut().zip(&grid[base..base + stride]) {
                        *a += wt * g;
                    }
                }
            }
            let total: f64 = acc[..c].iter().sum();
            if total > 0.0 && total.is_finite() {
                for (v, a) in o.iter_mut().zip(&acc) {
                    *v = a / total;
                }
            } else {
                o.copy_from_slice(s1.pixel(i));
            }
        });
    Ok(SoftPredictionMap::from_normalized(h, w, c, out))
}
