//! Closest-point redistancing.
//!
//! Nodes next to a sign change are seeded with a closest point on the zero
//! set of the tricubic interpolant (Newton projection, falling back to edge
//! crossings). Closest points are then propagated outward Dijkstra-style over
//! the 26-neighbourhood; each node keeps the nearest candidate it was offered.
//! Propagation stops at the band half-width.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, Vec3};

#[derive(Clone, Copy)]
struct Entry {
    dist: f64,
    node: usize,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.dist == other.dist && self.node == other.node
    }
}
impl Eq for Entry {}
impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Entry {
    // min-heap on distance, ties on node index for determinism
    fn cmp(&self, other: &Self) -> Ordering {
        other.dist.total_cmp(&self.dist).then_with(|| other.node.cmp(&self.node))
    }
}

/// Project `x` onto the zero set of the tricubic interpolant.
fn newton_project(grid: &GridSpec, phi: &[f64], x0: &Vec3) -> Option<Vec3> {
    let h = grid.h();
    let mut x = *x0;
    for _ in 0..8 {
        let (v, g) = grid.interpolate_cubic_with_gradient(phi, &x);
        if v.abs() < 1e-7 * h {
            return ((x - x0).norm() <= 2.0 * h).then_some(x);
        }
        let g2 = g.norm_squared();
        if g2 < 1e-12 {
            return None;
        }
        x -= g * (v / g2);
        if !grid.contains(&x) {
            return None;
        }
    }
    let v = grid.interpolate_cubic_with_gradient(phi, &x).0;
    (v.abs() < 1e-3 * h && (x - x0).norm() <= 2.0 * h).then_some(x)
}

fn diagonal_sign_change(grid: &GridSpec, phi: &[f64], idx: usize, here: bool) -> bool {
    let [i, j, k] = grid.coords(idx);
    let d = grid.dims;
    for dk in -1i64..=1 {
        for dj in -1i64..=1 {
            for di in -1i64..=1 {
                let (ii, jj, kk) = (i as i64 + di, j as i64 + dj, k as i64 + dk);
                if ii < 0 || jj < 0 || kk < 0 || ii >= d[0] as i64 || jj >= d[1] as i64 || kk >= d[2] as i64 {
                    continue;
                }
                if (phi[grid.index(ii as usize, jj as usize, kk as usize)] < 0.0) != here {
                    return true;
                }
            }
        }
    }
    false
}

/// Recompute signed distances from the zero set of `phi`, clamped to
/// `[-band, band]`. Returns the new values and each node's closest point.
pub(crate) fn redistance_values(grid: &GridSpec, phi: &[f64], band: f64) -> Result<(Vec<f64>, Vec<Vec3>)> {
    let n = grid.node_count();
    let inside = |v: f64| v < 0.0;
    let mut dist = vec![f64::INFINITY; n];
    let mut closest = vec![Vec3::repeat(f64::NAN); n];
    let mut heap = BinaryHeap::new();

    for idx in 0..n {
        let here = inside(phi[idx]);
        let pos = grid.node_position(idx);
        let mut best_d = f64::INFINITY;
        let mut best_p = pos;
        let mut seeded = false;
        if phi[idx] == 0.0 {
            best_d = 0.0;
            seeded = true;
        } else {
            for nb in grid.face_neighbors(idx) {
                if inside(phi[nb]) != here {
                    seeded = true;
                    let t = phi[idx] / (phi[idx] - phi[nb]);
                    let p = pos + (grid.node_position(nb) - pos) * t;
                    let d = (p - pos).norm();
                    if d < best_d {
                        best_d = d;
                        best_p = p;
                    }
                }
            }
            if !seeded {
                // the zero set can pass through an incident cell without
                // crossing any of this node's axis edges
                seeded = diagonal_sign_change(grid, phi, idx, here);
            }
            if seeded {
                if let Some(p) = newton_project(grid, phi, &pos) {
                    let d = (p - pos).norm();
                    if d < best_d {
                        best_d = d;
                        best_p = p;
                    }
                }
            }
        }
        if seeded {
            dist[idx] = best_d;
            closest[idx] = best_p;
            heap.push(Entry { dist: best_d, node: idx });
        }
    }

    if heap.is_empty() {
        return Err(Error::EmptyShape);
    }

    let [nx, ny, nz] = grid.dims;
    while let Some(Entry { dist: d, node }) = heap.pop() {
        if d > dist[node] || d > band + grid.h() {
            continue;
        }
        let cp = closest[node];
        let [i, j, k] = grid.coords(node);
        for dk in -1i64..=1 {
            let kk = k as i64 + dk;
            if kk < 0 || kk >= nz as i64 {
                continue;
            }
            for dj in -1i64..=1 {
                let jj = j as i64 + dj;
                if jj < 0 || jj >= ny as i64 {
                    continue;
                }
                for di in -1i64..=1 {
                    let ii = i as i64 + di;
                    if ii < 0 || ii >= nx as i64 || (di == 0 && dj == 0 && dk == 0) {
                        continue;
                    }
                    let nb = grid.index(ii as usize, jj as usize, kk as usize);
                    let cand = (grid.position(ii as usize, jj as usize, kk as usize) - cp).norm();
                    if cand < dist[nb] * (1.0 - 1e-12) {
                        dist[nb] = cand;
                        closest[nb] = cp;
                        heap.push(Entry { dist: cand, node: nb });
                    }
                }
            }
        }
    }

    // Propagated closest points are only as dense as the seeds; slide each
    // one along the surface towards the foot of the perpendicular.
    for idx in 0..n {
        if !(dist[idx] > 0.0 && dist[idx] < band + 2.0 * grid.h()) {
            continue;
        }
        let y = grid.node_position(idx);
        let mut c = closest[idx];
        let mut d = dist[idx];
        for _ in 0..4 {
            let (_, g) = grid.interpolate_cubic_with_gradient(phi, &c);
            let gn = g.norm();
            if gn < 1e-12 {
                break;
            }
            let nrm = g / gn;
            let r = y - c;
            let slid = c + (r - nrm * nrm.dot(&r));
            let Some(next) = newton_project(grid, phi, &slid) else { break };
            let dn = (y - next).norm();
            if dn >= d - 1e-12 * grid.h() {
                break;
            }
            c = next;
            d = dn;
        }
        closest[idx] = c;
        dist[idx] = d;
    }

    let values = phi
        .iter()
        .zip(&dist)
        .map(|(&v, &d)| {
            let d = d.min(band);
            if inside(v) {
                -d
            } else {
                d
            }
        })
        .collect();
    Ok((values, closest))
}
