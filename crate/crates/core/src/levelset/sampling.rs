use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::grid::Vec3;

use super::LevelSet;

/// A point on the zero set with its outward unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceSample {
    pub position: Vec3,
    pub normal: Vec3,
    /// Grid node the sample was projected from.
    pub node: usize,
}

/// Uniform hash grid over sample positions for nearest-neighbour lookups.
#[derive(Debug, Clone)]
pub struct SampleIndex {
    cell: f64,
    buckets: HashMap<[i64; 3], Vec<usize>>,
    positions: Vec<Vec3>,
}

impl SampleIndex {
    pub fn new(positions: impl IntoIterator<Item = Vec3>, cell: f64) -> Self {
        let positions: Vec<Vec3> = positions.into_iter().collect();
        let mut buckets: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        for (i, p) in positions.iter().enumerate() {
            buckets.entry(Self::key(p, cell)).or_default().push(i);
        }
        Self { cell, buckets, positions }
    }

    pub fn from_samples(samples: &[SurfaceSample], cell: f64) -> Self {
        Self::new(samples.iter().map(|s| s.position), cell)
    }

    #[inline]
    fn key(p: &Vec3, cell: f64) -> [i64; 3] {
        [(p.x / cell).floor() as i64, (p.y / cell).floor() as i64, (p.z / cell).floor() as i64]
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// All entries within `radius` of `p`, with distances.
    pub fn within(&self, p: &Vec3, radius: f64) -> Vec<(usize, f64)> {
        let reach = (radius / self.cell).ceil() as i64;
        let c = Self::key(p, self.cell);
        let mut out = Vec::new();
        for dz in -reach..=reach {
            for dy in -reach..=reach {
                for dx in -reach..=reach {
                    if let Some(list) = self.buckets.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                        for &i in list {
                            let d = (self.positions[i] - p).norm();
                            if d <= radius {
                                out.push((i, d));
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Nearest entry to `p`, searching rings of buckets outward.
    pub fn nearest(&self, p: &Vec3) -> Option<(usize, f64)> {
        if self.positions.is_empty() {
            return None;
        }
        let mut radius = self.cell;
        loop {
            let found = self
                .within(p, radius)
                .into_iter()
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            if found.is_some() {
                return found;
            }
            radius *= 2.0;
            if radius > 1e3 * self.cell * (self.positions.len() as f64).max(1.0) {
                // fall back to a linear scan
                return self
                    .positions
                    .iter()
                    .enumerate()
                    .map(|(i, q)| (i, (q - p).norm()))
                    .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            }
        }
    }
}

impl LevelSet {
    /// Project `x` onto the zero set along the gradient (two fixed-point steps).
    pub fn project_to_surface(&self, x: &Vec3) -> Vec3 {
        let mut p = *x;
        for _ in 0..2 {
            let g = self.gradient(&p);
            let n = g.norm();
            if n < 1e-12 {
                break;
            }
            p -= g * (self.value(&p) / n);
        }
        p
    }

    /// Boundary samples: every node with `-h/2 <= phi < h/2` projected onto
    /// the zero set; samples closer than `h/4` to an earlier one are merged.
    pub fn sample_boundary(&self) -> Vec<SurfaceSample> {
        let h = self.h();
        let merge = 0.25 * h;
        let mut seen: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
        let mut out: Vec<SurfaceSample> = Vec::new();
        for idx in 0..self.values.len() {
            let v = self.values[idx];
            if !(v >= -0.5 * h && v < 0.5 * h) {
                continue;
            }
            let x0 = self.grid.node_position(idx);
            let x = self.project_to_surface(&x0);
            let Some(n) = self.normal(&x) else { continue };
            let key = [
                (x.x / merge).floor() as i64,
                (x.y / merge).floor() as i64,
                (x.z / merge).floor() as i64,
            ];
            let mut duplicate = false;
            'search: for dz in -1..=1 {
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        if let Some(list) = seen.get(&[key[0] + dx, key[1] + dy, key[2] + dz]) {
                            if list.iter().any(|&s| (out[s].position - x).norm() < merge) {
                                duplicate = true;
                                break 'search;
                            }
                        }
                    }
                }
            }
            if duplicate {
                continue;
            }
            seen.entry(key).or_default().push(out.len());
            out.push(SurfaceSample { position: x, normal: n, node: idx });
        }
        out
    }

    /// Extend per-sample boundary values to every grid node so that the field
    /// is constant along normals: each node takes the value found at its
    /// closest point on the zero set (inverse-distance weighted over samples
    /// within `h` of that point, else the nearest sample).
    pub fn extend_normal(&self, samples: &[SurfaceSample], boundary_values: &[f64]) -> Result<Vec<f64>> {
        if samples.len() != boundary_values.len() {
            return Err(Error::InvalidArgument("one boundary value per sample is required".into()));
        }
        if boundary_values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("boundary values must be finite".into()));
        }
        if samples.is_empty() {
            return Ok(vec![0.0; self.values.len()]);
        }
        let h = self.h();
        let index = SampleIndex::from_samples(samples, h);
        let n = self.values.len();
        let mut out = vec![0.0; n];
        let mut done = vec![false; n];
        let mut queue = std::collections::VecDeque::new();
        for idx in 0..n {
            if self.in_band(idx) {
                let cp = self.project_to_surface(&self.grid.node_position(idx));
                out[idx] = interpolate_samples(&index, boundary_values, &cp, h);
                done[idx] = true;
                queue.push_back(idx);
            }
        }
        if queue.is_empty() {
            // no band at all: fall back to nearest samples
            for (idx, v) in out.iter_mut().enumerate() {
                *v = interpolate_samples(&index, boundary_values, &self.grid.node_position(idx), h);
            }
            return Ok(out);
        }
        // outside the band the field only needs to be defined; copy outward
        while let Some(idx) = queue.pop_front() {
            for nb in self.grid.face_neighbors(idx) {
                if !done[nb] {
                    done[nb] = true;
                    out[nb] = out[idx];
                    queue.push_back(nb);
                }
            }
        }
        Ok(out)
    }
}

pub(crate) fn interpolate_samples(index: &SampleIndex, values: &[f64], p: &Vec3, h: f64) -> f64 {
    let near = index.within(p, h);
    if near.is_empty() {
        return index.nearest(p).map(|(i, _)| values[i]).unwrap_or(0.0);
    }
    let eps = 1e-3 * h;
    let mut wsum = 0.0;
    let mut acc = 0.0;
    for (i, d) in near {
        let w = 1.0 / ((d + eps) * (d + eps));
        wsum += w;
        acc += w * values[i];
    }
    acc / wsum
}
