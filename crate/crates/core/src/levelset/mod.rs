//! Narrow-band signed distance representation of a shape and the primitive
//! level-set operations (ray casting, offset, advection, closing).
//!
//! The field is stored densely on a [`GridSpec`]; the shape is the region
//! where `phi < 0`. Values are clamped to `[-band, band]`, and nodes with
//! `|phi| < band` form the active narrow band.

mod redistance;
mod sampling;

pub use sampling::{SampleIndex, SurfaceSample};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, Vec3};

#[derive(Debug, Clone, PartialEq)]
pub struct LevelSet {
    grid: GridSpec,
    values: Vec<f64>,
    band: f64,
}

/// Mirror plane perpendicular to a coordinate axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymmetryPlane {
    pub axis: usize,
    pub coord: f64,
}

/// Default band half-width: wide enough that iso-surfaces offset by the head
/// radius stay inside the band.
pub fn band_width_for(h: f64, head_radius: f64) -> f64 {
    (4.0 * h).max(head_radius + 2.0 * h)
}

impl LevelSet {
    /// Sample a signed distance function at every node. The function is
    /// assumed to be an exact (or at least 1-Lipschitz) distance; use
    /// [`LevelSet::from_implicit`] for general implicit functions.
    pub fn from_fn(grid: GridSpec, band: f64, f: impl Fn(&Vec3) -> f64) -> Result<Self> {
        check_band(&grid, band)?;
        let values = (0..grid.node_count())
            .map(|i| f(&grid.node_position(i)).clamp(-band, band))
            .collect();
        Ok(Self { grid, values, band })
    }

    /// Sample any implicit function (negative inside) and redistance it.
    pub fn from_implicit(grid: GridSpec, band: f64, f: impl Fn(&Vec3) -> f64) -> Result<Self> {
        check_band(&grid, band)?;
        let values: Vec<f64> = (0..grid.node_count()).map(|i| f(&grid.node_position(i))).collect();
        let mut ls = Self { grid, values, band };
        ls.redistance_in_place()?;
        Ok(ls)
    }

    pub fn from_values(grid: GridSpec, band: f64, values: Vec<f64>) -> Result<Self> {
        check_band(&grid, band)?;
        if values.len() != grid.node_count() {
            return Err(Error::InvalidArgument(format!(
                "expected {} values, got {}",
                grid.node_count(),
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("level set values must be finite".into()));
        }
        let values = values.into_iter().map(|v| v.clamp(-band, band)).collect();
        Ok(Self { grid, values, band })
    }

    #[inline]
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn band(&self) -> f64 {
        self.band
    }

    #[inline]
    pub fn h(&self) -> f64 {
        self.grid.spacing
    }

    #[inline]
    pub fn in_band(&self, idx: usize) -> bool {
        self.values[idx].abs() < self.band
    }

    /// Narrow-band node indices.
    pub fn band_nodes(&self) -> Vec<usize> {
        (0..self.values.len()).filter(|&i| self.in_band(i)).collect()
    }

    /// Trilinearly interpolated value; points outside the grid read as empty
    /// space (`+band`).
    #[inline]
    pub fn value(&self, p: &Vec3) -> f64 {
        if self.grid.contains(p) {
            self.grid.interpolate(&self.values, p)
        } else {
            self.band
        }
    }

    /// Interpolated central-difference gradient.
    pub fn gradient(&self, p: &Vec3) -> Vec3 {
        let ([i, j, k], [fx, fy, fz]) = self.grid.locate(p);
        let mut g = Vec3::zeros();
        for corner in 0..8usize {
            let (a, b, c) = (corner & 1, (corner >> 1) & 1, (corner >> 2) & 1);
            let w = (if a == 1 { fx } else { 1.0 - fx })
                * (if b == 1 { fy } else { 1.0 - fy })
                * (if c == 1 { fz } else { 1.0 - fz });
            if w > 0.0 {
                g += self.grid.node_gradient(&self.values, i + a, j + b, k + c) * w;
            }
        }
        g
    }

    /// Unit outward normal, if the gradient does not vanish.
    pub fn normal(&self, p: &Vec3) -> Option<Vec3> {
        let g = self.gradient(p);
        let n = g.norm();
        (n > 1e-12).then(|| g / n)
    }

    pub fn is_inside(&self, p: &Vec3) -> bool {
        self.value(p) < 0.0
    }

    /// Rebuild the signed distance from the current zero set.
    pub fn redistance(&self) -> Result<Self> {
        let mut out = self.clone();
        out.redistance_in_place()?;
        Ok(out)
    }

    pub fn redistance_in_place(&mut self) -> Result<()> {
        let before = self.volume();
        let (values, _) = redistance::redistance_values(&self.grid, &self.values, self.band)?;
        self.values = values;
        // Projection onto the smooth interpolant drifts the trilinear zero set
        // by a small fraction of h near kinks; undo the net volume change with
        // a constant shift so repeated redistancing does not grow the shape.
        let area = self.surface_integral(&vec![1.0; self.values.len()]);
        if area > 0.0 {
            let shift = (self.volume() - before) / area;
            if shift.abs() < 0.1 * self.h() {
                for v in self.values.iter_mut() {
                    if v.abs() < self.band {
                        *v = (*v + shift).clamp(-self.band, self.band);
                    }
                }
            }
        }
        Ok(())
    }

    /// Closest point on the zero set for every node (NaN where unreached).
    pub fn closest_points(&self) -> Result<Vec<Vec3>> {
        Ok(redistance::redistance_values(&self.grid, &self.values, self.band)?.1)
    }

    /// Same shape with a different band half-width.
    pub fn with_band(&self, band: f64) -> Result<Self> {
        check_band(&self.grid, band)?;
        let mut out = Self { grid: self.grid, values: self.values.clone(), band };
        out.redistance_in_place()?;
        Ok(out)
    }

    /// Cast a ray from `start` along unit `dir` and return the first point
    /// where the field crosses `iso` from above.
    ///
    /// Sphere tracing with step `max(phi - iso, h/4)`; a sign change between
    /// consecutive samples is refined by bisection. Starting points already
    /// more than `h/4` below the iso-value count as an immediate hit.
    pub fn raycast(&self, start: &Vec3, dir: &Vec3, iso: f64) -> Option<Vec3> {
        let h = self.h();
        let slack = 0.25 * h;
        let (t_enter, t_exit) = self.grid.clip_ray(start, dir)?;
        if t_exit < 0.0 {
            return None;
        }
        let at = |t: f64| start + dir * t;
        let eval = |t: f64| self.grid.interpolate(&self.values, &at(t)) - iso;
        let mut t = t_enter.max(0.0);
        let mut f = eval(t);
        if f < -slack {
            return Some(at(t));
        }
        let mut prev: Option<(f64, f64)> = None;
        loop {
            if let Some((tp, fp)) = prev {
                if fp > 0.0 && f <= 0.0 {
                    let (mut lo, mut hi) = (tp, t);
                    for _ in 0..40 {
                        let mid = 0.5 * (lo + hi);
                        if eval(mid) > 0.0 {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    return Some(at(hi));
                }
            }
            if f < -slack {
                return Some(at(t));
            }
            let step = f.max(0.25 * h);
            prev = Some((t, f));
            t += step;
            if t > t_exit {
                // last chance: the exit point itself
                let fe = eval(t_exit);
                if f > 0.0 && fe <= 0.0 {
                    t = t_exit;
                    f = fe;
                    continue;
                }
                return None;
            }
            f = eval(t);
        }
    }

    /// Move the zero set outward by `o` (inward for negative `o`) and recentre
    /// the band on it.
    pub fn offset(&self, o: f64) -> Result<Self> {
        if !(o.abs() < self.band) {
            return Err(Error::BandTooThin { offset: o, band: self.band });
        }
        if o == 0.0 {
            return Ok(self.clone());
        }
        let values = self.values.iter().map(|v| v - o).collect();
        let mut out = Self { grid: self.grid, values, band: self.band };
        out.redistance_in_place()?;
        Ok(out)
    }

    /// Integrate `phi_t + v |grad phi| = 0` for pseudo-time `t` with first-order
    /// Godunov upwinding, then redistance. Positive speed grows the shape.
    pub fn advect(&self, speed: &[f64], t: f64) -> Result<Self> {
        if speed.len() != self.values.len() {
            return Err(Error::InvalidArgument("speed field does not match the grid".into()));
        }
        if let Some(bad) = speed.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteSpeed(bad));
        }
        if !(t >= 0.0) {
            return Err(Error::InvalidArgument(format!("advection time must be non-negative, got {t}")));
        }
        let vmax = speed.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if vmax == 0.0 || t == 0.0 {
            return Ok(self.clone());
        }
        let h = self.h();
        let steps = ((t * vmax) / (0.5 * h)).ceil().max(1.0) as usize;
        let dt = t / steps as f64;
        let mut cur = self.values.clone();
        let mut next = cur.clone();
        for _ in 0..steps {
            godunov_step(&self.grid, &cur, speed, dt, &mut next);
            for v in next.iter_mut() {
                *v = v.clamp(-self.band, self.band);
            }
            std::mem::swap(&mut cur, &mut next);
        }
        let mut out = Self { grid: self.grid, values: cur, band: self.band };
        out.redistance_in_place()?;
        Ok(out)
    }

    /// Morphological closing: dilate by `o`, then erode by `o`. Fills concave
    /// features and cavities narrower than `o`.
    pub fn close(&self, o: f64) -> Result<Self> {
        if !(o > 0.0) {
            return Err(Error::InvalidArgument(format!("closing radius must be positive, got {o}")));
        }
        self.offset(o)?.offset(-o)
    }

    fn combine(&self, other: &LevelSet, op: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if !self.grid.same_as(&other.grid) {
            return Err(Error::GridMismatch);
        }
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| op(a, b)).collect();
        let mut out = Self { grid: self.grid, values, band: self.band };
        out.redistance_in_place()?;
        Ok(out)
    }

    pub fn union(&self, other: &LevelSet) -> Result<Self> {
        self.combine(other, f64::min)
    }

    pub fn intersect(&self, other: &LevelSet) -> Result<Self> {
        self.combine(other, f64::max)
    }

    pub fn subtract(&self, other: &LevelSet) -> Result<Self> {
        self.combine(other, |a, b| a.max(-b))
    }

    /// Occupied fraction of each grid cell in `[0, 1]`: a linear ramp of width
    /// `h/4` around the zero crossing, averaged over 4x4x4 sub-cell points of
    /// the trilinear interpolant.
    pub fn cell_fractions(&self) -> Vec<f64> {
        let g = &self.grid;
        let [cx, cy, cz] = g.cell_dims();
        let nx = g.dims[0];
        let nxy = nx * g.dims[1];
        let h = g.h();
        let ramp = 0.25 * h;
        let mut out = vec![0.0; g.cell_count()];
        for k in 0..cz {
            for j in 0..cy {
                for i in 0..cx {
                    let b = g.index(i, j, k);
                    let c = [
                        self.values[b],
                        self.values[b + 1],
                        self.values[b + nx],
                        self.values[b + nx + 1],
                        self.values[b + nxy],
                        self.values[b + nxy + 1],
                        self.values[b + nxy + nx],
                        self.values[b + nxy + nx + 1],
                    ];
                    let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = c.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let cell = g.cell_index(i, j, k);
                    out[cell] = if lo >= 0.5 * ramp {
                        0.0
                    } else if hi <= -0.5 * ramp {
                        1.0
                    } else {
                        subcell_fraction(&c, ramp)
                    };
                }
            }
        }
        out
    }

    /// Enclosed volume (mm^3).
    pub fn volume(&self) -> f64 {
        let h = self.h();
        self.cell_fractions().iter().sum::<f64>() * h * h * h
    }

    /// Symmetrize across `planes`, add `keep`, clip to `within`, then
    /// redistance once.
    pub fn confine(&self, keep: Option<&LevelSet>, within: Option<&LevelSet>, planes: &[SymmetryPlane]) -> Result<Self> {
        let mut out = Self { grid: self.grid, values: self.values.clone(), band: self.band };
        for plane in planes {
            out.values = out.mirrored_values(plane)?;
        }
        for (other, op) in [(keep, f64::min as fn(f64, f64) -> f64), (within, f64::max)] {
            if let Some(o) = other {
                if !o.grid.same_as(&self.grid) {
                    return Err(Error::GridMismatch);
                }
                for (v, &w) in out.values.iter_mut().zip(&o.values) {
                    *v = op(*v, w);
                }
            }
        }
        out.redistance_in_place()?;
        Ok(out)
    }

    /// `∮ f dA` for a node field `f`, using a cosine-smoothed delta of
    /// half-width `1.5 h` and trapezoid weights at the grid faces.
    pub fn surface_integral(&self, f: &[f64]) -> f64 {
        let h = self.h();
        let eps = 1.5 * h;
        let g = &self.grid;
        let mut sum = 0.0;
        for (idx, &phi) in self.values.iter().enumerate() {
            if phi.abs() >= eps {
                continue;
            }
            let delta = (1.0 + (std::f64::consts::PI * phi / eps).cos()) / (2.0 * eps);
            let c = g.coords(idx);
            let w: f64 = (0..3).map(|a| if c[a] == 0 || c[a] + 1 == g.dims[a] { 0.5 } else { 1.0 }).product();
            sum += w * delta * f[idx];
        }
        sum * h * h * h
    }

    /// Symmetrize across an axis-aligned plane through a node or mid-node
    /// plane: `phi <- min(phi, phi o reflection)`.
    pub fn mirror(&self, plane: &SymmetryPlane) -> Result<Self> {
        let values = self.mirrored_values(plane)?;
        let mut out = Self { grid: self.grid, values, band: self.band };
        out.redistance_in_place()?;
        Ok(out)
    }

    fn mirrored_values(&self, plane: &SymmetryPlane) -> Result<Vec<f64>> {
        let a = plane.axis;
        if a > 2 {
            return Err(Error::InvalidArgument(format!("mirror axis must be 0..=2, got {a}")));
        }
        let s = 2.0 * (plane.coord - self.grid.origin[a]) / self.h();
        let si = s.round();
        if (s - si).abs() > 1e-6 {
            return Err(Error::InvalidArgument(format!(
                "mirror plane {} on axis {a} does not pass through a grid or mid-grid plane",
                plane.coord
            )));
        }
        let si = si as i64;
        let mut values = self.values.clone();
        for idx in 0..values.len() {
            let mut c = self.grid.coords(idx);
            let r = si - c[a] as i64;
            if r < 0 || r >= self.grid.dims[a] as i64 {
                continue;
            }
            c[a] = r as usize;
            let other = self.values[self.grid.index(c[0], c[1], c[2])];
            values[idx] = values[idx].min(other);
        }
        Ok(values)
    }

    /// Maximum deviation of `| |grad phi| - 1 |` over band nodes whose
    /// central-difference stencil stays inside the band.
    pub fn max_gradient_defect(&self) -> f64 {
        let g = &self.grid;
        let mut worst = 0.0f64;
        for idx in 0..g.node_count() {
            let [i, j, k] = g.coords(idx);
            if g.is_boundary_node(i, j, k) || !self.in_band(idx) {
                continue;
            }
            if g.face_neighbors(idx).any(|nb| !self.in_band(nb)) {
                continue;
            }
            let n = g.node_gradient(&self.values, i, j, k).norm();
            worst = worst.max((n - 1.0).abs());
        }
        worst
    }
}

fn check_band(grid: &GridSpec, band: f64) -> Result<()> {
    if !(band >= grid.spacing) || !band.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "band half-width {band} must be at least one grid spacing ({})",
            grid.spacing
        )));
    }
    Ok(())
}

fn subcell_fraction(c: &[f64; 8], ramp: f64) -> f64 {
    const N: usize = 4;
    let mut acc = 0.0;
    for sz in 0..N {
        let fz = (sz as f64 + 0.5) / N as f64;
        for sy in 0..N {
            let fy = (sy as f64 + 0.5) / N as f64;
            let c0 = (c[0] * (1.0 - fy) + c[2] * fy, c[1] * (1.0 - fy) + c[3] * fy);
            let c1 = (c[4] * (1.0 - fy) + c[6] * fy, c[5] * (1.0 - fy) + c[7] * fy);
            let a = c0.0 * (1.0 - fz) + c1.0 * fz;
            let b = c0.1 * (1.0 - fz) + c1.1 * fz;
            for sx in 0..N {
                let fx = (sx as f64 + 0.5) / N as f64;
                let v = a + (b - a) * fx;
                acc += (0.5 - v / ramp).clamp(0.0, 1.0);
            }
        }
    }
    acc / (N * N * N) as f64
}

fn godunov_step(grid: &GridSpec, phi: &[f64], speed: &[f64], dt: f64, out: &mut [f64]) {
    let h = grid.h();
    let [nx, ny, nz] = grid.dims;
    let strides = [1usize, nx, nx * ny];
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let idx = grid.index(i, j, k);
                let v = speed[idx];
                if v == 0.0 {
                    out[idx] = phi[idx];
                    continue;
                }
                let c = [i, j, k];
                let mut acc = 0.0;
                for a in 0..3 {
                    let s = strides[a];
                    let dm = if c[a] > 0 { (phi[idx] - phi[idx - s]) / h } else { 0.0 };
                    let dp = if c[a] + 1 < grid.dims[a] { (phi[idx + s] - phi[idx]) / h } else { 0.0 };
                    if v > 0.0 {
                        acc += dm.max(0.0).powi(2) + dp.min(0.0).powi(2);
                    } else {
                        acc += dm.min(0.0).powi(2) + dp.max(0.0).powi(2);
                    }
                }
                out[idx] = phi[idx] - dt * v * acc.sqrt();
            }
        }
    }
}
