//! Steady-state temperature between the offset part `Omega+` and the grid
//! box, used to steer the 5-axis heat search.
//!
//! Nodes inside `Omega+` and free nodes touching it (6-neighbourhood) are held
//! at `T = 0`, the outer faces of the grid at `T = 1`. The remaining nodes are
//! relaxed with explicit Euler steps of the 7-point heat equation.

use crate::error::{Error, Result};
use crate::grid::{GridSpec, Vec3};
use crate::levelset::LevelSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatOptions {
    /// Stop once the largest per-node change in one step drops below this.
    /// Explicit steps creep, so the remaining error is far larger than this;
    /// 1e-5 leaves about 1% on a 97^3 grid.
    pub tolerance: f64,
    /// Step cap as a multiple of `max(dims)^2`.
    pub step_factor: usize,
}

impl Default for HeatOptions {
    fn default() -> Self {
        Self { tolerance: 1e-6, step_factor: 20 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    /// Inside `Omega+` or touching it: `T = 0`.
    Cold,
    /// Outer face of the grid: `T = 1`.
    Hot,
    Free,
}

#[derive(Debug, Clone)]
pub struct TemperatureField {
    grid: GridSpec,
    values: Vec<f64>,
    kinds: Vec<NodeKind>,
    /// Signed distance to `Omega+`, kept for the domain check in `grad_t`.
    phi_plus: Vec<f64>,
    gradients: Vec<Vec3>,
    steps: usize,
}

/// Solve with default options and the distance-ratio initial guess.
pub fn solve_heat(omega_plus: &LevelSet) -> Result<TemperatureField> {
    solve_heat_with(omega_plus, HeatOptions::default(), None)
}

/// Solve the heat problem. `warm` may supply a previous field on the same
/// grid as the starting point; Dirichlet values are reimposed on it.
pub fn solve_heat_with(omega_plus: &LevelSet, opts: HeatOptions, warm: Option<&[f64]>) -> Result<TemperatureField> {
    let grid = *omega_plus.grid();
    let phi = omega_plus.values();
    let n = grid.node_count();
    let mut kinds = vec![NodeKind::Free; n];
    for idx in 0..n {
        let [i, j, k] = grid.coords(idx);
        let boundary = grid.is_boundary_node(i, j, k);
        if phi[idx] < 0.0 {
            if boundary {
                return Err(Error::Heat("the offset part touches the grid boundary".into()));
            }
            kinds[idx] = NodeKind::Cold;
        } else if boundary {
            kinds[idx] = NodeKind::Hot;
        }
    }
    for idx in 0..n {
        if kinds[idx] == NodeKind::Free && grid.face_neighbors(idx).any(|nb| phi[nb] < 0.0) {
            kinds[idx] = NodeKind::Cold;
        }
    }
    let free: Vec<usize> = (0..n).filter(|&i| kinds[i] == NodeKind::Free).collect();
    if free.is_empty() {
        return Err(Error::Heat("no free nodes between the part and the grid boundary".into()));
    }

    let mut t: Vec<f64> = match warm {
        Some(w) if w.len() == n => w.to_vec(),
        _ => initial_guess(&grid, phi),
    };
    for idx in 0..n {
        match kinds[idx] {
            NodeKind::Cold => t[idx] = 0.0,
            NodeKind::Hot => t[idx] = 1.0,
            NodeKind::Free => t[idx] = t[idx].clamp(0.0, 1.0),
        }
    }

    // dt = h^2 / 8: T' = T + (sum_nb - 6 T) / 8
    let nx = grid.dims[0];
    let nxy = nx * grid.dims[1];
    let max_steps = opts.step_factor * grid.dims.iter().max().unwrap().pow(2);
    let mut next = t.clone();
    let mut steps = 0;
    while steps < max_steps {
        let mut change = 0.0f64;
        for &idx in &free {
            let sum = t[idx - 1] + t[idx + 1] + t[idx - nx] + t[idx + nx] + t[idx - nxy] + t[idx + nxy];
            let v = 0.25 * t[idx] + 0.125 * sum;
            change = change.max((v - t[idx]).abs());
            next[idx] = v;
        }
        std::mem::swap(&mut t, &mut next);
        steps += 1;
        if change < opts.tolerance {
            break;
        }
    }
    log::debug!("heat solve: {steps} steps over {} free nodes", free.len());

    let gradients = grid.gradient_field(&t);
    Ok(TemperatureField { grid, values: t, kinds, phi_plus: phi.to_vec(), gradients, steps })
}

/// `d_part / (d_part + d_box)`, a cheap field already close to harmonic near
/// both boundaries.
fn initial_guess(grid: &GridSpec, phi: &[f64]) -> Vec<f64> {
    let h = grid.h();
    (0..grid.node_count())
        .map(|idx| {
            let [i, j, k] = grid.coords(idx);
            let d_box = [i, j, k, grid.dims[0] - 1 - i, grid.dims[1] - 1 - j, grid.dims[2] - 1 - k]
                .into_iter()
                .min()
                .unwrap() as f64
                * h;
            let d_part = phi[idx].max(0.0);
            if d_part + d_box <= 0.0 {
                0.0
            } else {
                d_part / (d_part + d_box)
            }
        })
        .collect()
}

impl TemperatureField {
    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn kind(&self, idx: usize) -> NodeKind {
        self.kinds[idx]
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn value(&self, y: &Vec3) -> f64 {
        self.grid.interpolate(&self.values, y)
    }

    /// Trilinear interpolation of central-difference node gradients.
    pub fn grad_t(&self, y: &Vec3) -> Result<Vec3> {
        if !self.grid.contains(y) {
            return Err(Error::Heat(format!("point {:?} is outside the grid", y.as_slice())));
        }
        if self.grid.interpolate(&self.phi_plus, y) < -0.5 * self.grid.h() {
            return Err(Error::Heat(format!("point {:?} is inside the offset part", y.as_slice())));
        }
        Ok(self.grid.interpolate_vec(&self.gradients, y))
    }

    /// Largest `|laplacian T|` over free nodes.
    pub fn max_residual(&self) -> f64 {
        let nx = self.grid.dims[0];
        let nxy = nx * self.grid.dims[1];
        let h2 = self.grid.h() * self.grid.h();
        let t = &self.values;
        (0..t.len())
            .filter(|&i| self.kinds[i] == NodeKind::Free)
            .map(|i| ((t[i - 1] + t[i + 1] + t[i - nx] + t[i + nx] + t[i - nxy] + t[i + nxy] - 6.0 * t[i]) / h2).abs())
            .fold(0.0, f64::max)
    }
}
