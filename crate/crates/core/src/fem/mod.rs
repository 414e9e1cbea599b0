//! Linear elastostatics on the active cells of the grid.
//!
//! Every grid cell with a positive occupied fraction is a trilinear hexahedral
//! element whose stiffness is scaled by `rho = max(fraction, RHO_MIN)`.
//! Units are mm, N and MPa, so displacements come out in mm and compliance
//! in N mm.

mod element;
mod multigrid;

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, Vec3};
use crate::levelset::{LevelSet, SurfaceSample};
use element::{ElemMatrix, NDOF};
use multigrid::Hierarchy;

pub use element::unit_stiffness;

/// Lower clamp on the stiffness fraction of cut cells.
pub const RHO_MIN: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    /// Young's modulus in Pa.
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
}

impl Material {
    pub fn new(youngs_modulus: f64, poisson_ratio: f64) -> Result<Self> {
        let m = Self { youngs_modulus, poisson_ratio };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.youngs_modulus > 0.0) || !(self.poisson_ratio > -1.0 && self.poisson_ratio < 0.5) {
            return Err(Error::InvalidArgument(format!(
                "material needs E > 0 and -1 < nu < 0.5, got E = {}, nu = {}",
                self.youngs_modulus, self.poisson_ratio
            )));
        }
        Ok(())
    }

    /// Young's modulus in MPa (N/mm^2).
    pub fn modulus_mpa(&self) -> f64 {
        self.youngs_modulus * 1e-6
    }
}

/// Axis-aligned rectangle on the grid plane nearest to `coord` along `axis`.
/// `lo`/`hi` bound the two remaining axes in increasing axis order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Patch {
    pub axis: usize,
    pub coord: f64,
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl Patch {
    pub fn new(axis: usize, coord: f64, lo: [f64; 2], hi: [f64; 2]) -> Result<Self> {
        let p = Self { axis, coord, lo, hi };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.axis > 2 || !(self.lo[0] <= self.hi[0] && self.lo[1] <= self.hi[1]) {
            return Err(Error::InvalidArgument(format!("bad patch {self:?}")));
        }
        Ok(())
    }

    /// The two in-plane axes.
    pub fn tangents(&self) -> [usize; 2] {
        match self.axis {
            0 => [1, 2],
            1 => [0, 2],
            _ => [0, 1],
        }
    }

    pub fn area(&self) -> f64 {
        (self.hi[0] - self.lo[0]) * (self.hi[1] - self.lo[1])
    }

    fn plane_index(&self, grid: &GridSpec) -> Option<usize> {
        let s = ((self.coord - grid.origin[self.axis]) / grid.h()).round();
        (s >= 0.0 && (s as usize) < grid.dims[self.axis]).then_some(s as usize)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Traction {
    pub patch: Patch,
    /// Force per unit area, N/mm^2.
    pub traction: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LoadCase {
    pub tractions: Vec<Traction>,
    pub fixed: Vec<Patch>,
}

/// Active cells and their stiffness fractions.
#[derive(Debug, Clone, PartialEq)]
pub struct Discretization {
    grid: GridSpec,
    rho: Vec<f64>,
}

impl Discretization {
    pub fn discretize(ls: &LevelSet) -> Result<Self> {
        let rho = ls
            .cell_fractions()
            .into_iter()
            .map(|f| if f > 0.0 { f.max(RHO_MIN) } else { 0.0 })
            .collect();
        Self::from_rho(*ls.grid(), rho)
    }

    pub fn from_rho(grid: GridSpec, rho: Vec<f64>) -> Result<Self> {
        if rho.len() != grid.cell_count() {
            return Err(Error::InvalidArgument(format!(
                "{} stiffness fractions for {} cells",
                rho.len(),
                grid.cell_count()
            )));
        }
        if rho.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::InvalidArgument("stiffness fractions must lie in [0, 1]".into()));
        }
        if rho.iter().all(|&r| r == 0.0) {
            return Err(Error::EmptyShape);
        }
        Ok(Self { grid, rho })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn active_cells(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.rho.len()).filter(|&c| self.rho[c] > 0.0)
    }

    /// Number of structural nodes a patch snaps onto.
    pub fn patch_node_count(&self, patch: &Patch) -> usize {
        self.patch_nodes(patch, &self.active_nodes()).len()
    }

    fn cell_nodes(&self, cell: usize) -> [usize; 8] {
        let [i, j, k] = self.grid.cell_coords(cell);
        let b = self.grid.index(i, j, k);
        let nx = self.grid.dims[0];
        let nxy = nx * self.grid.dims[1];
        [b, b + 1, b + nx, b + nx + 1, b + nxy, b + nxy + 1, b + nxy + nx, b + nxy + nx + 1]
    }

    fn active_nodes(&self) -> Vec<bool> {
        let mut on = vec![false; self.grid.node_count()];
        for c in self.active_cells() {
            for n in self.cell_nodes(c) {
                on[n] = true;
            }
        }
        on
    }

    /// Active nodes lying on a patch.
    fn patch_nodes(&self, patch: &Patch, active: &[bool]) -> Vec<usize> {
        let g = &self.grid;
        let Some(s) = patch.plane_index(g) else { return Vec::new() };
        let [t0, t1] = patch.tangents();
        let tol = 1e-6 * g.h();
        let mut out = Vec::new();
        for b in 0..g.dims[t1] {
            for a in 0..g.dims[t0] {
                let mut c = [0; 3];
                c[patch.axis] = s;
                c[t0] = a;
                c[t1] = b;
                let idx = g.index(c[0], c[1], c[2]);
                let p = g.node_position(idx);
                let inside = p[t0] >= patch.lo[0] - tol
                    && p[t0] <= patch.hi[0] + tol
                    && p[t1] >= patch.lo[1] - tol
                    && p[t1] <= patch.hi[1] + tol;
                if inside && active[idx] {
                    out.push(idx);
                }
            }
        }
        out
    }

    /// Consistent nodal forces for a case: each face on the patch plane that
    /// borders an active cell receives `t * area(face ∩ patch)`, split equally
    /// over its four nodes.
    fn load_vector(&self, case: &LoadCase) -> Vec<f64> {
        let g = &self.grid;
        let h = g.h();
        let mut f = vec![0.0; 3 * g.node_count()];
        let cd = g.cell_dims();
        for tr in &case.tractions {
            let patch = &tr.patch;
            let Some(s) = patch.plane_index(g) else { continue };
            let [t0, t1] = patch.tangents();
            for b in 0..cd[t1] {
                for a in 0..cd[t0] {
                    let x0 = g.origin[t0] + a as f64 * h;
                    let y0 = g.origin[t1] + b as f64 * h;
                    let wx = (x0 + h).min(patch.hi[0]) - x0.max(patch.lo[0]);
                    let wy = (y0 + h).min(patch.hi[1]) - y0.max(patch.lo[1]);
                    if wx <= 0.0 || wy <= 0.0 {
                        continue;
                    }
                    let mut touches = false;
                    for side in [s.wrapping_sub(1), s] {
                        if side >= cd[patch.axis] {
                            continue;
                        }
                        let mut c = [0; 3];
                        c[patch.axis] = side;
                        c[t0] = a;
                        c[t1] = b;
                        touches |= self.rho[g.cell_index(c[0], c[1], c[2])] > 0.0;
                    }
                    if !touches {
                        continue;
                    }
                    let share = 0.25 * wx * wy;
                    for (da, db) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                        let mut c = [0; 3];
                        c[patch.axis] = s;
                        c[t0] = a + da;
                        c[t1] = b + db;
                        let n = g.index(c[0], c[1], c[2]);
                        for d in 0..3 {
                            f[3 * n + d] += share * tr.traction[d];
                        }
                    }
                }
            }
        }
        f
    }

    /// Cells reachable through shared faces from a cell touching a fixed node.
    fn anchored_cells(&self, fixed: &[bool]) -> Vec<bool> {
        let g = &self.grid;
        let cd = g.cell_dims();
        let mut seen = vec![false; self.rho.len()];
        let mut queue = VecDeque::new();
        for c in self.active_cells() {
            if self.cell_nodes(c).iter().any(|&n| fixed[n]) {
                seen[c] = true;
                queue.push_back(c);
            }
        }
        while let Some(c) = queue.pop_front() {
            let [i, j, k] = g.cell_coords(c);
            let ijk = [i, j, k];
            for axis in 0..3 {
                for up in [false, true] {
                    let mut n = ijk;
                    if up {
                        if n[axis] + 1 >= cd[axis] {
                            continue;
                        }
                        n[axis] += 1;
                    } else {
                        if n[axis] == 0 {
                            continue;
                        }
                        n[axis] -= 1;
                    }
                    let nb = g.cell_index(n[0], n[1], n[2]);
                    if self.rho[nb] > 0.0 && !seen[nb] {
                        seen[nb] = true;
                        queue.push_back(nb);
                    }
                }
            }
        }
        seen
    }

    fn floating_error(&self, anchored: &[bool]) -> Error {
        let g = &self.grid;
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        let mut cells = 0;
        for c in self.active_cells().filter(|&c| !anchored[c]) {
            cells += 1;
            let p = g.cell_center(c);
            for d in 0..3 {
                min[d] = min[d].min(p[d] - 0.5 * g.h());
                max[d] = max[d].max(p[d] + 0.5 * g.h());
            }
        }
        Error::FloatingComponent { cells, min, max }
    }

    /// Unconstrained stiffness product `K u` over all active cells.
    pub fn apply_stiffness(&self, material: &Material, u: &[f64]) -> Vec<f64> {
        let k = scaled_stiffness(material, self.grid.h());
        let mut y = vec![0.0; u.len()];
        for c in self.active_cells() {
            let nodes = self.cell_nodes(c);
            let ue = gather(&nodes, u);
            let mut ye = [0.0; NDOF];
            element::mat_vec_add(&k, self.rho[c], &ue, &mut ye);
            for (a, &n) in nodes.iter().enumerate() {
                for d in 0..3 {
                    y[3 * n + d] += ye[3 * a + d];
                }
            }
        }
        y
    }
}

fn scaled_stiffness(material: &Material, h: f64) -> ElemMatrix {
    let mut k = unit_stiffness(material.poisson_ratio);
    let s = material.modulus_mpa() * h;
    k.iter_mut().for_each(|v| *v *= s);
    k
}

fn gather(nodes: &[usize; 8], u: &[f64]) -> [f64; NDOF] {
    let mut ue = [0.0; NDOF];
    for (a, &n) in nodes.iter().enumerate() {
        ue[3 * a..3 * a + 3].copy_from_slice(&u[3 * n..3 * n + 3]);
    }
    ue
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    pub rel_tol: f64,
    pub max_iters: usize,
    /// Remove unanchored components (with a warning) instead of failing.
    pub drop_floating: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self { rel_tol: 1e-6, max_iters: 1000, drop_floating: false }
    }
}

/// Solved displacements, loads and energy densities for every load case.
#[derive(Debug, Clone)]
pub struct ElasticState {
    disc: Discretization,
    material: Material,
    loads: Vec<Vec<f64>>,
    displacements: Vec<Vec<f64>>,
    compliance: Vec<f64>,
    energy_density: Vec<Vec<f64>>,
    iterations: Vec<usize>,
}

/// Solve every load case. `warm` supplies initial displacement guesses from
/// an earlier state on the same grid.
pub fn solve(
    disc: &Discretization,
    material: &Material,
    cases: &[LoadCase],
    opts: &SolveOptions,
    warm: Option<&ElasticState>,
) -> Result<ElasticState> {
    material.validate()?;
    if cases.is_empty() {
        return Err(Error::InvalidArgument("no load cases".into()));
    }
    let mut disc = disc.clone();
    let g = disc.grid;
    let nn = g.node_count();

    // fixed node masks, floating components
    let mut fixed_masks = Vec::with_capacity(cases.len());
    for pass in 0..2 {
        fixed_masks.clear();
        let active = disc.active_nodes();
        let mut anchored_all = vec![true; disc.rho.len()];
        for (ci, case) in cases.iter().enumerate() {
            let mut fixed = vec![false; nn];
            for p in &case.fixed {
                for n in disc.patch_nodes(p, &active) {
                    fixed[n] = true;
                }
            }
            if !fixed.iter().any(|&f| f) {
                return Err(Error::NoFixedNodes(ci));
            }
            let anchored = disc.anchored_cells(&fixed);
            for (a, b) in anchored_all.iter_mut().zip(&anchored) {
                *a &= *b;
            }
            fixed_masks.push(fixed);
        }
        let floating = disc.active_cells().any(|c| !anchored_all[c]);
        if !floating {
            break;
        }
        if !opts.drop_floating || pass == 1 {
            return Err(disc.floating_error(&anchored_all));
        }
        let err = disc.floating_error(&anchored_all);
        log::warn!("dropping unanchored material: {err}");
        for c in 0..disc.rho.len() {
            if !anchored_all[c] {
                disc.rho[c] = 0.0;
            }
        }
        if disc.rho.iter().all(|&r| r == 0.0) {
            return Err(Error::EmptyShape);
        }
    }

    let k = scaled_stiffness(material, g.h());
    let active = disc.active_nodes();
    let free_masks: Vec<Vec<bool>> = fixed_masks
        .iter()
        .map(|fixed| (0..3 * nn).map(|d| active[d / 3] && !fixed[d / 3]).collect())
        .collect();

    // one hierarchy per distinct constraint set
    let mut owner = vec![usize::MAX; cases.len()];
    let mut hierarchies = Vec::new();
    for ci in 0..cases.len() {
        if let Some(prev) = (0..ci).find(|&p| free_masks[p] == free_masks[ci]) {
            owner[ci] = owner[prev];
            continue;
        }
        owner[ci] = hierarchies.len();
        hierarchies.push(Hierarchy::new(g.cell_dims(), disc.rho.clone(), k, free_masks[ci].clone())?);
    }

    let warm = warm.filter(|w| w.disc.grid.same_as(&g) && w.displacements.len() == cases.len());
    let results: Vec<Result<(Vec<f64>, Vec<f64>, usize)>> = cases
        .par_iter()
        .enumerate()
        .map(|(ci, case)| {
            let hier = &hierarchies[owner[ci]];
            let free = hier.free();
            let mut f = disc.load_vector(case);
            for (v, &fr) in f.iter_mut().zip(free) {
                if !fr {
                    *v = 0.0;
                }
            }
            let mut u = match warm {
                Some(w) => w.displacements[ci].clone(),
                None => vec![0.0; 3 * nn],
            };
            let iters = hier.pcg(&f, &mut u, opts.rel_tol, opts.max_iters)?;
            Ok((f, u, iters))
        })
        .collect();

    let mut state = ElasticState {
        disc,
        material: *material,
        loads: Vec::new(),
        displacements: Vec::new(),
        compliance: Vec::new(),
        energy_density: Vec::new(),
        iterations: Vec::new(),
    };
    for r in results {
        let (f, u, iters) = r?;
        state.compliance.push(f.iter().zip(&u).map(|(a, b)| a * b).sum());
        state.energy_density.push(state.cell_energy_density(&k, &u));
        state.loads.push(f);
        state.displacements.push(u);
        state.iterations.push(iters);
    }
    Ok(state)
}

impl ElasticState {
    fn cell_energy_density(&self, k: &ElemMatrix, u: &[f64]) -> Vec<f64> {
        let h3 = self.disc.grid.h().powi(3);
        (0..self.disc.rho.len())
            .map(|c| {
                if self.disc.rho[c] == 0.0 {
                    return 0.0;
                }
                let ue = gather(&self.disc.cell_nodes(c), u);
                let mut ke = [0.0; NDOF];
                element::mat_vec_add(k, 1.0, &ue, &mut ke);
                0.5 * ue.iter().zip(&ke).map(|(a, b)| a * b).sum::<f64>() / h3
            })
            .collect()
    }

    pub fn discretization(&self) -> &Discretization {
        &self.disc
    }

    pub fn material(&self) -> &Material {
        &self.material
    }

    pub fn case_count(&self) -> usize {
        self.compliance.len()
    }

    /// `f^T u` per load case (N mm).
    pub fn compliance(&self) -> &[f64] {
        &self.compliance
    }

    /// Average compliance over load cases.
    pub fn mean_compliance(&self) -> f64 {
        self.compliance.iter().sum::<f64>() / self.compliance.len() as f64
    }

    /// Nodal displacements (3 per grid node, zero off the structure).
    pub fn displacement(&self, case: usize) -> &[f64] {
        &self.displacements[case]
    }

    /// Nodal forces applied to the free dofs.
    pub fn load(&self, case: usize) -> &[f64] {
        &self.loads[case]
    }

    pub fn iterations(&self) -> &[usize] {
        &self.iterations
    }

    /// Strain energy density of the solid material in each cell,
    /// `1/2 sigma:e` (N/mm^2), zero on inactive cells.
    pub fn cell_energy(&self, case: usize) -> &[f64] {
        &self.energy_density[case]
    }

    /// Total stored energy of a case, `1/2 u^T K u`.
    pub fn strain_energy(&self, case: usize) -> f64 {
        let h3 = self.disc.grid.h().powi(3);
        self.energy_density[case]
            .iter()
            .zip(&self.disc.rho)
            .map(|(w, r)| w * r * h3)
            .sum()
    }

    /// Cell used for a boundary point: the containing cell when active,
    /// otherwise the active cell with the nearest centre.
    pub fn lookup_cell(&self, p: &Vec3) -> usize {
        let g = &self.disc.grid;
        let cd = g.cell_dims();
        let q = g.to_grid(p);
        let c: [usize; 3] = std::array::from_fn(|d| (q[d].floor().max(0.0) as usize).min(cd[d] - 1));
        let home = g.cell_index(c[0], c[1], c[2]);
        if self.disc.rho[home] > 0.0 {
            return home;
        }
        let mut best = (f64::INFINITY, usize::MAX);
        let max_r = cd.iter().copied().max().unwrap_or(1);
        for r in 1..=max_r {
            for k in c[2].saturating_sub(r)..=(c[2] + r).min(cd[2] - 1) {
                for j in c[1].saturating_sub(r)..=(c[1] + r).min(cd[1] - 1) {
                    for i in c[0].saturating_sub(r)..=(c[0] + r).min(cd[0] - 1) {
                        let ring = [i.abs_diff(c[0]), j.abs_diff(c[1]), k.abs_diff(c[2])];
                        if ring.into_iter().max() != Some(r) {
                            continue;
                        }
                        let cell = g.cell_index(i, j, k);
                        if self.disc.rho[cell] == 0.0 {
                            continue;
                        }
                        let d = (g.cell_center(cell) - p).norm();
                        if d < best.0 {
                            best = (d, cell);
                        }
                    }
                }
            }
            // anything in a further ring is at least (r + 0.5) h - h/2 away
            if best.1 != usize::MAX && best.0 <= r as f64 * g.h() {
                break;
            }
        }
        best.1
    }

    /// Strain energy density of case `case` at `p`, from the strain of the
    /// lookup cell evaluated at `p` (clamped into that cell).
    pub fn energy_density_at(&self, case: usize, p: &Vec3) -> f64 {
        let cell = self.lookup_cell(p);
        let g = &self.disc.grid;
        let h = g.h();
        let lo = g.cell_center(cell) - Vec3::repeat(0.5 * h);
        let xi: [f64; 3] = std::array::from_fn(|d| ((p[d] - lo[d]) / h).clamp(0.0, 1.0));
        let ue = gather(&self.disc.cell_nodes(cell), &self.displacements[case]);
        let b = element::strain_matrix(xi, h);
        let strain: [f64; 6] = std::array::from_fn(|i| (0..NDOF).map(|j| b[i][j] * ue[j]).sum());
        let d = element::elasticity_matrix(self.material.modulus_mpa(), self.material.poisson_ratio);
        let mut w = 0.0;
        for i in 0..6 {
            for j in 0..6 {
                w += strain[i] * d[i][j] * strain[j];
            }
        }
        0.5 * w
    }

    /// Case-averaged strain energy density `w = 1/2 sigma:e` at each sample.
    pub fn strain_energy_density(&self, samples: &[SurfaceSample]) -> Vec<f64> {
        let n = self.case_count() as f64;
        samples
            .par_iter()
            .map(|s| (0..self.case_count()).map(|c| self.energy_density_at(c, &s.position)).sum::<f64>() / n)
            .collect()
    }

    /// Negative shape gradient of the mean compliance at each sample:
    /// moving the boundary outward by `dn` lowers the compliance by
    /// `sigma:e dn dA`, which is `2 w`.
    pub fn shape_gradient_compliance(&self, samples: &[SurfaceSample]) -> Vec<f64> {
        self.strain_energy_density(samples).into_iter().map(|w| 2.0 * w).collect()
    }
}
