//! Matrix-free conjugate gradients preconditioned by a geometric multigrid
//! V-cycle.
//!
//! Coarse operators are exact Galerkin products `P^T A P` built element by
//! element: a coarse cell's matrix is the sum of its eight children's matrices
//! pulled back through the trilinear prolongation. Constrained fine dofs are
//! masked out before coarsening, so coarse levels need no boundary logic;
//! coarse dofs with an empty support simply end up with a zero row.

use nalgebra::{DMatrix, DVector};

use super::element::{child_prolongation, galerkin, mat_vec_add, ElemMatrix, NDOF};
use crate::error::{Error, Result};

const JACOBI_WEIGHT: f64 = 0.6;
const SWEEPS: usize = 2;
const COARSE_DOFS: usize = 1500;

enum Store {
    /// Finest level: one shared matrix scaled per cell.
    Scaled { rho: Vec<f64>, k: Box<ElemMatrix> },
    /// Coarse levels: one explicit matrix per cell (`NDOF^2` stride).
    Explicit(Vec<f64>),
}

struct Level {
    cells: [usize; 3],
    nodes: [usize; 3],
    store: Store,
    active: Vec<usize>,
    free: Vec<bool>,
    inv_diag: Vec<f64>,
}

impl Level {
    fn ndof(&self) -> usize {
        3 * self.nodes[0] * self.nodes[1] * self.nodes[2]
    }

    #[inline]
    fn cell_nodes(&self, cell: usize) -> [usize; 8] {
        let [cx, cy, _] = self.cells;
        let (i, j, k) = (cell % cx, (cell / cx) % cy, cell / (cx * cy));
        let nx = self.nodes[0];
        let nxy = nx * self.nodes[1];
        let b = i + nx * (j + self.nodes[1] * k);
        [b, b + 1, b + nx, b + nx + 1, b + nxy, b + nxy + 1, b + nxy + nx, b + nxy + nx + 1]
    }

    #[inline]
    fn matrix(&self, cell: usize) -> (&[f64], f64) {
        match &self.store {
            Store::Scaled { rho, k } => (&k[..], rho[cell]),
            Store::Explicit(m) => (&m[cell * NDOF * NDOF..(cell + 1) * NDOF * NDOF], 1.0),
        }
    }

    /// `y = M A M x` with `M` the free-dof mask.
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        let mut ue = [0.0; NDOF];
        let mut ye = [0.0; NDOF];
        for &cell in &self.active {
            let nodes = self.cell_nodes(cell);
            for (a, &n) in nodes.iter().enumerate() {
                for c in 0..3 {
                    let d = 3 * n + c;
                    ue[3 * a + c] = if self.free[d] { x[d] } else { 0.0 };
                }
            }
            ye.iter_mut().for_each(|v| *v = 0.0);
            let (k, s) = self.matrix(cell);
            let k: &ElemMatrix = k.try_into().expect("element matrix");
            mat_vec_add(k, s, &ue, &mut ye);
            for (a, &n) in nodes.iter().enumerate() {
                for c in 0..3 {
                    y[3 * n + c] += ye[3 * a + c];
                }
            }
        }
        for (v, &f) in y.iter_mut().zip(&self.free) {
            if !f {
                *v = 0.0;
            }
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.ndof()];
        for &cell in &self.active {
            let nodes = self.cell_nodes(cell);
            let (k, s) = self.matrix(cell);
            for (a, &n) in nodes.iter().enumerate() {
                for c in 0..3 {
                    let r = 3 * a + c;
                    d[3 * n + c] += s * k[r * NDOF + r];
                }
            }
        }
        d
    }

    /// Element matrix with constrained dofs zeroed, scaled.
    fn masked_matrix(&self, cell: usize) -> ElemMatrix {
        let (k, s) = self.matrix(cell);
        let nodes = self.cell_nodes(cell);
        let mut keep = [true; NDOF];
        for (a, &n) in nodes.iter().enumerate() {
            for c in 0..3 {
                keep[3 * a + c] = self.free[3 * n + c];
            }
        }
        let mut out = [0.0; NDOF * NDOF];
        for r in 0..NDOF {
            if !keep[r] {
                continue;
            }
            for c in 0..NDOF {
                if keep[c] {
                    out[r * NDOF + c] = s * k[r * NDOF + c];
                }
            }
        }
        out
    }

    fn cell_fully_free(&self, cell: usize) -> bool {
        self.cell_nodes(cell).iter().all(|&n| (0..3).all(|c| self.free[3 * n + c]))
    }
}

fn finish_level(cells: [usize; 3], nodes: [usize; 3], store: Store, active: Vec<usize>, free_hint: Option<Vec<bool>>) -> Level {
    let ndof = 3 * nodes[0] * nodes[1] * nodes[2];
    let mut level = Level { cells, nodes, store, active, free: vec![true; ndof], inv_diag: Vec::new() };
    let d = level.diagonal();
    let dmax = d.iter().cloned().fold(0.0, f64::max);
    let free: Vec<bool> = match free_hint {
        Some(f) => f.iter().zip(&d).map(|(&f, &v)| f && v > 1e-12 * dmax).collect(),
        None => d.iter().map(|&v| v > 1e-12 * dmax).collect(),
    };
    level.inv_diag = d.iter().zip(&free).map(|(&v, &f)| if f { 1.0 / v } else { 0.0 }).collect();
    level.free = free;
    level
}

fn coarsen(fine: &Level, fine_children: Option<&[ElemMatrix; 8]>) -> Level {
    let cells = fine.cells.map(|c| c.div_ceil(2));
    let nodes = cells.map(|c| c + 1);
    let ncell = cells[0] * cells[1] * cells[2];
    let prolong: Vec<ElemMatrix> = (0..8).map(child_prolongation).collect();
    let mut has = vec![false; fine.cells[0] * fine.cells[1] * fine.cells[2]];
    for &c in &fine.active {
        has[c] = true;
    }
    let mut mats = vec![0.0; ncell * NDOF * NDOF];
    let mut active = Vec::new();
    for ck in 0..cells[2] {
        for cj in 0..cells[1] {
            for ci in 0..cells[0] {
                let coarse = ci + cells[0] * (cj + cells[1] * ck);
                let dst = &mut mats[coarse * NDOF * NDOF..(coarse + 1) * NDOF * NDOF];
                let mut any = false;
                for child in 0..8 {
                    let (fi, fj, fk) = (2 * ci + (child & 1), 2 * cj + ((child >> 1) & 1), 2 * ck + (child >> 2));
                    if fi >= fine.cells[0] || fj >= fine.cells[1] || fk >= fine.cells[2] {
                        continue;
                    }
                    let f = fi + fine.cells[0] * (fj + fine.cells[1] * fk);
                    if !has[f] {
                        continue;
                    }
                    any = true;
                    let g = match (fine_children, &fine.store) {
                        (Some(pre), Store::Scaled { rho, .. }) if fine.cell_fully_free(f) => {
                            let s = rho[f];
                            let mut g = pre[child];
                            g.iter_mut().for_each(|v| *v *= s);
                            g
                        }
                        _ => galerkin(&prolong[child], &fine.masked_matrix(f)),
                    };
                    for (d, v) in dst.iter_mut().zip(g.iter()) {
                        *d += v;
                    }
                }
                if any {
                    active.push(coarse);
                }
            }
        }
    }
    finish_level(cells, nodes, Store::Explicit(mats), active, None)
}

fn prolongate(coarse: &Level, fine: &Level, xc: &[f64], xf: &mut [f64]) {
    let [nx, ny, nz] = fine.nodes;
    let [cx, cy, _] = coarse.nodes;
    let axis = |i: usize| -> [(usize, f64); 2] {
        if i % 2 == 0 {
            [(i / 2, 1.0), (i / 2, 0.0)]
        } else {
            [(i / 2, 0.5), (i / 2 + 1, 0.5)]
        }
    };
    for k in 0..nz {
        let wk = axis(k);
        for j in 0..ny {
            let wj = axis(j);
            for i in 0..nx {
                let wi = axis(i);
                let f = i + nx * (j + ny * k);
                let mut acc = [0.0; 3];
                for &(kk, a) in &wk {
                    if a == 0.0 {
                        continue;
                    }
                    for &(jj, b) in &wj {
                        if b == 0.0 {
                            continue;
                        }
                        for &(ii, c) in &wi {
                            if c == 0.0 {
                                continue;
                            }
                            let w = a * b * c;
                            let n = ii + cx * (jj + cy * kk);
                            for d in 0..3 {
                                acc[d] += w * xc[3 * n + d];
                            }
                        }
                    }
                }
                for d in 0..3 {
                    xf[3 * f + d] = if fine.free[3 * f + d] { acc[d] } else { 0.0 };
                }
            }
        }
    }
}

fn restrict(fine: &Level, coarse: &Level, rf: &[f64], rc: &mut [f64]) {
    rc.iter_mut().for_each(|v| *v = 0.0);
    let [nx, ny, nz] = fine.nodes;
    let [cx, cy, _] = coarse.nodes;
    let axis = |i: usize| -> [(usize, f64); 2] {
        if i % 2 == 0 {
            [(i / 2, 1.0), (i / 2, 0.0)]
        } else {
            [(i / 2, 0.5), (i / 2 + 1, 0.5)]
        }
    };
    for k in 0..nz {
        let wk = axis(k);
        for j in 0..ny {
            let wj = axis(j);
            for i in 0..nx {
                let f = i + nx * (j + ny * k);
                let r = [rf[3 * f], rf[3 * f + 1], rf[3 * f + 2]];
                if r == [0.0; 3] {
                    continue;
                }
                let wi = axis(i);
                for &(kk, a) in &wk {
                    if a == 0.0 {
                        continue;
                    }
                    for &(jj, b) in &wj {
                        if b == 0.0 {
                            continue;
                        }
                        for &(ii, c) in &wi {
                            if c == 0.0 {
                                continue;
                            }
                            let w = a * b * c;
                            let n = ii + cx * (jj + cy * kk);
                            for d in 0..3 {
                                rc[3 * n + d] += w * r[d];
                            }
                        }
                    }
                }
            }
        }
    }
    for (v, &f) in rc.iter_mut().zip(&coarse.free) {
        if !f {
            *v = 0.0;
        }
    }
}

struct CoarseSolver {
    map: Vec<usize>,
    factor: nalgebra::linalg::Cholesky<f64, nalgebra::Dyn>,
}

impl CoarseSolver {
    fn new(level: &Level) -> Result<Self> {
        let map: Vec<usize> = (0..level.ndof()).filter(|&d| level.free[d]).collect();
        let mut index = vec![usize::MAX; level.ndof()];
        for (i, &d) in map.iter().enumerate() {
            index[d] = i;
        }
        let n = map.len();
        let mut a = DMatrix::<f64>::zeros(n, n);
        for &cell in &level.active {
            let nodes = level.cell_nodes(cell);
            let (k, s) = level.matrix(cell);
            let mut dofs = [usize::MAX; NDOF];
            for (a_, &nd) in nodes.iter().enumerate() {
                for c in 0..3 {
                    dofs[3 * a_ + c] = index[3 * nd + c];
                }
            }
            for r in 0..NDOF {
                if dofs[r] == usize::MAX {
                    continue;
                }
                for c in 0..NDOF {
                    if dofs[c] != usize::MAX {
                        a[(dofs[r], dofs[c])] += s * k[r * NDOF + c];
                    }
                }
            }
        }
        let dmax = (0..n).map(|i| a[(i, i)]).fold(0.0, f64::max);
        if let Some(factor) = a.clone().cholesky() {
            return Ok(Self { map, factor });
        }
        let mut shifted = a;
        for i in 0..n {
            shifted[(i, i)] += 1e-8 * dmax;
        }
        let factor = shifted
            .cholesky()
            .ok_or_else(|| Error::SolverStalled { iterations: 0, residual: f64::NAN })?;
        Ok(Self { map, factor })
    }

    fn solve(&self, b: &[f64], x: &mut [f64]) {
        let rhs = DVector::from_iterator(self.map.len(), self.map.iter().map(|&d| b[d]));
        let sol = self.factor.solve(&rhs);
        x.iter_mut().for_each(|v| *v = 0.0);
        for (i, &d) in self.map.iter().enumerate() {
            x[d] = sol[i];
        }
    }
}

pub(crate) struct Hierarchy {
    levels: Vec<Level>,
    coarse: CoarseSolver,
}

impl Hierarchy {
    /// `rho` per fine cell (0 for inactive), `k` the scaled element matrix,
    /// `free` the fine free-dof mask.
    pub(crate) fn new(cells: [usize; 3], rho: Vec<f64>, k: ElemMatrix, free: Vec<bool>) -> Result<Self> {
        let nodes = cells.map(|c| c + 1);
        let active: Vec<usize> = (0..rho.len()).filter(|&c| rho[c] > 0.0).collect();
        let prolong: Vec<ElemMatrix> = (0..8).map(child_prolongation).collect();
        let pre: [ElemMatrix; 8] = std::array::from_fn(|c| galerkin(&prolong[c], &k));
        let fine = finish_level(cells, nodes, Store::Scaled { rho, k: Box::new(k) }, active, Some(free));
        let mut levels = vec![fine];
        loop {
            let last = levels.last().unwrap();
            let nfree = last.free.iter().filter(|&&f| f).count();
            if nfree <= COARSE_DOFS || last.cells.iter().all(|&c| c <= 1) {
                break;
            }
            let next = coarsen(last, if levels.len() == 1 { Some(&pre) } else { None });
            levels.push(next);
        }
        let coarse = CoarseSolver::new(levels.last().unwrap())?;
        Ok(Self { levels, coarse })
    }

    pub(crate) fn ndof(&self) -> usize {
        self.levels[0].ndof()
    }

    pub(crate) fn free(&self) -> &[bool] {
        &self.levels[0].free
    }

    pub(crate) fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.levels[0].apply(x, y);
    }

    fn vcycle(&self, l: usize, b: &[f64], x: &mut [f64]) {
        if l + 1 == self.levels.len() {
            self.coarse.solve(b, x);
            return;
        }
        let level = &self.levels[l];
        let n = level.ndof();
        let mut r = vec![0.0; n];
        let mut ax = vec![0.0; n];
        // pre-smoothing from a zero guess
        for i in 0..n {
            x[i] = JACOBI_WEIGHT * level.inv_diag[i] * b[i];
        }
        for _ in 1..SWEEPS {
            level.apply(x, &mut ax);
            for i in 0..n {
                x[i] += JACOBI_WEIGHT * level.inv_diag[i] * (b[i] - ax[i]);
            }
        }
        level.apply(x, &mut ax);
        for i in 0..n {
            r[i] = b[i] - ax[i];
        }
        let coarse = &self.levels[l + 1];
        let mut rc = vec![0.0; coarse.ndof()];
        restrict(level, coarse, &r, &mut rc);
        let mut xc = vec![0.0; coarse.ndof()];
        self.vcycle(l + 1, &rc, &mut xc);
        let mut corr = vec![0.0; n];
        prolongate(coarse, level, &xc, &mut corr);
        for i in 0..n {
            x[i] += corr[i];
        }
        for _ in 0..SWEEPS {
            level.apply(x, &mut ax);
            for i in 0..n {
                x[i] += JACOBI_WEIGHT * level.inv_diag[i] * (b[i] - ax[i]);
            }
        }
    }

    /// Preconditioned CG on the free dofs. `x` holds the initial guess.
    /// Returns the iteration count.
    pub(crate) fn pcg(&self, b: &[f64], x: &mut [f64], rel_tol: f64, max_iters: usize) -> Result<usize> {
        let n = self.ndof();
        let free = self.free();
        for i in 0..n {
            if !free[i] {
                x[i] = 0.0;
            }
        }
        let bnorm = norm(b);
        if bnorm == 0.0 {
            x.iter_mut().for_each(|v| *v = 0.0);
            return Ok(0);
        }
        let mut ap = vec![0.0; n];
        self.apply(x, &mut ap);
        let mut r: Vec<f64> = (0..n).map(|i| if free[i] { b[i] - ap[i] } else { 0.0 }).collect();
        if norm(&r) <= rel_tol * bnorm {
            return Ok(0);
        }
        let mut z = vec![0.0; n];
        self.vcycle(0, &r, &mut z);
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        for it in 1..=max_iters {
            self.apply(&p, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > 0.0) {
                return Err(Error::SolverStalled { iterations: it, residual: norm(&r) / bnorm });
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
            }
            let res = norm(&r) / bnorm;
            if res <= rel_tol {
                return Ok(it);
            }
            self.vcycle(0, &r, &mut z);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        Err(Error::SolverStalled { iterations: max_iters, residual: norm(&r) / bnorm })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
