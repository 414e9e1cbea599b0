//! Trilinear hexahedron on the unit cube, 2x2x2 Gauss quadrature.
//!
//! Local node `a` sits at corner `(a & 1, (a >> 1) & 1, a >> 2)`, matching the
//! x-fastest grid layout. Degrees of freedom are ordered `3 a + component`.

pub const NDOF: usize = 24;
pub type ElemMatrix = [f64; NDOF * NDOF];

#[inline]
pub fn corner(a: usize) -> [f64; 3] {
    [(a & 1) as f64, ((a >> 1) & 1) as f64, (a >> 2) as f64]
}

/// Shape function gradients (reference coordinates) at `xi`.
fn shape_gradients(xi: [f64; 3]) -> [[f64; 3]; 8] {
    let mut out = [[0.0; 3]; 8];
    for (a, g) in out.iter_mut().enumerate() {
        let c = corner(a);
        let f = |d: usize| if c[d] == 1.0 { xi[d] } else { 1.0 - xi[d] };
        let s = |d: usize| if c[d] == 1.0 { 1.0 } else { -1.0 };
        *g = [s(0) * f(1) * f(2), f(0) * s(1) * f(2), f(0) * f(1) * s(2)];
    }
    out
}

/// Isotropic elasticity matrix in Voigt order `xx, yy, zz, xy, yz, zx`
/// (engineering shear strains).
pub fn elasticity_matrix(e: f64, nu: f64) -> [[f64; 6]; 6] {
    let lambda = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
    let mu = e / (2.0 * (1.0 + nu));
    let mut d = [[0.0; 6]; 6];
    for i in 0..3 {
        for j in 0..3 {
            d[i][j] = lambda;
        }
        d[i][i] = lambda + 2.0 * mu;
        d[i + 3][i + 3] = mu;
    }
    d
}

/// Strain-displacement matrix (6 x 24) from reference gradients on a cube of
/// side `h`.
pub fn strain_matrix(xi: [f64; 3], h: f64) -> [[f64; NDOF]; 6] {
    let g = shape_gradients(xi);
    let mut b = [[0.0; NDOF]; 6];
    for a in 0..8 {
        let [dx, dy, dz] = g[a].map(|v| v / h);
        let c = 3 * a;
        b[0][c] = dx;
        b[1][c + 1] = dy;
        b[2][c + 2] = dz;
        b[3][c] = dy;
        b[3][c + 1] = dx;
        b[4][c + 1] = dz;
        b[4][c + 2] = dy;
        b[5][c] = dz;
        b[5][c + 2] = dx;
    }
    b
}

/// Stiffness of a cube with unit edge and unit Young's modulus. A cube of
/// side `h` with modulus `E` has stiffness `E h` times this.
pub fn unit_stiffness(nu: f64) -> ElemMatrix {
    let d = elasticity_matrix(1.0, nu);
    let gp = [0.5 - 0.5 / 3f64.sqrt(), 0.5 + 0.5 / 3f64.sqrt()];
    let mut k = [0.0; NDOF * NDOF];
    for &z in &gp {
        for &y in &gp {
            for &x in &gp {
                let b = strain_matrix([x, y, z], 1.0);
                // weight 1/8 per point on the unit cube
                let mut db = [[0.0; NDOF]; 6];
                for i in 0..6 {
                    for j in 0..NDOF {
                        db[i][j] = (0..6).map(|l| d[i][l] * b[l][j]).sum();
                    }
                }
                for r in 0..NDOF {
                    for c in 0..NDOF {
                        let mut s = 0.0;
                        for i in 0..6 {
                            s += b[i][r] * db[i][c];
                        }
                        k[r * NDOF + c] += 0.125 * s;
                    }
                }
            }
        }
    }
    k
}

/// Interpolation from the 24 dofs of a coarse element (side 2) to the dofs of
/// its child `c` (corner index of the child within the coarse element).
pub fn child_prolongation(c: usize) -> ElemMatrix {
    let off = corner(c);
    let mut p = [0.0; NDOF * NDOF];
    for a in 0..8 {
        let ca = corner(a);
        let xi = [(off[0] + ca[0]) * 0.5, (off[1] + ca[1]) * 0.5, (off[2] + ca[2]) * 0.5];
        for b in 0..8 {
            let cb = corner(b);
            let w: f64 = (0..3).map(|d| if cb[d] == 1.0 { xi[d] } else { 1.0 - xi[d] }).product();
            if w != 0.0 {
                for comp in 0..3 {
                    p[(3 * a + comp) * NDOF + 3 * b + comp] = w;
                }
            }
        }
    }
    p
}

/// `P^T K P` for 24 x 24 matrices.
pub fn galerkin(p: &ElemMatrix, k: &ElemMatrix) -> ElemMatrix {
    let mut kp = [0.0; NDOF * NDOF];
    for r in 0..NDOF {
        for m in 0..NDOF {
            let kv = k[r * NDOF + m];
            if kv == 0.0 {
                continue;
            }
            for c in 0..NDOF {
                kp[r * NDOF + c] += kv * p[m * NDOF + c];
            }
        }
    }
    let mut out = [0.0; NDOF * NDOF];
    for m in 0..NDOF {
        for r in 0..NDOF {
            let pv = p[m * NDOF + r];
            if pv == 0.0 {
                continue;
            }
            for c in 0..NDOF {
                out[r * NDOF + c] += pv * kp[m * NDOF + c];
            }
        }
    }
    out
}

#[inline]
pub fn mat_vec_add(k: &ElemMatrix, scale: f64, u: &[f64; NDOF], y: &mut [f64; NDOF]) {
    for r in 0..NDOF {
        let row = &k[r * NDOF..(r + 1) * NDOF];
        let mut s = 0.0;
        for c in 0..NDOF {
            s += row[c] * u[c];
        }
        y[r] += scale * s;
    }
}
