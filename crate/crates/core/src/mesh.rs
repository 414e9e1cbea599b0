//! Triangle surfaces: zero-set extraction (marching tetrahedra over a Kuhn
//! split of every cell), STL read/write, and voxelization of a closed STL
//! back into a level set.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{GridSpec, Vec3};
use crate::levelset::LevelSet;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriMesh {
    /// Counter-clockwise seen from outside.
    pub triangles: Vec<[Vec3; 3]>,
}

/// Six tetrahedra sharing the cell diagonal 0-7; corner `c = i + 2j + 4k`.
const KUHN: [[usize; 4]; 6] = [[0, 1, 3, 7], [0, 1, 5, 7], [0, 2, 3, 7], [0, 2, 6, 7], [0, 4, 5, 7], [0, 4, 6, 7]];

pub fn extract_surface(ls: &LevelSet) -> TriMesh {
    let g = ls.grid();
    let phi = ls.values();
    let [cx, cy, cz] = g.cell_dims();
    let mut triangles = Vec::new();
    for k in 0..cz {
        for j in 0..cy {
            for i in 0..cx {
                let nodes: [usize; 8] = std::array::from_fn(|c| g.index(i + (c & 1), j + ((c >> 1) & 1), k + (c >> 2)));
                let vals = nodes.map(|n| phi[n]);
                if vals.iter().all(|&v| v < 0.0) || vals.iter().all(|&v| v >= 0.0) {
                    continue;
                }
                for tet in KUHN {
                    march_tet(g, phi, tet.map(|c| nodes[c]), &mut triangles);
                }
            }
        }
    }
    TriMesh { triangles }
}

fn march_tet(g: &GridSpec, phi: &[f64], tet: [usize; 4], out: &mut Vec<[Vec3; 3]>) {
    let (inside, outside): (Vec<usize>, Vec<usize>) = tet.iter().partition(|&&n| phi[n] < 0.0);
    if inside.is_empty() || outside.is_empty() {
        return;
    }
    // Endpoints ordered by node index so both cells sharing an edge produce
    // the same point.
    let cut = |a: usize, b: usize| {
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        let t = phi[a] / (phi[a] - phi[b]);
        let (pa, pb) = (g.node_position(a), g.node_position(b));
        pa + (pb - pa) * t
    };
    let centroid = |s: &[usize]| s.iter().map(|&n| g.node_position(n)).sum::<Vec3>() / s.len() as f64;
    let outward = centroid(&outside) - centroid(&inside);
    let mut emit = |mut t: [Vec3; 3]| {
        if (t[1] - t[0]).cross(&(t[2] - t[0])).dot(&outward) < 0.0 {
            t.swap(1, 2);
        }
        out.push(t);
    };
    match (inside.len(), outside.len()) {
        (1, 3) => emit([cut(inside[0], outside[0]), cut(inside[0], outside[1]), cut(inside[0], outside[2])]),
        (3, 1) => emit([cut(inside[0], outside[0]), cut(inside[1], outside[0]), cut(inside[2], outside[0])]),
        _ => {
            let (a, b, c, d) = (inside[0], inside[1], outside[0], outside[1]);
            let q = [cut(a, c), cut(a, d), cut(b, d), cut(b, c)];
            emit([q[0], q[1], q[2]]);
            emit([q[0], q[2], q[3]]);
        }
    }
}

impl TriMesh {
    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn area(&self) -> f64 {
        self.triangles.iter().map(|t| 0.5 * (t[1] - t[0]).cross(&(t[2] - t[0])).norm()).sum()
    }

    /// Enclosed volume by the divergence theorem; exact for closed meshes.
    pub fn volume(&self) -> f64 {
        self.triangles.iter().map(|t| t[0].dot(&t[1].cross(&t[2])) / 6.0).sum()
    }

    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let mut it = self.triangles.iter().flatten();
        let first = *it.next()?;
        Some(it.fold((first, first), |(lo, hi), p| (lo.inf(p), hi.sup(p))))
    }

    pub fn write_stl(&self, mut w: impl Write, name: &str) -> std::io::Result<()> {
        writeln!(w, "solid {name}")?;
        for t in &self.triangles {
            let n = (t[1] - t[0]).cross(&(t[2] - t[0]));
            let n = if n.norm() > 0.0 { n.normalize() } else { n };
            writeln!(w, "  facet normal {:e} {:e} {:e}", n.x, n.y, n.z)?;
            writeln!(w, "    outer loop")?;
            for p in t {
                writeln!(w, "      vertex {:e} {:e} {:e}", p.x, p.y, p.z)?;
            }
            writeln!(w, "    endloop")?;
            writeln!(w, "  endfacet")?;
        }
        writeln!(w, "endsolid {name}")
    }

    pub fn save_stl(&self, path: &Path, name: &str) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_stl(&mut w, name)?;
        w.flush()?;
        Ok(())
    }

    /// ASCII or binary STL.
    pub fn read_stl(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if is_binary_stl(&bytes) {
            parse_binary(&bytes)
        } else {
            parse_ascii(&bytes)
        }
    }

    pub fn load_stl(path: &Path) -> Result<Self> {
        Self::read_stl(std::fs::File::open(path)?)
    }
}

fn is_binary_stl(bytes: &[u8]) -> bool {
    if bytes.len() < 84 {
        return false;
    }
    let n = u32::from_le_bytes(bytes[80..84].try_into().unwrap()) as usize;
    bytes.len() == 84 + 50 * n
}

fn parse_binary(bytes: &[u8]) -> Result<TriMesh> {
    let f = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as f64;
    let triangles = bytes[84..]
        .chunks_exact(50)
        .map(|rec| {
            let base = rec.as_ptr() as usize - bytes.as_ptr() as usize;
            std::array::from_fn(|v| {
                let o = base + 12 + 12 * v;
                Vec3::new(f(o), f(o + 4), f(o + 8))
            })
        })
        .collect();
    Ok(TriMesh { triangles })
}

fn parse_ascii(bytes: &[u8]) -> Result<TriMesh> {
    let mut triangles = Vec::new();
    let mut verts = Vec::with_capacity(3);
    for (lineno, line) in BufReader::new(bytes).lines().enumerate() {
        let line = line?;
        let mut words = line.split_whitespace();
        match words.next() {
            Some("vertex") => {
                let xyz: Vec<f64> = words.map(str::parse).collect::<std::result::Result<_, _>>().map_err(|e| {
                    Error::Format(format!("STL line {}: {e}", lineno + 1))
                })?;
                if xyz.len() != 3 {
                    return Err(Error::Format(format!("STL line {}: vertex needs 3 coordinates", lineno + 1)));
                }
                verts.push(Vec3::new(xyz[0], xyz[1], xyz[2]));
            }
            Some("endloop") => {
                let t: [Vec3; 3] = verts
                    .as_slice()
                    .try_into()
                    .map_err(|_| Error::Format(format!("STL line {}: facet with {} vertices", lineno + 1, verts.len())))?;
                triangles.push(t);
                verts.clear();
            }
            _ => {}
        }
    }
    if triangles.is_empty() {
        return Err(Error::Format("STL contains no facets".into()));
    }
    Ok(TriMesh { triangles })
}

fn closest_on_triangle(p: &Vec3, [a, b, c]: &[Vec3; 3]) -> Vec3 {
    let (ab, ac, ap) = (b - a, c - a, p - a);
    let (d1, d2) = (ab.dot(&ap), ac.dot(&ap));
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let (d3, d4) = (ab.dot(&bp), ac.dot(&bp));
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let (d5, d6) = (ab.dot(&cp), ac.dot(&cp));
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && d4 - d3 >= 0.0 && d5 - d6 >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

/// Level set of a closed mesh on `grid`. Distances come from the triangles
/// near each node; the sign from crossing parity along x-rows.
pub fn voxelize(mesh: &TriMesh, grid: GridSpec, band: f64) -> Result<LevelSet> {
    if mesh.is_empty() {
        return Err(Error::EmptyShape);
    }
    let g = &grid;
    let h = g.h();
    let [nx, ny, nz] = g.dims;
    let mut dist = vec![band; g.node_count()];
    let reach = band + h;
    for t in &mesh.triangles {
        let lo = t[0].inf(&t[1]).inf(&t[2]).add_scalar(-reach);
        let hi = t[0].sup(&t[1]).sup(&t[2]).add_scalar(reach);
        let range = |a: usize| {
            let i0 = ((lo[a] - g.origin[a]) / h).floor().max(0.0) as usize;
            let i1 = (((hi[a] - g.origin[a]) / h).ceil().max(0.0) as usize).min(g.dims[a] - 1);
            i0..=i1
        };
        for k in range(2) {
            for j in range(1) {
                for i in range(0) {
                    let idx = g.index(i, j, k);
                    let p = g.node_position(idx);
                    let d = (closest_on_triangle(&p, t) - p).norm();
                    if d < dist[idx] {
                        dist[idx] = d;
                    }
                }
            }
        }
    }
    // Crossing parity along each x-row. Rows are nudged off node lines so
    // they never pass exactly through a mesh vertex or edge.
    let nudge = Vec3::new(0.0, 1e-7 * h * std::f64::consts::SQRT_2, 1e-7 * h * std::f64::consts::E);
    let mut inside = vec![false; g.node_count()];
    for k in 0..nz {
        for j in 0..ny {
            let o = g.position(0, j, k) + nudge;
            let mut xs: Vec<f64> = mesh.triangles.iter().filter_map(|t| row_crossing(o.y, o.z, t)).collect();
            xs.sort_by(f64::total_cmp);
            let mut c = 0;
            for i in 0..nx {
                let x = g.position(i, j, k).x;
                while c < xs.len() && xs[c] <= x {
                    c += 1;
                }
                inside[g.index(i, j, k)] = c % 2 == 1;
            }
        }
    }
    let values = dist.iter().zip(&inside).map(|(&d, &ins)| if ins { -d } else { d }).collect();
    let mut ls = LevelSet::from_values(grid, band, values)?;
    ls.redistance_in_place()?;
    Ok(ls)
}

/// x where the line `(*, y, z)` pierces the triangle, if it does.
fn row_crossing(y: f64, z: f64, t: &[Vec3; 3]) -> Option<f64> {
    let e = |a: &Vec3, b: &Vec3| (b.y - a.y) * (z - a.z) - (b.z - a.z) * (y - a.y);
    let (w0, w1, w2) = (e(&t[1], &t[2]), e(&t[2], &t[0]), e(&t[0], &t[1]));
    let pos = w0 > 0.0 && w1 > 0.0 && w2 > 0.0;
    let neg = w0 < 0.0 && w1 < 0.0 && w2 < 0.0;
    if !(pos || neg) {
        return None;
    }
    let s = w0 + w1 + w2;
    Some((w0 * t[0].x + w1 * t[1].x + w2 * t[2].x) / s)
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use super::*;
    use crate::testkit::{boxed, sphere};

    fn ball(h: f64, r: f64) -> LevelSet {
        let grid = GridSpec::covering(Vec3::repeat(-r), Vec3::repeat(r), h, 6).unwrap();
        LevelSet::from_fn(grid, 4.0 * h, sphere(Vec3::new(0.1, -0.2, 0.05), r)).unwrap()
    }

    fn key(p: &Vec3) -> [u64; 3] {
        [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()]
    }

    #[test]
    fn sphere_surface_is_closed_and_measured() {
        let r = 6.0;
        let mesh = extract_surface(&ball(0.5, r));
        let pi = std::f64::consts::PI;
        let vol = 4.0 / 3.0 * pi * r.powi(3);
        assert!((mesh.volume() - vol).abs() < 0.02 * vol, "{} vs {vol}", mesh.volume());
        let area = 4.0 * pi * r * r;
        assert!((mesh.area() - area).abs() < 0.05 * area, "{} vs {area}", mesh.area());
        // Every directed edge is matched by its reverse: closed and
        // consistently oriented.
        let mut edges: HashMap<([u64; 3], [u64; 3]), i32> = HashMap::new();
        for t in &mesh.triangles {
            for e in 0..3 {
                let (a, b) = (key(&t[e]), key(&t[(e + 1) % 3]));
                if a == b {
                    continue;
                }
                *edges.entry((a, b)).or_default() += 1;
                *edges.entry((b, a)).or_default() -= 1;
            }
        }
        assert!(edges.values().all(|&c| c == 0));
    }

    #[test]
    fn stl_round_trip_through_voxelization() {
        let ls = ball(0.5, 5.0);
        let mesh = extract_surface(&ls);
        let mut text = Vec::new();
        mesh.write_stl(&mut text, "ball").unwrap();
        let back = TriMesh::read_stl(text.as_slice()).unwrap();
        assert_eq!(back.len(), mesh.len());
        let vox = voxelize(&back, *ls.grid(), ls.band()).unwrap();
        for (i, (&a, &b)) in ls.values().iter().zip(vox.values()).enumerate() {
            if a.abs() < 1.5 {
                assert!((a - b).abs() < 0.25, "node {i}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn binary_stl_is_read() {
        let grid = GridSpec::covering(Vec3::zeros(), Vec3::repeat(4.0), 0.5, 4).unwrap();
        let cube = LevelSet::from_fn(grid, 2.0, boxed(Vec3::repeat(1.0), Vec3::repeat(3.0))).unwrap();
        let mesh = extract_surface(&cube);
        let mut bytes = vec![0u8; 80];
        bytes.extend_from_slice(&(mesh.len() as u32).to_le_bytes());
        for t in &mesh.triangles {
            bytes.extend_from_slice(&[0u8; 12]);
            for p in t {
                for c in p.iter() {
                    bytes.extend_from_slice(&(*c as f32).to_le_bytes());
                }
            }
            bytes.extend_from_slice(&[0u8; 2]);
        }
        let back = TriMesh::read_stl(bytes.as_slice()).unwrap();
        assert_eq!(back.len(), mesh.len());
        assert!((back.volume() - mesh.volume()).abs() < 1e-4, "{}", back.volume());
        let (lo, hi) = back.bounds().unwrap();
        assert!((lo - Vec3::repeat(1.0)).norm() < 1e-6 && (hi - Vec3::repeat(3.0)).norm() < 1e-6);
    }

    #[test]
    fn garbage_is_not_an_stl() {
        assert!(TriMesh::read_stl(&b"solid x\n vertex 1 2\n"[..]).is_err());
        assert!(TriMesh::read_stl(&b"hello"[..]).is_err());
    }
}
