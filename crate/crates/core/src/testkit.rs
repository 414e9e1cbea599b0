//! Analytic scenes and brute-force oracles for tests and benchmarks.
//!
//! Nothing in here is used by the optimizer itself; the oracles deliberately
//! avoid the level-set machinery they are meant to check (they work on
//! analytic signed distance functions or on plain point sets).

use crate::grid::{GridSpec, Vec3};
use crate::fem::{LoadCase, Material, Patch, Traction};
use crate::levelset::{band_width_for, LevelSet, SymmetryPlane};
use crate::milling::{MillingMode, ToolModel};
use crate::optimizer::{Algorithm, Problem, RunOptions};

pub fn sphere(center: Vec3, r: f64) -> impl Fn(&Vec3) -> f64 + Clone {
    move |p: &Vec3| (p - center).norm() - r
}

/// Exact signed distance to an axis-aligned box.
pub fn boxed(lo: Vec3, hi: Vec3) -> impl Fn(&Vec3) -> f64 + Clone {
    move |p: &Vec3| box_sdf(p, &lo, &hi)
}

pub fn box_sdf(p: &Vec3, lo: &Vec3, hi: &Vec3) -> f64 {
    let c = (lo + hi) * 0.5;
    let half = (hi - lo) * 0.5;
    let q = (p - c).abs() - half;
    let outside = q.map(|v| v.max(0.0)).norm();
    let inside = q.x.max(q.y).max(q.z).min(0.0);
    outside + inside
}

/// Distance from `p` to the segment `[a, b]`.
pub fn segment_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Capped cylinder along z with the given radius between `z0` and `z1`.
pub fn z_cylinder(center_xy: [f64; 2], radius: f64, z0: f64, z1: f64) -> impl Fn(&Vec3) -> f64 + Clone {
    move |p: &Vec3| {
        let d_r = ((p.x - center_xy[0]).powi(2) + (p.y - center_xy[1]).powi(2)).sqrt() - radius;
        let d_z = (z0 - p.z).max(p.z - z1);
        let outside = (d_r.max(0.0).powi(2) + d_z.max(0.0).powi(2)).sqrt();
        outside + d_r.max(d_z).min(0.0)
    }
}

/// An analytic solid used to build test scenes: exact membership and a
/// signed distance (exact or a 1-Lipschitz bound) for building level sets.
pub struct Scene {
    pub name: &'static str,
    pub grid: GridSpec,
    pub sdf: Box<dyn Fn(&Vec3) -> f64 + Send + Sync>,
}

impl Scene {
    pub fn level_set(&self, band: f64) -> LevelSet {
        LevelSet::from_implicit(self.grid, band, |p| (self.sdf)(p)).expect("scene level set")
    }

    pub fn inside(&self, p: &Vec3) -> bool {
        (self.sdf)(p) < 0.0
    }

    /// Points of the solid on a lattice of spacing `step` that lie within
    /// `shell` of the boundary. A tool volume reaching into the solid must
    /// cross this shell.
    pub fn shell_points(&self, step: f64, shell: f64) -> Vec<Vec3> {
        let lo = self.grid.lower();
        let hi = self.grid.upper();
        let n: Vec<usize> = (0..3).map(|a| ((hi[a] - lo[a]) / step).floor() as usize + 1).collect();
        let mut out = Vec::new();
        for k in 0..n[2] {
            for j in 0..n[1] {
                for i in 0..n[0] {
                    let p = lo + Vec3::new(i as f64, j as f64, k as f64) * step;
                    let d = (self.sdf)(&p);
                    if d < 0.0 && d > -shell {
                        out.push(p);
                    }
                }
            }
        }
        out
    }
}

fn union_sdf(parts: Vec<Box<dyn Fn(&Vec3) -> f64 + Send + Sync>>) -> Box<dyn Fn(&Vec3) -> f64 + Send + Sync> {
    Box::new(move |p: &Vec3| parts.iter().map(|f| f(p)).fold(f64::INFINITY, f64::min))
}

/// A 40 x 40 x 8 mm plate whose top face is at `z = 0`.
pub fn flat_plate_scene(h: f64) -> Scene {
    let lo = Vec3::new(-20.0, -20.0, -8.0);
    let hi = Vec3::new(20.0, 20.0, 0.0);
    Scene {
        name: "flat plate",
        grid: GridSpec::covering(lo, hi, h, 8).unwrap(),
        sdf: Box::new(boxed(lo, hi)),
    }
}

/// Block with a cylindrical blind hole (radius `hole_r`, depth `depth`) drilled
/// down from the top face `z = 0` along the z axis.
pub fn blind_hole_scene(h: f64, hole_r: f64, depth: f64) -> Scene {
    let lo = Vec3::new(-12.0, -12.0, -depth - 6.0);
    let hi = Vec3::new(12.0, 12.0, 0.0);
    let block = boxed(lo, hi);
    let hole = z_cylinder([0.0, 0.0], hole_r, -depth, 10.0);
    Scene {
        name: "blind hole",
        grid: GridSpec::covering(lo, hi, h, 8).unwrap(),
        sdf: Box::new(move |p: &Vec3| block(p).max(-hole(p))),
    }
}

/// Closed pocket whose only opening is a slot under a hanging lip on the +x
/// side: floor `z in [0,4]`, back wall at `x in [0,4]`, ceiling
/// `z in [26,30]` over `x in [0,30]`, lip `x in [26,30]` hanging down to
/// `z = 14`, side walls at `|y| in [10,14]`. The floor extends to `x = 40`.
/// A tool reaching the floor at `x ~ 12` must come in shallow through the slot.
pub fn hook_scene(h: f64) -> Scene {
    let b = |lo: [f64; 3], hi: [f64; 3]| -> Box<dyn Fn(&Vec3) -> f64 + Send + Sync> {
        Box::new(boxed(Vec3::from(lo), Vec3::from(hi)))
    };
    let parts = vec![
        b([0.0, -14.0, 0.0], [40.0, 14.0, 4.0]),
        b([0.0, -14.0, 0.0], [4.0, 14.0, 30.0]),
        b([0.0, -14.0, 26.0], [30.0, 14.0, 30.0]),
        b([26.0, -14.0, 14.0], [30.0, 14.0, 30.0]),
        b([0.0, -14.0, 0.0], [30.0, -10.0, 30.0]),
        b([0.0, 10.0, 0.0], [30.0, 14.0, 30.0]),
    ];
    Scene {
        name: "hook",
        grid: GridSpec::covering(Vec3::new(0.0, -14.0, 0.0), Vec3::new(40.0, 14.0, 30.0), h, 8).unwrap(),
        sdf: union_sdf(parts),
    }
}

/// Floor with a single overhanging ledge: floor `z in [0,4]` over
/// `x in [0,40]`, post at `x in [0,4]` up to `z = 20`, ledge `z in [16,20]`
/// over `x in [0,16]`. Samples on the floor under the ledge are hidden from
/// straight above but reachable at an angle.
pub fn ledge_scene(h: f64) -> Scene {
    let b = |lo: [f64; 3], hi: [f64; 3]| -> Box<dyn Fn(&Vec3) -> f64 + Send + Sync> {
        Box::new(boxed(Vec3::from(lo), Vec3::from(hi)))
    };
    let parts = vec![
        b([0.0, -10.0, 0.0], [40.0, 10.0, 4.0]),
        b([0.0, -10.0, 0.0], [4.0, 10.0, 20.0]),
        b([0.0, -10.0, 16.0], [16.0, 10.0, 20.0]),
    ];
    Scene {
        name: "ledge",
        grid: GridSpec::covering(Vec3::new(0.0, -10.0, 0.0), Vec3::new(40.0, 10.0, 20.0), h, 8).unwrap(),
        sdf: union_sdf(parts),
    }
}

/// Outcome of the swept-volume oracle for one (contact, direction) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleVerdict {
    /// True when the tool volume overlaps the solid.
    pub blocked: bool,
    /// Smallest `distance - radius` over solid points (negative: overlap).
    pub clearance: f64,
}

impl OracleVerdict {
    /// Within `tol` of tangency: tiny perturbations of the tool could flip
    /// the verdict.
    pub fn near_tangent(&self, tol: f64) -> bool {
        self.clearance.abs() <= tol
    }
}

/// Brute-force tool/solid overlap test on a point cloud of solid points.
///
/// The bit is the capsule of radius `r_b` around the segment from the
/// bit-tip sphere centre `p` back along `-m`; its shank runs on into the head,
/// up to the head cap centre `p - m (l_b + r_h)`. The head is the capsule of
/// radius `r_h` from that centre back along `-m` for `far`. The tool is retracted by `retract`
/// along `-m` so that the contact point itself does not count as overlap.
pub fn tool_overlap(points: &[Vec3], p: &Vec3, m: &Vec3, tool: &ToolModel, retract: f64, far: f64) -> OracleVerdict {
    let back = -m;
    let tip = p + back * retract;
    let head_start = tip + back * (tool.bit_length + tool.head_radius);
    let bit_end = head_start;
    let head_end = head_start + back * far;
    let mut clearance = f64::INFINITY;
    for q in points {
        let cb = segment_distance(q, &tip, &bit_end) - tool.bit_radius;
        let ch = segment_distance(q, &head_start, &head_end) - tool.head_radius;
        clearance = clearance.min(cb.min(ch));
        if clearance < -tool.bit_radius {
            // deep overlap, far from any tangency question
            break;
        }
    }
    OracleVerdict { blocked: clearance < 0.0, clearance }
}

/// Brute-force morphological closing membership: `x` survives in the closing
/// of the solid by radius `o` unless some ball of radius `o` containing `x`
/// misses the solid entirely. Candidate ball centres are searched on a
/// lattice of spacing `step` within `o` of `x`.
pub fn closing_contains(sdf: &dyn Fn(&Vec3) -> f64, x: &Vec3, o: f64, step: f64) -> bool {
    if sdf(x) < 0.0 {
        return true;
    }
    let n = (o / step).ceil() as i64;
    for k in -n..=n {
        for j in -n..=n {
            for i in -n..=n {
                let c = x + Vec3::new(i as f64, j as f64, k as f64) * step;
                if (c - x).norm() <= o && sdf(&c) >= o {
                    return false;
                }
            }
        }
    }
    true
}

/// Dense ray march on the level set's interpolated field: first sign change
/// of `phi - iso` from above, sampled every `step`, within the grid box.
pub fn dense_march(ls: &LevelSet, start: &Vec3, dir: &Vec3, iso: f64, step: f64) -> Option<Vec3> {
    let (t0, t1) = ls.grid().clip_ray(start, dir)?;
    if t1 < 0.0 {
        return None;
    }
    let mut t = t0.max(0.0);
    let mut prev = ls.value(&(start + dir * t)) - iso;
    if prev < 0.0 {
        return Some(start + dir * t);
    }
    while t < t1 {
        let tn = (t + step).min(t1);
        let f = ls.value(&(start + dir * tn)) - iso;
        if prev > 0.0 && f <= 0.0 {
            // linear refinement is plenty at this resolution
            let s = prev / (prev - f);
            return Some(start + dir * (t + s * (tn - t)));
        }
        prev = f;
        t = tn;
    }
    None
}

/// Band width used by the milling scenes for a given tool.
pub fn scene_band(h: f64, tool: &ToolModel) -> f64 {
    band_width_for(h, tool.head_radius)
}

/// Small cantilever design problem: domain `[0,24] x [0,8] x [0,8]`, clamped
/// at `x = 0`, pulled down on the `x = 24` face, with 2 mm end slabs kept.
pub fn cantilever_problem(h: f64, mode: MillingMode, algorithm: Algorithm) -> Problem {
    let tool = ToolModel::new(1.0, 4.0, 3.0).unwrap();
    let band = band_width_for(h, tool.head_radius);
    let lo = Vec3::new(0.0, 0.0, 0.0);
    let hi = Vec3::new(24.0, 8.0, 8.0);
    let pad = (band / h).ceil() as usize + 2;
    let grid = GridSpec::covering(lo, hi, h, pad).unwrap();
    let domain = LevelSet::from_fn(grid, band, boxed(lo, hi)).unwrap();
    let ends = |p: &Vec3| box_sdf(p, &lo, &Vec3::new(2.0, 8.0, 8.0)).min(box_sdf(p, &Vec3::new(22.0, 0.0, 0.0), &hi));
    let preserved = LevelSet::from_implicit(grid, band, ends).unwrap();
    let face = |x: f64| Patch::new(0, x, [0.0, 0.0], [8.0, 8.0]).unwrap();
    Problem {
        domain,
        preserved: Some(preserved),
        material: Material::new(1e9, 0.3).unwrap(),
        load_cases: vec![LoadCase {
            tractions: vec![Traction { patch: face(24.0), traction: [0.0, 0.0, -0.01] }],
            fixed: vec![face(0.0)],
        }],
        volume_fraction: 0.5,
        tool,
        mode,
        symmetry: vec![SymmetryPlane { axis: 1, coord: 4.0 }],
        algorithm,
        options: RunOptions::default(),
    }
}
