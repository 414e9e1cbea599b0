//! JSON problem files: primitive CSG for the design domain and preserved
//! regions, loads given as forces on primitive faces, and run limits.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{Discretization, LoadCase, Material, Patch, Traction};
use crate::grid::{GridSpec, Vec3};
use crate::levelset::{band_width_for, LevelSet, SymmetryPlane};
use crate::milling::{MillingMode, ToolModel};
use crate::optimizer::{Algorithm, Problem, RunOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Primitive {
    Box {
        id: String,
        min: [f64; 3],
        max: [f64; 3],
    },
    /// Solid cylinder; `base` is the centre of the low cap.
    Cylinder {
        id: String,
        axis: Axis,
        base: [f64; 3],
        radius: f64,
        height: f64,
    },
}

impl Primitive {
    pub fn id(&self) -> &str {
        match self {
            Primitive::Box { id, .. } | Primitive::Cylinder { id, .. } => id,
        }
    }

    pub fn bounds(&self) -> (Vec3, Vec3) {
        match *self {
            Primitive::Box { min, max, .. } => (Vec3::from(min), Vec3::from(max)),
            Primitive::Cylinder { axis, base, radius, height, .. } => {
                let a = axis.index();
                let mut lo = Vec3::from(base).add_scalar(-radius);
                let mut hi = Vec3::from(base).add_scalar(radius);
                lo[a] = base[a];
                hi[a] = base[a] + height;
                (lo, hi)
            }
        }
    }

    /// Exact signed distance.
    pub fn sdf(&self, p: &Vec3) -> f64 {
        match *self {
            Primitive::Box { min, max, .. } => {
                let (lo, hi) = (Vec3::from(min), Vec3::from(max));
                let c = (lo + hi) * 0.5;
                let q = (p - c).abs() - (hi - lo) * 0.5;
                q.sup(&Vec3::zeros()).norm() + q.max().min(0.0)
            }
            Primitive::Cylinder { axis, base, radius, height, .. } => {
                let a = axis.index();
                let (u, v) = ((a + 1) % 3, (a + 2) % 3);
                let radial = ((p[u] - base[u]).powi(2) + (p[v] - base[v]).powi(2)).sqrt() - radius;
                let half = 0.5 * height;
                let along = (p[a] - base[a] - half).abs() - half;
                let (dr, da) = (radial.max(0.0), along.max(0.0));
                (dr * dr + da * da).sqrt() + radial.max(along).min(0.0)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Primitive::Box { min, max, .. } => (0..3).all(|i| min[i] < max[i] && min[i].is_finite() && max[i].is_finite()),
            Primitive::Cylinder { base, radius, height, .. } => {
                radius > 0.0 && height > 0.0 && radius.is_finite() && height.is_finite() && base.iter().all(|b| b.is_finite())
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("primitive '{}' has empty or non-finite extent", self.id())))
        }
    }

    /// The planar face `face` ("+x", "-z", ...) as a rectangle. Only boxes
    /// have rectangular faces.
    fn face(&self, face: &str) -> Result<Patch> {
        let Primitive::Box { min, max, .. } = *self else {
            return Err(Error::InvalidArgument(format!("face '{face}' of '{}': only box faces can carry loads or supports", self.id())));
        };
        let (sign, axis) = parse_face(face)?;
        let coord = if sign > 0.0 { max[axis] } else { min[axis] };
        let patch = Patch { axis, coord, lo: [0.0; 2], hi: [0.0; 2] };
        let [t0, t1] = patch.tangents();
        Patch::new(axis, coord, [min[t0], min[t1]], [max[t0], max[t1]])
    }
}

fn parse_face(face: &str) -> Result<(f64, usize)> {
    let bad = || Error::InvalidArgument(format!("face '{face}' is not one of +x, -x, +y, -y, +z, -z"));
    let mut chars = face.chars();
    let sign = match chars.next() {
        Some('+') => 1.0,
        Some('-') => -1.0,
        _ => return Err(bad()),
    };
    let axis = match (chars.next(), chars.next()) {
        (Some('x'), None) => 0,
        (Some('y'), None) => 1,
        (Some('z'), None) => 2,
        _ => return Err(bad()),
    };
    Ok((sign, axis))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CsgOp {
    #[default]
    Add,
    Subtract,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsgTerm {
    #[serde(default)]
    pub op: CsgOp,
    pub shape: Primitive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaceRef {
    pub primitive: String,
    pub face: String,
}

/// Total force in N spread uniformly over a face.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadSpec {
    pub face: FaceRef,
    pub force: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadCaseSpec {
    pub loads: Vec<LoadSpec>,
    pub fixed: Vec<FaceRef>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlaneSpec {
    pub axis: Axis,
    pub coord: f64,
}

/// Optional overrides of [`RunOptions`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Limits {
    pub max_iters: Option<usize>,
    pub outer_every: Option<usize>,
    pub lambda0: Option<f64>,
    pub mu0: Option<f64>,
    pub mu_max: Option<f64>,
    pub halvings: Option<usize>,
    pub rel_change: Option<f64>,
    pub window: Option<usize>,
    pub feasibility: Option<f64>,
    pub search_iters: Option<usize>,
    pub heat_step: Option<f64>,
    pub collar: Option<f64>,
    pub fem_rel_tol: Option<f64>,
    pub fem_max_iters: Option<usize>,
    pub drop_floating: Option<bool>,
    pub close_final: Option<bool>,
}

impl Limits {
    pub fn apply(&self, o: &mut RunOptions) {
        macro_rules! set {
            ($src:ident => $($dst:tt)+) => {
                if let Some(v) = self.$src {
                    o.$($dst)+ = v;
                }
            };
        }
        set!(max_iters => max_iters);
        set!(outer_every => outer_every);
        set!(lambda0 => lambda0);
        set!(mu0 => mu0);
        set!(mu_max => mu_max);
        set!(halvings => halvings);
        set!(rel_change => rel_change);
        set!(window => window);
        set!(feasibility => feasibility);
        set!(search_iters => search.max_iters);
        set!(fem_rel_tol => fem.rel_tol);
        set!(fem_max_iters => fem.max_iters);
        set!(drop_floating => fem.drop_floating);
        set!(close_final => close_final);
        if self.heat_step.is_some() {
            o.search.heat_step = self.heat_step;
        }
        if self.collar.is_some() {
            o.collar = self.collar;
        }
    }
}

fn default_mode() -> MillingMode {
    MillingMode::Off
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    #[serde(default)]
    pub name: String,
    /// Grid spacing in mm.
    pub h: f64,
    pub domain: Vec<CsgTerm>,
    #[serde(default)]
    pub preserved: Vec<Primitive>,
    pub material: Material,
    pub load_cases: Vec<LoadCaseSpec>,
    pub volume_fraction: f64,
    pub tool: ToolModel,
    #[serde(default = "default_mode")]
    pub milling: MillingMode,
    #[serde(default)]
    pub symmetry: Vec<PlaneSpec>,
    #[serde(default)]
    pub algorithm: Algorithm,
    #[serde(default)]
    pub limits: Limits,
}

impl ProblemFile {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("problem file serializes")
    }

    fn primitive(&self, id: &str) -> Result<&Primitive> {
        self.domain
            .iter()
            .map(|t| &t.shape)
            .chain(&self.preserved)
            .find(|p| p.id() == id)
            .ok_or_else(|| Error::InvalidArgument(format!("no primitive with id '{id}'")))
    }

    pub fn patch(&self, r: &FaceRef) -> Result<Patch> {
        self.primitive(&r.primitive)?.face(&r.face)
    }

    fn check_schema(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.h > 0.0 && self.h.is_finite()) {
            return bad(format!("h must be positive, got {}", self.h));
        }
        if !self.domain.iter().any(|t| t.op == CsgOp::Add) {
            return bad("domain needs at least one added primitive".into());
        }
        let mut ids: Vec<&str> = self.domain.iter().map(|t| t.shape.id()).chain(self.preserved.iter().map(|p| p.id())).collect();
        for p in self.domain.iter().map(|t| &t.shape).chain(&self.preserved) {
            p.validate()?;
        }
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return bad(format!("duplicate primitive id '{}'", w[0]));
        }
        if self.load_cases.is_empty() {
            return bad("at least one load case is required".into());
        }
        for (i, lc) in self.load_cases.iter().enumerate() {
            if lc.fixed.is_empty() {
                return bad(format!("load case {i} has no fixed face"));
            }
            for l in &lc.loads {
                if !l.force.iter().all(|f| f.is_finite()) {
                    return bad(format!("load case {i}: non-finite force on {}:{}", l.face.primitive, l.face.face));
                }
            }
        }
        Ok(())
    }

    fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        let added = self.domain.iter().filter(|t| t.op == CsgOp::Add).map(|t| &t.shape);
        for p in added.chain(&self.preserved) {
            let (a, b) = p.bounds();
            lo = lo.inf(&a);
            hi = hi.sup(&b);
        }
        (lo, hi)
    }

    fn domain_sdf(&self, p: &Vec3) -> f64 {
        self.domain.iter().fold(f64::INFINITY, |acc, t| match t.op {
            CsgOp::Add => acc.min(t.shape.sdf(p)),
            CsgOp::Subtract => acc.max(-t.shape.sdf(p)),
        })
    }

    /// Grid padded so the narrow band (wide enough for the head offset) fits
    /// around the domain.
    pub fn grid(&self) -> Result<(GridSpec, f64)> {
        let band = band_width_for(self.h, self.tool.head_radius);
        let pad = (band / self.h).ceil() as usize + 2;
        let (lo, hi) = self.bounds();
        Ok((GridSpec::covering(lo, hi, self.h, pad)?, band))
    }

    pub fn build(&self) -> Result<Problem> {
        self.check_schema()?;
        self.tool.validate()?;
        self.material.validate()?;
        let (grid, band) = self.grid()?;
        let domain = LevelSet::from_implicit(grid, band, |p| self.domain_sdf(p))?;
        let preserved = if self.preserved.is_empty() {
            None
        } else {
            let f = |p: &Vec3| self.preserved.iter().map(|s| s.sdf(p)).fold(f64::INFINITY, f64::min);
            Some(LevelSet::from_implicit(grid, band, f)?)
        };
        let mut load_cases = Vec::with_capacity(self.load_cases.len());
        for lc in &self.load_cases {
            let mut tractions = Vec::new();
            for l in &lc.loads {
                let patch = self.patch(&l.face)?;
                let area = patch.area();
                tractions.push(Traction { patch, traction: l.force.map(|f| f / area) });
            }
            let fixed = lc.fixed.iter().map(|r| self.patch(r)).collect::<Result<Vec<_>>>()?;
            load_cases.push(LoadCase { tractions, fixed });
        }
        let mut options = RunOptions::default();
        self.limits.apply(&mut options);
        let problem = Problem {
            domain,
            preserved,
            material: self.material,
            load_cases,
            volume_fraction: self.volume_fraction,
            tool: self.tool,
            mode: self.milling.clone(),
            symmetry: self.symmetry.iter().map(|s| SymmetryPlane { axis: s.axis.index(), coord: s.coord }).collect(),
            algorithm: self.algorithm,
            options,
        };
        problem.validate()?;
        self.check_patches(&problem)?;
        Ok(problem)
    }

    /// Every referenced face must snap onto nodes of the starting shape.
    fn check_patches(&self, problem: &Problem) -> Result<()> {
        let start = problem.confine(&problem.domain)?;
        let disc = Discretization::discretize(&start)?;
        for (i, (spec, lc)) in self.load_cases.iter().zip(&problem.load_cases).enumerate() {
            let loads = spec.loads.iter().map(|l| &l.face).zip(lc.tractions.iter().map(|t| &t.patch));
            for (r, patch) in loads.chain(spec.fixed.iter().zip(&lc.fixed)) {
                if disc.patch_node_count(patch) == 0 {
                    return Err(Error::InvalidArgument(format!(
                        "load case {i}: face {}:{} does not touch the design domain",
                        r.primitive, r.face
                    )));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"{
        "name": "beam",
        "h": 1.0,
        "domain": [
            {"shape": {"type": "box", "id": "body", "min": [0, 0, 0], "max": [16, 6, 6]}},
            {"op": "subtract", "shape": {"type": "cylinder", "id": "hole", "axis": "y", "base": [8, -1, 3], "radius": 1.5, "height": 8}}
        ],
        "preserved": [
            {"type": "box", "id": "wall", "min": [0, 0, 0], "max": [2, 6, 6]},
            {"type": "box", "id": "pad", "min": [14, 0, 0], "max": [16, 6, 6]}
        ],
        "material": {"youngs_modulus": 1e9, "poisson_ratio": 0.3},
        "load_cases": [{"loads": [{"face": {"primitive": "pad", "face": "+x"}, "force": [0, 0, -36]}],
                        "fixed": [{"primitive": "wall", "face": "-x"}]}],
        "volume_fraction": 0.4,
        "tool": {"bit_radius": 1, "bit_length": 4, "head_radius": 2},
        "milling": {"type": "heat"},
        "symmetry": [{"axis": "y", "coord": 3}],
        "algorithm": {"type": "relaxed", "alpha": 0.25},
        "limits": {"max_iters": 7, "search_iters": 5}
    }"#;

    #[test]
    fn small_problem_builds() {
        let file = ProblemFile::from_json(SMALL).unwrap();
        let p = file.build().unwrap();
        assert_eq!(p.options.max_iters, 7);
        assert_eq!(p.options.search.max_iters, 5);
        assert_eq!(p.mode, MillingMode::Heat);
        assert_eq!(p.algorithm, Algorithm::Relaxed { alpha: 0.25 });
        assert_eq!(p.symmetry, vec![SymmetryPlane { axis: 1, coord: 3.0 }]);
        // 36 N over a 6 x 6 face.
        let t = &p.load_cases[0].tractions[0];
        assert_eq!(t.traction, [0.0, 0.0, -1.0]);
        assert_eq!((t.patch.axis, t.patch.coord), (0, 16.0));
        // The hole goes right through.
        assert!(!p.domain.is_inside(&Vec3::new(8.0, 3.0, 3.0)));
        assert!(p.domain.is_inside(&Vec3::new(8.0, 3.0, 0.5)));
        let expected = 16.0 * 36.0 - std::f64::consts::PI * 1.5 * 1.5 * 6.0;
        assert!((p.domain_volume() - expected).abs() < 0.05 * expected, "{}", p.domain_volume());
        let back = ProblemFile::from_json(&file.to_json()).unwrap();
        assert_eq!(back, file);
    }

    #[test]
    fn schema_errors_are_located() {
        let typo = SMALL.replace("\"volume_fraction\"", "\"volume_fration\"");
        let msg = ProblemFile::from_json(&typo).unwrap_err().to_string();
        assert!(msg.contains("volume_fration") && msg.contains("line"), "{msg}");

        let bad_face = SMALL.replace("\"face\": \"+x\"", "\"face\": \"top\"");
        let msg = ProblemFile::from_json(&bad_face).unwrap().build().unwrap_err().to_string();
        assert!(msg.contains("top"), "{msg}");

        let missing = SMALL.replace("\"primitive\": \"wall\"", "\"primitive\": \"floor\"");
        let msg = ProblemFile::from_json(&missing).unwrap().build().unwrap_err().to_string();
        assert!(msg.contains("floor"), "{msg}");

        let cyl_face = SMALL.replace("\"primitive\": \"wall\"", "\"primitive\": \"hole\"");
        assert!(ProblemFile::from_json(&cyl_face).unwrap().build().is_err());
    }

    #[test]
    fn faces_off_the_part_are_rejected() {
        let mut file = ProblemFile::from_json(SMALL).unwrap();
        file.preserved.push(Primitive::Box { id: "far".into(), min: [30.0, 0.0, 0.0], max: [31.0, 1.0, 1.0] });
        file.load_cases[0].fixed = vec![FaceRef { primitive: "far".into(), face: "-x".into() }];
        // The far box is preserved but outside the domain.
        assert!(file.build().is_err());
    }

    #[test]
    fn cylinder_distance_is_exact_on_axes() {
        let c = Primitive::Cylinder { id: "c".into(), axis: Axis::Z, base: [0.0, 0.0, 0.0], radius: 2.0, height: 4.0 };
        assert!((c.sdf(&Vec3::new(0.0, 0.0, 2.0)) + 2.0).abs() < 1e-12);
        assert!((c.sdf(&Vec3::new(5.0, 0.0, 2.0)) - 3.0).abs() < 1e-12);
        assert!((c.sdf(&Vec3::new(0.0, 0.0, 7.0)) - 3.0).abs() < 1e-12);
        assert!((c.sdf(&Vec3::new(5.0, 0.0, 8.0)) - 5.0).abs() < 1e-12);
        let (lo, hi) = c.bounds();
        assert_eq!((lo, hi), (Vec3::new(-2.0, -2.0, 0.0), Vec3::new(2.0, 2.0, 4.0)));
    }

    #[test]
    fn bundled_problems_build() {
        for name in ["supportstruct.json", "torquestruct.json"] {
            let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../problems").join(name);
            let file = ProblemFile::load(&path).unwrap();
            let p = file.build().unwrap();
            assert!(p.preserved.is_some(), "{name}");
        }
    }
}
