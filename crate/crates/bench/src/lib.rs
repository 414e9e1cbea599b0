//! Fixed workloads shared by the kernel benchmarks and their smoke test.

use millforge::fem::{solve, Discretization, ElasticState, LoadCase, Material, Patch, SolveOptions, Traction};
use millforge::grid::{GridSpec, Vec3};
use millforge::heat::{solve_heat, TemperatureField};
use millforge::milling::{filter_5axis_hemisphere, FilterField, ToolModel};
use millforge::testkit::{hook_scene, scene_band, sphere};
use millforge::{LevelSet, SurfaceSample};

/// Sphere of radius 10 on a 65^3 grid.
pub fn sphere_level_set() -> LevelSet {
    let grid = GridSpec::new([-16.0; 3], 0.5, [65; 3]).unwrap();
    LevelSet::from_fn(grid, 4.0, sphere(Vec3::zeros(), 10.0)).unwrap()
}

/// A field that is not a distance function: the sphere scaled by 1.7.
pub fn distorted_sphere() -> LevelSet {
    let ls = sphere_level_set();
    let values = ls.values().iter().map(|v| 1.7 * v).collect();
    LevelSet::from_values(*ls.grid(), 1.7 * ls.band(), values).unwrap()
}

/// Deterministic rays from a sphere of radius 15 towards the origin region.
pub fn rays(n: usize) -> Vec<(Vec3, Vec3)> {
    (0..n)
        .map(|i| {
            let z = -1.0 + (2.0 * i as f64 + 1.0) / n as f64;
            let t = i as f64 * 2.399_963;
            let r = (1.0 - z * z).sqrt();
            let start = Vec3::new(r * t.cos(), r * t.sin(), z) * 15.0;
            let aim = Vec3::new((t * 3.0).sin(), (t * 5.0).cos(), z) * 6.0;
            (start, (aim - start).normalize())
        })
        .collect()
}

pub fn cast_all(ls: &LevelSet, rays: &[(Vec3, Vec3)], iso: f64) -> usize {
    rays.iter().filter(|(p, d)| ls.raycast(p, d, iso).is_some()).count()
}

pub struct HookWorkload {
    pub ls: LevelSet,
    pub samples: Vec<SurfaceSample>,
    pub tool: ToolModel,
}

pub fn hook_workload() -> HookWorkload {
    let tool = ToolModel::new(1.0, 25.0, 3.0).unwrap();
    let scene = hook_scene(1.0);
    let ls = scene.level_set(scene_band(1.0, &tool));
    let samples = ls.sample_boundary();
    HookWorkload { ls, samples, tool }
}

pub fn hemisphere_filter(w: &HookWorkload) -> FilterField {
    filter_5axis_hemisphere(&w.ls, &w.samples, &w.tool).unwrap()
}

pub fn heat_on_hook(w: &HookWorkload) -> TemperatureField {
    solve_heat(&w.ls.offset(w.tool.bit_radius).unwrap()).unwrap()
}

/// Solid 64 x 8 x 8 cantilever with a unit tip load.
pub fn cantilever() -> (Discretization, Material, LoadCase) {
    let grid = GridSpec::new([0.0; 3], 1.0, [65, 9, 9]).unwrap();
    let disc = Discretization::from_rho(grid, vec![1.0; grid.cell_count()]).unwrap();
    let face = |x: f64| Patch::new(0, x, [0.0, 0.0], [8.0, 8.0]).unwrap();
    let case = LoadCase { tractions: vec![Traction { patch: face(64.0), traction: [0.0, 0.0, -1.0 / 64.0] }], fixed: vec![face(0.0)] };
    (disc, Material::new(1e9, 0.3).unwrap(), case)
}

pub fn solve_cantilever(disc: &Discretization, mat: &Material, case: &LoadCase) -> ElasticState {
    solve(disc, mat, std::slice::from_ref(case), &SolveOptions::default(), None).unwrap()
}
