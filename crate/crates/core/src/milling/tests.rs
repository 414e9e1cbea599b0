use super::*;
use crate::grid::GridSpec;
use crate::heat::solve_heat;
use crate::testkit::*;

fn nearest_sample(samples: &[SurfaceSample], target: Vec3) -> SurfaceSample {
    *samples
        .iter()
        .min_by(|a, b| (a.position - target).norm().total_cmp(&(b.position - target).norm()))
        .expect("samples")
}

fn oracle_ok(points: &[Vec3], s: &SurfaceSample, m: &Vec3, tool: &ToolModel, h: f64, far: f64) -> bool {
    let p = s.position + s.normal * tool.bit_radius;
    let v = tool_overlap(points, &p, m, tool, h, far);
    !v.blocked || v.near_tangent(h)
}

#[test]
fn flat_top_vertical_access() {
    let scene = flat_plate_scene(0.5);
    let tool = ToolModel::new(1.0, 5.0, 3.0).unwrap();
    let ls = scene.level_set(scene_band(0.5, &tool));
    let s = nearest_sample(&ls.sample_boundary(), Vec3::zeros());
    let p = s.position + s.normal * tool.bit_radius;
    let down = Vec3::new(0.0, 0.0, -1.0);
    let r = milling_test(&ls, &s.normal, &p, &down, &tool);
    assert!(r.accessible);
    assert!((r.eta_candidate - 1.0).abs() < 1e-6);
    let up = milling_test(&ls, &s.normal, &p, &Vec3::z(), &tool);
    assert!(!up.accessible && up.hit.is_none());
}

#[test]
fn blind_hole_blocks_wide_bit() {
    let h = 0.5;
    let scene = blind_hole_scene(h, 2.0, 20.0);
    let wide = ToolModel::new(3.0, 10.0, 4.0).unwrap();
    let ls = scene.level_set(scene_band(h, &wide));
    let samples = ls.sample_boundary();
    let s = nearest_sample(&samples, Vec3::new(0.0, 0.0, -20.0));
    assert!(s.normal.z > 0.99);
    let f = filter_5axis_hemisphere(&ls, &[s], &wide).unwrap();
    assert_eq!(f.eta[0], 0.0);
    let points = scene.shell_points(0.5 * h, 1.5 * h);
    let far = scene.grid.diagonal();
    for m in hemisphere_directions().directions() {
        let p = s.position + s.normal * wide.bit_radius;
        assert!(tool_overlap(&points, &p, m, &wide, h, far).blocked);
    }

    let slim = ToolModel::new(1.0, 25.0, 4.0).unwrap();
    let p = s.position + s.normal * slim.bit_radius;
    let down = Vec3::new(0.0, 0.0, -1.0);
    let r = milling_test(&ls, &s.normal, &p, &down, &slim);
    assert!(r.accessible, "{r:?}");
    assert!(!tool_overlap(&points, &p, &down, &slim, h, far).blocked);
}

#[test]
fn three_axis_on_sphere() {
    let grid = GridSpec::new([-14.0; 3], 0.5, [57; 3]).unwrap();
    let tool = ToolModel::new(1.0, 5.0, 2.0).unwrap();
    let ls = LevelSet::from_fn(grid, band_width_for_tool(0.5, &tool), sphere(Vec3::zeros(), 10.0)).unwrap();
    let samples = ls.sample_boundary();
    let axes: DirectionSet = "+X|-X|+Y|-Y|+Z|-Z".parse().unwrap();
    let pole = nearest_sample(&samples, Vec3::new(0.0, 0.0, 10.0));
    let diag = nearest_sample(&samples, Vec3::new(1.0, 1.0, 0.0).normalize() * 10.0);
    let f = filter_3axis(&ls, &[pole, diag], &axes, &tool).unwrap();
    assert!(f.eta[0] > 0.999);
    assert_eq!(f.best[0], Some(Vec3::new(0.0, 0.0, -1.0)));
    assert!((f.eta[1] - std::f64::consts::FRAC_1_SQRT_2).abs() < 0.01, "{}", f.eta[1]);
    let b = f.best[1].unwrap();
    assert!(b == Vec3::new(-1.0, 0.0, 0.0) || b == Vec3::new(0.0, -1.0, 0.0));
}

fn band_width_for_tool(h: f64, tool: &ToolModel) -> f64 {
    crate::levelset::band_width_for(h, tool.head_radius)
}

#[test]
fn slot_walls_get_zero_from_vertical_only() {
    let h = 0.5;
    let block = boxed(Vec3::new(-10.0, -10.0, -10.0), Vec3::new(10.0, 10.0, 0.0));
    let slot = boxed(Vec3::new(-1.5, -20.0, -8.0), Vec3::new(1.5, 20.0, 5.0));
    let grid = GridSpec::covering(Vec3::new(-10.0, -10.0, -10.0), Vec3::new(10.0, 10.0, 0.0), h, 8).unwrap();
    let tool = ToolModel::new(0.5, 10.0, 2.0).unwrap();
    let ls = LevelSet::from_implicit(grid, band_width_for_tool(h, &tool), |p| block(p).max(-slot(p))).unwrap();
    let samples = ls.sample_boundary();
    let down: DirectionSet = "-Z".parse().unwrap();
    let f = filter_3axis(&ls, &samples, &down, &tool).unwrap();
    let mut walls = 0;
    let mut tops = 0;
    for (s, e) in samples.iter().zip(&f.eta) {
        let x = s.position;
        if s.normal.z.abs() < 0.05 && x.x.abs() < 2.0 && x.z < -2.0 && x.z > -6.0 && x.y.abs() < 8.0 {
            walls += 1;
            assert_eq!(*e, 0.0, "wall sample {x:?}");
        }
        if s.normal.z > 0.999 && x.x.abs() > 4.0 && x.x.abs() < 8.0 && x.y.abs() < 8.0 {
            tops += 1;
            assert!(*e > 0.999);
        }
    }
    assert!(walls > 20 && tops > 100, "{walls} {tops}");
}

#[test]
fn hemisphere_set_is_the_cube_stencil() {
    let d = hemisphere_directions();
    assert_eq!(d.len(), 26);
    let has = |v: Vec3| d.directions().iter().any(|m| (m - v).norm() < 1e-12);
    assert!(has(Vec3::new(0.0, 0.0, -1.0)));
    assert!(has(Vec3::new(1.0, 1.0, 1.0) / 3f64.sqrt()));
    for m in d.directions() {
        assert!((m.norm() - 1.0).abs() < 1e-12);
        assert!(has(-m));
    }
}

#[test]
fn hemisphere_on_flat_top_and_facet() {
    let h = 0.5;
    let scene = flat_plate_scene(h);
    let tool = ToolModel::new(1.0, 5.0, 3.0).unwrap();
    let ls = scene.level_set(scene_band(h, &tool));
    let top: Vec<SurfaceSample> = ls
        .sample_boundary()
        .into_iter()
        .filter(|s| s.normal.z > 0.999 && s.position.x.abs() < 15.0 && s.position.y.abs() < 15.0)
        .collect();
    let f = filter_5axis_hemisphere(&ls, &top, &tool).unwrap();
    assert!(f.eta.iter().all(|e| *e > 0.999));

    let grid = GridSpec::new([-14.0; 3], h, [57; 3]).unwrap();
    let wedge = |p: &Vec3| ((p.x + p.y) / 2f64.sqrt()).max(box_sdf(p, &Vec3::repeat(-10.0), &Vec3::repeat(10.0)));
    let ls = LevelSet::from_implicit(grid, scene_band(h, &tool), wedge).unwrap();
    let s = nearest_sample(&ls.sample_boundary(), Vec3::new(0.0, 0.0, 0.0));
    let f = filter_5axis_hemisphere(&ls, &[s], &tool).unwrap();
    assert!(f.eta[0] > 0.999, "{}", f.eta[0]);
    assert!((f.best[0].unwrap() + Vec3::new(1.0, 1.0, 0.0).normalize()).norm() < 1e-9);
}

#[test]
fn normal_search_flat_top_first_try() {
    let h = 0.5;
    let scene = flat_plate_scene(h);
    let tool = ToolModel::new(1.0, 5.0, 3.0).unwrap();
    let ls = scene.level_set(scene_band(h, &tool));
    let s = nearest_sample(&ls.sample_boundary(), Vec3::new(3.0, -2.0, 0.0));
    let (eta, dir, tests) = normal_search_sample(&ls, &s, &tool, 8);
    assert_eq!(tests, 1);
    assert!(eta > 0.999 && dir.is_some());
}

#[test]
fn normal_search_escapes_ledge() {
    let h = 0.5;
    let scene = ledge_scene(h);
    let tool = ToolModel::new(1.0, 5.0, 4.0).unwrap();
    let ls = scene.level_set(scene_band(h, &tool));
    let s = nearest_sample(&ls.sample_boundary(), Vec3::new(18.0, 0.0, 4.0));
    assert!(s.normal.z > 0.99);
    // straight down the head hits the ledge end
    let p = s.position + s.normal * tool.bit_radius;
    assert!(!milling_test(&ls, &s.normal, &p, &Vec3::new(0.0, 0.0, -1.0), &tool).accessible);
    let (eta, dir, tests) = normal_search_sample(&ls, &s, &tool, 8);
    assert!(tests <= 3 && eta > 0.0, "tests {tests}, eta {eta}");
    let points = scene.shell_points(0.5 * h, 1.5 * h);
    assert!(oracle_ok(&points, &s, &dir.unwrap(), &tool, h, scene.grid.diagonal()));
    assert!((eta + dir.unwrap().dot(&s.normal)).abs() < 1e-12);
}

fn hook_setup() -> (Scene, LevelSet, ToolModel, SurfaceSample) {
    let h = 1.0;
    let scene = hook_scene(h);
    let tool = ToolModel::new(1.0, 25.0, 3.0).unwrap();
    let ls = scene.level_set(scene_band(h, &tool));
    let s = nearest_sample(&ls.sample_boundary(), Vec3::new(12.0, 0.0, 4.0));
    (scene, ls, tool, s)
}

#[test]
fn hook_normal_and_heat_search() {
    let (scene, ls, tool, s) = hook_setup();
    let h = ls.h();
    let points = scene.shell_points(0.5 * h, 1.5 * h);
    let far = scene.grid.diagonal();
    // climbing the distance field from under the lip leads nowhere useful
    let (eta_n, dir_n, _) = normal_search_sample(&ls, &s, &tool, 8);
    assert_eq!(eta_n, 0.0);
    assert!(dir_n.is_none());
    let t = heat_field_for(&ls, &tool, None).unwrap();
    let trace = heat_search_sample(&ls, &s, &tool, &t, 8, h);
    assert!(trace.eta > 0.0, "heat search failed after {} tests", trace.tests);
    assert!(oracle_ok(&points, &s, &trace.direction.unwrap(), &tool, h, far));
    let temps: Vec<f64> = trace.trajectory.iter().map(|y| t.value(y)).collect();
    assert!(temps.windows(2).all(|w| w[1] >= w[0] - 1e-12), "{temps:?}");
}

#[test]
fn heat_search_flat_top_never_moves() {
    let h = 1.0;
    let scene = flat_plate_scene(h);
    let tool = ToolModel::new(1.0, 5.0, 3.0).unwrap();
    let ls = scene.level_set(scene_band(h, &tool));
    let s = nearest_sample(&ls.sample_boundary(), Vec3::zeros());
    let t = solve_heat(&ls.offset(tool.bit_radius).unwrap()).unwrap();
    let trace = heat_search_sample(&ls, &s, &tool, &t, 8, h);
    assert_eq!(trace.tests, 1);
    assert_eq!(trace.trajectory.len(), 1);
    assert!(trace.eta > 0.999);
}

#[test]
fn hemisphere_filter_is_sound_on_blind_hole() {
    let h = 0.5;
    let scene = blind_hole_scene(h, 3.0, 10.0);
    let tool = ToolModel::new(1.0, 8.0, 3.0).unwrap();
    let ls = scene.level_set(scene_band(h, &tool));
    let samples: Vec<SurfaceSample> = ls.sample_boundary().into_iter().step_by(7).collect();
    let f = filter_5axis_hemisphere(&ls, &samples, &tool).unwrap();
    let points = scene.shell_points(0.5 * h, 1.5 * h);
    let far = scene.grid.diagonal();
    let mut checked = 0;
    let mut bad = 0;
    for (i, s) in samples.iter().enumerate() {
        assert!((0.0..=1.0).contains(&f.eta[i]));
        if let Some(m) = f.best[i] {
            checked += 1;
            if !oracle_ok(&points, s, &m, &tool, h, far) {
                bad += 1;
            }
        } else {
            assert_eq!(f.eta[i], 0.0);
        }
    }
    assert!(checked > 100);
    assert!(bad as f64 <= 0.01 * checked as f64, "{bad} of {checked}");
}

#[test]
fn bigger_tool_never_reaches_more() {
    let h = 0.5;
    let scene = blind_hole_scene(h, 3.0, 10.0);
    let small = ToolModel::new(1.0, 8.0, 3.0).unwrap();
    let big = ToolModel::new(2.0, 6.0, 4.0).unwrap();
    let ls = scene.level_set(scene_band(h, &big));
    let samples: Vec<SurfaceSample> = ls.sample_boundary().into_iter().step_by(5).collect();
    let dirs = hemisphere_directions();
    let points = scene.shell_points(0.5 * h, 1.5 * h);
    let far = scene.grid.diagonal();
    let mut violations = 0;
    let mut pairs = 0;
    for s in &samples {
        for m in dirs.directions() {
            let pb = s.position + s.normal * big.bit_radius;
            let ps = s.position + s.normal * small.bit_radius;
            let rb = milling_test(&ls, &s.normal, &pb, m, &big);
            let rs = milling_test(&ls, &s.normal, &ps, m, &small);
            pairs += 1;
            if rb.accessible && !rs.accessible {
                let v = tool_overlap(&points, &ps, m, &small, h, far);
                if !v.near_tangent(h) {
                    violations += 1;
                }
            }
        }
    }
    assert!(pairs > 1000);
    assert_eq!(violations, 0);
}

#[test]
fn direction_parsing() {
    let d: DirectionSet = "+X|-x; 0,0,-2".parse().unwrap();
    assert_eq!(d.len(), 3);
    assert_eq!(d.directions()[1], Vec3::new(-1.0, 0.0, 0.0));
    assert_eq!(d.directions()[2], Vec3::new(0.0, 0.0, -1.0));
    assert!("".parse::<DirectionSet>().is_err());
    assert!("+W".parse::<DirectionSet>().is_err());
    assert!("0,0,0".parse::<DirectionSet>().is_err());
    let json = serde_json::to_string(&MillingMode::ThreeAxis { directions: d.clone() }).unwrap();
    let back: MillingMode = serde_json::from_str(&json).unwrap();
    assert_eq!(back, MillingMode::ThreeAxis { directions: d });
    assert!(ToolModel::new(3.0, 5.0, 2.0).is_err());
}

#[test]
fn collar_only_lowers_eta() {
    let grid = GridSpec::new([-14.0; 3], 0.5, [57; 3]).unwrap();
    let ls = LevelSet::from_fn(grid, 3.0, sphere(Vec3::zeros(), 10.0)).unwrap();
    let samples = ls.sample_boundary();
    let eta: Vec<f64> = samples.iter().map(|s| if s.position.z > 0.0 { 1.0 } else { 0.0 }).collect();
    let smooth = smooth_collar(&samples, &eta, 1.0);
    assert!(smooth.iter().zip(&eta).all(|(a, b)| a <= b));
    let pole = samples.iter().position(|s| s.position.z > 9.9).unwrap();
    assert!((smooth[pole] - 1.0).abs() < 1e-12);
}
