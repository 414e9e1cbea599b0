use millforge::io::{load_level_set, save_level_set};
use millforge::mesh::{extract_surface, voxelize, TriMesh};
use millforge::milling::{filter_5axis_hemisphere, MillingMode};
use millforge::optimizer::{run, run_with, write_csv, Algorithm};
use millforge::problem::ProblemFile;
use millforge::Vec3;

const BEAM: &str = r#"{
    "name": "beam",
    "h": 1.0,
    "domain": [{"shape": {"type": "box", "id": "body", "min": [0, 0, 0], "max": [20, 6, 6]}}],
    "preserved": [
        {"type": "box", "id": "wall", "min": [0, 0, 0], "max": [2, 6, 6]},
        {"type": "box", "id": "pad", "min": [18, 0, 0], "max": [20, 6, 6]}
    ],
    "material": {"youngs_modulus": 1e9, "poisson_ratio": 0.3},
    "load_cases": [{"loads": [{"face": {"primitive": "pad", "face": "+x"}, "force": [0, 0, -36]}],
                    "fixed": [{"primitive": "wall", "face": "-x"}]}],
    "volume_fraction": 0.5,
    "tool": {"bit_radius": 1, "bit_length": 4, "head_radius": 2},
    "milling": {"type": "hemisphere"},
    "algorithm": {"type": "strict"},
    "limits": {"max_iters": 8}
}"#;

#[test]
fn short_run_then_files_round_trip() {
    let problem = ProblemFile::from_json(BEAM).unwrap().build().unwrap();
    let mut seen = 0;
    let r = run_with(&problem, &mut |v| {
        seen += 1;
        assert_eq!(v.samples.len(), v.filtered.eta.len());
    })
    .unwrap();
    assert_eq!(seen, r.history.len());
    assert!(r.iterations <= 8);
    let c0 = r.history[0].compliance;
    let v0 = r.history[0].volume_fraction;
    assert!(r.volume_fraction < v0, "volume {} from {v0}", r.volume_fraction);
    assert!(r.compliance >= c0 * 0.999, "removing material cannot stiffen the beam");

    // strict mode from a millable box stays millable; the filter is
    // conservative at tangency, so a few junction samples may read zero
    let samples = r.raw_shape.sample_boundary();
    let f = filter_5axis_hemisphere(&r.raw_shape, &samples, &problem.tool).unwrap();
    assert!(f.accessible_fraction() > 0.97, "{}", f.accessible_fraction());

    let dir = tempfile::tempdir().unwrap();
    let lsg = dir.path().join("beam.lsg");
    save_level_set(&lsg, &r.shape).unwrap();
    let back = load_level_set(&lsg).unwrap();
    assert_eq!(back.grid(), r.shape.grid());
    assert!((back.volume() - r.shape.volume()).abs() < 1e-3 * r.shape.volume());

    let stl = dir.path().join("beam.stl");
    let mesh = extract_surface(&back);
    mesh.save_stl(&stl, "beam").unwrap();
    let read = TriMesh::load_stl(&stl).unwrap();
    assert_eq!(read.len(), mesh.len());
    assert!((read.volume() - back.volume()).abs() < 0.03 * back.volume(), "{} vs {}", read.volume(), back.volume());
    let again = voxelize(&read, *back.grid(), back.band()).unwrap();
    for p in [Vec3::new(1.0, 3.0, 3.0), Vec3::new(19.0, 3.0, 3.0), Vec3::new(25.0, 3.0, 3.0)] {
        assert_eq!(again.is_inside(&p), back.is_inside(&p), "{p:?}");
    }

    let mut csv = Vec::new();
    write_csv(&r.history, &mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), r.history.len() + 1);
}

#[test]
fn off_mode_needs_no_tool_clearance() {
    let mut problem = ProblemFile::from_json(BEAM).unwrap().build().unwrap();
    problem.mode = MillingMode::Off;
    problem.algorithm = Algorithm::Relaxed { alpha: 0.25 };
    problem.options.max_iters = 4;
    let r = run(&problem).unwrap();
    assert!(r.history.iter().all(|rec| rec.frac_eta_zero == 0.0));
    // no closing without a tool constraint
    assert_eq!(r.shape.values(), r.raw_shape.values());
}
