use millforge_bench::*;

#[test]
fn workloads_run() {
    let ls = distorted_sphere().redistance().unwrap();
    assert!(ls.max_gradient_defect() < 0.1);
    let rays = rays(200);
    let hits = cast_all(&sphere_level_set(), &rays, 0.0);
    assert!(hits > 150 && hits <= 200, "{hits}");

    let w = hook_workload();
    let f = hemisphere_filter(&w);
    assert_eq!(f.len(), w.samples.len());
    assert!(f.accessible_fraction() > 0.5);
    let t = heat_on_hook(&w);
    assert!(t.values().iter().all(|v| (0.0..=1.0).contains(v)));

    let (disc, mat, case) = cantilever();
    let st = solve_cantilever(&disc, &mat, &case);
    assert!(st.mean_compliance() > 0.0);
}
