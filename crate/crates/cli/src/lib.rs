//! Subcommands behind the `millforge` binary: `optimize`, `check`, `sweep`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use millforge::grid::GridSpec;
use millforge::levelset::{band_width_for, SampleIndex};
use millforge::milling::{compute_filter, FilterField, MillingMode, SearchOptions, ToolModel};
use millforge::optimizer::{run_with, write_csv, IterationView, Problem, RunResult};
use millforge::problem::ProblemFile;
use millforge::{io, mesh, LevelSet, SurfaceSample};
use serde_json::{json, Value};

/// Per-sample filter result over a shape.
#[derive(Debug, Clone)]
pub struct Accessibility {
    pub samples: Vec<SurfaceSample>,
    pub filter: FilterField,
    /// Inaccessible samples that pass with the tool shrunk by one grid
    /// spacing, i.e. interference no deeper than `h`.
    pub tangent: Vec<bool>,
}

impl Accessibility {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn millable_fraction(&self) -> f64 {
        self.filter.accessible_fraction()
    }

    /// Samples that fail even with the tangency slack.
    pub fn hard_failures(&self) -> usize {
        self.filter.eta.iter().zip(&self.tangent).filter(|(&e, &t)| e == 0.0 && !t).count()
    }

    pub fn passes(&self) -> bool {
        self.hard_failures() == 0
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y,z,nx,ny,nz,eta,mx,my,mz,tests,tangent\n");
        for (i, smp) in self.samples.iter().enumerate() {
            let (p, n) = (smp.position, smp.normal);
            let m = self.filter.best[i].map(|m| [m.x, m.y, m.z]);
            let [mx, my, mz] = m.map(|m| m.map(|c| c.to_string())).unwrap_or_else(|| [String::new(), String::new(), String::new()]);
            writeln!(
                s,
                "{},{},{},{},{},{},{},{mx},{my},{mz},{},{}",
                p.x, p.y, p.z, n.x, n.y, n.z, self.filter.eta[i], self.filter.tests[i], self.tangent[i] as u8
            )
            .unwrap();
        }
        s
    }
}

/// Filter every boundary sample of `ls`. `Off` mode checks nothing and
/// reports every sample accessible.
pub fn accessibility(ls: &LevelSet, tool: &ToolModel, mode: &MillingMode, search: &SearchOptions) -> Result<Accessibility> {
    let samples = ls.sample_boundary();
    let (filter, _) = compute_filter(ls, &samples, tool, mode, search, None)?;
    let failing: Vec<usize> = (0..samples.len()).filter(|&i| filter.eta[i] == 0.0).collect();
    let mut tangent = vec![false; samples.len()];
    if !failing.is_empty() {
        let h = ls.h();
        let shrunk = ToolModel::new((tool.bit_radius - h).max(0.5 * h), tool.bit_length, (tool.head_radius - h).max(0.5 * h))?;
        let subset: Vec<SurfaceSample> = failing.iter().map(|&i| samples[i]).collect();
        let (retry, _) = compute_filter(ls, &subset, &shrunk, mode, search, None)?;
        for (k, &i) in failing.iter().enumerate() {
            tangent[i] = retry.eta[k] > 0.0;
        }
    }
    Ok(Accessibility { samples, filter, tangent })
}

/// Load a `.lsg` grid, or voxelize an STL at spacing `h`. The band is widened
/// to reach the head-radius offset.
pub fn load_shape(path: &Path, tool: &ToolModel, h: Option<f64>) -> Result<LevelSet> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    let ls = match ext.as_str() {
        "lsg" => io::load_level_set(path).with_context(|| format!("reading {}", path.display()))?,
        "stl" => {
            let m = mesh::TriMesh::load_stl(path).with_context(|| format!("reading {}", path.display()))?;
            let (lo, hi) = m.bounds().context("empty mesh")?;
            let h = h.unwrap_or_else(|| (hi - lo).max() / 48.0);
            let band = band_width_for(h, tool.head_radius);
            let grid = GridSpec::covering(lo, hi, h, (band / h).ceil() as usize + 2)?;
            mesh::voxelize(&m, grid, band)?
        }
        _ => bail!("{}: expected a .lsg or .stl file", path.display()),
    };
    let band = band_width_for(ls.h(), tool.head_radius);
    if ls.band() < band {
        return Ok(ls.with_band(band)?);
    }
    Ok(ls)
}

pub fn load_tool(path: &Path) -> Result<ToolModel> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let tool: ToolModel = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    tool.validate()?;
    Ok(tool)
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub access: Accessibility,
}

impl CheckReport {
    pub fn summary(&self) -> String {
        let a = &self.access;
        format!(
            "samples {}  millable {:.2}%  hard failures {}  -> {}",
            a.len(),
            100.0 * a.millable_fraction(),
            a.hard_failures(),
            if a.passes() { "MILLABLE" } else { "NOT MILLABLE" }
        )
    }
}

/// Check a shape file. With `out`, writes `accessibility.csv`, the surface
/// as `shape.stl` and the per-triangle filter value as `shape_eta.csv`.
pub fn cmd_check(shape: &Path, tool: &ToolModel, mode: &MillingMode, h: Option<f64>, out: Option<&Path>) -> Result<CheckReport> {
    let ls = load_shape(shape, tool, h)?;
    let access = accessibility(&ls, tool, mode, &SearchOptions::default())?;
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("accessibility.csv"), access.to_csv())?;
        write_surface_with_eta(&ls, &access, dir)?;
    }
    Ok(CheckReport { access })
}

fn write_surface_with_eta(ls: &LevelSet, access: &Accessibility, dir: &Path) -> Result<()> {
    let surface = mesh::extract_surface(ls);
    surface.save_stl(&dir.join("shape.stl"), "shape")?;
    let index = SampleIndex::from_samples(&access.samples, ls.h());
    let mut s = String::from("triangle,eta\n");
    for (i, t) in surface.triangles.iter().enumerate() {
        let c = (t[0] + t[1] + t[2]) / 3.0;
        let eta = index.nearest(&c).map_or(0.0, |(k, _)| access.filter.eta[k]);
        writeln!(s, "{i},{eta}").unwrap();
    }
    fs::write(dir.join("shape_eta.csv"), s)?;
    Ok(())
}

/// What `optimize` writes and reports.
#[derive(Debug, Clone)]
pub struct OptimizeOutcome {
    pub result: RunResult,
    pub millable_fraction: f64,
    pub summary: Value,
}

pub fn optimize_problem(problem: &Problem, name: &str, out: &Path, checkpoint_every: Option<usize>) -> Result<OptimizeOutcome> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut checkpoint_error = None;
    let mut observer = |v: &IterationView| {
        let r = v.record;
        if let Some(n) = checkpoint_every.filter(|&n| n > 0) {
            if (r.iter + 1) % n == 0 {
                let path = out.join(format!("checkpoint_{:04}.lsg", r.iter + 1));
                if let Err(e) = io::save_level_set(&path, v.after) {
                    checkpoint_error.get_or_insert(e);
                }
            }
        }
    };
    let result = run_with(problem, &mut observer)?;
    if let Some(e) = checkpoint_error {
        return Err(e).context("writing checkpoint");
    }
    let mut log = Vec::new();
    write_csv(&result.history, &mut log)?;
    fs::write(out.join("log.csv"), log)?;
    io::save_level_set(&out.join("shape.lsg"), &result.shape)?;
    mesh::extract_surface(&result.shape).save_stl(&out.join("shape.stl"), name)?;
    let access = accessibility(&result.shape, &problem.tool, &problem.mode, &problem.options.search)?;
    fs::write(out.join("accessibility.csv"), access.to_csv())?;
    let iters = result.iterations.max(1);
    let summary = json!({
        "name": name,
        "mode": problem.mode.name(),
        "algorithm": problem.algorithm,
        "compliance": result.compliance,
        "volume_fraction": result.volume_fraction,
        "target_volume_fraction": problem.volume_fraction,
        "iterations": result.iterations,
        "converged": result.converged,
        "feasible": result.feasible,
        "seconds": result.seconds,
        "seconds_per_iter": result.seconds / iters as f64,
        "millable_fraction": access.millable_fraction(),
        "millable": access.passes(),
    });
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    Ok(OptimizeOutcome { result, millable_fraction: access.millable_fraction(), summary })
}

pub fn cmd_optimize(problem_file: &Path, out: &Path, checkpoint_every: Option<usize>) -> Result<OptimizeOutcome> {
    let file = ProblemFile::load(problem_file)?;
    let problem = file.build().with_context(|| format!("building {}", problem_file.display()))?;
    let name = if file.name.is_empty() { stem(problem_file) } else { file.name.clone() };
    optimize_problem(&problem, &name, out, checkpoint_every)
}

fn stem(p: &Path) -> String {
    p.file_stem().and_then(|s| s.to_str()).unwrap_or("problem").to_string()
}

/// `key=v1,v2,...`. Values split on commas unless the list is written with
/// `;`, which lets a value itself contain commas (direction lists).
pub fn parse_vary(spec: &str) -> Result<(String, Vec<String>)> {
    let (key, values) = spec.split_once('=').with_context(|| format!("'{spec}' is not key=v1,v2,..."))?;
    let sep = if values.contains(';') { ';' } else { ',' };
    let values: Vec<String> = values.split(sep).map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
    if key.trim().is_empty() || values.is_empty() {
        bail!("'{spec}' needs a key and at least one value");
    }
    Ok((key.trim().to_string(), values))
}

/// Set a dotted key in a problem document. `milling` (or `mode`) takes a mode
/// name, with `three_axis:<dirs>` for direction lists; `dirs` alone sets a
/// 3-axis mode; other values are parsed as JSON, falling back to strings.
pub fn apply_override(doc: &mut Value, key: &str, value: &str) -> Result<()> {
    let parsed = match key {
        "milling" | "mode" => {
            let (name, dirs) = value.split_once(':').map_or((value, None), |(n, d)| (n, Some(d)));
            serde_json::to_value(MillingMode::parse(name, dirs)?)?
        }
        "dirs" => serde_json::to_value(MillingMode::parse("three_axis", Some(value))?)?,
        _ => serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string())),
    };
    let path = match key {
        "mode" | "dirs" => "milling",
        k => k,
    };
    let mut slot = doc;
    for part in path.split('.') {
        let obj = slot.as_object_mut().with_context(|| format!("'{key}': '{part}' is not inside an object"))?;
        slot = obj.entry(part).or_insert(Value::Null);
    }
    *slot = parsed;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub params: Vec<(String, String)>,
    pub compliance: f64,
    pub volume_fraction: f64,
    pub iterations: usize,
    pub seconds_per_iter: f64,
    pub converged: bool,
    pub millable_fraction: f64,
}

/// Runs the cartesian product of the varied values; each run's artifacts go
/// to its own subdirectory of `out`. At most `workers` runs at once.
pub fn cmd_sweep(problem_file: &Path, vary: &[(String, Vec<String>)], out: &Path, workers: usize) -> Result<Vec<SweepRow>> {
    let text = fs::read_to_string(problem_file).with_context(|| format!("reading {}", problem_file.display()))?;
    let base: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", problem_file.display()))?;
    let mut combos: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for (key, values) in vary {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                values.iter().map(move |v| {
                    let mut c = c.clone();
                    c.push((key.clone(), v.clone()));
                    c
                })
            })
            .collect();
    }
    let mut problems = Vec::with_capacity(combos.len());
    for combo in &combos {
        let mut doc = base.clone();
        for (k, v) in combo {
            apply_override(&mut doc, k, v)?;
        }
        let file: ProblemFile = serde_json::from_value(doc).with_context(|| format!("applying {combo:?}"))?;
        let problem = file.build().with_context(|| format!("building {combo:?}"))?;
        problems.push(problem);
    }
    fs::create_dir_all(out)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build()?;
    let name = stem(problem_file);
    let jobs: Vec<(usize, &Problem)> = problems.iter().enumerate().collect();
    let results: Vec<Result<OptimizeOutcome>> = pool.install(|| {
        use rayon::prelude::*;
        jobs.par_iter().map(|&(i, p)| optimize_problem(p, &name, &out.join(format!("run_{i:03}")), None)).collect()
    });
    let mut rows = Vec::with_capacity(results.len());
    for (combo, r) in combos.into_iter().zip(results) {
        let r = r.with_context(|| format!("run {combo:?}"))?;
        rows.push(SweepRow {
            params: combo,
            compliance: r.result.compliance,
            volume_fraction: r.result.volume_fraction,
            iterations: r.result.iterations,
            seconds_per_iter: r.result.seconds / r.result.iterations.max(1) as f64,
            converged: r.result.converged,
            millable_fraction: r.millable_fraction,
        });
    }
    fs::write(out.join("sweep.csv"), sweep_table(&rows))?;
    Ok(rows)
}

/// Results table. Compliance is also given relative to the largest in the
/// table.
pub fn sweep_table(rows: &[SweepRow]) -> String {
    let cmax = rows.iter().map(|r| r.compliance).fold(0.0, f64::max);
    let mut s = String::new();
    if let Some(first) = rows.first() {
        for (k, _) in &first.params {
            s.push_str(k);
            s.push(',');
        }
    }
    s.push_str("compliance,relative_compliance,volume,iterations,seconds_per_iter,converged,millable_fraction\n");
    for r in rows {
        for (_, v) in &r.params {
            // Quote values that contain the separator.
            if v.contains(',') {
                write!(s, "\"{v}\",").unwrap();
            } else {
                write!(s, "{v},").unwrap();
            }
        }
        let rel = if cmax > 0.0 { r.compliance / cmax } else { 1.0 };
        writeln!(
            s,
            "{},{:.3},{:.3},{},{:.3},{},{:.4}",
            r.compliance, rel, r.volume_fraction, r.iterations, r.seconds_per_iter, r.converged, r.millable_fraction
        )
        .unwrap();
    }
    s
}

pub fn default_out_dir(problem_file: &Path) -> PathBuf {
    PathBuf::from(format!("{}_out", stem(problem_file)))
}
