//! Millability filter: per boundary sample, the best alignment `|m . n|` over
//! the approach directions from which the tool and its head clear the part.
//!
//! Directions `m` point from the tool towards the surface; the tool retracts
//! along `-m`. Interference is tested by casting rays against offset
//! iso-surfaces of the part: the bit shaft against `phi = r_b` from the bit
//! tip centre, the head against `phi = r_h` from the head cap centre.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Vec3;
use crate::heat::TemperatureField;
use crate::levelset::{LevelSet, SampleIndex, SurfaceSample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToolModel {
    pub bit_radius: f64,
    pub bit_length: f64,
    pub head_radius: f64,
}

impl ToolModel {
    pub fn new(bit_radius: f64, bit_length: f64, head_radius: f64) -> Result<Self> {
        let tool = Self { bit_radius, bit_length, head_radius };
        tool.validate()?;
        Ok(tool)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.bit_radius > 0.0
            && self.bit_radius <= self.head_radius
            && self.bit_length > 0.0
            && self.head_radius.is_finite()
            && self.bit_length.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "tool needs 0 < bit radius <= head radius and a positive bit length, got {self:?}"
            )))
        }
    }
}

/// Non-empty list of unit approach directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 3]>", into = "Vec<[f64; 3]>")]
pub struct DirectionSet {
    dirs: Vec<Vec3>,
}

impl DirectionSet {
    /// Normalizes every direction; rejects an empty list or zero vectors.
    pub fn new(dirs: impl IntoIterator<Item = Vec3>) -> Result<Self> {
        let mut out = Vec::new();
        for d in dirs {
            let n = d.norm();
            if !(n > 1e-12) || !n.is_finite() {
                return Err(Error::InvalidArgument(format!("direction {:?} cannot be normalized", d.as_slice())));
            }
            out.push(d / n);
        }
        if out.is_empty() {
            return Err(Error::InvalidArgument("direction set is empty".into()));
        }
        Ok(Self { dirs: out })
    }

    pub fn directions(&self) -> &[Vec3] {
        &self.dirs
    }

    pub fn len(&self) -> usize {
        self.dirs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }
}

impl TryFrom<Vec<[f64; 3]>> for DirectionSet {
    type Error = Error;
    fn try_from(v: Vec<[f64; 3]>) -> Result<Self> {
        Self::new(v.into_iter().map(Vec3::from))
    }
}

impl From<DirectionSet> for Vec<[f64; 3]> {
    fn from(d: DirectionSet) -> Self {
        d.dirs.iter().map(|v| [v.x, v.y, v.z]).collect()
    }
}

/// Parses `+X|-Z` style axis labels or explicit `x,y,z` triples, separated by
/// `|` or `;`.
impl FromStr for DirectionSet {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let mut dirs = Vec::new();
        for tok in s.split(['|', ';']).map(str::trim).filter(|t| !t.is_empty()) {
            dirs.push(parse_direction(tok)?);
        }
        Self::new(dirs)
    }
}

fn parse_direction(tok: &str) -> Result<Vec3> {
    let upper = tok.to_ascii_uppercase();
    let (sign, axis) = match upper.as_bytes() {
        [b'+', a] => (1.0, *a),
        [b'-', a] => (-1.0, *a),
        [a] => (1.0, *a),
        _ => (0.0, 0),
    };
    if sign != 0.0 {
        let mut v = Vec3::zeros();
        match axis {
            b'X' => v.x = sign,
            b'Y' => v.y = sign,
            b'Z' => v.z = sign,
            _ => return Err(Error::InvalidArgument(format!("unknown axis in direction '{tok}'"))),
        }
        return Ok(v);
    }
    let parts: Vec<f64> = tok
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::InvalidArgument(format!("cannot parse direction '{tok}'")))?;
    if parts.len() != 3 {
        return Err(Error::InvalidArgument(format!("direction '{tok}' needs three components")));
    }
    Ok(Vec3::new(parts[0], parts[1], parts[2]))
}

impl fmt::Display for DirectionSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.dirs.iter().map(|d| format!("{},{},{}", d.x, d.y, d.z)).collect();
        write!(f, "{}", parts.join("|"))
    }
}

/// How the filter chooses candidate directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MillingMode {
    /// No milling constraint.
    Off,
    ThreeAxis { directions: DirectionSet },
    Hemisphere,
    Normal,
    Heat,
}

impl MillingMode {
    pub fn name(&self) -> &'static str {
        match self {
            MillingMode::Off => "off",
            MillingMode::ThreeAxis { .. } => "three_axis",
            MillingMode::Hemisphere => "hemisphere",
            MillingMode::Normal => "normal",
            MillingMode::Heat => "heat",
        }
    }

    /// `off`, `hemisphere`, `normal`, `heat`, or `three_axis` with the given
    /// direction list.
    pub fn parse(name: &str, dirs: Option<&str>) -> Result<Self> {
        match name {
            "off" => Ok(MillingMode::Off),
            "hemisphere" => Ok(MillingMode::Hemisphere),
            "normal" => Ok(MillingMode::Normal),
            "heat" => Ok(MillingMode::Heat),
            "three_axis" | "3axis" | "3-axis" => {
                let dirs = dirs.ok_or_else(|| Error::InvalidArgument("3-axis mode needs a direction list".into()))?;
                Ok(MillingMode::ThreeAxis { directions: dirs.parse()? })
            }
            other => Err(Error::InvalidArgument(format!("unknown milling mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MillTestResult {
    pub accessible: bool,
    /// `-m . n` when accessible, 0 otherwise.
    pub eta_candidate: f64,
    /// Where the blocking ray met its iso-surface.
    pub hit: Option<Vec3>,
}

impl MillTestResult {
    fn blocked(hit: Option<Vec3>) -> Self {
        Self { accessible: false, eta_candidate: 0.0, hit }
    }
}

/// Test whether the tool can touch the sample with normal `n` from direction
/// `m`. `p` is the bit tip centre, `x + n r_b`.
pub fn milling_test(ls: &LevelSet, n: &Vec3, p: &Vec3, m: &Vec3, tool: &ToolModel) -> MillTestResult {
    if n.dot(m) >= 0.0 {
        return MillTestResult::blocked(None);
    }
    let back = -m;
    if let Some(hit) = ls.raycast(p, &back, tool.bit_radius) {
        return MillTestResult::blocked(Some(hit));
    }
    let head = p + back * (tool.bit_length + tool.head_radius);
    if let Some(hit) = ls.raycast(&head, &back, tool.head_radius) {
        return MillTestResult::blocked(Some(hit));
    }
    MillTestResult { accessible: true, eta_candidate: (-m.dot(n)).min(1.0), hit: None }
}

/// Per-sample filter values and the direction that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterField {
    pub eta: Vec<f64>,
    pub best: Vec<Option<Vec3>>,
    /// Number of milling tests run per sample.
    pub tests: Vec<usize>,
}

impl FilterField {
    pub fn len(&self) -> usize {
        self.eta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eta.is_empty()
    }

    /// Fraction of samples with `eta > 0`.
    pub fn accessible_fraction(&self) -> f64 {
        if self.eta.is_empty() {
            return 1.0;
        }
        self.eta.iter().filter(|&&e| e > 0.0).count() as f64 / self.eta.len() as f64
    }

    fn from_parts(parts: Vec<(f64, Option<Vec3>, usize)>) -> Self {
        let mut out = Self { eta: Vec::with_capacity(parts.len()), best: Vec::new(), tests: Vec::new() };
        for (e, b, t) in parts {
            out.eta.push(e);
            out.best.push(b);
            out.tests.push(t);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchOptions {
    pub max_iters: usize,
    /// Heat-search trajectory step; `None` means one grid spacing.
    pub heat_step: Option<f64>,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self { max_iters: 8, heat_step: None }
    }
}

fn check_band(ls: &LevelSet, tool: &ToolModel) -> Result<()> {
    tool.validate()?;
    if ls.band() <= tool.head_radius {
        return Err(Error::BandTooThin { offset: tool.head_radius, band: ls.band() });
    }
    Ok(())
}

/// Fixed direction set: `eta = max |m_i . n|` over accessible directions,
/// ties resolved towards the lowest index.
pub fn filter_3axis(ls: &LevelSet, samples: &[SurfaceSample], dirs: &DirectionSet, tool: &ToolModel) -> Result<FilterField> {
    check_band(ls, tool)?;
    let parts = samples
        .par_iter()
        .map(|s| {
            let p = s.position + s.normal * tool.bit_radius;
            let mut eta = 0.0;
            let mut best = None;
            for m in dirs.directions() {
                let r = milling_test(ls, &s.normal, &p, m, tool);
                if r.accessible && r.eta_candidate > eta {
                    eta = r.eta_candidate;
                    best = Some(*m);
                }
            }
            (eta, best, dirs.len())
        })
        .collect();
    Ok(FilterField::from_parts(parts))
}

/// The 26 directions from the centre of a cube to its face centres, edge
/// midpoints and corners.
pub fn hemisphere_directions() -> DirectionSet {
    let mut dirs = Vec::with_capacity(26);
    for k in -1i32..=1 {
        for j in -1i32..=1 {
            for i in -1i32..=1 {
                if i != 0 || j != 0 || k != 0 {
                    dirs.push(Vec3::new(i as f64, j as f64, k as f64));
                }
            }
        }
    }
    // face centres first so that ties prefer axis directions
    dirs.sort_by_key(|d| d.iter().filter(|c| **c != 0.0).count());
    DirectionSet::new(dirs).expect("26 non-zero directions")
}

pub fn filter_5axis_hemisphere(ls: &LevelSet, samples: &[SurfaceSample], tool: &ToolModel) -> Result<FilterField> {
    filter_3axis(ls, samples, &hemisphere_directions(), tool)
}

/// Walk from a blocking hit point up the distance field until it stops
/// increasing (medial axis) or flattens out (band edge).
fn climb(ls: &LevelSet, start: &Vec3) -> Vec3 {
    let h = ls.h();
    let max_steps = (ls.band() / h).ceil() as usize;
    let mut y = *start;
    let mut phi = ls.value(&y);
    for _ in 0..max_steps {
        let g = ls.gradient(&y);
        let gn = g.norm();
        if gn < 1e-12 {
            break;
        }
        let next = y + g * (h / gn);
        if !ls.grid().contains(&next) {
            break;
        }
        let phi_next = ls.value(&next);
        if phi_next <= phi {
            break;
        }
        y = next;
        if phi_next - phi < 1e-3 * h {
            break;
        }
        phi = phi_next;
    }
    y
}

/// Normal search for a single sample: returns `(eta, direction, tests)`.
pub fn normal_search_sample(ls: &LevelSet, s: &SurfaceSample, tool: &ToolModel, max_iters: usize) -> (f64, Option<Vec3>, usize) {
    let p = s.position + s.normal * tool.bit_radius;
    let mut m = -s.normal;
    for it in 0..max_iters {
        let r = milling_test(ls, &s.normal, &p, &m, tool);
        if r.accessible {
            return (r.eta_candidate, Some(m), it + 1);
        }
        let Some(hit) = r.hit else { return (0.0, None, it + 1) };
        let y = climb(ls, &hit);
        let d = p - y;
        let dn = d.norm();
        if dn < 1e-9 {
            return (0.0, None, it + 1);
        }
        m = d / dn;
    }
    (0.0, None, max_iters)
}

pub fn filter_5axis_normal_search(
    ls: &LevelSet,
    samples: &[SurfaceSample],
    tool: &ToolModel,
    max_iters: usize,
) -> Result<FilterField> {
    check_band(ls, tool)?;
    if max_iters == 0 {
        return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
    }
    let parts = samples.par_iter().map(|s| normal_search_sample(ls, s, tool, max_iters)).collect();
    Ok(FilterField::from_parts(parts))
}

/// Outcome of a heat search on one sample, with the visited trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatSearchTrace {
    pub eta: f64,
    pub direction: Option<Vec3>,
    pub tests: usize,
    /// Trajectory points `y_k`, starting at the bit tip centre.
    pub trajectory: Vec<Vec3>,
}

pub fn heat_search_sample(
    ls: &LevelSet,
    s: &SurfaceSample,
    tool: &ToolModel,
    temperature: &TemperatureField,
    max_iters: usize,
    step: f64,
) -> HeatSearchTrace {
    let p = s.position + s.normal * tool.bit_radius;
    let mut y = p;
    let mut m = -s.normal;
    let mut trajectory = vec![y];
    // The gradient vanishes inside the cold layer hugging the offset part;
    // there it is read a few cells further out along the normal.
    let h = ls.h();
    let unit_grad = |y: &Vec3| -> Option<Vec3> {
        (0..4).find_map(|j| {
            let g = temperature.grad_t(&(y + s.normal * (j as f64 * h))).ok()?;
            let n = g.norm();
            (n >= 1e-9).then(|| g / n)
        })
    };
    for it in 0..max_iters {
        let r = milling_test(ls, &s.normal, &p, &m, tool);
        if r.accessible {
            return HeatSearchTrace { eta: r.eta_candidate, direction: Some(m), tests: it + 1, trajectory };
        }
        let stalled = HeatSearchTrace { eta: 0.0, direction: None, tests: it + 1, trajectory: trajectory.clone() };
        let Some(g) = unit_grad(&y) else { return stalled };
        y += g * step;
        let Some(g) = unit_grad(&y) else { return stalled };
        trajectory.push(y);
        m = -g;
    }
    HeatSearchTrace { eta: 0.0, direction: None, tests: max_iters, trajectory }
}

pub fn filter_5axis_heat_search(
    ls: &LevelSet,
    samples: &[SurfaceSample],
    tool: &ToolModel,
    temperature: &TemperatureField,
    max_iters: usize,
    step: f64,
) -> Result<FilterField> {
    check_band(ls, tool)?;
    if max_iters == 0 {
        return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
    }
    if !temperature.grid().same_as(ls.grid()) {
        return Err(Error::GridMismatch);
    }
    if !(step > 0.0) {
        return Err(Error::InvalidArgument("heat search step must be positive".into()));
    }
    let parts = samples
        .par_iter()
        .map(|s| {
            let t = heat_search_sample(ls, s, tool, temperature, max_iters, step);
            (t.eta, t.direction, t.tests)
        })
        .collect();
    Ok(FilterField::from_parts(parts))
}

/// Solve the heat field between `Omega` offset by `r_b` and the grid box.
pub fn heat_field_for(ls: &LevelSet, tool: &ToolModel, warm: Option<&[f64]>) -> Result<TemperatureField> {
    let plus = ls.offset(tool.bit_radius)?;
    crate::heat::solve_heat_with(&plus, crate::heat::HeatOptions::default(), warm)
}

/// Evaluate the filter for any mode except `Off`. The heat field is returned
/// as well so callers can warm-start the next solve.
pub fn compute_filter(
    ls: &LevelSet,
    samples: &[SurfaceSample],
    tool: &ToolModel,
    mode: &MillingMode,
    opts: &SearchOptions,
    heat_warm: Option<&[f64]>,
) -> Result<(FilterField, Option<TemperatureField>)> {
    match mode {
        MillingMode::Off => Ok((
            FilterField { eta: vec![1.0; samples.len()], best: vec![None; samples.len()], tests: vec![0; samples.len()] },
            None,
        )),
        MillingMode::ThreeAxis { directions } => Ok((filter_3axis(ls, samples, directions, tool)?, None)),
        MillingMode::Hemisphere => Ok((filter_5axis_hemisphere(ls, samples, tool)?, None)),
        MillingMode::Normal => Ok((filter_5axis_normal_search(ls, samples, tool, opts.max_iters)?, None)),
        MillingMode::Heat => {
            check_band(ls, tool)?;
            let t = heat_field_for(ls, tool, heat_warm)?;
            let step = opts.heat_step.unwrap_or(ls.h());
            let f = filter_5axis_heat_search(ls, samples, tool, &t, opts.max_iters, step)?;
            Ok((f, Some(t)))
        }
    }
}

/// Optional smoothing collar: `min(eta, G * eta)` with a Gaussian of width
/// `sigma` over neighbouring samples. Only ever lowers `eta`.
pub fn smooth_collar(samples: &[SurfaceSample], eta: &[f64], sigma: f64) -> Vec<f64> {
    let index = SampleIndex::from_samples(samples, sigma.max(1e-9));
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut wsum = 0.0;
            let mut acc = 0.0;
            for (j, d) in index.within(&s.position, 2.0 * sigma) {
                let w = (-0.5 * (d / sigma).powi(2)).exp();
                wsum += w;
                acc += w * eta[j];
            }
            if wsum > 0.0 {
                eta[i].min(acc / wsum)
            } else {
                eta[i]
            }
        })
        .collect()
}

#[cfg(test)]
mod tests;
