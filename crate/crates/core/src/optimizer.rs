//! Volume-constrained compliance minimization with millability-filtered
//! level-set advection.
//!
//! The volume constraint `g = V/V_D - target <= 0` is handled with an
//! inequality augmented Lagrangian
//! `L = C/C0 + mu/2 max(0, lambda/mu + g)^2 - lambda^2/(2 mu)`.
//! Each inner iteration filters the descent speed `v = -dL` with the milling
//! filter, picks a step by backtracking and advects the shape.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{self, Discretization, ElasticState, LoadCase, Material, SolveOptions};
use crate::levelset::{LevelSet, SurfaceSample, SymmetryPlane};
use crate::milling::{self, FilterField, MillingMode, SearchOptions, ToolModel};

/// Update rule for inaccessible boundary regions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Algorithm {
    /// Never grow; inaccessible points stay put.
    Strict,
    /// Inaccessible points grow with speed `alpha * max |v|`.
    Relaxed { alpha: f64 },
}

impl Default for Algorithm {
    fn default() -> Self {
        Algorithm::Strict
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub max_iters: usize,
    /// Inner iterations between multiplier updates.
    pub outer_every: usize,
    pub lambda0: f64,
    pub mu0: f64,
    pub mu_max: f64,
    pub halvings: usize,
    /// Relative change of `L` over `window` iterations counted as converged.
    pub rel_change: f64,
    pub window: usize,
    /// Allowed `|g|` at convergence.
    pub feasibility: f64,
    pub search: SearchOptions,
    /// Width of the optional smoothing collar on `eta`.
    pub collar: Option<f64>,
    pub fem: SolveOptions,
    /// Close the final shape by the bit radius (milling modes only).
    pub close_final: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            outer_every: 10,
            lambda0: 0.0,
            mu0: 1.0,
            mu_max: 1e6,
            halvings: 8,
            rel_change: 0.01,
            window: 5,
            feasibility: 0.005,
            search: SearchOptions::default(),
            collar: None,
            fem: SolveOptions::default(),
            close_final: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Problem {
    pub domain: LevelSet,
    pub preserved: Option<LevelSet>,
    pub material: Material,
    pub load_cases: Vec<LoadCase>,
    pub volume_fraction: f64,
    pub tool: ToolModel,
    pub mode: MillingMode,
    pub symmetry: Vec<SymmetryPlane>,
    pub algorithm: Algorithm,
    pub options: RunOptions,
}

impl Problem {
    pub fn validate(&self) -> Result<()> {
        if !(self.volume_fraction > 0.0 && self.volume_fraction < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "volume fraction must lie in (0, 1), got {}",
                self.volume_fraction
            )));
        }
        if let Algorithm::Relaxed { alpha } = self.algorithm {
            if !(alpha > 0.0 && alpha <= 1.0) {
                return Err(Error::InvalidArgument(format!("relaxed alpha must lie in (0, 1], got {alpha}")));
            }
        }
        self.tool.validate()?;
        self.material.validate()?;
        if self.load_cases.is_empty() {
            return Err(Error::InvalidArgument("no load cases".into()));
        }
        if let Some(p) = &self.preserved {
            if !p.grid().same_as(self.domain.grid()) {
                return Err(Error::GridMismatch);
            }
            let h = self.domain.h();
            let outside = p
                .values()
                .iter()
                .zip(self.domain.values())
                .any(|(&keep, &dom)| keep < -0.5 * h && dom > 0.5 * h);
            if outside {
                return Err(Error::InvalidArgument("preserved regions leave the design domain".into()));
            }
        }
        Ok(())
    }

    pub fn domain_volume(&self) -> f64 {
        self.domain.volume()
    }

    /// Apply symmetry, preserved regions and the domain bound.
    pub fn confine(&self, ls: &LevelSet) -> Result<LevelSet> {
        ls.confine(self.preserved.as_ref(), Some(&self.domain), &self.symmetry)
    }
}

/// Multiplier state and history.
#[derive(Debug, Clone, PartialEq)]
pub struct AugLagState {
    pub lambda: f64,
    pub mu: f64,
    /// Compliance of the starting shape, used to normalize.
    pub c0: f64,
    last_outer_g: Option<f64>,
    pub history: Vec<IterationRecord>,
}

impl AugLagState {
    pub fn new(lambda: f64, mu: f64, c0: f64) -> Self {
        Self { lambda, mu, c0, last_outer_g: None, history: Vec::new() }
    }

    /// `L` for a compliance and constraint value.
    pub fn lagrangian(&self, compliance: f64, g: f64) -> f64 {
        let shifted = (self.lambda / self.mu + g).max(0.0);
        compliance / self.c0 + 0.5 * self.mu * shifted * shifted - self.lambda * self.lambda / (2.0 * self.mu)
    }

    /// Coefficient of the volume term in `dL`, per unit of domain volume.
    pub fn volume_weight(&self, g: f64) -> f64 {
        (self.lambda + self.mu * g).max(0.0)
    }
}

/// Multiplier update: `lambda <- max(0, lambda + mu g)`, and `mu` doubles
/// (up to `mu_max`) unless `|g|` at least halved since the previous update.
pub fn outer_update(state: &mut AugLagState, g: f64, mu_max: f64) {
    state.lambda = (state.lambda + state.mu * g).max(0.0);
    let halved = state.last_outer_g.is_some_and(|prev| g.abs() <= 0.5 * prev.abs());
    if !halved {
        state.mu = (2.0 * state.mu).min(mu_max);
    }
    state.last_outer_g = Some(g);
}

/// One row of the run log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub lagrangian: f64,
    pub compliance: f64,
    pub volume_fraction: f64,
    pub lambda: f64,
    pub mu: f64,
    pub eps: f64,
    pub max_speed: f64,
    pub frac_eta_zero: f64,
    /// Whether the line search found a decrease.
    pub accepted: bool,
    /// `L` of the shape produced by this iteration.
    pub lagrangian_after: f64,
}

pub const CSV_HEADER: &str = "iter,L,compliance,volume_fraction,lambda,mu,eps,max_speed,frac_eta_zero";

impl IterationRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.10e},{:.10e},{:.8},{:.10e},{:.10e},{:.6e},{:.6e},{:.6}",
            self.iter,
            self.lagrangian,
            self.compliance,
            self.volume_fraction,
            self.lambda,
            self.mu,
            self.eps,
            self.max_speed,
            self.frac_eta_zero
        )
    }
}

pub fn write_csv(records: &[IterationRecord], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in records {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}

/// A shape with its elastic solution and objective values.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub shape: LevelSet,
    pub fem: ElasticState,
    pub compliance: f64,
    pub volume_fraction: f64,
    pub g: f64,
}

pub fn evaluate(problem: &Problem, shape: LevelSet, warm: Option<&ElasticState>) -> Result<Evaluation> {
    let disc = Discretization::discretize(&shape)?;
    let state = fem::solve(&disc, &problem.material, &problem.load_cases, &problem.options.fem, warm)?;
    let volume_fraction = shape.volume() / problem.domain_volume();
    Ok(Evaluation {
        compliance: state.mean_compliance(),
        volume_fraction,
        g: volume_fraction - problem.volume_fraction,
        fem: state,
        shape,
    })
}

/// Boundary samples with the Lagrangian value and its per-sample shape
/// gradient `dL` (derivative with respect to outward normal motion).
#[derive(Debug, Clone)]
pub struct Gradient {
    pub lagrangian: f64,
    pub samples: Vec<SurfaceSample>,
    pub dl: Vec<f64>,
}

pub fn lagrangian_gradient(problem: &Problem, eval: &Evaluation, state: &AugLagState) -> Gradient {
    let samples = eval.shape.sample_boundary();
    let dc = eval.fem.shape_gradient_compliance(&samples);
    let vol = state.volume_weight(eval.g) / problem.domain_volume();
    let dl = dc.iter().map(|&s| -s / state.c0 + vol).collect();
    Gradient { lagrangian: state.lagrangian(eval.compliance, eval.g), samples, dl }
}

/// `v = -dL`, zero on samples within `h` of a preserved region.
pub fn descent_speed(problem: &Problem, grad: &Gradient) -> Vec<f64> {
    let mut v: Vec<f64> = grad.dl.iter().map(|d| -d).collect();
    if let Some(keep) = &problem.preserved {
        let h = keep.h();
        for (vi, s) in v.iter_mut().zip(&grad.samples) {
            if keep.value(&s.position) < h {
                *vi = 0.0;
            }
        }
    }
    v
}

/// Filtered per-sample speeds and the filter they came from.
#[derive(Debug, Clone)]
pub struct FilteredSpeed {
    pub speed: Vec<f64>,
    pub eta: Vec<f64>,
    pub filter: FilterField,
}

/// Apply the milling filter to `v = -dL`. Strict: `eta = 0` wherever
/// `v > 0`. Relaxed: points with `eta = 0` get `alpha max |v|`.
pub fn filter_speed(algorithm: Algorithm, v: &[f64], filter: FilterField, collar_eta: Option<Vec<f64>>) -> FilteredSpeed {
    let mut eta = collar_eta.unwrap_or_else(|| filter.eta.clone());
    let speed = match algorithm {
        Algorithm::Strict => {
            // v = 0 moves nothing either way; gating it too keeps eta
            // meaning "may move here".
            for (e, &vi) in eta.iter_mut().zip(v) {
                if vi >= 0.0 {
                    *e = 0.0;
                }
            }
            v.iter().zip(&eta).map(|(vi, e)| vi * e).collect()
        }
        Algorithm::Relaxed { alpha } => {
            let vmax = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            v.iter().zip(&eta).map(|(&vi, &e)| if e == 0.0 { alpha * vmax } else { e * vi }).collect()
        }
    };
    FilteredSpeed { speed, eta, filter }
}

/// Relative changes of `L` below this are not trusted as decreases.
const SOLVER_NOISE: f64 = 1e-7;

/// Result of a backtracking line search.
#[derive(Debug, Clone)]
pub struct LineSearch {
    pub eps: f64,
    pub accepted: Option<Evaluation>,
    pub trials: usize,
}

/// Advect by `eps` (initially `h/2` over the largest speed), halving until
/// `L` drops below `l_now` or `halvings` halvings have been tried.
pub fn line_search(
    problem: &Problem,
    current: &Evaluation,
    node_speed: &[f64],
    state: &AugLagState,
    l_now: f64,
) -> Result<LineSearch> {
    let vmax = node_speed.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let h = current.shape.h();
    if vmax == 0.0 {
        return Ok(LineSearch { eps: f64::INFINITY, accepted: None, trials: 0 });
    }
    let mut eps = 0.5 * h / vmax;
    for trial in 0..=problem.options.halvings {
        let moved = current.shape.advect(node_speed, eps)?;
        let shape = problem.confine(&moved)?;
        match evaluate(problem, shape, Some(&current.fem)) {
            Ok(eval) => {
                // demand a decrease above the solver's noise floor
                if state.lagrangian(eval.compliance, eval.g) < l_now - SOLVER_NOISE * l_now.abs() {
                    return Ok(LineSearch { eps, accepted: Some(eval), trials: trial + 1 });
                }
            }
            // a step that disconnects the structure is simply too long
            Err(Error::FloatingComponent { .. }) | Err(Error::NoFixedNodes(_)) | Err(Error::EmptyShape) => {}
            Err(e) => return Err(e),
        }
        if trial < problem.options.halvings {
            eps *= 0.5;
        }
    }
    Ok(LineSearch { eps, accepted: None, trials: problem.options.halvings + 1 })
}

/// What one inner iteration saw and did, passed to run observers.
pub struct IterationView<'a> {
    pub record: &'a IterationRecord,
    /// Shape the iteration started from.
    pub before: &'a LevelSet,
    pub samples: &'a [SurfaceSample],
    pub filtered: &'a FilteredSpeed,
    /// Shape after the step (equal to `before` on a stall).
    pub after: &'a LevelSet,
}

/// The optimizer state between iterations.
pub struct Optimizer<'p> {
    problem: &'p Problem,
    pub state: AugLagState,
    current: Evaluation,
    heat_warm: Option<Vec<f64>>,
    iter: usize,
    since_outer: usize,
}

/// Outcome of one inner iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome {
    Moved,
    /// Zero filtered speed everywhere.
    Stationary,
    /// No decrease within the allowed halvings.
    Stalled,
}

impl<'p> Optimizer<'p> {
    /// Start from the confined design domain.
    pub fn new(problem: &'p Problem) -> Result<Self> {
        problem.validate()?;
        let start = problem.confine(&problem.domain)?;
        Self::from_shape(problem, start)
    }

    pub fn from_shape(problem: &'p Problem, start: LevelSet) -> Result<Self> {
        if !start.grid().same_as(problem.domain.grid()) {
            return Err(Error::GridMismatch);
        }
        let current = evaluate(problem, start, None)?;
        if !(current.compliance > 0.0) {
            return Err(Error::InvalidArgument("starting compliance is not positive; are loads set?".into()));
        }
        let o = &problem.options;
        let state = AugLagState::new(o.lambda0, o.mu0, current.compliance);
        Ok(Self { problem, state, current, heat_warm: None, iter: 0, since_outer: 0 })
    }

    pub fn current(&self) -> &Evaluation {
        &self.current
    }

    pub fn iteration(&self) -> usize {
        self.iter
    }

    fn filter(&mut self, samples: &[SurfaceSample]) -> Result<FilterField> {
        let p = self.problem;
        let (field, heat) = milling::compute_filter(
            &self.current.shape,
            samples,
            &p.tool,
            &p.mode,
            &p.options.search,
            self.heat_warm.as_deref(),
        )?;
        if let Some(t) = heat {
            self.heat_warm = Some(t.values().to_vec());
        }
        Ok(field)
    }

    /// One inner iteration.
    pub fn step(&mut self, observer: &mut dyn FnMut(&IterationView)) -> Result<StepOutcome> {
        let p = self.problem;
        let grad = lagrangian_gradient(p, &self.current, &self.state);
        let v = descent_speed(p, &grad);
        let field = self.filter(&grad.samples)?;
        let collar = p.options.collar.map(|sigma| milling::smooth_collar(&grad.samples, &field.eta, sigma));
        let filtered = filter_speed(p.algorithm, &v, field, collar);
        let node_speed = if grad.samples.is_empty() {
            vec![0.0; self.current.shape.values().len()]
        } else {
            self.current.shape.extend_normal(&grad.samples, &filtered.speed)?
        };
        let max_speed = filtered.speed.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        // Inaccessible samples, before the growth gate.
        let frac_eta_zero = 1.0 - filtered.filter.accessible_fraction();

        let ls = line_search(p, &self.current, &node_speed, &self.state, grad.lagrangian)?;
        let outcome = match (&ls.accepted, max_speed == 0.0) {
            (_, true) => StepOutcome::Stationary,
            (Some(_), false) => StepOutcome::Moved,
            (None, false) => StepOutcome::Stalled,
        };
        let before = self.current.shape.clone();
        let accepted = ls.accepted.is_some();
        if let Some(next) = ls.accepted {
            self.current = next;
        }
        let record = IterationRecord {
            iter: self.iter,
            lagrangian: grad.lagrangian,
            compliance: self.current.compliance,
            volume_fraction: self.current.volume_fraction,
            lambda: self.state.lambda,
            mu: self.state.mu,
            eps: if ls.eps.is_finite() { ls.eps } else { 0.0 },
            max_speed,
            frac_eta_zero,
            accepted,
            lagrangian_after: self.state.lagrangian(self.current.compliance, self.current.g),
        };
        log::info!(
            "iter {:3}  L {:.5}  C {:.4e}  vol {:.4}  lambda {:.3e}  mu {:.3e}  eps {:.3e}  eta0 {:.3}",
            record.iter,
            record.lagrangian,
            record.compliance,
            record.volume_fraction,
            record.lambda,
            record.mu,
            record.eps,
            record.frac_eta_zero
        );
        observer(&IterationView {
            record: &record,
            before: &before,
            samples: &grad.samples,
            filtered: &filtered,
            after: &self.current.shape,
        });
        self.state.history.push(record);
        self.iter += 1;
        self.since_outer += 1;
        if self.since_outer >= p.options.outer_every || outcome != StepOutcome::Moved {
            outer_update(&mut self.state, self.current.g, p.options.mu_max);
            self.since_outer = 0;
        }
        Ok(outcome)
    }

    fn converged(&self) -> bool {
        let o = &self.problem.options;
        let h = &self.state.history;
        if h.len() <= o.window || self.current.g.abs() >= o.feasibility {
            return false;
        }
        let now = h[h.len() - 1].lagrangian_after;
        let then = h[h.len() - 1 - o.window].lagrangian_after;
        (now - then).abs() < o.rel_change * now.abs().max(1e-12)
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    /// Final shape (closed by the bit radius when requested).
    pub shape: LevelSet,
    /// Shape before the final closing.
    pub raw_shape: LevelSet,
    pub history: Vec<IterationRecord>,
    pub compliance: f64,
    pub volume_fraction: f64,
    pub iterations: usize,
    pub converged: bool,
    pub feasible: bool,
    pub seconds: f64,
}

pub fn run(problem: &Problem) -> Result<RunResult> {
    run_with(problem, &mut |_| {})
}

/// Iterate until converged, stuck or out of iterations. Consecutive
/// stationary or stalled iterations end the run once multiplier updates stop
/// changing anything.
pub fn run_with(problem: &Problem, observer: &mut dyn FnMut(&IterationView)) -> Result<RunResult> {
    let t0 = Instant::now();
    let mut opt = Optimizer::new(problem)?;
    let mut idle = 0;
    let mut converged = false;
    while opt.iteration() < problem.options.max_iters {
        match opt.step(observer)? {
            StepOutcome::Moved => idle = 0,
            StepOutcome::Stationary | StepOutcome::Stalled => idle += 1,
        }
        if opt.converged() || (idle >= 3 && opt.current.g.abs() < problem.options.feasibility) {
            converged = true;
            break;
        }
        if idle >= 6 {
            break;
        }
    }
    finish(problem, opt, converged, t0)
}

fn finish(problem: &Problem, opt: Optimizer, converged: bool, t0: Instant) -> Result<RunResult> {
    let raw = opt.current.shape.clone();
    // Without a milling constraint there is no tool to round the part with.
    let shape = if problem.options.close_final && problem.mode != MillingMode::Off {
        let closed = raw.close(problem.tool.bit_radius)?;
        closed.confine(problem.preserved.as_ref(), Some(&problem.domain), &[])?
    } else {
        raw.clone()
    };
    let eval = evaluate(problem, shape, Some(&opt.current.fem))?;
    Ok(RunResult {
        raw_shape: raw,
        history: opt.state.history,
        compliance: eval.compliance,
        volume_fraction: eval.volume_fraction,
        iterations: opt.iter,
        converged,
        feasible: eval.g.abs() < problem.options.feasibility,
        shape: eval.shape,
        seconds: t0.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests;
