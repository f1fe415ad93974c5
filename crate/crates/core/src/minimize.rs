//! Limited-memory BFGS with Armijo backtracking.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::energy::DiscreteEnergy;
use crate::error::{Error, Result};

/// Something that can be minimized: a value and its gradient.
pub trait Objective {
    fn value(&self, x: &[f64]) -> Result<f64>;
    fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;
}

impl Objective for DiscreteEnergy {
    fn value(&self, x: &[f64]) -> Result<f64> {
        self.objective(x)
    }

    fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (e, g) = self.assemble_with_gradient(x)?;
        Ok((e.objective, g))
    }
}

/// An objective whose penalty smoothing can be tightened between stages.
pub trait SmoothedObjective: Objective {
    fn eps_pen(&self) -> f64;
    fn set_eps_pen(&mut self, eps: f64) -> Result<()>;
}

impl SmoothedObjective for DiscreteEnergy {
    fn eps_pen(&self) -> f64 {
        self.config().eps_pen
    }

    fn set_eps_pen(&mut self, eps: f64) -> Result<()> {
        DiscreteEnergy::set_eps_pen(self, eps)
    }
}

/// An [`Objective`] built from separate value and gradient closures.
pub struct FnObjective<F, G> {
    pub value: F,
    pub gradient: G,
}

impl<F, G> Objective for FnObjective<F, G>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok((self.value)(x))
    }

    fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok(((self.value)(x), (self.gradient)(x)))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinimizeOptions {
    pub max_iterations: usize,
    /// Stop once `|∇f|_∞ ≤ g_tol`.
    pub g_tol: f64,
    /// Stop once the energy decreased by less than `f_tol · max(|f|, 1)` over
    /// the last [`STALL_WINDOW`] iterations.
    pub f_tol: f64,
    pub memory: usize,
    pub armijo_c1: f64,
    pub backtrack_factor: f64,
    pub max_backtracks: usize,
    /// Seed for randomized restarts done by callers.
    pub seed: u64,
}

pub const STALL_WINDOW: usize = 10;

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions {
            max_iterations: 5000,
            g_tol: 1e-8,
            f_tol: 1e-13,
            memory: 10,
            armijo_c1: 1e-4,
            backtrack_factor: 0.5,
            max_backtracks: 60,
            seed: 0x5eed,
        }
    }
}

impl MinimizeOptions {
    pub fn validate(&self) -> Result<()> {
        let ok = self.g_tol > 0.0
            && self.f_tol > 0.0
            && self.memory >= 1
            && self.armijo_c1 > 0.0
            && self.armijo_c1 < 1.0
            && self.backtrack_factor > 0.0
            && self.backtrack_factor < 1.0
            && self.max_backtracks >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("invalid minimizer options {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Gradient,
    EnergyStall,
    MaxIterations,
    /// No step along the (reset) search direction satisfied the Armijo condition.
    LineSearchFailed,
    /// The objective or its gradient became NaN or infinite; the last finite iterate is kept.
    NonFinite(String),
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Termination::Gradient => f.write_str("gradient"),
            Termination::EnergyStall => f.write_str("energy_stall"),
            Termination::MaxIterations => f.write_str("max_iterations"),
            Termination::LineSearchFailed => f.write_str("line_search_failed"),
            Termination::NonFinite(msg) => write!(f, "non_finite: {msg}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceEntry {
    /// Continuation stage; always 0 for a plain [`minimize`] call.
    pub stage: usize,
    pub iteration: usize,
    pub energy: f64,
    pub grad_inf: f64,
    /// Accepted step length; 0 for the starting point.
    pub step: f64,
}

#[derive(Clone, Debug)]
pub struct MinimizeResult {
    pub x: Vec<f64>,
    pub energy: f64,
    pub grad_inf: f64,
    pub iterations: usize,
    pub termination: Termination,
    pub trace: Vec<TraceEntry>,
}

impl MinimizeResult {
    pub fn converged(&self) -> bool {
        matches!(self.termination, Termination::Gradient | Termination::EnergyStall)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|x| x.is_finite())
}

/// Two-loop recursion: `-H g` for the current memory.
fn direction(g: &[f64], memory: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for (s, y, rho) in memory.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = memory.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in memory.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

pub fn minimize<O: Objective + ?Sized>(objective: &O, x0: &[f64], opts: &MinimizeOptions) -> Result<MinimizeResult> {
    opts.validate()?;
    let (f0, g0) = objective.value_and_gradient(x0)?;
    if !f0.is_finite() || !all_finite(&g0) {
        return Err(Error::NonFinite { what: "objective at the starting point", element: 0 });
    }
    let mut x = x0.to_vec();
    let mut f = f0;
    let mut g = g0;
    let mut trace = vec![TraceEntry { stage: 0, iteration: 0, energy: f, grad_inf: inf_norm(&g), step: 0.0 }];
    let mut memory: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut iterations = 0;

    let finish = |x: Vec<f64>, f: f64, g: &[f64], iterations, termination, trace| MinimizeResult {
        x,
        energy: f,
        grad_inf: inf_norm(g),
        iterations,
        termination,
        trace,
    };

    loop {
        if inf_norm(&g) <= opts.g_tol {
            return Ok(finish(x, f, &g, iterations, Termination::Gradient, trace));
        }
        if iterations >= STALL_WINDOW {
            let past = trace[trace.len() - 1 - STALL_WINDOW].energy;
            if past - f < opts.f_tol * f.abs().max(1.0) {
                return Ok(finish(x, f, &g, iterations, Termination::EnergyStall, trace));
            }
        }
        if iterations >= opts.max_iterations {
            return Ok(finish(x, f, &g, iterations, Termination::MaxIterations, trace));
        }

        let mut d = direction(&g, &memory);
        let mut gd = dot(&g, &d);
        if !(gd < 0.0) {
            memory.clear();
            d = g.iter().map(|v| -v).collect();
            gd = -dot(&g, &g);
        }
        // without curvature information, start from a step of unit infinity norm
        let mut step = if memory.is_empty() { 1.0f64.min(1.0 / inf_norm(&d)) } else { 1.0 };

        let mut accepted = None;
        let mut x_new = vec![0.0; x.len()];
        for _ in 0..opts.max_backtracks {
            for ((xn, xi), di) in x_new.iter_mut().zip(&x).zip(&d) {
                *xn = xi + step * di;
            }
            let fv = match objective.value(&x_new) {
                Ok(v) => v,
                Err(Error::NonFinite { .. }) => f64::INFINITY,
                Err(e) => return Err(e),
            };
            if fv.is_finite() && fv <= f + opts.armijo_c1 * step * gd && fv < f {
                accepted = Some(fv);
                break;
            }
            step *= opts.backtrack_factor;
        }
        let Some(_) = accepted else {
            if !memory.is_empty() {
                // retry once along steepest descent
                memory.clear();
                continue;
            }
            return Ok(finish(x, f, &g, iterations, Termination::LineSearchFailed, trace));
        };

        let (f_new, g_new) = match objective.value_and_gradient(&x_new) {
            Ok(v) => v,
            Err(Error::NonFinite { what, element }) => {
                let msg = format!("{what} on element {element} after iteration {iterations}");
                return Ok(finish(x, f, &g, iterations, Termination::NonFinite(msg), trace));
            }
            Err(e) => return Err(e),
        };
        if !f_new.is_finite() || !all_finite(&g_new) {
            let msg = format!("gradient not finite after iteration {iterations}");
            return Ok(finish(x, f, &g, iterations, Termination::NonFinite(msg), trace));
        }

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if memory.len() == opts.memory {
                memory.pop_front();
            }
            memory.push_back((s, y, 1.0 / sy));
        }
        x = x_new;
        f = f_new;
        g = g_new;
        iterations += 1;
        trace.push(TraceEntry { stage: 0, iteration: iterations, energy: f, grad_inf: inf_norm(&g), step });
    }
}

/// Minimizes `energy` through a sequence of decreasing penalty smoothings,
/// warm-starting each stage from the previous one and finishing at the
/// configured `eps_pen`. Entries of `schedule` not above the final value are
/// skipped. The trace is monotone within each stage only, since lowering the
/// smoothing raises the objective.
pub fn minimize_with_continuation<O: SmoothedObjective + ?Sized>(
    energy: &mut O,
    x0: &[f64],
    opts: &MinimizeOptions,
    schedule: &[f64],
) -> Result<MinimizeResult> {
    let final_eps = energy.eps_pen();
    let stages: Vec<f64> = schedule.iter().copied().filter(|&e| e > final_eps).chain([final_eps]).collect();
    let mut x = x0.to_vec();
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut last = None;
    for (stage, &eps) in stages.iter().enumerate() {
        energy.set_eps_pen(eps)?;
        let run = minimize(&*energy, &x, opts);
        let r = match run {
            Ok(r) => r,
            Err(e) => {
                energy.set_eps_pen(final_eps)?;
                return Err(e);
            }
        };
        trace.extend(r.trace.iter().map(|t| TraceEntry { stage, iteration: t.iteration + iterations, ..*t }));
        iterations += r.iterations;
        x = r.x.clone();
        let stop = matches!(r.termination, Termination::NonFinite(_));
        last = Some(r);
        if stop {
            break;
        }
    }
    energy.set_eps_pen(final_eps)?;
    let r = last.expect("at least one stage");
    let energy_value = energy.value(&r.x)?;
    Ok(MinimizeResult { energy: energy_value, iterations, trace, ..r })
}

/// Worst relative error between the analytic gradient and central
/// differences, over every coordinate. Errors are relative to
/// `max(|g_i|, |fd_i|, 1)`.
pub fn check_gradient<O: Objective + ?Sized>(objective: &O, x: &[f64], step: f64) -> Result<f64> {
    if !(step > 0.0) {
        return Err(Error::Parameter(format!("finite-difference step must be positive, got {step}")));
    }
    let (_, g) = objective.value_and_gradient(x)?;
    let mut xp = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        xp[i] = x[i] + step;
        let fp = objective.value(&xp)?;
        xp[i] = x[i] - step;
        let fm = objective.value(&xp)?;
        xp[i] = x[i];
        let fd = (fp - fm) / (2.0 * step);
        let scale = g[i].abs().max(fd.abs()).max(1.0);
        worst = worst.max((g[i] - fd).abs() / scale);
    }
    Ok(worst)
}
