//! Direct search over feasible periodic controls.
//!
//! The search space is uniform-grid piecewise-constant controls. Every iterate
//! is projected back onto the box and the two mean constraints, so the best
//! value found can be compared directly with the constant-control optimum
//! `mean0 / (mean0 + mean1)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::occupancy::periodic_orbit;
use crate::signals::{
    project_to_feasible, Channel, ControlBounds, MeanTargets, PeriodicControl, PiecewiseSignal,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub n_pieces: usize,
    pub max_iters: usize,
    /// Initial step along the finite-difference gradient.
    pub step_size: f64,
    pub fd_epsilon: f64,
    /// Stop once an accepted step moves the values less than this.
    pub tolerance: f64,
    pub seed: u64,
    pub restarts: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            n_pieces: 16,
            max_iters: 200,
            step_size: 1.0,
            fd_epsilon: 1e-6,
            tolerance: 1e-9,
            seed: 0,
            restarts: 20,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_pieces == 0 {
            return Err(Error::Config("n_pieces must be at least 1".into()));
        }
        for (name, v) in [
            ("step_size", self.step_size),
            ("fd_epsilon", self.fd_epsilon),
            ("tolerance", self.tolerance),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Normalized steady-state throughput `(1/T) ∫ u1 x1 dt / mean(u1)`.
pub fn objective(ctrl: &PeriodicControl) -> f64 {
    periodic_orbit(ctrl).throughput_normalized
}

/// SplitMix64 step; spreads a base seed over per-sample streams.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform piece values in the box, projected onto both mean constraints.
pub fn random_feasible(
    seed: u64,
    bounds: ControlBounds,
    means: MeanTargets,
    period: f64,
    n_pieces: usize,
) -> Result<PeriodicControl> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lengths = vec![period / n_pieces.max(1) as f64; n_pieces];
    let mut draw = |target: f64| -> Result<Vec<f64>> {
        let raw: Vec<f64> = (0..n_pieces)
            .map(|_| rng.gen_range(bounds.lower..=bounds.upper))
            .collect();
        project_to_feasible(&raw, &lengths, bounds, target)
    };
    let values0 = draw(means.mean0)?;
    let values1 = draw(means.mean1)?;
    PeriodicControl::uniform(period, values0, values1, bounds)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceEntry {
    pub restart: usize,
    pub iteration: usize,
    pub objective: f64,
    pub step_norm: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RestartSummary {
    pub restart: usize,
    pub start_objective: f64,
    pub final_objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Central finite-difference gradient with respect to each channel's piece values.
pub fn finite_difference_gradient<F>(ctrl: &PeriodicControl, eps: f64, objective: &F) -> [Vec<f64>; 2]
where
    F: Fn(&PeriodicControl) -> f64 + ?Sized,
{
    let b = ctrl.bounds();
    let relaxed = ControlBounds::new((b.lower - 2.0 * eps).max(b.lower * 0.5), b.upper + 2.0 * eps)
        .expect("relaxed bounds stay positive");
    let grid = ctrl.breakpoints().to_vec();
    let base = [ctrl.values(Channel::Inflow).to_vec(), ctrl.values(Channel::Outflow).to_vec()];
    let eval = |vals: &[Vec<f64>; 2]| {
        let c = PeriodicControl::new(ctrl.period(), grid.clone(), vals[0].clone(), vals[1].clone(), relaxed)
            .expect("perturbed control stays in relaxed bounds");
        objective(&c)
    };
    let mut grad = [vec![0.0; ctrl.n_pieces()], vec![0.0; ctrl.n_pieces()]];
    for ch in 0..2 {
        for i in 0..ctrl.n_pieces() {
            let mut plus = base.clone();
            let mut minus = base.clone();
            plus[ch][i] += eps;
            minus[ch][i] -= eps;
            grad[ch][i] = (eval(&plus) - eval(&minus)) / (2.0 * eps);
        }
    }
    grad
}

/// Removes the component that would change a channel mean.
pub fn tangent_component(grad: &[f64], lengths: &[f64]) -> Vec<f64> {
    let total: f64 = lengths.iter().sum();
    let mean = grad.iter().zip(lengths).map(|(g, l)| g * l).sum::<f64>() / total;
    grad.iter().map(|g| g - mean).collect()
}

/// Result of one projected-ascent run.
#[derive(Debug, Clone)]
pub struct AscentRun {
    pub control: PeriodicControl,
    pub value: f64,
    pub trace: Vec<TraceEntry>,
    pub summary: RestartSummary,
}

/// Projected gradient ascent from `start` on an arbitrary objective.
///
/// Steps that do not improve the objective are rejected and halve the step;
/// accepted steps grow it by half again. The trace is therefore monotone over
/// accepted entries.
pub fn ascend<F>(
    start: PeriodicControl,
    means: MeanTargets,
    cfg: &SolverConfig,
    restart: usize,
    objective: &F,
) -> Result<AscentRun>
where
    F: Fn(&PeriodicControl) -> f64 + ?Sized,
{
    let lengths = start.piece_lengths();
    let bounds = start.bounds();
    let mut current = start;
    let mut value = objective(&current);
    let start_objective = value;
    let mut step = cfg.step_size;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for iteration in 0..cfg.max_iters {
        iterations = iteration + 1;
        if current.n_pieces() == 1 {
            // a single piece is pinned to the means
            converged = true;
            break;
        }
        let grad = finite_difference_gradient(&current, cfg.fd_epsilon, objective);
        let mut candidate_vals = [Vec::new(), Vec::new()];
        for ch in Channel::BOTH {
            let v = current.values(ch);
            let moved: Vec<f64> = v.iter().zip(&grad[ch.index()]).map(|(x, g)| x + step * g).collect();
            candidate_vals[ch.index()] = project_to_feasible(&moved, &lengths, bounds, means.get(ch))?;
        }
        let step_norm = Channel::BOTH
            .iter()
            .flat_map(|ch| {
                current
                    .values(*ch)
                    .iter()
                    .zip(&candidate_vals[ch.index()])
                    .map(|(a, b)| (a - b) * (a - b))
            })
            .sum::<f64>()
            .sqrt();
        let [v0, v1] = candidate_vals;
        let candidate = PeriodicControl::new(current.period(), current.breakpoints().to_vec(), v0, v1, bounds)?;
        let cand_value = objective(&candidate);
        let accepted = cand_value > value;
        trace.push(TraceEntry {
            restart,
            iteration,
            objective: if accepted { cand_value } else { value },
            step_norm,
            accepted,
        });
        if accepted {
            current = candidate;
            value = cand_value;
            step *= 1.5;
            if step_norm < cfg.tolerance {
                converged = true;
                break;
            }
        } else {
            step *= 0.5;
            if step_norm < cfg.tolerance || step < 1e-12 {
                converged = true;
                break;
            }
        }
    }

    Ok(AscentRun {
        control: current,
        value,
        trace,
        summary: RestartSummary {
            restart,
            start_objective,
            final_objective: value,
            iterations,
            converged,
        },
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct OptimizationReport {
    #[serde(skip)]
    pub best_control: PeriodicControl,
    pub best_raw: f64,
    pub best_normalized: f64,
    /// Value of the constant control `(mean0, mean1)`.
    pub constant_normalized: f64,
    pub analytic_optimum: f64,
    pub gain_of_entrainment: f64,
    pub best_restart: Option<usize>,
    pub restarts: Vec<RestartSummary>,
    #[serde(skip)]
    pub trace: Vec<TraceEntry>,
}

/// Multi-restart projected ascent on the normalized throughput.
///
/// With zero restarts the report holds only the constant control.
pub fn projected_ascent(
    cfg: &SolverConfig,
    bounds: ControlBounds,
    means: MeanTargets,
    period: f64,
) -> Result<OptimizationReport> {
    cfg.validate()?;
    let constant = PeriodicControl::constant(period, bounds, means)?;
    let constant_orbit = periodic_orbit(&constant);
    let analytic_optimum = means.steady_occupancy();

    let runs: Vec<AscentRun> = (0..cfg.restarts)
        .into_par_iter()
        .map(|r| {
            let start = random_feasible(derive_seed(cfg.seed, r as u64), bounds, means, period, cfg.n_pieces)?;
            ascend(start, means, cfg, r, &objective)
        })
        .collect::<Result<_>>()?;

    // max over restarts, ties to the lowest index
    let best = runs
        .iter()
        .enumerate()
        .fold(None::<(usize, f64)>, |acc, (i, run)| match acc {
            Some((_, v)) if v >= run.value => acc,
            _ => Some((i, run.value)),
        });

    let (best_control, best_restart) = match best {
        Some((i, _)) => (runs[i].control.clone(), Some(i)),
        None => (constant.clone(), None),
    };
    let orbit = periodic_orbit(&best_control);
    let trace = runs.iter().flat_map(|r| r.trace.iter().copied()).collect();
    Ok(OptimizationReport {
        best_raw: orbit.throughput_raw,
        best_normalized: orbit.throughput_normalized,
        constant_normalized: constant_orbit.throughput_normalized,
        analytic_optimum,
        gain_of_entrainment: orbit.throughput_normalized - analytic_optimum,
        best_restart,
        restarts: runs.into_iter().map(|r| r.summary).collect(),
        trace,
        best_control,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepReport {
    pub samples: usize,
    pub max_normalized: f64,
    pub argmax: Option<usize>,
    pub analytic_optimum: f64,
    /// Samples above `analytic_optimum + tolerance`.
    pub exceedances: usize,
    pub tolerance: f64,
}

/// Evaluates `n_samples` random feasible controls.
pub fn monte_carlo_sweep(
    bounds: ControlBounds,
    means: MeanTargets,
    period: f64,
    n_pieces: usize,
    n_samples: usize,
    seed: u64,
    tolerance: f64,
) -> Result<SweepReport> {
    let analytic_optimum = means.steady_occupancy();
    let values: Vec<f64> = (0..n_samples)
        .into_par_iter()
        .map(|i| {
            random_feasible(derive_seed(seed, i as u64), bounds, means, period, n_pieces)
                .map(|c| objective(&c))
        })
        .collect::<Result<_>>()?;
    let (argmax, max_normalized) = values
        .iter()
        .enumerate()
        .fold((None, f64::NEG_INFINITY), |(ai, av), (i, &v)| {
            if v > av {
                (Some(i), v)
            } else {
                (ai, av)
            }
        });
    Ok(SweepReport {
        samples: n_samples,
        max_normalized,
        argmax,
        analytic_optimum,
        exceedances: values.iter().filter(|&&v| v > analytic_optimum + tolerance).count(),
        tolerance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BangBangResult {
    pub max_normalized: f64,
    pub phase0: f64,
    pub phase1: f64,
    pub candidates: usize,
}

/// Two-level control with the duty cycle fixed by the channel mean.
pub fn bangbang_control(
    bounds: ControlBounds,
    means: MeanTargets,
    period: f64,
    phase0: f64,
    phase1: f64,
) -> Result<PeriodicControl> {
    let duty = |m: f64| (m - bounds.lower) / (bounds.upper - bounds.lower);
    let s0 = PiecewiseSignal::square_wave(period, bounds.upper, bounds.lower, duty(means.mean0), phase0)?;
    let s1 = PiecewiseSignal::square_wave(period, bounds.upper, bounds.lower, duty(means.mean1), phase1)?;
    PeriodicControl::from_channels(&s0, &s1, bounds)
}

/// Exhaustive search over phase offsets of single-switch bang-bang channels.
pub fn bangbang_oracle(
    bounds: ControlBounds,
    means: MeanTargets,
    period: f64,
    phase_grid: usize,
) -> Result<BangBangResult> {
    MeanTargets::new(means.mean0, means.mean1, &bounds)?;
    let g = phase_grid.max(1);
    let rows: Vec<(f64, f64, f64)> = (0..g)
        .into_par_iter()
        .map(|j| -> Result<(f64, f64, f64)> {
            let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
            for k in 0..g {
                let (p0, p1) = (j as f64 / g as f64, k as f64 / g as f64);
                let v = objective(&bangbang_control(bounds, means, period, p0, p1)?);
                if v > best.0 {
                    best = (v, p0, p1);
                }
            }
            Ok(best)
        })
        .collect::<Result<_>>()?;
    let best = rows
        .into_iter()
        .fold((f64::NEG_INFINITY, 0.0, 0.0), |a, r| if r.0 > a.0 { r } else { a });
    Ok(BangBangResult {
        max_normalized: best.0,
        phase0: best.1,
        phase1: best.2,
        candidates: g * g,
    })
}
