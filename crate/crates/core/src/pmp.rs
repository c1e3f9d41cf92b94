//! Pontryagin extremality certificates for the occupancy problem.
//!
//! With the cost weighted by one, the Hamiltonian is
//! `H = phi0 u0 + phi1 u1` plus a control-independent part (dropped here), with
//! switching functions
//!
//! ```text
//! phi0 = p1 (1 - x1) + p2        phi1 = x1 (1 - p1) + p3
//! ```
//!
//! and co-state `p1' = (u0 + u1) p1 - u1`, `p2, p3` constant, `p1(0) = p1(T)`.
//! The co-state is unstable forward in time, so periodic paths are solved and
//! filled backward, where the piece maps contract.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::occupancy::{periodic_orbit, propagate_piece, OccupancyOrbit};
use crate::signals::{Channel, ControlBounds, PeriodicControl};

/// Default zero band on switching-function values.
pub const DEFAULT_SWITCHING_TOL: f64 = 1e-9;

/// Co-state `p1` after holding `(u0, u1)` for `dt` (unit cost weight).
pub fn costate_propagate_piece(p1: f64, u0: f64, u1: f64, dt: f64) -> f64 {
    costate_propagate_piece_weighted(p1, u0, u1, dt, 1.0)
}

/// Forward co-state step for `p1' = (u0 + u1) p1 - weight u1`.
///
/// `weight` is the cost multiplier per unit time; `0` is the abnormal case.
pub fn costate_propagate_piece_weighted(p1: f64, u0: f64, u1: f64, dt: f64, weight: f64) -> f64 {
    let rate = u0 + u1;
    let rest = weight * u1 / rate;
    rest + (p1 - rest) * (rate * dt).exp()
}

fn costate_step_back(p_end: f64, u0: f64, u1: f64, dt: f64, weight: f64) -> f64 {
    let rate = u0 + u1;
    let rest = weight * u1 / rate;
    rest + (p_end - rest) * (-rate * dt).exp()
}

/// Periodic `p1` sampled at the control breakpoints.
#[derive(Debug, Clone, Serialize)]
pub struct CostatePath {
    pub p1_initial: f64,
    pub samples: Vec<(f64, f64)>,
    /// `|p1(T) - p1(0)|` when `p1(0)` is pushed forward through the period.
    pub transversality_residual: f64,
    /// Forward growth factor `exp(∫(u0 + u1) dt) > 1` of the period map.
    pub growth: f64,
    pub weight: f64,
}

impl CostatePath {
    /// `p1(t)`, propagated backward from the end of the active piece.
    pub fn at(&self, ctrl: &PeriodicControl, t: f64) -> f64 {
        if t >= ctrl.period() {
            return self.samples[self.samples.len() - 1].1;
        }
        let i = ctrl.piece_at(t);
        let (t_end, p_end) = self.samples[i + 1];
        let u0 = ctrl.values(Channel::Inflow)[i];
        let u1 = ctrl.values(Channel::Outflow)[i];
        costate_step_back(p_end, u0, u1, t_end - t, self.weight)
    }
}

/// Periodic co-state for the normal multiplier (unit cost weight).
pub fn costate_periodic(ctrl: &PeriodicControl) -> CostatePath {
    costate_periodic_weighted(ctrl, 1.0)
}

/// Unique periodic solution of `p1' = (u0 + u1) p1 - weight u1`.
pub fn costate_periodic_weighted(ctrl: &PeriodicControl, weight: f64) -> CostatePath {
    let pieces: Vec<_> = ctrl.pieces().collect();
    // backward map p(0) = a p(T) + b, a = exp(-S) < 1
    let mut b = 0.0;
    let mut log_a = 0.0;
    for p in pieces.iter().rev() {
        let rate = p.total_rate();
        let decay = (-rate * p.duration).exp();
        let rest = weight * p.outflow / rate;
        b = decay * b + rest * (-(-rate * p.duration).exp_m1());
        log_a -= rate * p.duration;
    }
    let p1_initial = b / (-log_a.exp_m1());

    let mut samples = vec![(0.0, 0.0); pieces.len() + 1];
    samples[pieces.len()] = (ctrl.period(), p1_initial);
    let mut p = p1_initial;
    for (i, piece) in pieces.iter().enumerate().rev() {
        p = costate_step_back(p, piece.inflow, piece.outflow, piece.duration, weight);
        samples[i] = (piece.start, p);
    }
    samples[0].1 = p1_initial;

    let forward = pieces.iter().fold(p1_initial, |p, piece| {
        costate_propagate_piece_weighted(p, piece.inflow, piece.outflow, piece.duration, weight)
    });
    CostatePath {
        p1_initial,
        samples,
        transversality_residual: (forward - p1_initial).abs(),
        growth: (-log_a).exp(),
        weight,
    }
}

/// Co-state constants and multiplier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Costate {
    pub p1_initial: f64,
    pub p2: f64,
    pub p3: f64,
    pub p0: f64,
}

/// Normalized multiplier `p0 = T / mean1`.
pub fn normal_multiplier(period: f64, mean1: f64) -> f64 {
    period / mean1
}

/// Co-state of a singular arc holding `x1 ≡ c`: `p1 ≡ 1 - c`,
/// `p2 = -(1 - c)^2`, `p3 = -c^2`.
pub fn singular_costate(c: f64, p0: f64) -> Result<Costate> {
    if !(c > 0.0 && c < 1.0) {
        return Err(Error::Control(format!("singular level {c} outside (0, 1)")));
    }
    Ok(Costate {
        p1_initial: 1.0 - c,
        p2: -(1.0 - c) * (1.0 - c),
        p3: -c * c,
        p0,
    })
}

/// `(phi0, phi1)` at one instant.
pub fn switching_functions(x1: f64, p1: f64, p2: f64, p3: f64) -> (f64, f64) {
    (p1 * (1.0 - x1) + p2, x1 * (1.0 - p1) + p3)
}

/// `(phi0', phi1')` inside a piece with rates `(u0, u1)`.
pub fn switching_derivatives(x1: f64, p1: f64, u0: f64, u1: f64) -> (f64, f64) {
    (u1 * (p1 - (1.0 - x1)), u0 * (1.0 - x1 - p1))
}

/// Control-dependent part `phi0 u0 + phi1 u1` of the Hamiltonian.
pub fn hamiltonian(u0: f64, u1: f64, x1: f64, p1: f64, costate: &Costate) -> f64 {
    let (phi0, phi1) = switching_functions(x1, p1, costate.p2, costate.p3);
    phi0 * u0 + phi1 * u1
}

/// Maximizer of `phi u` over the box; `None` inside the zero band.
pub fn bang_value(phi: f64, bounds: &ControlBounds, tol: f64) -> Option<f64> {
    if phi > tol {
        Some(bounds.upper)
    } else if phi < -tol {
        Some(bounds.lower)
    } else {
        None
    }
}

/// Loss `max_s phi s - phi u` of a single channel against the box maximum.
fn channel_gap(phi: f64, u: f64, bounds: &ControlBounds) -> f64 {
    if phi > 0.0 {
        (bounds.upper - u) * phi
    } else {
        (u - bounds.lower) * (-phi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum ArcType {
    RegularPP,
    RegularMM,
    RegularPM,
    RegularMP,
    Singular0,
    Singular1,
    SingularBoth,
}

impl ArcType {
    pub fn classify(phi0: f64, phi1: f64, tol: f64) -> Self {
        let sign = |v: f64| {
            if v > tol {
                1
            } else if v < -tol {
                -1
            } else {
                0
            }
        };
        match (sign(phi0), sign(phi1)) {
            (0, 0) => ArcType::SingularBoth,
            (0, _) => ArcType::Singular0,
            (_, 0) => ArcType::Singular1,
            (1, 1) => ArcType::RegularPP,
            (-1, -1) => ArcType::RegularMM,
            (1, _) => ArcType::RegularPM,
            _ => ArcType::RegularMP,
        }
    }

    pub fn is_singular(self) -> bool {
        matches!(self, ArcType::Singular0 | ArcType::Singular1 | ArcType::SingularBoth)
    }

    pub fn is_mixed_sign(self) -> bool {
        matches!(self, ArcType::RegularPM | ArcType::RegularMP)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Arc {
    pub start: f64,
    pub end: f64,
    pub kind: ArcType,
    /// Number of samples carrying this label.
    pub samples: usize,
}

/// Sampled switching functions and the arc partition of `[0, T]`.
#[derive(Debug, Clone, Serialize)]
pub struct SwitchingRecord {
    pub times: Vec<f64>,
    pub x1: Vec<f64>,
    pub p1: Vec<f64>,
    pub phi0: Vec<f64>,
    pub phi1: Vec<f64>,
    #[serde(skip)]
    pub piece: Vec<usize>,
    /// Sample lies strictly inside a piece (switching functions differentiable).
    #[serde(skip)]
    pub interior: Vec<bool>,
    pub arcs: Vec<Arc>,
    pub tol: f64,
}

impl SwitchingRecord {
    pub fn has_mixed_sign(&self) -> bool {
        self.arcs.iter().any(|a| a.kind.is_mixed_sign())
    }

    pub fn max_abs_phi(&self) -> (f64, f64) {
        let m = |v: &[f64]| v.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
        (m(&self.phi0), m(&self.phi1))
    }
}

/// State and co-state samples on a grid of spacing at most `T / resolution`
/// that always includes the breakpoints.
#[derive(Debug, Clone)]
struct SampleGrid {
    times: Vec<f64>,
    x1: Vec<f64>,
    p1: Vec<f64>,
    u0: Vec<f64>,
    u1: Vec<f64>,
    piece: Vec<usize>,
    interior: Vec<bool>,
}

fn sample_grid(
    ctrl: &PeriodicControl,
    orbit: &OccupancyOrbit<'_>,
    path: &CostatePath,
    resolution: usize,
) -> SampleGrid {
    let spacing = ctrl.period() / resolution.max(1) as f64;
    let mut g = SampleGrid {
        times: Vec::new(),
        x1: Vec::new(),
        p1: Vec::new(),
        u0: Vec::new(),
        u1: Vec::new(),
        piece: Vec::new(),
        interior: Vec::new(),
    };
    for (i, p) in ctrl.pieces().enumerate() {
        let m = ((p.duration / spacing).ceil() as usize).max(2);
        let x_start = orbit.samples[i].1;
        let (t_end, p_end) = path.samples[i + 1];
        for k in 0..m {
            let s = p.duration * k as f64 / m as f64;
            g.times.push(p.start + s);
            g.x1.push(propagate_piece(x_start, p.inflow, p.outflow, s));
            g.p1.push(costate_step_back(p_end, p.inflow, p.outflow, t_end - (p.start + s), path.weight));
            g.u0.push(p.inflow);
            g.u1.push(p.outflow);
            g.piece.push(i);
            g.interior.push(k > 0);
        }
    }
    let last = ctrl.n_pieces() - 1;
    g.times.push(ctrl.period());
    g.x1.push(orbit.samples[ctrl.n_pieces()].1);
    g.p1.push(path.samples[ctrl.n_pieces()].1);
    g.u0.push(ctrl.values(Channel::Inflow)[last]);
    g.u1.push(ctrl.values(Channel::Outflow)[last]);
    g.piece.push(last);
    g.interior.push(false);
    g
}

fn build_record(grid: &SampleGrid, costate: &Costate, period: f64, tol: f64) -> SwitchingRecord {
    let (phi0, phi1): (Vec<f64>, Vec<f64>) = grid
        .x1
        .iter()
        .zip(&grid.p1)
        .map(|(&x, &p)| switching_functions(x, p, costate.p2, costate.p3))
        .unzip();
    let kinds: Vec<ArcType> = phi0
        .iter()
        .zip(&phi1)
        .map(|(&a, &b)| ArcType::classify(a, b, tol))
        .collect();

    let mut arcs: Vec<Arc> = Vec::new();
    for (k, kind) in kinds.iter().enumerate() {
        match arcs.last_mut() {
            Some(arc) if arc.kind == *kind => arc.samples += 1,
            Some(arc) => {
                let cut = 0.5 * (grid.times[k - 1] + grid.times[k]);
                arc.end = cut;
                arcs.push(Arc { start: cut, end: period, kind: *kind, samples: 1 });
            }
            None => arcs.push(Arc { start: 0.0, end: period, kind: *kind, samples: 1 }),
        }
    }

    SwitchingRecord {
        times: grid.times.clone(),
        x1: grid.x1.clone(),
        p1: grid.p1.clone(),
        phi0,
        phi1,
        piece: grid.piece.clone(),
        interior: grid.interior.clone(),
        arcs,
        tol,
    }
}

/// Labels `[0, T]` by the signs of `(phi0, phi1)`, treating `|phi| <= tol` as zero.
pub fn classify_arcs(
    ctrl: &PeriodicControl,
    orbit: &OccupancyOrbit<'_>,
    path: &CostatePath,
    costate: &Costate,
    tol: f64,
) -> SwitchingRecord {
    let grid = sample_grid(ctrl, orbit, path, 1000);
    build_record(&grid, costate, ctrl.period(), tol)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    /// Control is not a maximizer of the Hamiltonian on a regular arc.
    MaximumCondition,
    /// Inputs on a singular arc do not hold the state constant.
    SingularCoupling,
    Transversality,
    StateBounds,
    CostateBounds,
    SignOpposition,
    /// `phi0 phi1 < 0` somewhere.
    MixedSign,
}

#[derive(Debug, Clone, Serialize)]
pub struct Violation {
    pub condition: Condition,
    pub magnitude: f64,
    pub at: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CostateFit {
    /// Closed-form constants of a constant-state trajectory.
    Singular,
    GridSearch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VerifyOptions {
    /// Zero band on `phi`.
    pub tol: f64,
    /// Samples per period (spacing upper bound `T / resolution`).
    pub resolution: usize,
    /// Grid spacing for `(p2, p3)` in `[-1, 0]^2`.
    pub grid_step: f64,
    /// Best grid points per channel kept for refinement.
    pub refine_candidates: usize,
    /// Tolerance on `x1` constancy and on `|x1'|` across singular arcs.
    pub state_tol: f64,
    /// Transversality tolerance, scaled by the forward growth of the co-state map.
    pub transversality_tol: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_SWITCHING_TOL,
            resolution: 1000,
            grid_step: 1e-3,
            refine_candidates: 4,
            state_tol: 1e-10,
            transversality_tol: 1e-12,
        }
    }
}

/// Outcome of an extremality check.
#[derive(Debug, Clone, Serialize)]
pub struct Certificate {
    pub pass: bool,
    pub violations: Vec<Violation>,
    pub arcs: Vec<Arc>,
    pub p1_initial: f64,
    pub p2: f64,
    pub p3: f64,
    pub p0: f64,
    pub fit: CostateFit,
    pub max_abs_phi0: f64,
    pub max_abs_phi1: f64,
    pub hamiltonian_gap: f64,
    pub transversality_residual: f64,
    pub state_range: (f64, f64),
    pub costate_range: (f64, f64),
    pub options: VerifyOptions,
    #[serde(skip)]
    pub record: SwitchingRecord,
}

/// Checks every PMP condition for fixed constants `(p2, p3, p0)`.
fn evaluate(
    ctrl: &PeriodicControl,
    grid: &SampleGrid,
    path: &CostatePath,
    costate: &Costate,
    fit: CostateFit,
    opts: &VerifyOptions,
) -> Certificate {
    let bounds = ctrl.bounds();
    let record = build_record(grid, costate, ctrl.period(), opts.tol);
    let mut violations = Vec::new();

    // maximum condition, almost everywhere
    let gap_tol = opts.tol * (bounds.upper - bounds.lower);
    let mut worst_gap = (0.0, 0.0);
    for k in (0..grid.times.len()).filter(|&k| grid.interior[k]) {
        let gap = channel_gap(record.phi0[k], grid.u0[k], &bounds)
            + channel_gap(record.phi1[k], grid.u1[k], &bounds);
        if gap > worst_gap.0 {
            worst_gap = (gap, grid.times[k]);
        }
    }
    if worst_gap.0 > gap_tol {
        violations.push(Violation {
            condition: Condition::MaximumCondition,
            magnitude: worst_gap.0,
            at: worst_gap.1,
            detail: format!("Hamiltonian falls {:.3e} below its box maximum", worst_gap.0),
        });
    }

    // singular arcs of positive length must hold x1 fixed
    let mut worst_coupling = (0.0, 0.0);
    let mut sample = 0;
    for arc in &record.arcs {
        let range = sample..sample + arc.samples;
        sample += arc.samples;
        if !arc.kind.is_singular() || arc.samples < 2 {
            continue;
        }
        let first = grid.x1[range.start];
        for k in range {
            let drift = (grid.u0[k] * (1.0 - grid.x1[k]) - grid.u1[k] * grid.x1[k]).abs();
            let spread = (grid.x1[k] - first).abs();
            let bad = drift.max(spread);
            if grid.interior[k] && bad > worst_coupling.0 {
                worst_coupling = (bad, grid.times[k]);
            }
        }
    }
    if worst_coupling.0 > opts.state_tol {
        violations.push(Violation {
            condition: Condition::SingularCoupling,
            magnitude: worst_coupling.0,
            at: worst_coupling.1,
            detail: "state moves on a singular arc; (1/c - 1) u0 = u1 fails".into(),
        });
    }

    let trans_tol = opts.transversality_tol * path.growth.max(1.0);
    if path.transversality_residual > trans_tol {
        violations.push(Violation {
            condition: Condition::Transversality,
            magnitude: path.transversality_residual,
            at: ctrl.period(),
            detail: format!("|p1(T) - p1(0)| exceeds {trans_tol:.3e}"),
        });
    }

    let (lo, hi) = (bounds.band_lower(), bounds.band_upper());
    let range = |v: &[f64]| {
        v.iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)))
    };
    let state_range = range(&grid.x1);
    let costate_range = range(&grid.p1);
    for (cond, (a, b), name) in [
        (Condition::StateBounds, state_range, "x1"),
        (Condition::CostateBounds, costate_range, "p1"),
    ] {
        if !(a > lo && b < hi) {
            violations.push(Violation {
                condition: cond,
                magnitude: (lo - a).max(b - hi).max(0.0),
                at: f64::NAN,
                detail: format!("{name} spans [{a}, {b}], outside ({lo}, {hi})"),
            });
        }
    }

    let mut worst_sign = (0.0, 0.0);
    for k in (0..grid.times.len()).filter(|&k| grid.interior[k]) {
        let (d0, d1) = switching_derivatives(grid.x1[k], grid.p1[k], grid.u0[k], grid.u1[k]);
        if d0 * d1 > worst_sign.0 {
            worst_sign = (d0 * d1, grid.times[k]);
        }
    }
    if worst_sign.0 > opts.tol * opts.tol {
        violations.push(Violation {
            condition: Condition::SignOpposition,
            magnitude: worst_sign.0,
            at: worst_sign.1,
            detail: "phi0' and phi1' share a sign".into(),
        });
    }

    if let Some(arc) = record.arcs.iter().find(|a| a.kind.is_mixed_sign()) {
        violations.push(Violation {
            condition: Condition::MixedSign,
            magnitude: (arc.end - arc.start),
            at: arc.start,
            detail: format!("{:?} arc on [{}, {}]", arc.kind, arc.start, arc.end),
        });
    }

    let (m0, m1) = record.max_abs_phi();
    Certificate {
        pass: violations.is_empty(),
        violations,
        arcs: record.arcs.clone(),
        p1_initial: path.p1_initial,
        p2: costate.p2,
        p3: costate.p3,
        p0: costate.p0,
        fit,
        max_abs_phi0: m0,
        max_abs_phi1: m1,
        hamiltonian_gap: worst_gap.0,
        transversality_residual: path.transversality_residual,
        state_range,
        costate_range,
        options: *opts,
        record,
    }
}

/// Checks `ctrl` against fixed co-state constants.
pub fn verify_with_costate(ctrl: &PeriodicControl, costate: &Costate, opts: &VerifyOptions) -> Certificate {
    let orbit = periodic_orbit(ctrl);
    let path = costate_periodic(ctrl);
    let grid = sample_grid(ctrl, &orbit, &path, opts.resolution);
    let costate = Costate { p1_initial: path.p1_initial, ..*costate };
    evaluate(ctrl, &grid, &path, &costate, CostateFit::GridSearch, opts)
}

/// Worst single-channel Hamiltonian gap as a function of the channel constant.
/// Convex in the constant (a max of V-shaped functions).
fn channel_score(offsets: &[f64], inputs: &[f64], interior: &[bool], constant: f64, bounds: &ControlBounds) -> f64 {
    offsets
        .iter()
        .zip(inputs)
        .zip(interior)
        .filter(|(_, &int)| int)
        .map(|((g, u), _)| channel_gap(g + constant, *u, bounds))
        .fold(0.0, f64::max)
}

fn fit_channel(offsets: &[f64], inputs: &[f64], interior: &[bool], bounds: &ControlBounds, opts: &VerifyOptions) -> Vec<f64> {
    let n = (1.0 / opts.grid_step).round() as usize;
    let mut scored: Vec<(f64, f64)> = (0..=n)
        .into_par_iter()
        .map(|k| {
            let c = -1.0 + k as f64 / n as f64;
            (channel_score(offsets, inputs, interior, c, bounds), c)
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    scored
        .iter()
        .take(opts.refine_candidates.max(1))
        .map(|&(_, c)| {
            // ternary search on the convex score around the grid point
            let (mut lo, mut hi) = ((c - opts.grid_step).max(-1.0), (c + opts.grid_step).min(0.0));
            for _ in 0..100 {
                let m1 = lo + (hi - lo) / 3.0;
                let m2 = hi - (hi - lo) / 3.0;
                if channel_score(offsets, inputs, interior, m1, bounds)
                    <= channel_score(offsets, inputs, interior, m2, bounds)
                {
                    hi = m2;
                } else {
                    lo = m1;
                }
            }
            0.5 * (lo + hi)
        })
        .collect()
}

/// Searches for co-state constants certifying `ctrl` as a PMP extremal.
pub fn verify_extremal(ctrl: &PeriodicControl, tol: f64) -> Certificate {
    verify_extremal_with(ctrl, &VerifyOptions { tol, ..VerifyOptions::default() })
}

pub fn verify_extremal_with(ctrl: &PeriodicControl, opts: &VerifyOptions) -> Certificate {
    let orbit = periodic_orbit(ctrl);
    let path = costate_periodic(ctrl);
    let grid = sample_grid(ctrl, &orbit, &path, opts.resolution);
    let p0 = normal_multiplier(ctrl.period(), ctrl.channel_mean(Channel::Outflow));
    let bounds = ctrl.bounds();

    let (x_lo, x_hi) = orbit.min_max();
    if x_hi - x_lo <= opts.state_tol {
        if let Ok(mut costate) = singular_costate(orbit.initial, p0) {
            costate.p1_initial = path.p1_initial;
            let cert = evaluate(ctrl, &grid, &path, &costate, CostateFit::Singular, opts);
            if cert.pass {
                return cert;
            }
        }
    }

    // phi0 = g0 + p2, phi1 = g1 + p3
    let g0: Vec<f64> = grid.x1.iter().zip(&grid.p1).map(|(x, p)| p * (1.0 - x)).collect();
    let g1: Vec<f64> = grid.x1.iter().zip(&grid.p1).map(|(x, p)| x * (1.0 - p)).collect();
    let p2s = fit_channel(&g0, &grid.u0, &grid.interior, &bounds, opts);
    let p3s = fit_channel(&g1, &grid.u1, &grid.interior, &bounds, opts);

    let mut best: Option<Certificate> = None;
    for &p2 in &p2s {
        for &p3 in &p3s {
            let costate = Costate { p1_initial: path.p1_initial, p2, p3, p0 };
            let cert = evaluate(ctrl, &grid, &path, &costate, CostateFit::GridSearch, opts);
            if cert.pass {
                return cert;
            }
            let better = match &best {
                None => true,
                Some(b) => {
                    (cert.violations.len(), cert.hamiltonian_gap)
                        < (b.violations.len(), b.hamiltonian_gap)
                }
            };
            if better {
                best = Some(cert);
            }
        }
    }
    best.expect("at least one candidate is evaluated")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::{MeanTargets, PiecewiseSignal};

    fn unit_box() -> ControlBounds {
        ControlBounds::new(0.1, 0.9).unwrap()
    }

    fn constant(m0: f64, m1: f64) -> PeriodicControl {
        let b = unit_box();
        PeriodicControl::constant(10.0, b, MeanTargets::new(m0, m1, &b).unwrap()).unwrap()
    }

    #[test]
    fn costate_piece_examples() {
        let (u0, u1) = (0.2, 0.7);
        let rest = u1 / (u0 + u1);
        assert!((costate_propagate_piece(rest, u0, u1, 3.0) - rest).abs() < 1e-15);
        assert!((costate_propagate_piece(2.0 / 3.0, 0.3, 0.6, 4.0) - 2.0 / 3.0).abs() < 1e-14);
        assert_eq!(costate_propagate_piece(0.5, 0.5, 0.5, 1.0), 0.5);
        // backward step inverts forward step
        let fwd = costate_propagate_piece(0.3, 0.4, 0.2, 0.7);
        assert!((costate_step_back(fwd, 0.4, 0.2, 0.7, 1.0) - 0.3).abs() < 1e-14);
    }

    #[test]
    fn periodic_costate_examples() {
        let path = costate_periodic(&constant(0.3, 0.6));
        assert!((path.p1_initial - 2.0 / 3.0).abs() < 1e-15);
        assert!(path.transversality_residual < 1e-12);
        let path = costate_periodic(&constant(0.5, 0.5));
        assert!((path.p1_initial - 0.5).abs() < 1e-15);
    }

    #[test]
    fn periodic_costate_matches_bisection() {
        let s0 = PiecewiseSignal::square_wave(10.0, 0.5, 0.1, 0.5, 0.0).unwrap();
        let s1 = PiecewiseSignal::square_wave(10.0, 0.8, 0.4, 0.5, 0.25).unwrap();
        let ctrl = PeriodicControl::from_channels(&s0, &s1, unit_box()).unwrap();
        let path = costate_periodic(&ctrl);
        // bisection on p(0) -> p(T) - p(0), increasing since the forward map expands
        let residual = |p: f64| {
            ctrl.pieces()
                .fold(p, |q, pc| costate_propagate_piece(q, pc.inflow, pc.outflow, pc.duration))
                - p
        };
        let (mut lo, mut hi) = (-1.0, 2.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if residual(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        assert!((path.p1_initial - 0.5 * (lo + hi)).abs() < 1e-10);
        assert!(path.growth > 1.0);
    }

    #[test]
    fn abnormal_multiplier_has_only_trivial_periodic_costate() {
        let s0 = PiecewiseSignal::square_wave(10.0, 0.5, 0.1, 0.5, 0.0).unwrap();
        let ctrl = PeriodicControl::from_channels(&s0, &PiecewiseSignal::constant(10.0, 0.6).unwrap(), unit_box())
            .unwrap();
        let path = costate_periodic_weighted(&ctrl, 0.0);
        assert_eq!(path.p1_initial, 0.0);
        assert!(path.samples.iter().all(|&(_, p)| p == 0.0));
        // any nonzero start grows by exp(T (mean0 + mean1)) and cannot return
        for p in [1e-3, -0.5, 1.0] {
            let end = ctrl.pieces().fold(p, |q, pc| {
                costate_propagate_piece_weighted(q, pc.inflow, pc.outflow, pc.duration, 0.0)
            });
            let growth = (10.0 * (0.3 + 0.6f64)).exp();
            assert!((end / p - growth).abs() < 1e-9 * growth);
        }
    }

    #[test]
    fn singular_costate_examples() {
        let c = singular_costate(1.0 / 3.0, 1.0).unwrap();
        assert!((c.p2 + 4.0 / 9.0).abs() < 1e-15);
        assert!((c.p3 + 1.0 / 9.0).abs() < 1e-15);
        assert!((c.p1_initial - 2.0 / 3.0).abs() < 1e-15);
        let (a, b) = switching_functions(1.0 / 3.0, c.p1_initial, c.p2, c.p3);
        assert!(a.abs() < 1e-15 && b.abs() < 1e-15);

        let c = singular_costate(0.5, 1.0).unwrap();
        assert_eq!((c.p2, c.p3, c.p1_initial), (-0.25, -0.25, 0.5));
        assert!(singular_costate(1.0, 1.0).is_err());
    }

    #[test]
    fn switching_function_examples() {
        for x in [0.1, 0.4, 0.8] {
            let (phi0, _) = switching_functions(x, 1.0, 0.0, -0.3);
            assert!((phi0 - (1.0 - x)).abs() < 1e-15 && phi0 > 0.0);
        }
    }

    #[test]
    fn hamiltonian_maximizer_examples() {
        let b = unit_box();
        let zero = Costate { p1_initial: 0.5, p2: -0.25, p3: -0.25, p0: 1.0 };
        let h1 = hamiltonian(0.2, 0.7, 0.5, 0.5, &zero);
        let h2 = hamiltonian(0.9, 0.1, 0.5, 0.5, &zero);
        assert!((h1 - h2).abs() < 1e-15);

        assert_eq!(bang_value(0.3, &b, 1e-9), Some(0.9));
        assert_eq!(bang_value(-0.3, &b, 1e-9), Some(0.1));
        assert_eq!(bang_value(1e-12, &b, 1e-9), None);

        // brute-force argmax over a box grid agrees with the bang rule
        let pos = Costate { p1_initial: 0.5, p2: 0.2, p3: 0.1, p0: 1.0 };
        let mixed = Costate { p1_initial: 0.5, p2: -0.6, p3: 0.1, p0: 1.0 };
        for (cs, expect) in [(pos, (0.9, 0.9)), (mixed, (0.1, 0.9))] {
            let mut best = (f64::NEG_INFINITY, (0.0, 0.0));
            for i in 0..=80 {
                for j in 0..=80 {
                    let (u0, u1) = (0.1 + 0.01 * i as f64, 0.1 + 0.01 * j as f64);
                    let h = hamiltonian(u0, u1, 0.5, 0.5, &cs);
                    if h > best.0 {
                        best = (h, (u0, u1));
                    }
                }
            }
            assert!((best.1 .0 - expect.0).abs() < 1e-12 && (best.1 .1 - expect.1).abs() < 1e-12);
        }
    }

    #[test]
    fn arc_classification_examples() {
        let ctrl = constant(0.3, 0.6);
        let orbit = periodic_orbit(&ctrl);
        let path = costate_periodic(&ctrl);
        let cs = singular_costate(1.0 / 3.0, 10.0 / 0.6).unwrap();
        let rec = classify_arcs(&ctrl, &orbit, &path, &cs, 1e-9);
        assert_eq!(rec.arcs.len(), 1);
        assert_eq!(rec.arcs[0].kind, ArcType::SingularBoth);
        assert_eq!((rec.arcs[0].start, rec.arcs[0].end), (0.0, 10.0));

        let b = unit_box();
        let bang = PeriodicControl::uniform(10.0, vec![0.9], vec![0.9], b).unwrap();
        let orbit = periodic_orbit(&bang);
        let path = costate_periodic(&bang);
        let cs = Costate { p1_initial: path.p1_initial, p2: 1.0, p3: 1.0, p0: 1.0 };
        let rec = classify_arcs(&bang, &orbit, &path, &cs, 1e-9);
        assert_eq!(rec.arcs.len(), 1);
        assert_eq!(rec.arcs[0].kind, ArcType::RegularPP);

        let lopsided = PeriodicControl::uniform(10.0, vec![0.1], vec![0.9], b).unwrap();
        let cs = Costate { p1_initial: 0.0, p2: -1.0, p3: 1.0, p0: 1.0 };
        let cert = verify_with_costate(&lopsided, &cs, &VerifyOptions::default());
        assert!(cert.record.has_mixed_sign());
        assert!(!cert.pass);
        assert!(cert.violations.iter().any(|v| v.condition == Condition::MixedSign));
    }

    #[test]
    fn constant_control_is_certified() {
        let ctrl = constant(0.3, 0.6);
        let cert = verify_extremal(&ctrl, DEFAULT_SWITCHING_TOL);
        assert!(cert.pass, "{:?}", cert.violations);
        assert_eq!(cert.fit, CostateFit::Singular);
        assert_eq!(cert.arcs.len(), 1);
        assert_eq!(cert.arcs[0].kind, ArcType::SingularBoth);
        assert!(cert.max_abs_phi0 <= 1e-12 && cert.max_abs_phi1 <= 1e-12);
        assert!((cert.p0 - 10.0 / 0.6).abs() < 1e-12);
        assert!(cert.record.x1.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-12));
    }

    #[test]
    fn companion_control_is_certified() {
        let b = unit_box();
        let m = MeanTargets::new(0.3, 0.6, &b).unwrap();
        let base = PeriodicControl::uniform(10.0, vec![0.2, 0.4, 0.35, 0.25], vec![0.6; 4], b).unwrap();
        let comp = crate::signals::proportional_companion(&base, &m).unwrap();
        let cert = verify_extremal(&comp, DEFAULT_SWITCHING_TOL);
        assert!(cert.pass, "{:?}", cert.violations);
        assert!(cert.record.x1.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-10));
    }

    #[test]
    fn bang_bang_control_is_rejected() {
        let b = unit_box();
        let theta0 = (0.3 - 0.1) / 0.8;
        let theta1 = (0.6 - 0.1) / 0.8;
        let s0 = PiecewiseSignal::square_wave(10.0, 0.9, 0.1, theta0, 0.0).unwrap();
        let s1 = PiecewiseSignal::square_wave(10.0, 0.9, 0.1, theta1, 0.4).unwrap();
        let ctrl = PeriodicControl::from_channels(&s0, &s1, b).unwrap();
        let cert = verify_extremal(&ctrl, DEFAULT_SWITCHING_TOL);
        assert!(!cert.pass);
        assert!(cert
            .violations
            .iter()
            .any(|v| matches!(v.condition, Condition::MaximumCondition | Condition::MixedSign)));
    }

    #[test]
    fn switching_functions_are_lipschitz_and_derivatives_oppose() {
        let b = unit_box();
        let ctrl = PeriodicControl::uniform(10.0, vec![0.5, 0.1, 0.3], vec![0.2, 0.9, 0.7], b).unwrap();
        let orbit = periodic_orbit(&ctrl);
        let path = costate_periodic(&ctrl);
        let cs = Costate { p1_initial: path.p1_initial, p2: -0.3, p3: -0.2, p0: 1.0 };
        let rec = classify_arcs(&ctrl, &orbit, &path, &cs, 1e-9);
        let pmax = rec.p1.iter().fold(0.0f64, |a, p| a.max(p.abs()));
        let bound = b.upper * (pmax + 1.0);
        for k in 1..rec.times.len() {
            let dt = rec.times[k] - rec.times[k - 1];
            assert!(dt <= 1e-3 * 10.0 + 1e-12);
            assert!(((rec.phi0[k] - rec.phi0[k - 1]) / dt).abs() <= bound);
            assert!(((rec.phi1[k] - rec.phi1[k - 1]) / dt).abs() <= bound);
            if rec.interior[k] {
                let i = rec.piece[k];
                let (u0, u1) = (ctrl.values(Channel::Inflow)[i], ctrl.values(Channel::Outflow)[i]);
                let (d0, d1) = switching_derivatives(rec.x1[k], rec.p1[k], u0, u1);
                assert!(d0 * d1 <= 0.0);
            }
        }
    }
}
