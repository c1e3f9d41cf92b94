//! Admissible periodic controls.
//!
//! A control is a pair of T-periodic, piecewise-constant rate signals
//! `(u0, u1)` sharing one breakpoint grid. Breakpoints are stored as absolute
//! times in `[0, T]` so that repeated slicing never accumulates drift.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative slack under which a mean is treated as already on target.
pub const MEAN_TOLERANCE: f64 = 1e-13;

/// Box constraint `lower <= u(t) <= upper` shared by both channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlBounds {
    pub lower: f64,
    pub upper: f64,
}

impl ControlBounds {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite()) || lower <= 0.0 || lower >= upper {
            return Err(Error::Bounds(format!(
                "need 0 < lower < upper, got [{lower}, {upper}]"
            )));
        }
        Ok(Self { lower, upper })
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper
    }

    pub fn contains_interior(&self, v: f64) -> bool {
        v > self.lower && v < self.upper
    }

    pub fn clip(&self, v: f64) -> f64 {
        v.clamp(self.lower, self.upper)
    }

    /// Lower edge `l / (l + L)` of the band that holds every extremal state.
    pub fn band_lower(&self) -> f64 {
        self.lower / (self.lower + self.upper)
    }

    pub fn band_upper(&self) -> f64 {
        self.upper / (self.lower + self.upper)
    }
}

/// Prescribed time averages of the inflow and outflow channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanTargets {
    pub mean0: f64,
    pub mean1: f64,
}

impl MeanTargets {
    pub fn new(mean0: f64, mean1: f64, bounds: &ControlBounds) -> Result<Self> {
        for (name, m) in [("mean0", mean0), ("mean1", mean1)] {
            if !bounds.contains_interior(m) {
                return Err(Error::Means(format!(
                    "{name} = {m} must lie strictly inside ({}, {})",
                    bounds.lower, bounds.upper
                )));
            }
        }
        Ok(Self { mean0, mean1 })
    }

    pub fn get(&self, channel: Channel) -> f64 {
        match channel {
            Channel::Inflow => self.mean0,
            Channel::Outflow => self.mean1,
        }
    }

    /// Steady-state occupancy `mean0 / (mean0 + mean1)` of the constant control.
    pub fn steady_occupancy(&self) -> f64 {
        self.mean0 / (self.mean0 + self.mean1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    /// `u0`, the rate into the occupied site.
    Inflow,
    /// `u1`, the rate out of it.
    Outflow,
}

impl Channel {
    pub const BOTH: [Channel; 2] = [Channel::Inflow, Channel::Outflow];

    pub fn index(self) -> usize {
        match self {
            Channel::Inflow => 0,
            Channel::Outflow => 1,
        }
    }

    pub fn from_index(i: usize) -> Result<Self> {
        match i {
            0 => Ok(Channel::Inflow),
            1 => Ok(Channel::Outflow),
            _ => Err(Error::Control(format!("channel index {i} is not 0 or 1"))),
        }
    }
}

/// One constant stretch of a two-channel signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Piece {
    pub start: f64,
    pub duration: f64,
    pub inflow: f64,
    pub outflow: f64,
}

impl Piece {
    pub fn total_rate(&self) -> f64 {
        self.inflow + self.outflow
    }
}

fn check_breakpoints(period: f64, breakpoints: &[f64], n_values: usize) -> Result<()> {
    if !(period.is_finite() && period > 0.0) {
        return Err(Error::Control(format!("period must be positive, got {period}")));
    }
    if breakpoints.len() < 2 {
        return Err(Error::Control("need at least two breakpoints".into()));
    }
    if breakpoints.len() != n_values + 1 {
        return Err(Error::Control(format!(
            "{} breakpoints do not bound {} pieces",
            breakpoints.len(),
            n_values
        )));
    }
    if breakpoints[0] != 0.0 || breakpoints[breakpoints.len() - 1] != period {
        return Err(Error::Control(format!(
            "breakpoints must start at 0 and end at the period {period}"
        )));
    }
    if breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Control("breakpoints must be strictly increasing".into()));
    }
    Ok(())
}

fn piece_index(breakpoints: &[f64], period: f64, t: f64) -> usize {
    let tau = t.rem_euclid(period);
    let n = breakpoints.len() - 1;
    // first breakpoint strictly greater than tau, minus one
    let idx = breakpoints.partition_point(|&b| b <= tau);
    idx.saturating_sub(1).min(n - 1)
}

/// A scalar T-periodic piecewise-constant signal of arbitrary sign.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseSignal {
    period: f64,
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl PiecewiseSignal {
    pub fn new(period: f64, breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        check_breakpoints(period, &breakpoints, values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Control("signal values must be finite".into()));
        }
        Ok(Self { period, breakpoints, values })
    }

    pub fn constant(period: f64, value: f64) -> Result<Self> {
        Self::new(period, vec![0.0, period], vec![value])
    }

    /// `n` equal pieces over one period.
    pub fn uniform(period: f64, values: Vec<f64>) -> Result<Self> {
        let breakpoints = uniform_breakpoints(period, values.len())?;
        Self::new(period, breakpoints, values)
    }

    /// Takes `high` on `[phase*T, (phase+duty)*T)` (wrapped) and `low` elsewhere.
    pub fn square_wave(period: f64, high: f64, low: f64, duty: f64, phase: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&duty) {
            return Err(Error::Control(format!("duty cycle {duty} outside [0, 1]")));
        }
        if duty == 0.0 {
            return Self::constant(period, low);
        }
        if duty == 1.0 {
            return Self::constant(period, high);
        }
        let on = (phase.rem_euclid(1.0) * period).min(period);
        let off = ((phase + duty).rem_euclid(1.0) * period).min(period);
        let mut cuts = vec![0.0, on, off, period];
        cuts.sort_by(f64::total_cmp);
        let cuts = merge_close(cuts, period);
        let high_len = duty * period;
        let values = cuts
            .windows(2)
            .map(|w| {
                let mid = 0.5 * (w[0] + w[1]);
                let rel = (mid - on).rem_euclid(period);
                if rel < high_len {
                    high
                } else {
                    low
                }
            })
            .collect();
        Self::new(period, cuts, values)
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn n_pieces(&self) -> usize {
        self.values.len()
    }

    pub fn sample(&self, t: f64) -> f64 {
        self.values[piece_index(&self.breakpoints, self.period, t)]
    }

    /// Exact time average.
    pub fn mean(&self) -> f64 {
        weighted_mean(&self.values, &self.breakpoints)
    }
}

fn weighted_mean(values: &[f64], breakpoints: &[f64]) -> f64 {
    let period = breakpoints[breakpoints.len() - 1] - breakpoints[0];
    values
        .iter()
        .zip(breakpoints.windows(2))
        .map(|(v, w)| v * (w[1] - w[0]))
        .sum::<f64>()
        / period
}

/// `n + 1` absolute times `k T / n`, with the last one pinned to `T`.
pub fn uniform_breakpoints(period: f64, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::Control("need at least one piece".into()));
    }
    let mut b: Vec<f64> = (0..=n).map(|k| period * k as f64 / n as f64).collect();
    b[n] = period;
    Ok(b)
}

/// Sorted cut list with near-duplicates (closer than `1e-12 T`) removed.
fn merge_close(sorted: Vec<f64>, period: f64) -> Vec<f64> {
    let eps = 1e-12 * period;
    let mut out: Vec<f64> = Vec::with_capacity(sorted.len());
    for t in sorted {
        match out.last() {
            Some(&last) if t - last <= eps => {
                if t == period {
                    *out.last_mut().unwrap() = period;
                }
            }
            _ => out.push(t),
        }
    }
    out
}

/// Union of several breakpoint grids over the same period.
pub fn merge_breakpoints(period: f64, grids: &[&[f64]]) -> Vec<f64> {
    let mut all: Vec<f64> = grids.iter().flat_map(|g| g.iter().copied()).collect();
    all.sort_by(f64::total_cmp);
    let mut merged = merge_close(all, period);
    if merged.len() < 2 || merged[0] != 0.0 {
        merged.insert(0, 0.0);
    }
    if *merged.last().unwrap() != period {
        merged.push(period);
    }
    merged
}

/// Admissible T-periodic two-channel piecewise-constant control.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicControl {
    period: f64,
    breakpoints: Vec<f64>,
    values0: Vec<f64>,
    values1: Vec<f64>,
    bounds: ControlBounds,
}

impl PeriodicControl {
    pub fn new(
        period: f64,
        breakpoints: Vec<f64>,
        values0: Vec<f64>,
        values1: Vec<f64>,
        bounds: ControlBounds,
    ) -> Result<Self> {
        check_breakpoints(period, &breakpoints, values0.len())?;
        if values1.len() != values0.len() {
            return Err(Error::Control(format!(
                "channel lengths differ: {} vs {}",
                values0.len(),
                values1.len()
            )));
        }
        for (ch, vals) in [(0, &values0), (1, &values1)] {
            if let Some(v) = vals.iter().find(|v| !bounds.contains(**v)) {
                return Err(Error::Infeasible(format!(
                    "channel {ch} value {v} outside [{}, {}]",
                    bounds.lower, bounds.upper
                )));
            }
        }
        Ok(Self { period, breakpoints, values0, values1, bounds })
    }

    /// Equal-length pieces.
    pub fn uniform(
        period: f64,
        values0: Vec<f64>,
        values1: Vec<f64>,
        bounds: ControlBounds,
    ) -> Result<Self> {
        let breakpoints = uniform_breakpoints(period, values0.len())?;
        Self::new(period, breakpoints, values0, values1, bounds)
    }

    /// Single-piece control `(mean0, mean1)`, the constant optimum.
    pub fn constant(period: f64, bounds: ControlBounds, means: MeanTargets) -> Result<Self> {
        MeanTargets::new(means.mean0, means.mean1, &bounds)?;
        Self::new(
            period,
            vec![0.0, period],
            vec![means.mean0],
            vec![means.mean1],
            bounds,
        )
    }

    /// Combines two scalar signals on their merged breakpoint grid.
    pub fn from_channels(
        inflow: &PiecewiseSignal,
        outflow: &PiecewiseSignal,
        bounds: ControlBounds,
    ) -> Result<Self> {
        if inflow.period() != outflow.period() {
            return Err(Error::Control("channel periods differ".into()));
        }
        let period = inflow.period();
        let breakpoints =
            merge_breakpoints(period, &[inflow.breakpoints(), outflow.breakpoints()]);
        let (values0, values1) = breakpoints
            .windows(2)
            .map(|w| {
                let mid = 0.5 * (w[0] + w[1]);
                (inflow.sample(mid), outflow.sample(mid))
            })
            .unzip();
        Self::new(period, breakpoints, values0, values1, bounds)
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn bounds(&self) -> ControlBounds {
        self.bounds
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn n_pieces(&self) -> usize {
        self.values0.len()
    }

    pub fn values(&self, channel: Channel) -> &[f64] {
        match channel {
            Channel::Inflow => &self.values0,
            Channel::Outflow => &self.values1,
        }
    }

    pub fn piece_lengths(&self) -> Vec<f64> {
        self.breakpoints.windows(2).map(|w| w[1] - w[0]).collect()
    }

    pub fn pieces(&self) -> impl ExactSizeIterator<Item = Piece> + '_ {
        self.breakpoints
            .windows(2)
            .zip(self.values0.iter().zip(&self.values1))
            .map(|(w, (&u0, &u1))| Piece {
                start: w[0],
                duration: w[1] - w[0],
                inflow: u0,
                outflow: u1,
            })
    }

    /// Index of the piece active at `t` (wrapped into `[0, T)`).
    pub fn piece_at(&self, t: f64) -> usize {
        piece_index(&self.breakpoints, self.period, t)
    }

    pub fn sample(&self, t: f64) -> (f64, f64) {
        let i = self.piece_at(t);
        (self.values0[i], self.values1[i])
    }

    /// Exact time average of one channel.
    pub fn channel_mean(&self, channel: Channel) -> f64 {
        weighted_mean(self.values(channel), &self.breakpoints)
    }

    pub fn channel_signal(&self, channel: Channel) -> PiecewiseSignal {
        PiecewiseSignal {
            period: self.period,
            breakpoints: self.breakpoints.clone(),
            values: self.values(channel).to_vec(),
        }
    }

    /// Replaces one channel's piece values, keeping the grid.
    pub fn with_values(&self, channel: Channel, values: Vec<f64>) -> Result<Self> {
        let (v0, v1) = match channel {
            Channel::Inflow => (values, self.values1.clone()),
            Channel::Outflow => (self.values0.clone(), values),
        };
        Self::new(self.period, self.breakpoints.clone(), v0, v1, self.bounds)
    }

    /// Checks both channel means against the targets to a relative tolerance.
    pub fn check_means(&self, means: &MeanTargets, rel_tol: f64) -> Result<()> {
        for ch in Channel::BOTH {
            let got = self.channel_mean(ch);
            let want = means.get(ch);
            if (got - want).abs() > rel_tol * want.abs() {
                return Err(Error::Infeasible(format!(
                    "channel {} mean {got} differs from target {want}",
                    ch.index()
                )));
            }
        }
        Ok(())
    }

    pub fn is_constant(&self) -> bool {
        let first = (self.values0[0], self.values1[0]);
        self.values0.iter().zip(&self.values1).all(|(a, b)| (*a, *b) == first)
    }

    pub fn to_document(&self) -> ControlDocument {
        ControlDocument {
            period: self.period,
            breakpoints: self.breakpoints.clone(),
            values0: self.values0.clone(),
            values1: self.values1.clone(),
            lower: self.bounds.lower,
            upper: self.bounds.upper,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ControlDocument = serde_json::from_str(text)?;
        doc.try_into()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("control serializes")
    }
}

/// On-disk form of a [`PeriodicControl`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlDocument {
    pub period: f64,
    pub breakpoints: Vec<f64>,
    pub values0: Vec<f64>,
    pub values1: Vec<f64>,
    pub lower: f64,
    pub upper: f64,
}

impl TryFrom<ControlDocument> for PeriodicControl {
    type Error = Error;

    fn try_from(doc: ControlDocument) -> Result<Self> {
        let bounds = ControlBounds::new(doc.lower, doc.upper)?;
        PeriodicControl::new(doc.period, doc.breakpoints, doc.values0, doc.values1, bounds)
    }
}

/// Length-weighted Euclidean projection onto
/// `{ v : lower <= v_i <= upper, sum(v_i l_i) / sum(l_i) = target }`.
///
/// The KKT conditions give `v_i = clip(x_i - lambda)` for one scalar
/// multiplier; `lambda` is bracketed and bisected, then polished by solving
/// the equality exactly on the free set. Inputs already feasible to
/// [`MEAN_TOLERANCE`] are returned unchanged, which makes the map idempotent.
pub fn project_to_feasible(
    values: &[f64],
    lengths: &[f64],
    bounds: ControlBounds,
    target: f64,
) -> Result<Vec<f64>> {
    if values.is_empty() || values.len() != lengths.len() {
        return Err(Error::Control(format!(
            "{} values against {} lengths",
            values.len(),
            lengths.len()
        )));
    }
    if lengths.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
        return Err(Error::Control("piece lengths must be positive".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Control("values must be finite".into()));
    }
    if !bounds.contains_interior(target) {
        return Err(Error::Means(format!(
            "target {target} must lie strictly inside ({}, {})",
            bounds.lower, bounds.upper
        )));
    }

    let total: f64 = lengths.iter().sum();
    let mean_of = |v: &[f64]| v.iter().zip(lengths).map(|(a, l)| a * l).sum::<f64>() / total;

    if values.iter().all(|v| bounds.contains(*v))
        && (mean_of(values) - target).abs() <= MEAN_TOLERANCE * target.abs()
    {
        return Ok(values.to_vec());
    }

    let shifted = |lambda: f64| -> Vec<f64> {
        values.iter().map(|v| bounds.clip(v - lambda)).collect()
    };
    // residual(lambda) = mean(clip(v - lambda)) - target, nonincreasing in lambda
    let residual = |lambda: f64| mean_of(&shifted(lambda)) - target;

    let vmin = values.iter().copied().fold(f64::INFINITY, f64::min);
    let vmax = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut lo = vmin - bounds.upper;
    let mut hi = vmax - bounds.lower;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let r = residual(mid);
        if r.abs() <= 1e-14 {
            lo = mid;
            hi = mid;
            break;
        }
        if r > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * (1.0 + lo.abs().max(hi.abs())) {
            break;
        }
    }
    let lambda = 0.5 * (lo + hi);

    // polish on the free set
    let mut free_len = 0.0;
    let mut free_sum = 0.0;
    let mut clipped_sum = 0.0;
    for (v, l) in values.iter().zip(lengths) {
        let s = v - lambda;
        if s <= bounds.lower {
            clipped_sum += bounds.lower * l;
        } else if s >= bounds.upper {
            clipped_sum += bounds.upper * l;
        } else {
            free_len += l;
            free_sum += v * l;
        }
    }
    if free_len > 0.0 {
        let exact = (free_sum + clipped_sum - target * total) / free_len;
        let polished = shifted(exact);
        if (mean_of(&polished) - target).abs() <= (residual(lambda)).abs() {
            return Ok(polished);
        }
    }
    Ok(shifted(lambda))
}

/// Companion control `u1 = (mean1 / mean0) u0` sharing channel 0.
///
/// Any such pair keeps the occupancy at `mean0 / (mean0 + mean1)`. Fails if
/// channel 0 does not have mean `mean0` or a scaled value leaves the box.
pub fn proportional_companion(ctrl: &PeriodicControl, means: &MeanTargets) -> Result<PeriodicControl> {
    let m0 = ctrl.channel_mean(Channel::Inflow);
    if (m0 - means.mean0).abs() > 1e-12 * means.mean0 {
        return Err(Error::Infeasible(format!(
            "channel 0 mean {m0} differs from target {}",
            means.mean0
        )));
    }
    let ratio = means.mean1 / means.mean0;
    let scaled: Vec<f64> = ctrl.values(Channel::Inflow).iter().map(|u| ratio * u).collect();
    ctrl.with_values(Channel::Outflow, scaled)
}
