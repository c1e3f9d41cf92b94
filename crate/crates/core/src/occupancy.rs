//! Exact propagation of the occupancy model `x' = u0 (1 - x) - u1 x`.
//!
//! On a piece with constant rates the solution relaxes exponentially to
//! `x* = u0 / (u0 + u1)` at rate `u0 + u1`, so every quantity here (period
//! map, periodic orbit, throughput integral) is evaluated in closed form.

use serde::Serialize;

use crate::signals::{Channel, PeriodicControl, Piece};

/// State after holding `(u0, u1)` for `dt`, starting from `x0`.
pub fn propagate_piece(x0: f64, u0: f64, u1: f64, dt: f64) -> f64 {
    let rate = u0 + u1;
    let target = u0 / rate;
    target + (x0 - target) * (-rate * dt).exp()
}

/// `∫_0^dt x(s) ds` along the same piece.
pub fn piece_state_integral(x0: f64, u0: f64, u1: f64, dt: f64) -> f64 {
    let rate = u0 + u1;
    let target = u0 / rate;
    target * dt + (x0 - target) * (-(-rate * dt).exp_m1()) / rate
}

/// Affine map `x -> alpha x + beta` over a stretch of pieces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PeriodMap {
    pub alpha: f64,
    pub beta: f64,
    /// `ln(alpha) = -∫(u0 + u1) dt`, kept separately for an accurate `1 - alpha`.
    pub log_alpha: f64,
}

impl PeriodMap {
    pub fn identity() -> Self {
        Self { alpha: 1.0, beta: 0.0, log_alpha: 0.0 }
    }

    /// Appends one piece after this map.
    pub fn then(self, piece: &Piece) -> Self {
        let rate = piece.total_rate();
        let decay = (-rate * piece.duration).exp();
        let target = piece.inflow / rate;
        let log_alpha = self.log_alpha - rate * piece.duration;
        Self {
            alpha: log_alpha.exp(),
            beta: decay * self.beta + target * (-(-rate * piece.duration).exp_m1()),
            log_alpha,
        }
    }

    pub fn apply(&self, x: f64) -> f64 {
        self.alpha * x + self.beta
    }

    /// Unique fixed point `beta / (1 - alpha)`; requires `alpha < 1`.
    pub fn fixed_point(&self) -> f64 {
        self.beta / (-self.log_alpha.exp_m1())
    }
}

pub fn period_map<'p, I>(pieces: I) -> PeriodMap
where
    I: IntoIterator<Item = &'p Piece>,
{
    pieces.into_iter().fold(PeriodMap::identity(), |m, p| m.then(p))
}

/// Coefficients of the period map `x(T) = alpha x(0) + beta`.
pub fn poincare_map_coefficients(ctrl: &PeriodicControl) -> PeriodMap {
    ctrl.pieces().fold(PeriodMap::identity(), |m, p| m.then(&p))
}

/// Periodic initial state for an arbitrary list of pieces with positive rates.
pub fn periodic_initial_state(pieces: &[Piece]) -> f64 {
    period_map(pieces).fixed_point()
}

/// Steady-state periodic solution under a control.
#[derive(Debug, Clone)]
pub struct OccupancyOrbit<'a> {
    control: &'a PeriodicControl,
    pub initial: f64,
    /// `(t, x1)` at every breakpoint, `0` through `T`.
    pub samples: Vec<(f64, f64)>,
    /// `(1/T) ∫ u1 x1 dt`.
    pub throughput_raw: f64,
    /// Raw throughput divided by the outflow mean.
    pub throughput_normalized: f64,
    pub map: PeriodMap,
}

/// Solves the periodic orbit from the affine period map and fills the
/// breakpoint samples and throughput values.
pub fn periodic_orbit(ctrl: &PeriodicControl) -> OccupancyOrbit<'_> {
    let map = poincare_map_coefficients(ctrl);
    let initial = map.fixed_point();
    let mut samples = Vec::with_capacity(ctrl.n_pieces() + 1);
    samples.push((0.0, initial));
    let mut x = initial;
    let mut outflow_integral = 0.0;
    for p in ctrl.pieces() {
        outflow_integral += p.outflow * piece_state_integral(x, p.inflow, p.outflow, p.duration);
        x = propagate_piece(x, p.inflow, p.outflow, p.duration);
        samples.push((p.start + p.duration, x));
    }
    if let Some(last) = samples.last_mut() {
        last.0 = ctrl.period();
    }
    let throughput_raw = outflow_integral / ctrl.period();
    let throughput_normalized = throughput_raw / ctrl.channel_mean(Channel::Outflow);
    OccupancyOrbit {
        control: ctrl,
        initial,
        samples,
        throughput_raw,
        throughput_normalized,
        map,
    }
}

/// `(raw, normalized)` average throughput of an orbit.
pub fn average_throughput(orbit: &OccupancyOrbit<'_>) -> (f64, f64) {
    (orbit.throughput_raw, orbit.throughput_normalized)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryPoint {
    pub t: f64,
    pub x1: f64,
    pub u0: f64,
    pub u1: f64,
}

impl<'a> OccupancyOrbit<'a> {
    pub fn control(&self) -> &'a PeriodicControl {
        self.control
    }

    /// `|x1(T) - x1(0)|` after one exact pass over the period.
    pub fn periodicity_residual(&self) -> f64 {
        (self.samples[self.samples.len() - 1].1 - self.initial).abs()
    }

    pub fn state_at(&self, t: f64) -> f64 {
        let period = self.control.period();
        if t >= period {
            return self.samples[self.samples.len() - 1].1;
        }
        let i = self.control.piece_at(t);
        let (start, x0) = self.samples[i];
        let (u0, u1) = (
            self.control.values(Channel::Inflow)[i],
            self.control.values(Channel::Outflow)[i],
        );
        propagate_piece(x0, u0, u1, t - start)
    }

    /// `points + 1` samples at `t_k = k T / points`, `k = 0..=points`.
    pub fn trajectory(&self, points: usize) -> Vec<TrajectoryPoint> {
        let period = self.control.period();
        let n = points.max(1);
        (0..=n)
            .map(|k| {
                let t = if k == n { period } else { period * k as f64 / n as f64 };
                let (u0, u1) = self.control.sample(t);
                TrajectoryPoint { t, x1: self.state_at(t), u0, u1 }
            })
            .collect()
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.samples
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, x)| {
                (lo.min(x), hi.max(x))
            })
    }
}

/// Two solutions followed for `n` periods under the same control.
#[derive(Debug, Clone, Serialize)]
pub struct ContractionReport {
    pub alpha: f64,
    pub initial_gap: f64,
    /// `|xa(kT) - xb(kT)|` for `k = 1..=n`, from direct propagation.
    pub differences: Vec<f64>,
    /// `alpha^k |xa(0) - xb(0)|`.
    pub predicted: Vec<f64>,
    pub max_identity_error: f64,
    pub strictly_decreasing: bool,
}

pub fn contraction_check(ctrl: &PeriodicControl, xa: f64, xb: f64, n_periods: usize) -> ContractionReport {
    let map = poincare_map_coefficients(ctrl);
    let initial_gap = (xa - xb).abs();
    let (mut a, mut b) = (xa, xb);
    let mut differences = Vec::with_capacity(n_periods);
    let mut predicted = Vec::with_capacity(n_periods);
    for k in 1..=n_periods {
        for p in ctrl.pieces() {
            a = propagate_piece(a, p.inflow, p.outflow, p.duration);
            b = propagate_piece(b, p.inflow, p.outflow, p.duration);
        }
        differences.push((a - b).abs());
        predicted.push(map.alpha.powi(k as i32) * initial_gap);
    }
    let max_identity_error = differences
        .iter()
        .zip(&predicted)
        .map(|(d, p)| (d - p).abs())
        .fold(0.0, f64::max);
    let strictly_decreasing = initial_gap > 0.0
        && std::iter::once(&initial_gap)
            .chain(&differences)
            .collect::<Vec<_>>()
            .windows(2)
            .all(|w| w[1] < w[0]);
    ContractionReport {
        alpha: map.alpha,
        initial_gap,
        differences,
        predicted,
        max_identity_error,
        strictly_decreasing,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::{ControlBounds, MeanTargets};

    fn unit_box() -> ControlBounds {
        ControlBounds::new(0.1, 0.9).unwrap()
    }

    fn constant(m0: f64, m1: f64, period: f64) -> PeriodicControl {
        let b = unit_box();
        PeriodicControl::constant(period, b, MeanTargets::new(m0, m1, &b).unwrap()).unwrap()
    }

    // classic RK4, used as an independent check on the closed form
    fn rk4(x0: f64, u0: f64, u1: f64, dt: f64, h: f64) -> f64 {
        let f = |x: f64| u0 * (1.0 - x) - u1 * x;
        let steps = (dt / h).ceil() as usize;
        let h = dt / steps as f64;
        let mut x = x0;
        for _ in 0..steps {
            let k1 = f(x);
            let k2 = f(x + 0.5 * h * k1);
            let k3 = f(x + 0.5 * h * k2);
            let k4 = f(x + h * k3);
            x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        x
    }

    #[test]
    fn propagate_examples() {
        for dt in [0.0, 0.3, 5.0] {
            assert_eq!(propagate_piece(0.5, 0.9, 0.9, dt), 0.5);
            assert!((propagate_piece(1.0 / 3.0, 0.3, 0.6, dt) - 1.0 / 3.0).abs() < 1e-16);
        }
        let x = propagate_piece(0.9, 0.1, 0.9, 1.0);
        assert!((x - (0.1 + 0.8 * (-1.0f64).exp())).abs() < 1e-15);
        assert!((x - rk4(0.9, 0.1, 0.9, 1.0, 1e-4)).abs() < 1e-9);
        assert!((x - 0.394_303_553).abs() < 1e-9);
    }

    #[test]
    fn state_integral_matches_quadrature() {
        let (x0, u0, u1, dt) = (0.8, 0.2, 0.7, 2.5);
        let n = 200_000;
        let h = dt / n as f64;
        // composite Simpson
        let mut s = 0.0;
        for k in 0..=n {
            let w = if k == 0 || k == n { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
            s += w * propagate_piece(x0, u0, u1, k as f64 * h);
        }
        s *= h / 3.0;
        assert!((piece_state_integral(x0, u0, u1, dt) - s).abs() < 1e-12);
    }

    #[test]
    fn period_map_examples() {
        let c = constant(0.3, 0.6, 10.0);
        let m = poincare_map_coefficients(&c);
        let a = (-9.0f64).exp();
        assert!((m.alpha - a).abs() <= 1e-15 * a);
        assert!((m.beta - (1.0 - a) / 3.0).abs() < 1e-15);
        assert!((m.apply(0.7) - propagate_piece(0.7, 0.3, 0.6, 10.0)).abs() < 1e-15);

        let id = period_map(&[]);
        assert_eq!((id.alpha, id.beta), (1.0, 0.0));
    }

    #[test]
    fn orbit_examples() {
        let c = constant(0.3, 0.6, 10.0);
        let o = periodic_orbit(&c);
        assert!((o.initial - 1.0 / 3.0).abs() < 1e-15);
        let (raw, norm) = average_throughput(&o);
        assert!((raw - 0.2).abs() < 1e-15);
        assert!((norm - 1.0 / 3.0).abs() < 1e-15);

        let c = constant(0.5, 0.5, 3.0);
        let o = periodic_orbit(&c);
        assert!((o.initial - 0.5).abs() < 1e-15);
        let (raw, norm) = average_throughput(&o);
        assert!((raw - 0.25).abs() < 1e-15 && (norm - 0.5).abs() < 1e-15);
    }

    #[test]
    fn square_wave_orbit_matches_forward_iteration() {
        let b = unit_box();
        let c = PeriodicControl::uniform(10.0, vec![0.1, 0.5], vec![0.6, 0.6], b).unwrap();
        let o = periodic_orbit(&c);
        // iterate the period 200 times from 0.5
        let mut x = 0.5;
        for _ in 0..200 {
            for p in c.pieces() {
                x = propagate_piece(x, p.inflow, p.outflow, p.duration);
            }
        }
        assert!((o.initial - x).abs() < 1e-10);
        assert!(o.periodicity_residual() < 1e-12);
        assert_eq!(o.samples.len(), 3);
        assert_eq!(o.samples[2].0, 10.0);
    }

    #[test]
    fn trajectory_grid_and_values() {
        let b = unit_box();
        let c = PeriodicControl::uniform(4.0, vec![0.2, 0.4], vec![0.6, 0.6], b).unwrap();
        let o = periodic_orbit(&c);
        let tr = o.trajectory(8);
        assert_eq!(tr.len(), 9);
        assert_eq!(tr[0].t, 0.0);
        assert_eq!(tr[8].t, 4.0);
        assert!((tr[0].x1 - o.initial).abs() < 1e-15);
        assert!((tr[8].x1 - o.initial).abs() < 1e-12);
        assert!((tr[4].x1 - o.samples[1].1).abs() < 1e-15);
        assert_eq!((tr[1].u0, tr[5].u0), (0.2, 0.4));
    }

    #[test]
    fn contraction_examples() {
        let c = constant(0.3, 0.6, 10.0);
        let r = contraction_check(&c, 0.4, 0.4, 3);
        assert!(r.differences.iter().all(|d| *d == 0.0));
        assert!(!r.strictly_decreasing);

        let r = contraction_check(&c, 0.1, 0.9, 1);
        let expect = 0.8 * (-9.0f64).exp();
        assert!((r.differences[0] - expect).abs() < 1e-12);
        assert!(r.max_identity_error < 1e-12);

        let c = PeriodicControl::uniform(1.0, vec![0.1, 0.5], vec![0.6, 0.6], unit_box()).unwrap();
        let r = contraction_check(&c, 0.05, 0.95, 5);
        assert!(r.strictly_decreasing);
        assert!(r.alpha < 1.0);
    }
}
