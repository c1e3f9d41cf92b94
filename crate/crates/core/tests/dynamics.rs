use occupancy_opc::occupancy::{contraction_check, periodic_orbit, poincare_map_coefficients, propagate_piece};
use occupancy_opc::pmp::{costate_periodic, costate_propagate_piece};
use occupancy_opc::signals::{proportional_companion, Channel, ControlBounds, MeanTargets, PeriodicControl};
use occupancy_opc::solver::random_feasible;
use proptest::prelude::*;

fn rk4<F: Fn(f64) -> f64>(f: F, y0: f64, t: f64, h: f64) -> f64 {
    let steps = (t / h).ceil().max(1.0) as usize;
    let h = t / steps as f64;
    let mut y = y0;
    for _ in 0..steps {
        let k1 = f(y);
        let k2 = f(y + 0.5 * h * k1);
        let k3 = f(y + 0.5 * h * k2);
        let k4 = f(y + h * k3);
        y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    y
}

fn setup() -> (ControlBounds, MeanTargets) {
    let b = ControlBounds::new(0.1, 0.9).unwrap();
    (b, MeanTargets::new(0.3, 0.6, &b).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn state_stays_in_unit_interval(x0 in 0.0f64..=1.0, u0 in 0.0f64..5.0, u1 in 0.0f64..5.0, dt in 0.0f64..50.0) {
        let x = propagate_piece(x0, u0, u1, dt);
        prop_assert!((0.0..=1.0).contains(&x));
    }

    #[test]
    fn propagation_is_a_semigroup(x0 in 0.0f64..=1.0, u0 in 0.05f64..2.0, u1 in 0.05f64..2.0, s in 0.0f64..5.0, t in 0.0f64..5.0) {
        let split = propagate_piece(propagate_piece(x0, u0, u1, s), u0, u1, t);
        prop_assert!((split - propagate_piece(x0, u0, u1, s + t)).abs() < 1e-14);
    }

    #[test]
    fn state_matches_rk4(x0 in 0.0f64..=1.0, u0 in 0.1f64..0.9, u1 in 0.1f64..0.9, dt in 0.01f64..3.0) {
        let oracle = rk4(|x| u0 * (1.0 - x) - u1 * x, x0, dt, 1e-4);
        prop_assert!((propagate_piece(x0, u0, u1, dt) - oracle).abs() < 1e-9);
    }

    #[test]
    fn costate_matches_rk4(p0 in -1.0f64..2.0, u0 in 0.1f64..0.9, u1 in 0.1f64..0.9, dt in 0.01f64..1.0) {
        let oracle = rk4(|p| (u0 + u1) * p - u1, p0, dt, 1e-4);
        prop_assert!((costate_propagate_piece(p0, u0, u1, dt) - oracle).abs() < 1e-9 * oracle.abs().max(1.0));
    }

    #[test]
    fn period_map_is_affine_in_the_initial_state(seed in any::<u64>(), xa in 0.0f64..=1.0, xb in 0.0f64..=1.0) {
        let (b, m) = setup();
        let ctrl = random_feasible(seed, b, m, 10.0, 8).unwrap();
        let map = poincare_map_coefficients(&ctrl);
        let push = |x0: f64| ctrl.pieces().fold(x0, |x, p| propagate_piece(x, p.inflow, p.outflow, p.duration));
        prop_assert!((push(xa) - (map.alpha * xa + map.beta)).abs() < 1e-14);
        // collinearity of three images
        let xm = 0.5 * (xa + xb);
        prop_assert!((push(xm) - 0.5 * (push(xa) + push(xb))).abs() < 1e-14);
    }

    #[test]
    fn contraction_identity(seed in any::<u64>(), xa in 0.0f64..=1.0, xb in 0.0f64..=1.0) {
        let (b, m) = setup();
        let ctrl = random_feasible(seed, b, m, 10.0, 16).unwrap();
        let r = contraction_check(&ctrl, xa, xb, 5);
        prop_assert!(r.max_identity_error <= 1e-12);
        // alpha depends only on the inflow-plus-outflow integral
        prop_assert!((r.alpha - (-9.0f64).exp()).abs() <= 1e-12 * (-9.0f64).exp());
    }

    #[test]
    fn companion_controls_hold_the_optimum(seed in any::<u64>()) {
        let b = ControlBounds::new(0.1, 0.9).unwrap();
        let m = MeanTargets::new(0.3, 0.6, &b).unwrap();
        let narrow = ControlBounds::new(0.1, 0.45).unwrap();
        let m_narrow = MeanTargets::new(0.3, 0.4, &narrow).unwrap();
        let base = random_feasible(seed, narrow, m_narrow, 10.0, 12).unwrap();
        let widened = PeriodicControl::new(
            10.0,
            base.breakpoints().to_vec(),
            base.values(Channel::Inflow).to_vec(),
            base.values(Channel::Inflow).to_vec(),
            b,
        ).unwrap();
        let ctrl = proportional_companion(&widened, &m).unwrap();
        let orbit = periodic_orbit(&ctrl);
        prop_assert!((orbit.throughput_normalized - 1.0 / 3.0).abs() < 1e-10);
        let (lo, hi) = orbit.min_max();
        prop_assert!((lo - 1.0 / 3.0).abs() < 1e-10 && (hi - 1.0 / 3.0).abs() < 1e-10);
    }

    #[test]
    fn periodic_costate_closes(seed in any::<u64>()) {
        let (b, m) = setup();
        let ctrl = random_feasible(seed, b, m, 10.0, 16).unwrap();
        let path = costate_periodic(&ctrl);
        let end = ctrl.pieces().fold(path.p1_initial, |p, pc| costate_propagate_piece(p, pc.inflow, pc.outflow, pc.duration));
        prop_assert!((end - path.p1_initial).abs() <= 1e-12 * path.growth.max(1.0));
        // inside the same band as the state
        prop_assert!(path.samples.iter().all(|&(_, p)| p > 0.1 && p < 0.9));
    }

    #[test]
    fn orbit_is_periodic_and_in_band(seed in any::<u64>()) {
        let (b, m) = setup();
        let ctrl = random_feasible(seed, b, m, 10.0, 16).unwrap();
        let orbit = periodic_orbit(&ctrl);
        prop_assert!(orbit.periodicity_residual() < 1e-14);
        let (lo, hi) = orbit.min_max();
        prop_assert!(lo > 0.1 && hi < 0.9);
        prop_assert!(orbit.throughput_normalized <= 1.0 / 3.0 + 1e-12);
    }
}

#[test]
fn trajectory_is_dense_and_consistent() {
    let (b, m) = setup();
    let ctrl = random_feasible(42, b, m, 10.0, 16).unwrap();
    let orbit = periodic_orbit(&ctrl);
    let traj = orbit.trajectory(1000);
    assert_eq!(traj.len(), 1001);
    assert_eq!(traj[0].t, 0.0);
    assert_eq!(traj[1000].t, 10.0);
    assert!((traj[0].x1 - traj[1000].x1).abs() < 1e-14);
    // midpoint rule on a grid that contains every breakpoint
    let fine = orbit.trajectory(1600);
    let h = 10.0 / 1600.0;
    let mut integral = 0.0;
    for w in fine.windows(2) {
        let mid = 0.5 * (w[0].t + w[1].t);
        let (_, u1) = ctrl.sample(mid);
        integral += u1 * orbit.state_at(mid) * h;
    }
    assert!((integral / 10.0 - orbit.throughput_raw).abs() < 1e-5);
}
