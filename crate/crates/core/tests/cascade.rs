use nalgebra::{DMatrix, DVector};
use occupancy_opc::cascade::{
    cascade_simulate, check_metzler_hurwitz, dc_gain, linear_steady_periodic, random_positive_block,
    steady_state_means, verify_no_gain_cascade, verify_prop9, CascadeOptions, CascadeSearch, CascadeTopology,
    LinearBlock,
};
use occupancy_opc::signals::{ControlBounds, MeanTargets, PeriodicControl, PiecewiseSignal};
use occupancy_opc::solver::random_feasible;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn setup() -> (ControlBounds, MeanTargets) {
    let b = ControlBounds::new(0.1, 0.9).unwrap();
    (b, MeanTargets::new(0.3, 0.6, &b).unwrap())
}

/// Integrates the coupled occupancy → block → occupancy system with RK4 for
/// many periods and returns the average of `u1 x2` over the last period.
fn rk4_fig1a_mean(blk: &LinearBlock, ctrl: &PeriodicControl, periods: usize, steps_per_period: usize) -> f64 {
    let n = blk.dim();
    let a = blk.a().clone();
    let b = blk.b().clone();
    let c = blk.c().clone();
    // inputs are frozen over each step; the step grid contains every breakpoint
    let rhs = |(u0, u1): (f64, f64), s: &DVector<f64>| -> DVector<f64> {
        let x1 = s[0];
        let z = s.rows(1, n).into_owned();
        let x2 = s[n + 1];
        let y = u1 * x1;
        let w1 = c.dot(&z);
        let mut d = DVector::zeros(n + 2);
        d[0] = u0 * (1.0 - x1) - u1 * x1;
        d.rows_mut(1, n).copy_from(&(&a * &z + &b * y));
        d[n + 1] = w1 * (1.0 - x2) - u1 * x2;
        d
    };
    let period = ctrl.period();
    let h = period / steps_per_period as f64;
    let mut s = DVector::from_element(n + 2, 0.3);
    let mut acc = 0.0;
    for p in 0..periods {
        for k in 0..steps_per_period {
            let u = ctrl.sample((k as f64 + 0.5) * h);
            let k1 = rhs(u, &s);
            let k2 = rhs(u, &(&s + &k1 * (0.5 * h)));
            let k3 = rhs(u, &(&s + &k2 * (0.5 * h)));
            let k4 = rhs(u, &(&s + &k3 * h));
            let next = &s + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            if p + 1 == periods {
                acc += u.1 * 0.5 * (s[n + 1] + next[n + 1]) * h;
            }
            s = next;
        }
    }
    acc / period
}

#[test]
fn fig1a_mean_matches_coupled_rk4() {
    let (b, m) = setup();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let blk = random_positive_block(&mut rng, 2);
    let topo = CascadeTopology::fig1a(blk.clone()).unwrap();
    // 8 pieces on a period of 10: every breakpoint lies on the RK4 grid
    let ctrl = random_feasible(5, b, m, 10.0, 8).unwrap();
    let sig = cascade_simulate(&topo, &ctrl, &CascadeOptions::default()).unwrap();
    assert!(sig.converged);
    let oracle = rk4_fig1a_mean(&blk, &ctrl, 60, 8000);
    assert!((sig.output_mean - oracle).abs() < 1e-6, "{} vs {}", sig.output_mean, oracle);
}

#[test]
fn linear_response_matches_rk4_on_random_blocks() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10 {
        let n = rng.gen_range(1..=4);
        let blk = random_positive_block(&mut rng, n);
        let w = PiecewiseSignal::square_wave(5.0, 1.0, 0.2, rng.gen_range(0.1..0.9), rng.gen_range(0.0..1.0)).unwrap();
        let r = linear_steady_periodic(&blk, &w).unwrap();
        // one period of RK4 from the computed periodic state
        let f = |z: &DVector<f64>, u: f64| blk.a() * z + blk.b() * u;
        let mut z = DVector::from_column_slice(&r.z0);
        for (k, (win, &u)) in w.breakpoints().windows(2).zip(w.values()).enumerate() {
            let steps = ((win[1] - win[0]) / 1e-4).ceil() as usize;
            let h = (win[1] - win[0]) / steps as f64;
            for _ in 0..steps {
                let k1 = f(&z, u);
                let k2 = f(&(&z + &k1 * (0.5 * h)), u);
                let k3 = f(&(&z + &k2 * (0.5 * h)), u);
                let k4 = f(&(&z + &k3 * h), u);
                z += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            }
            let exact = DVector::from_column_slice(&r.states[k + 1]);
            assert!((&z - exact).amax() < 1e-9);
        }
        assert!((z - DVector::from_column_slice(&r.z0)).amax() < 1e-9);
    }
}

#[test]
fn positive_blocks_keep_outputs_nonnegative() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..20 {
        let n = rng.gen_range(1..=4);
        let blk = random_positive_block(&mut rng, n);
        let w = PiecewiseSignal::square_wave(8.0, 1.0, 0.0, 0.3, 0.5).unwrap();
        let r = linear_steady_periodic(&blk, &w).unwrap();
        assert!(r.states.iter().flatten().all(|&z| z >= -1e-15));
        for k in 0..=400 {
            assert!(r.output_at(8.0 * k as f64 / 400.0) >= -1e-15);
        }
    }
}

#[test]
fn dc_gain_matches_integrated_impulse_response() {
    // H(0) = ∫ c^T e^{At} b dt, approximated by a fine Simpson rule
    let blk = LinearBlock::from_rows(&[vec![-2.0, 1.0], vec![0.5, -1.5]], &[1.0, 0.3], &[0.2, 1.0]).unwrap();
    let n = 40_000;
    let t_end = 40.0;
    let h = t_end / n as f64;
    let step = occupancy_opc::expm::expm(&(blk.a() * h));
    let mut z = blk.b().clone();
    let mut sum = 0.0;
    for k in 0..=n {
        let w = if k == 0 || k == n { 1.0 } else if k % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * blk.c().dot(&z);
        z = &step * z;
    }
    let integral = sum * h / 3.0;
    assert!((dc_gain(&blk).unwrap() - integral).abs() < 1e-10);
}

#[test]
fn hurwitz_test_examples() {
    let cases: [(&[f64], bool); 3] = [
        (&[-1.0, 0.5, 0.5, -1.0], true),
        (&[-1.0, 2.0, 2.0, -1.0], false),
        (&[-3.0, 0.0, 5.0, -0.1], true),
    ];
    for (a, want) in cases {
        let blk = LinearBlock::new(
            DMatrix::from_row_slice(2, 2, a),
            DVector::from_element(2, 1.0),
            DVector::from_element(2, 1.0),
        )
        .unwrap();
        assert_eq!(check_metzler_hurwitz(&blk).hurwitz, Some(want), "{a:?}");
    }
}

#[test]
fn prop9_on_random_square_waves() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..30 {
        let n = rng.gen_range(1..=4);
        let blk = random_positive_block(&mut rng, n);
        let w = PiecewiseSignal::square_wave(
            rng.gen_range(0.5..20.0),
            rng.gen_range(0.5..2.0),
            rng.gen_range(0.0..0.5),
            rng.gen_range(0.05..0.95),
            rng.gen_range(0.0..1.0),
        )
        .unwrap();
        assert!(verify_prop9(&blk, &w).unwrap().relative <= 1e-8);
    }
}

#[test]
fn constant_inputs_match_closed_form_for_both_wirings() {
    let (b, m) = setup();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let blk = random_positive_block(&mut rng, 3);
    let ctrl = PeriodicControl::constant(10.0, b, m).unwrap();
    for topo in [CascadeTopology::fig1a(blk.clone()).unwrap(), CascadeTopology::fig1b(blk.clone()).unwrap()] {
        let sig = cascade_simulate(&topo, &ctrl, &CascadeOptions::default()).unwrap();
        let closed = steady_state_means(&topo, m).unwrap();
        for (a, c) in sig.means.iter().zip(&closed) {
            assert!((a - c).abs() < 1e-12, "{}: {a} vs {c}", topo.wiring());
        }
    }
}

#[test]
fn fig1a_no_gain_small_search() {
    let (b, m) = setup();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let topo = CascadeTopology::fig1a(random_positive_block(&mut rng, 2)).unwrap();
    let r = verify_no_gain_cascade(&topo, b, m, 10.0, 64, 1, &CascadeSearch::default()).unwrap();
    assert_eq!(r.exceedances, 0);
    assert!(r.gap <= 1e-8);
    assert!((r.constant_output_mean - r.closed_form_output_mean).abs() < 1e-12);
}

#[test]
fn refinement_converges_monotonically_in_resolution() {
    let (b, m) = setup();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let topo = CascadeTopology::fig1a(random_positive_block(&mut rng, 2)).unwrap();
    let ctrl = random_feasible(3, b, m, 10.0, 16).unwrap();
    let coarse = cascade_simulate(&topo, &ctrl, &CascadeOptions { min_pieces: 64, max_pieces: 64, ..Default::default() }).unwrap();
    let fine = cascade_simulate(&topo, &ctrl, &CascadeOptions::default()).unwrap();
    assert!(!coarse.converged && fine.converged);
    assert!(fine.last_change < 1e-9);
    // first-stage output is exact at any resolution
    assert!((coarse.means[0] - fine.means[0]).abs() < 1e-14);
}
