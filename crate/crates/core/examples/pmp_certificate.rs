//! Maximum-principle checks: the constant control is certified, a bang-bang one is not.

use occupancy_opc::pmp::{normal_multiplier, singular_costate, verify_extremal, verify_with_costate, VerifyOptions};
use occupancy_opc::solver::bangbang_control;
use occupancy_opc::{ControlBounds, MeanTargets, PeriodicControl};

fn main() -> occupancy_opc::Result<()> {
    let bounds = ControlBounds::new(0.1, 0.9)?;
    let means = MeanTargets::new(0.3, 0.6, &bounds)?;
    let constant = PeriodicControl::constant(10.0, bounds, means)?;

    let costate = singular_costate(1.0 / 3.0, normal_multiplier(10.0, 0.6))?;
    println!("singular co-state: {costate:?}");
    let cert = verify_with_costate(&constant, &costate, &VerifyOptions::default());
    println!(
        "constant: pass={} max|phi0|={:.1e} max|phi1|={:.1e} arcs={:?}",
        cert.pass,
        cert.max_abs_phi0,
        cert.max_abs_phi1,
        cert.arcs.iter().map(|a| a.kind).collect::<Vec<_>>()
    );

    let bb = bangbang_control(bounds, means, 10.0, 0.0, 0.3)?;
    let cert = verify_extremal(&bb, 1e-9);
    println!("bang-bang: pass={} (p2, p3) = ({:.4}, {:.4})", cert.pass, cert.p2, cert.p3);
    for v in cert.violations.iter().take(5) {
        println!("  {:?} at t={:.3}: {:.3e} ({})", v.condition, v.at, v.magnitude, v.detail);
    }
    Ok(())
}
