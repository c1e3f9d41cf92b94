//! Any inflow paired with a proportional outflow keeps the occupancy at its steady value.

use occupancy_opc::signals::proportional_companion;
use occupancy_opc::{periodic_orbit, pmp::verify_extremal, Channel, ControlBounds, MeanTargets, PeriodicControl};

fn main() -> occupancy_opc::Result<()> {
    let bounds = ControlBounds::new(0.1, 0.9)?;
    let means = MeanTargets::new(0.3, 0.6, &bounds)?;
    let u0 = vec![0.1, 0.45, 0.2, 0.45, 0.3, 0.3];
    let base = PeriodicControl::uniform(10.0, u0, vec![0.6; 6], bounds)?;
    let ctrl = proportional_companion(&base, &means)?;
    println!("u0 = {:?}", ctrl.values(Channel::Inflow));
    println!("u1 = {:?}", ctrl.values(Channel::Outflow));

    let orbit = periodic_orbit(&ctrl);
    let (lo, hi) = orbit.min_max();
    println!("x1 in [{lo:.15}, {hi:.15}], normalized throughput {:.15}", orbit.throughput_normalized);
    println!("certified extremal: {}", verify_extremal(&ctrl, 1e-9).pass);
    Ok(())
}
