//! Throughput of the constant control and of a square-wave control with the same means.

use occupancy_opc::{periodic_orbit, ControlBounds, MeanTargets, PeriodicControl};
use occupancy_opc::solver::bangbang_control;

fn main() -> occupancy_opc::Result<()> {
    let bounds = ControlBounds::new(0.1, 0.9)?;
    let means = MeanTargets::new(0.3, 0.6, &bounds)?;

    let constant = PeriodicControl::constant(10.0, bounds, means)?;
    let orbit = periodic_orbit(&constant);
    println!("constant:    x1(0) = {:.15}", orbit.initial);
    println!("             raw = {:.15}, normalized = {:.15}", orbit.throughput_raw, orbit.throughput_normalized);

    let square = bangbang_control(bounds, means, 10.0, 0.0, 0.5)?;
    let orbit = periodic_orbit(&square);
    let (lo, hi) = orbit.min_max();
    println!("square wave: x1 in [{lo:.4}, {hi:.4}], normalized = {:.15}", orbit.throughput_normalized);
    Ok(())
}
