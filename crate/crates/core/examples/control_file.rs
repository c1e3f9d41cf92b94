//! Controls round-trip through their JSON document, the format of the `control` file in an `opc` config.

use occupancy_opc::{ControlBounds, PeriodicControl, PiecewiseSignal};

fn main() -> occupancy_opc::Result<()> {
    let bounds = ControlBounds::new(0.1, 0.9)?;
    let u0 = PiecewiseSignal::square_wave(10.0, 0.5, 0.1, 0.5, 0.0)?;
    let u1 = PiecewiseSignal::constant(10.0, 0.6)?;
    let ctrl = PeriodicControl::from_channels(&u0, &u1, bounds)?;
    let text = ctrl.to_json();
    println!("{text}");
    assert_eq!(PeriodicControl::from_json(&text)?, ctrl);
    Ok(())
}
