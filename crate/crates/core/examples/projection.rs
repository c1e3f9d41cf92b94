//! Length-weighted projection onto the box with a fixed mean.

use occupancy_opc::signals::project_to_feasible;
use occupancy_opc::ControlBounds;

fn main() -> occupancy_opc::Result<()> {
    let bounds = ControlBounds::new(0.1, 0.9)?;
    let lengths = [1.0, 2.0, 0.5, 1.5, 1.0];
    let raw = [1.4, -0.2, 0.5, 0.8, 0.33];
    let v = project_to_feasible(&raw, &lengths, bounds, 0.3)?;
    let mean = v.iter().zip(&lengths).map(|(a, b)| a * b).sum::<f64>() / lengths.iter().sum::<f64>();
    println!("{raw:?}\n-> {v:?}\nmean {mean:.15}");
    assert_eq!(project_to_feasible(&v, &lengths, bounds, 0.3)?, v);
    Ok(())
}
