//! Mean output of a positive linear block under a periodic input is H(0) times the mean input.

use occupancy_opc::cascade::{check_metzler_hurwitz, dc_gain, linear_steady_periodic, LinearBlock};
use occupancy_opc::PiecewiseSignal;

fn main() -> occupancy_opc::Result<()> {
    let blk = LinearBlock::from_rows(&[vec![-2.0, 1.0], vec![0.0, -1.0]], &[1.0, 0.0], &[1.0, 0.0])?;
    println!("{:?}", check_metzler_hurwitz(&blk));
    let gain = dc_gain(&blk)?;
    println!("H(0) = {gain}");

    for (period, duty) in [(0.5, 0.5), (4.0, 0.2), (25.0, 0.9)] {
        let w = PiecewiseSignal::square_wave(period, 1.0, 0.1, duty, 0.0)?;
        let r = linear_steady_periodic(&blk, &w)?;
        println!(
            "T={period:>5} duty={duty}: mean y = {:.15}, H(0) mean w = {:.15}, y range [{:.4}, {:.4}]",
            r.mean_output,
            gain * w.mean(),
            r.outputs.iter().cloned().fold(f64::MAX, f64::min),
            r.outputs.iter().cloned().fold(f64::MIN, f64::max),
        );
    }
    Ok(())
}
