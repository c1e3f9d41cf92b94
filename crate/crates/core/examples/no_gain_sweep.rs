//! Random feasible controls and the bang-bang phase oracle never beat the constant control.
//!
//! `cargo run --release --example no_gain_sweep -- [samples] [grid]`

use occupancy_opc::solver::{bangbang_oracle, monte_carlo_sweep};
use occupancy_opc::{ControlBounds, MeanTargets};

fn main() -> occupancy_opc::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("integer argument"));
    let samples = args.next().unwrap_or(20_000);
    let grid = args.next().unwrap_or(50);

    let bounds = ControlBounds::new(0.1, 0.9)?;
    let means = MeanTargets::new(0.3, 0.6, &bounds)?;
    let sweep = monte_carlo_sweep(bounds, means, 10.0, 16, samples, 1, 1e-9)?;
    println!("{}", serde_json::to_string_pretty(&sweep).unwrap());

    let bb = bangbang_oracle(bounds, means, 10.0, grid)?;
    println!(
        "bang-bang: best {:.12} at phases ({:.2}, {:.2}) of {} candidates; optimum {:.12}",
        bb.max_normalized, bb.phase0, bb.phase1, bb.candidates, sweep.analytic_optimum
    );
    Ok(())
}
