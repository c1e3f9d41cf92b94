//! Occupancy -> positive linear block -> occupancy: periodic inputs do not raise the final mean.

use occupancy_opc::cascade::{
    cascade_simulate, random_positive_block, steady_state_means, verify_no_gain_cascade, CascadeOptions,
    CascadeSearch, CascadeTopology,
};
use occupancy_opc::solver::random_feasible;
use occupancy_opc::{ControlBounds, MeanTargets};
use rand::SeedableRng;

fn main() -> occupancy_opc::Result<()> {
    let bounds = ControlBounds::new(0.1, 0.9)?;
    let means = MeanTargets::new(0.3, 0.6, &bounds)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let topo = CascadeTopology::fig1a(random_positive_block(&mut rng, 2))?;

    println!("stages {:?}, constant-input means {:?}", topo.labels(), steady_state_means(&topo, means)?);
    let ctrl = random_feasible(2, bounds, means, 10.0, 16)?;
    let sig = cascade_simulate(&topo, &ctrl, &CascadeOptions::default())?;
    println!("one random input: means {:?} on {} cells", sig.means, sig.pieces);

    let report = verify_no_gain_cascade(&topo, bounds, means, 10.0, 500, 3, &CascadeSearch::default())?;
    println!("{}", serde_json::to_string_pretty(&report).unwrap());
    Ok(())
}
