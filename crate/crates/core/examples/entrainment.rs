//! Two solutions under the same periodic control converge at rate alpha per period.

use occupancy_opc::occupancy::{contraction_check, poincare_map_coefficients};
use occupancy_opc::solver::random_feasible;
use occupancy_opc::{ControlBounds, MeanTargets};

fn main() -> occupancy_opc::Result<()> {
    let bounds = ControlBounds::new(0.1, 0.9)?;
    let means = MeanTargets::new(0.3, 0.6, &bounds)?;
    let ctrl = random_feasible(3, bounds, means, 2.0, 8)?;
    let map = poincare_map_coefficients(&ctrl);
    println!("x(T) = {:.6} x(0) + {:.6}, periodic x(0) = {:.12}", map.alpha, map.beta, map.fixed_point());
    println!("alpha = exp(-T (mean0 + mean1)) = {:.12}", (-2.0f64 * 0.9).exp());

    let r = contraction_check(&ctrl, 0.0, 1.0, 8);
    for (k, (d, p)) in r.differences.iter().zip(&r.predicted).enumerate() {
        println!("k={} |xa-xb|={d:.6e} alpha^k gap={p:.6e}", k + 1);
    }
    println!("max identity error {:.1e}", r.max_identity_error);
    Ok(())
}
