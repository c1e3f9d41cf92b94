//! Periodic control of a two-input occupancy model.
//!
//! The occupancy state `x` evolves as `x' = u0 (1 - x) - u1 x` under bounded,
//! T-periodic inflow `u0` and outflow `u1` with prescribed means. Orbits and
//! throughput are computed in closed form piece by piece. On top of that sit a
//! projected-ascent search over periodic controls and a maximum-principle
//! certificate for candidate extremals. The [`cascade`] module chains
//! occupancy stages with positive linear blocks.

pub mod cascade;
pub mod cli;
pub mod error;
pub mod expm;
pub mod io;
pub mod occupancy;
pub mod pmp;
pub mod signals;
pub mod solver;

pub use error::{Error, Result};
pub use occupancy::{average_throughput, periodic_orbit, OccupancyOrbit};
pub use pmp::{verify_extremal, Certificate};
pub use signals::{Channel, ControlBounds, MeanTargets, PeriodicControl, PiecewiseSignal};
pub use solver::{projected_ascent, SolverConfig};
