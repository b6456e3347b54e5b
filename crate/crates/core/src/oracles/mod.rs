//! Ground truth for small instances: an LP solver, the exact relaxation
//! optimum, and the exact minimum of the network itself.

mod exact;
mod planet;
pub mod simplex;

pub use exact::{exact_min, lp_layer_bounds, ExactMinimum, MAX_AMBIGUOUS};
pub use planet::{planet_lp_bound, planet_lp_solve, PlanetSolution};
pub use simplex::{lp_solve, KktResiduals, LinearProgram, LpOutcome, LpSolution, Relation};
