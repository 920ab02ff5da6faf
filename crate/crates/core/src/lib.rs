//! Hamiltonian stability probe over patch-feature grids.
//!
//! Patch features are projected into a latent state, rolled out from rest
//! under a learned potential (graph Dirichlet energy plus a Lambertian
//! shading variance) and summarised by the action `S` and dissipation `D`
//! of the trajectory, which feed a linear real/fake readout.

pub mod dynamics;
pub mod feature;
pub mod graphlap;
pub mod numcore;
pub mod potential;
pub mod synthbench;
pub mod training;
pub mod trajstats;

pub use feature::{FeatureGrid, GridShape};
pub use graphlap::PatchGrid;
pub use numcore::{Mat, NumError, SparseSym};
pub use potential::{PotentialConfig, PotentialModel};
