//! Tactile afferent simulator.
//!
//! Two stages are chained: a plane-strain finite-element model of a layered
//! fingertip cross-section under a vibrating rigid indenter produces von Mises
//! stress traces at sampling nodes, and per-afferent (SA, RA, PC) neural
//! models turn those traces into spike trains through filtering, a saturating
//! stress-to-current transform and a leaky integrate-and-fire membrane.
//!
//! Around that pipeline sit the stimulus generators, an NSGA-II parameter
//! fitter and the firing-rate / regression analyses.

pub mod afferent;
pub mod analysis;
pub mod error;
pub mod fem;
pub mod mesh;
pub mod neural;
pub mod optimize;
pub mod sparse;
pub mod stimulus;

pub use afferent::{AfferentType, PerAfferent};
pub use error::{Error, Result};

/// Default integration / FEM time step in milliseconds.
pub const DEFAULT_DT_MS: f64 = 0.5;
