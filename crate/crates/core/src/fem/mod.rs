//! Quasi-static plane-strain linear elasticity with rigid-indenter contact.
//!
//! Lengths are in mm and moduli in MPa, so the solver works in N/mm² (MPa);
//! stresses leave this module in Pa.

mod assembly;
mod contact;
mod element;
mod indentation;
mod stress;

pub use assembly::{
    assemble_stiffness, internal_forces, solve_step, ConstrainedSolver, PrescribedDof,
    StiffnessSystem,
};
pub use contact::{contact_active_set, ContactModel, Indenter};
pub use element::{constitutive_matrix, element_stiffness};
pub use indentation::{
    run_indentation, DeflectionProfile, IndentationModel, IndentationOptions, IndentationResult,
    IndenterSpec, StressTrace,
};
pub use stress::{recover_stress, von_mises, NodalStressOperator, StressTensor2D};

/// Stress unit conversion from the solver's MPa to exported Pa.
pub const PA_PER_MPA: f64 = 1.0e6;
