//! Config-driven pipeline around the `afferentsim` library: mesh
//! generation, FEM runs over stimulus protocols with a content-addressed
//! stress cache, neural simulation, NSGA-II fitting and the deflection check.

pub mod commands;
pub mod config;
pub mod output;

pub use commands::{cmd_fit, cmd_mesh, cmd_simulate, cmd_validate};
pub use config::RunConfig;

/// Process exit code for a failed command: 2 for invalid input, 3 for
/// numerical failures, 1 for anything else.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    use afferentsim::Error;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            if e.is_numerical() {
                return 3;
            }
            return match e {
                Error::Io(_) => 1,
                Error::Step { source, .. } if source.is_numerical() => 3,
                _ => 2,
            };
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return 2;
        }
    }
    1
}
