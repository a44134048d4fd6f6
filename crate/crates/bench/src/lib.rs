//! Shared fixtures for the criterion benches.

use std::path::PathBuf;

use nflsos_core::definition::SystemDefinition;

/// A bundled benchmark definition, e.g. `"three_state"`.
pub fn definition(name: &str) -> SystemDefinition {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../benchmarks").join(format!("{name}.toml"));
    SystemDefinition::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}
