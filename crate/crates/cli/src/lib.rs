//! Configuration, plotting and experiment plans for the `exitlab` binary.

pub mod config;
pub mod plan;
pub mod plot;
pub mod stages;

use std::path::{Path, PathBuf};

/// Environment variable naming the directory that relative outputs go to.
pub const OUTPUT_ROOT_ENV: &str = "EXITLAB_OUTPUT";

/// Resolves `path` against the output root unless it is absolute.
pub fn resolve_output(root: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        root.join(path)
    }
}
