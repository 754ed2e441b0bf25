pub mod attention;
pub mod eval;
pub mod rerank;
pub mod synth;
pub mod train;

use std::path::Path;

use crate::config::{resolve, Overrides, RunConfig};
use crate::Failure;

/// Resolves the configuration, printing every flag/file conflict.
pub fn load_config(path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig, Failure> {
    if let Some(p) = path {
        crate::artifacts::require_file(p, "config file")?;
    }
    let (cfg, conflicts) = resolve(path, overrides).map_err(Failure::Usage)?;
    for c in conflicts {
        eprintln!("config: {c}");
    }
    Ok(cfg)
}

/// Parses `0,0.1,0.5` style lists.
pub fn parse_list<T: std::str::FromStr>(text: &str) -> Result<Vec<T>, Failure>
where
    T::Err: std::fmt::Display,
{
    text.split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|e| Failure::usage(format!("cannot parse {s:?} in list {text:?}: {e}")))
        })
        .collect()
}
