//! Recipes: the user's YAML description of a pipeline.

pub mod model;
pub mod parse;
pub mod split;
pub mod validate;

use thiserror::Error;

pub use model::{
    ConnectionType, InputEntry, InputRemote, KernelEntry, LocalConnection, OutputEntry,
    OutputRemote, ParamError, Params, PipelineRecipe, Protocol, LOCAL_HOST, MAX_MILLIS,
};
pub use parse::{emit_recipe, parse_recipe, parse_recipe_bytes};
pub use split::{merge_parts, resolve_hosts, split_recipe};
pub use validate::{
    host_labels, validate, Activation, BranchPlan, Endpoint, KernelPlan, LocalEdge,
    PipelineMetadata, PortPlan, RemoteEdge, Violation, DEFAULT_QUEUE_SIZE, EXEC_PARAM,
};

fn at_line(line: &Option<usize>) -> String {
    line.map(|l| format!(" (line {l})")).unwrap_or_default()
}

#[derive(Debug, Error)]
pub enum RecipeError {
    #[error("recipe is not valid YAML{}: {message}", at_line(line))]
    Syntax {
        line: Option<usize>,
        column: Option<usize>,
        message: String,
    },
    #[error("schema violation at {path}{}: {message}", at_line(line))]
    Schema {
        path: String,
        line: Option<usize>,
        message: String,
    },
    #[error("recipe is not UTF-8 (invalid byte at offset {offset})")]
    Encoding { offset: usize },
    #[error("cannot read recipe {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("recipe has {} violation(s): {}", .0.len(), join(.0))]
    Invalid(Vec<Violation>),
}

fn join(v: &[Violation]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

/// Reads and parses a recipe file.
pub fn load_recipe(path: impl AsRef<std::path::Path>) -> Result<PipelineRecipe, RecipeError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| RecipeError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_recipe_bytes(&bytes)
}
