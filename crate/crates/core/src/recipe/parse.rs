//! YAML parsing and canonical emission.
//!
//! Two layouts are accepted. The mapping form has top-level `kernels`,
//! `local_connections` and `placements` keys and is what [`emit_recipe`]
//! writes. The sequence form lists kernel entries directly, with
//! `local_connections` (and optionally `placements`) as entries of their own:
//!
//! ```yaml
//! - kernel: ExampleKernel
//!   id: example_kernel1
//!   output:
//!     - port_name: out
//!       connection_type: local
//! - local_connections:
//!   - send_kernel: example_kernel1
//!     send_port_name: out
//!     recv_kernel: example_kernel2
//!     recv_port_name: input
//!     queue_size: 1
//! ```

use std::collections::BTreeMap;

use serde::Deserialize;

use super::model::{InputEntry, KernelEntry, LocalConnection, OutputEntry, Params, PipelineRecipe};
use super::RecipeError;

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SeqEntry {
    kernel: Option<String>,
    id: Option<String>,
    frequency: Option<f64>,
    params: Option<Params>,
    input: Option<Vec<InputEntry>>,
    output: Option<Vec<OutputEntry>>,
    local_connections: Option<Vec<LocalConnection>>,
    placements: Option<BTreeMap<String, String>>,
}

impl SeqEntry {
    fn is_kernel(&self) -> bool {
        self.kernel.is_some()
            || self.id.is_some()
            || self.frequency.is_some()
            || self.params.is_some()
            || self.input.is_some()
            || self.output.is_some()
    }
}

const SECTION_KEYS: [&str; 2] = ["local_connections", "placements"];

pub fn parse_recipe_bytes(text: &[u8]) -> Result<PipelineRecipe, RecipeError> {
    let text = std::str::from_utf8(text).map_err(|e| RecipeError::Encoding {
        offset: e.valid_up_to(),
    })?;
    parse_recipe(text)
}

pub fn parse_recipe(text: &str) -> Result<PipelineRecipe, RecipeError> {
    let shape: serde_yaml::Value = serde_yaml::from_str(text).map_err(syntax_error)?;
    let recipe = match &shape {
        serde_yaml::Value::Sequence(items) => parse_sequence(text, items)?,
        serde_yaml::Value::Mapping(_) => {
            let de = serde_yaml::Deserializer::from_str(text);
            serde_path_to_error::deserialize::<_, PipelineRecipe>(de)
                .map_err(|e| schema_error(e, |p| p))?
        }
        serde_yaml::Value::Null => {
            return Err(RecipeError::Schema {
                path: "kernels".into(),
                line: None,
                message: "at least one kernel is required".into(),
            })
        }
        _ => {
            return Err(RecipeError::Schema {
                path: String::new(),
                line: Some(1),
                message: "a recipe is a mapping or a sequence of entries".into(),
            })
        }
    };
    if recipe.kernels.is_empty() {
        return Err(RecipeError::Schema {
            path: "kernels".into(),
            line: None,
            message: "at least one kernel is required".into(),
        });
    }
    Ok(recipe)
}

fn parse_sequence(text: &str, items: &[serde_yaml::Value]) -> Result<PipelineRecipe, RecipeError> {
    // Index of each top-level entry in the path the user will recognise.
    let prefixes: Vec<String> = {
        let mut k = 0;
        items
            .iter()
            .map(|v| {
                let section = v.as_mapping().and_then(|m| {
                    SECTION_KEYS
                        .iter()
                        .find(|key| m.contains_key(**key))
                        .map(|key| key.to_string())
                });
                section.unwrap_or_else(|| {
                    k += 1;
                    format!("kernels[{}]", k - 1)
                })
            })
            .collect()
    };
    let rewrite = |path: String| -> String {
        let Some(rest) = path.strip_prefix('[') else {
            return path;
        };
        let Some((idx, tail)) = rest.split_once(']') else {
            return path;
        };
        match idx.parse::<usize>().ok().and_then(|i| prefixes.get(i)) {
            Some(p) if SECTION_KEYS.contains(&p.as_str()) => {
                tail.trim_start_matches('.').to_owned()
            }
            Some(p) => format!("{p}{tail}"),
            None => path,
        }
    };
    let de = serde_yaml::Deserializer::from_str(text);
    let entries: Vec<SeqEntry> =
        serde_path_to_error::deserialize(de).map_err(|e| schema_error(e, rewrite))?;

    let mut recipe = PipelineRecipe::default();
    for (entry, prefix) in entries.into_iter().zip(&prefixes) {
        let section = entry.local_connections.is_some() || entry.placements.is_some();
        if section && entry.is_kernel() {
            return Err(RecipeError::Schema {
                path: prefix.clone(),
                line: None,
                message: "an entry is either a kernel or a local_connections/placements section"
                    .into(),
            });
        }
        if section {
            if let Some(lc) = entry.local_connections {
                recipe.local_connections.extend(lc);
            }
            if let Some(p) = entry.placements {
                recipe.placements.extend(p);
            }
            continue;
        }
        let missing = |field: &str| RecipeError::Schema {
            path: format!("{prefix}.{field}"),
            line: None,
            message: format!("missing field `{field}`"),
        };
        recipe.kernels.push(KernelEntry {
            kernel: entry.kernel.ok_or_else(|| missing("kernel"))?,
            id: entry.id.ok_or_else(|| missing("id"))?,
            frequency: entry.frequency,
            params: entry.params.unwrap_or_default(),
            input: entry.input.unwrap_or_default(),
            output: entry.output.unwrap_or_default(),
        });
    }
    Ok(recipe)
}

fn syntax_error(e: serde_yaml::Error) -> RecipeError {
    let loc = e.location();
    RecipeError::Syntax {
        line: loc.as_ref().map(|l| l.line()),
        column: loc.as_ref().map(|l| l.column()),
        message: e.to_string(),
    }
}

fn schema_error(
    e: serde_path_to_error::Error<serde_yaml::Error>,
    rewrite: impl Fn(String) -> String,
) -> RecipeError {
    let path = rewrite(e.path().to_string());
    let inner = e.into_inner();
    let line = inner.location().map(|l| l.line());
    // serde_yaml appends " at line X column Y"; the line is reported separately.
    let mut message = inner.to_string();
    if let Some(i) = message.find(" at line ") {
        message.truncate(i);
    }
    RecipeError::Schema {
        path: if path == "." { String::new() } else { path },
        line,
        message,
    }
}

/// Canonical YAML (mapping form). `parse_recipe(&emit_recipe(r)) == r`.
pub fn emit_recipe(recipe: &PipelineRecipe) -> String {
    serde_yaml::to_string(recipe).expect("recipe model always serializes")
}
