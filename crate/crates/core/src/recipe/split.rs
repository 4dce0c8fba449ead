//! Partitioning a recipe by placement host.

use indexmap::IndexMap;

use super::model::PipelineRecipe;
use super::validate::Violation;

/// One part per host label, `local` first. Each part holds exactly the
/// kernels placed on its host together with the local connections among
/// them; remote edges stay declared on the kernels that own them.
pub fn split_recipe(
    recipe: &PipelineRecipe,
) -> Result<IndexMap<String, PipelineRecipe>, Vec<Violation>> {
    let mut violations = Vec::new();
    for (l, conn) in recipe.local_connections.iter().enumerate() {
        let (sh, rh) = (
            recipe.host_of(&conn.send_kernel),
            recipe.host_of(&conn.recv_kernel),
        );
        if sh != rh {
            violations.push(Violation {
                path: format!("local_connections[{l}]"),
                message: format!(
                    "local connection {}.{} -> {}.{} crosses hosts ({sh} -> {rh})",
                    conn.send_kernel, conn.send_port_name, conn.recv_kernel, conn.recv_port_name
                ),
            });
        }
    }
    if !violations.is_empty() {
        return Err(violations);
    }

    let mut parts: IndexMap<String, PipelineRecipe> = recipe
        .hosts()
        .into_iter()
        .map(|h| (h, PipelineRecipe::default()))
        .collect();
    for k in &recipe.kernels {
        let host = recipe.host_of(&k.id);
        let part = &mut parts[host];
        part.kernels.push(k.clone());
        if let Some(label) = recipe.placements.get(&k.id) {
            part.placements.insert(k.id.clone(), label.clone());
        }
    }
    for conn in &recipe.local_connections {
        if let Some(part) = parts.get_mut(recipe.host_of(&conn.send_kernel)) {
            part.local_connections.push(conn.clone());
        }
    }
    Ok(parts)
}

/// Inverse of [`split_recipe`] up to kernel order.
pub fn merge_parts<'a>(parts: impl IntoIterator<Item = &'a PipelineRecipe>) -> PipelineRecipe {
    let mut out = PipelineRecipe::default();
    for p in parts {
        out.kernels.extend(p.kernels.iter().cloned());
        out.local_connections
            .extend(p.local_connections.iter().cloned());
        out.placements
            .extend(p.placements.iter().map(|(k, v)| (k.clone(), v.clone())));
    }
    out
}

/// Rewrites remote output hosts that name a label in `hosts` to its address.
pub fn resolve_hosts(
    recipe: &mut PipelineRecipe,
    hosts: &std::collections::HashMap<String, String>,
) {
    for k in &mut recipe.kernels {
        for out in &mut k.output {
            if let Some(r) = &mut out.remote_info {
                if let Some(addr) = hosts.get(&r.0) {
                    r.0 = addr.clone();
                }
            }
        }
    }
}
