use std::fmt::Write;

use super::MergedGraph;

/// Human-readable account of a merge: one row per source op, the glue that
/// was inserted, and before/after totals.
pub fn explain(merged: &MergedGraph) -> String {
    let info = &merged.info;
    let stats = &info.stats;
    let mut s = String::new();
    if info.num_models == 1 {
        s.push_str("M=1 (degenerate)\n");
    } else {
        writeln!(s, "merge of M={} models", info.num_models).unwrap();
    }

    let w_src = info.nodes.iter().map(|n| n.source.len()).max().unwrap_or(0).max(6);
    let w_kind = info.nodes.iter().map(|n| n.source_kind.len()).max().unwrap_or(0).max(4);
    let w_merged = info.nodes.iter().map(|n| n.merged_kind.len()).max().unwrap_or(0).max(6);
    writeln!(
        s,
        "{:w_src$}  {:w_kind$}  {:w_merged$}  {:8}  glue",
        "source", "kind", "merged", "dim"
    )
    .unwrap();
    for n in &info.nodes {
        let glue: Vec<String> = info
            .glue
            .iter()
            .filter(|g| g.consumer == n.source)
            .map(|g| format!("{}->{} from {}", g.from, g.to, g.producer))
            .collect();
        let glue = if glue.is_empty() {
            "-".to_owned()
        } else {
            glue.join(", ")
        };
        writeln!(
            s,
            "{:w_src$}  {:w_kind$}  {:w_merged$}  {:8}  {}",
            n.source,
            n.source_kind,
            n.merged_kind,
            n.dim.to_string(),
            glue
        )
        .unwrap();
    }

    let dims: Vec<String> = info.nodes.iter().map(|n| n.dim.to_string()).collect();
    writeln!(s, "dims: [{}]", dims.join(", ")).unwrap();
    for input in &info.inputs {
        writeln!(s, "input {}: packed {}", input.name, input.dim).unwrap();
    }
    for (k, dim) in info.outputs.iter().enumerate() {
        writeln!(s, "output {k}: unpacked {dim}").unwrap();
    }
    writeln!(s, "glue: {} ({} nodes)", stats.glue_count, 2 * stats.glue_count).unwrap();
    write!(
        s,
        "ops: {} before, {} after ({} pack, {} unpack, {} glue",
        stats.source_nodes,
        stats.merged_nodes,
        stats.pack_nodes,
        stats.unpack_nodes,
        2 * stats.glue_count
    )
    .unwrap();
    if stats.head_nodes > 0 {
        write!(s, ", {} head", stats.head_nodes).unwrap();
    }
    s.push_str(")\n");
    writeln!(
        s,
        "weight bytes: {} before, {} after",
        stats.weight_bytes_before, stats.weight_bytes_after
    )
    .unwrap();
    writeln!(
        s,
        "node visits: {}, edge inspections: {} ({} edges)",
        stats.node_visits, stats.edge_inspections, stats.source_edges
    )
    .unwrap();
    s
}
