//! Disease-graph JSON: `{"nodes": [...], "edges": [{src, dst, type}]}`,
//! validated on load.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use vlrisk_core::graph::{DiseaseGraph, Edge};

#[derive(Serialize, Deserialize)]
struct GraphFile {
    nodes: Vec<usize>,
    edges: Vec<Edge>,
}

pub fn save_graph(graph: &DiseaseGraph, path: &Path) -> Result<()> {
    let file = GraphFile {
        nodes: (0..graph.n_nodes()).collect(),
        edges: graph.edges().to_vec(),
    };
    std::fs::write(path, serde_json::to_string_pretty(&file)?)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn load_graph(path: &Path) -> Result<DiseaseGraph> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file: GraphFile =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if file.nodes.is_empty() {
        bail!("{}: graph has no nodes", path.display());
    }
    for (i, &n) in file.nodes.iter().enumerate() {
        if n != i {
            bail!("{}: nodes must be the contiguous ids 0..n", path.display());
        }
    }
    DiseaseGraph::new(file.nodes.len(), file.edges)
        .with_context(|| format!("validating {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use vlrisk_core::graph::Relation;

    #[test]
    fn round_trip_and_validation() {
        let graph = DiseaseGraph::new(
            3,
            vec![Edge {
                src: 0,
                dst: 1,
                relation: Relation::CoOccurs,
            }],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("graph.json");
        save_graph(&graph, &path).unwrap();
        let loaded = load_graph(&path).unwrap();
        assert_eq!(loaded.n_nodes(), 3);
        assert_eq!(loaded.edges(), graph.edges());

        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"co-occurs\""), "relation names on disk: {text}");

        std::fs::write(&path, "{\"nodes\": [0, 1], \"edges\": [{\"src\": 0, \"dst\": 9, \"type\": \"is-a\"}]}")
            .unwrap();
        assert!(load_graph(&path).is_err());
    }
}
