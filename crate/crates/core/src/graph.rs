//! Disease graph over codes and chapters, layered graph attention,
//! patient-conditioned aggregation, and gated residual injection into
//! the sequence states.
//!
//! Attention scores are bilinear, scaled by `1/sqrt(d_graph)`, plus a
//! learned per-relation-type bias. Aggregation flows along incoming
//! edges; every node carries a self-loop so no softmax is empty.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::cohort::PatientRecord;
use crate::error::{CoreError, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Edge relation types.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Relation {
    #[serde(rename = "is-a")]
    IsA,
    #[serde(rename = "co-occurs")]
    CoOccurs,
}

pub const RELATION_COUNT: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    #[serde(rename = "type")]
    pub relation: Relation,
}

/// Directed typed graph over disease nodes.
#[derive(Clone, Debug)]
pub struct DiseaseGraph {
    n_nodes: usize,
    edges: Vec<Edge>,
    /// Per-node incoming `(source, relation)` lists, self-loop included,
    /// sorted for deterministic iteration.
    incoming: Vec<Vec<(usize, Relation)>>,
}

impl DiseaseGraph {
    /// Build and validate. Missing self-loops are added (as `is-a`).
    pub fn new(n_nodes: usize, mut edges: Vec<Edge>) -> Result<DiseaseGraph> {
        if n_nodes == 0 {
            return Err(CoreError::InvalidGraph("graph needs at least one node".into()));
        }
        for e in &edges {
            if e.src >= n_nodes || e.dst >= n_nodes {
                return Err(CoreError::InvalidGraph(format!(
                    "edge {} -> {} outside 0..{n_nodes}",
                    e.src, e.dst
                )));
            }
        }
        let mut has_self = alloc::vec![false; n_nodes];
        for e in &edges {
            if e.src == e.dst {
                has_self[e.src] = true;
            }
        }
        for (v, present) in has_self.iter().enumerate() {
            if !present {
                edges.push(Edge {
                    src: v,
                    dst: v,
                    relation: Relation::IsA,
                });
            }
        }
        let mut incoming: Vec<Vec<(usize, Relation)>> = alloc::vec![Vec::new(); n_nodes];
        for e in &edges {
            incoming[e.dst].push((e.src, e.relation));
        }
        for list in incoming.iter_mut() {
            list.sort_by_key(|(src, rel)| (*src, *rel as usize));
        }
        Ok(DiseaseGraph {
            n_nodes,
            edges,
            incoming,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn incoming(&self, node: usize) -> &[(usize, Relation)] {
        &self.incoming[node]
    }
}

/// Two-level synthetic ontology plus pointwise-mutual-information
/// co-occurrence edges estimated from a cohort. A fifth of the positive
/// co-occurrence pairs is withheld from the graph and returned for the
/// link-prediction objective.
pub fn build_graph_from_cohort(
    cohort: &[PatientRecord],
    n_codes: usize,
    codes_per_chapter: usize,
) -> Result<(DiseaseGraph, Vec<(usize, usize)>)> {
    if n_codes == 0 || codes_per_chapter == 0 {
        return Err(CoreError::InvalidGraph(
            "n_codes and codes_per_chapter must be positive".into(),
        ));
    }
    let n_chapters = n_codes.div_ceil(codes_per_chapter);
    let n_nodes = n_codes + n_chapters;
    let mut edges = Vec::new();
    for code in 0..n_codes {
        let chapter = n_codes + code / codes_per_chapter;
        edges.push(Edge {
            src: chapter,
            dst: code,
            relation: Relation::IsA,
        });
        edges.push(Edge {
            src: code,
            dst: chapter,
            relation: Relation::IsA,
        });
    }

    // PMI over distinct-code sets per patient.
    let n = cohort.len().max(1) as f64;
    let mut single = alloc::vec![0usize; n_codes];
    let mut joint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for p in cohort {
        let codes: Vec<usize> = p
            .distinct_dx()
            .into_iter()
            .map(|c| c as usize)
            .filter(|&c| c < n_codes)
            .collect();
        for &c in &codes {
            single[c] += 1;
        }
        for i in 0..codes.len() {
            for j in (i + 1)..codes.len() {
                *joint.entry((codes[i], codes[j])).or_insert(0) += 1;
            }
        }
    }
    let mut positive_pairs: Vec<(usize, usize)> = Vec::new();
    for (&(a, b), &cnt) in &joint {
        let p_joint = cnt as f64 / n;
        let p_a = single[a] as f64 / n;
        let p_b = single[b] as f64 / n;
        if p_joint > 0.0 && libm::log(p_joint / (p_a * p_b)) > 0.0 {
            positive_pairs.push((a, b));
        }
    }
    let mut held_out = Vec::new();
    for (i, &(a, b)) in positive_pairs.iter().enumerate() {
        if i % 5 == 4 {
            held_out.push((a, b));
        } else {
            edges.push(Edge {
                src: a,
                dst: b,
                relation: Relation::CoOccurs,
            });
            edges.push(Edge {
                src: b,
                dst: a,
                relation: Relation::CoOccurs,
            });
        }
    }
    Ok((DiseaseGraph::new(n_nodes, edges)?, held_out))
}

struct GatLayer {
    w_msg: Tensor,
    w_att: Tensor,
    rel_bias: Tensor,
}

/// Graph attention stack with patient-conditioned aggregation and the
/// gated residual injection head.
pub struct OntologyAdapter {
    pub node_embeddings: Tensor,
    layers: Vec<GatLayer>,
    agg_query: Tensor,
    proj: Tensor,
    gate_weight: Tensor,
    gate_bias: Tensor,
    d_graph: usize,
}

impl OntologyAdapter {
    pub fn new(n_nodes: usize, d_graph: usize, layers: usize, d_model: usize, rng: &mut Rng) -> OntologyAdapter {
        OntologyAdapter {
            node_embeddings: Tensor::param_uniform(&[n_nodes, d_graph], d_graph, rng),
            layers: (0..layers)
                .map(|_| GatLayer {
                    w_msg: Tensor::param_uniform(&[d_graph, d_graph], d_graph, rng),
                    w_att: Tensor::param_uniform(&[d_graph, d_graph], d_graph, rng),
                    rel_bias: Tensor::param_uniform(&[RELATION_COUNT], d_graph, rng),
                })
                .collect(),
            agg_query: Tensor::param_uniform(&[d_graph], d_graph, rng),
            proj: Tensor::param_uniform(&[d_model, d_graph], d_graph, rng),
            gate_weight: Tensor::param_uniform(&[d_model, 2 * d_model], 2 * d_model, rng),
            gate_bias: Tensor::param_uniform(&[d_model], 2 * d_model, rng),
            d_graph,
        }
    }

    fn attention_over(
        &self,
        embeddings: &Tensor,
        scored: &Tensor,
        layer: &GatLayer,
        node: usize,
        neighbors: &[(usize, Relation)],
    ) -> Result<Tensor> {
        if neighbors.is_empty() {
            return Err(CoreError::InvalidGraph(format!(
                "node {node} has no incoming edges (missing self-loop)"
            )));
        }
        let own = embeddings.select_row(node);
        let scale = 1.0 / libm::sqrt(self.d_graph as f64);
        let scores: Vec<Tensor> = neighbors
            .iter()
            .map(|&(u, rel)| {
                own.dot(&scored.select_row(u))
                    .mul_scalar(scale)
                    .add(&layer.rel_bias.element(rel as usize))
            })
            .collect();
        Tensor::concat(&scores).softmax_rows(1.0)
    }

    /// Softmax attention weights of one node over its incoming
    /// neighborhood at a given layer, computed on the current
    /// embeddings (values, in neighbor order).
    pub fn attention_coeffs(
        &self,
        embeddings: &Tensor,
        layer: usize,
        node: usize,
        graph: &DiseaseGraph,
    ) -> Result<Vec<f64>> {
        let layer = &self.layers[layer];
        let scored = embeddings.matmul(&layer.w_att.transpose());
        Ok(self
            .attention_over(embeddings, &scored, layer, node, graph.incoming(node))?
            .to_vec())
    }

    /// Run every attention layer; returns per-node embeddings after the
    /// configured number of rounds (zero layers is the identity).
    pub fn propagate(&self, graph: &DiseaseGraph) -> Result<Tensor> {
        if graph.n_nodes() != self.node_embeddings.shape()[0] {
            return Err(CoreError::InvalidGraph(format!(
                "adapter built for {} nodes, graph has {}",
                self.node_embeddings.shape()[0],
                graph.n_nodes()
            )));
        }
        let mut current = self.node_embeddings.clone();
        for layer in &self.layers {
            let scored = current.matmul(&layer.w_att.transpose());
            let messages = current.matmul(&layer.w_msg.transpose());
            let mut next_rows = Vec::with_capacity(graph.n_nodes());
            for v in 0..graph.n_nodes() {
                let neighbors = graph.incoming(v);
                let weights = self.attention_over(&current, &scored, layer, v, neighbors)?;
                let rows: Vec<Tensor> = neighbors
                    .iter()
                    .map(|&(u, _)| messages.select_row(u))
                    .collect();
                let stacked = Tensor::stack_rows(&rows);
                next_rows.push(stacked.transpose().matvec(&weights).relu());
            }
            current = Tensor::stack_rows(&next_rows);
        }
        Ok(current)
    }

    /// Patient-conditioned aggregate: attention-weighted mean over the
    /// diagnosed nodes (scores from the learned query), or the global
    /// node mean when the diagnosis set is empty.
    pub fn aggregate(&self, embeddings: &Tensor, diagnoses: &[u16]) -> Tensor {
        let n = embeddings.shape()[0];
        let in_range: Vec<usize> = diagnoses
            .iter()
            .map(|&c| c as usize)
            .filter(|&c| c < n)
            .collect();
        if in_range.is_empty() {
            return embeddings.transpose().row_mean();
        }
        let scale = 1.0 / libm::sqrt(self.d_graph as f64);
        let rows: Vec<Tensor> = in_range.iter().map(|&c| embeddings.select_row(c)).collect();
        let stacked = Tensor::stack_rows(&rows);
        let scores = stacked.matvec(&self.agg_query).mul_scalar(scale);
        let weights = scores.softmax_rows(1.0).expect("finite scores");
        stacked.transpose().matvec(&weights)
    }

    /// Project the graph-space aggregate into model space.
    pub fn project(&self, aggregate: &Tensor) -> Tensor {
        self.proj.matvec(aggregate)
    }

    /// Gated residual injection: `h + sigmoid(Wc [h || g] + bc) * g`.
    pub fn inject(&self, state: &Tensor, graph_vec: &Tensor) -> Result<Tensor> {
        let d = self.gate_weight.shape()[0];
        if state.len() != d || graph_vec.len() != d {
            return Err(CoreError::LengthMismatch {
                context: "gated injection",
                expected: d,
                got: state.len().max(graph_vec.len()),
            });
        }
        let joint = Tensor::concat(&[state.clone(), graph_vec.clone()]);
        let gate = self.gate_weight.matvec(&joint).add(&self.gate_bias).sigmoid();
        Ok(state.add(&gate.mul(graph_vec)))
    }

    pub fn parameters(&self) -> Vec<(String, Tensor)> {
        let mut out = alloc::vec![("ontology.node_embeddings".into(), self.node_embeddings.clone())];
        for (i, layer) in self.layers.iter().enumerate() {
            out.push((format!("ontology.layer{i}.w_msg"), layer.w_msg.clone()));
            out.push((format!("ontology.layer{i}.w_att"), layer.w_att.clone()));
            out.push((format!("ontology.layer{i}.rel_bias"), layer.rel_bias.clone()));
        }
        out.push(("ontology.agg_query".into(), self.agg_query.clone()));
        out.push(("ontology.proj".into(), self.proj.clone()));
        out.push(("ontology.gate_weight".into(), self.gate_weight.clone()));
        out.push(("ontology.gate_bias".into(), self.gate_bias.clone()));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn line_graph(n: usize) -> DiseaseGraph {
        let edges = (1..n)
            .map(|i| Edge {
                src: i - 1,
                dst: i,
                relation: Relation::CoOccurs,
            })
            .collect();
        DiseaseGraph::new(n, edges).unwrap()
    }

    fn adapter_for(n: usize, d: usize, layers: usize, seed: u64) -> OntologyAdapter {
        let mut rng = Rng::new(seed);
        OntologyAdapter::new(n, d, layers, 6, &mut rng)
    }

    #[test]
    fn self_loops_are_ensured_and_endpoints_validated() {
        let g = DiseaseGraph::new(3, vec![]).unwrap();
        for v in 0..3 {
            assert_eq!(g.incoming(v), &[(v, Relation::IsA)]);
        }
        assert!(DiseaseGraph::new(2, vec![Edge { src: 0, dst: 5, relation: Relation::IsA }]).is_err());
    }

    #[test]
    fn singleton_neighborhood_gets_full_weight() {
        let g = DiseaseGraph::new(2, vec![]).unwrap();
        let adapter = adapter_for(2, 4, 1, 1);
        let w = adapter
            .attention_coeffs(&adapter.node_embeddings, 0, 0, &g)
            .unwrap();
        assert_eq!(w, vec![1.0]);
    }

    #[test]
    fn equal_scores_split_evenly_and_sum_to_one() {
        // two incoming neighbors with identical embeddings -> equal gamma
        let g = DiseaseGraph::new(3, vec![
            Edge { src: 1, dst: 0, relation: Relation::CoOccurs },
            Edge { src: 2, dst: 0, relation: Relation::CoOccurs },
        ])
        .unwrap();
        let mut adapter = adapter_for(3, 4, 1, 2);
        // make all node embeddings identical
        adapter.node_embeddings = Tensor::param(&[3, 4], vec![0.3, -0.2, 0.8, 0.1].repeat(3));
        let w = adapter
            .attention_coeffs(&adapter.node_embeddings, 0, 0, &g)
            .unwrap();
        assert_eq!(w.len(), 3); // self-loop + two neighbors
        let sum: f64 = w.iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        // the two co-occurs neighbors carry identical weight
        let nbrs = g.incoming(0);
        let co: Vec<f64> = nbrs
            .iter()
            .zip(&w)
            .filter(|((_, rel), _)| *rel == Relation::CoOccurs)
            .map(|(_, w)| *w)
            .collect();
        assert!((co[0] - co[1]).abs() < 1e-15);
    }

    #[test]
    fn bilinear_score_analytic_case() {
        // W_att = I, embeddings e1, zero relation bias, d_graph = 4:
        // gamma = e1 . e1 / sqrt(4) = 0.5 -> visible through softmax of
        // a pair against a zero-embedding neighbor (gamma = 0).
        let g = DiseaseGraph::new(2, vec![Edge { src: 1, dst: 0, relation: Relation::CoOccurs }]).unwrap();
        let mut adapter = adapter_for(2, 4, 1, 3);
        adapter.node_embeddings = Tensor::param(&[2, 4], vec![
            1.0, 0.0, 0.0, 0.0, // node 0 = e1
            0.0, 0.0, 0.0, 0.0, // node 1 = 0
        ]);
        adapter.layers[0].w_att = Tensor::param(&[4, 4], {
            let mut id = vec![0.0; 16];
            for i in 0..4 {
                id[i * 4 + i] = 1.0;
            }
            id
        });
        adapter.layers[0].rel_bias = Tensor::param(&[2], vec![0.0, 0.0]);
        let w = adapter
            .attention_coeffs(&adapter.node_embeddings, 0, 0, &g)
            .unwrap();
        // neighbors sorted: (0, self IsA) gamma=0.5, (1, CoOccurs) gamma=0
        let expected_self = libm::exp(0.5) / (libm::exp(0.5) + 1.0);
        assert!((w[0] - expected_self).abs() < 1e-12);
        assert!((w[1] - (1.0 - expected_self)).abs() < 1e-12);
    }

    #[test]
    fn zero_layers_is_identity() {
        let g = line_graph(4);
        let adapter = adapter_for(4, 4, 0, 4);
        let out = adapter.propagate(&g).unwrap();
        assert_eq!(out.to_vec(), adapter.node_embeddings.to_vec());
    }

    #[test]
    fn isolated_nonnegative_node_is_a_fixed_point_under_identity_weights() {
        let g = DiseaseGraph::new(1, vec![]).unwrap();
        let mut adapter = adapter_for(1, 3, 2, 5);
        adapter.node_embeddings = Tensor::param(&[1, 3], vec![0.4, 0.0, 1.2]);
        let id = vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        for layer in adapter.layers.iter_mut() {
            layer.w_msg = Tensor::param(&[3, 3], id.clone());
        }
        let out = adapter.propagate(&g).unwrap();
        assert_eq!(out.to_vec(), vec![0.4, 0.0, 1.2]);
    }

    #[test]
    fn disconnected_components_are_bitwise_isolated() {
        // nodes {0,1} linked, node 2 alone
        let edges = vec![
            Edge { src: 0, dst: 1, relation: Relation::CoOccurs },
            Edge { src: 1, dst: 0, relation: Relation::CoOccurs },
        ];
        let g = DiseaseGraph::new(3, edges).unwrap();
        let adapter = adapter_for(3, 4, 2, 6);
        let before = adapter.propagate(&g).unwrap().to_vec();
        // perturb the isolated component
        adapter.node_embeddings.update_values(|v| {
            for x in &mut v[8..12] {
                *x += 3.0;
            }
        });
        let after = adapter.propagate(&g).unwrap().to_vec();
        for i in 0..8 {
            assert_eq!(before[i].to_bits(), after[i].to_bits(), "leak at {i}");
        }
    }

    #[test]
    fn attention_weights_sum_to_one_at_every_layer() {
        let g = line_graph(6);
        let adapter = adapter_for(6, 4, 2, 7);
        let mut current = adapter.node_embeddings.clone();
        for l in 0..2 {
            for v in 0..6 {
                let w = adapter.attention_coeffs(&current, l, v, &g).unwrap();
                let sum: f64 = w.iter().sum();
                assert!((sum - 1.0).abs() < 1e-12, "layer {l} node {v}: {sum}");
            }
            current = Tensor::constant(&[6, 4], current.to_vec());
        }
    }

    #[test]
    fn aggregate_singleton_pair_and_empty() {
        let adapter = adapter_for(4, 3, 1, 8);
        let emb = Tensor::constant(
            &[4, 3],
            vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.0, 4.0, 4.0, 4.0, 0.0, 0.0, 1.0],
        );
        // one diagnosis: exactly that row
        assert_eq!(adapter.aggregate(&emb, &[2]).to_vec(), vec![4.0, 4.0, 4.0]);

        // two diagnoses with a zero query: equal weights -> midpoint
        let mut zeroed = adapter_for(4, 3, 1, 9);
        zeroed.agg_query = Tensor::param(&[3], vec![0.0, 0.0, 0.0]);
        let got = zeroed.aggregate(&emb, &[0, 1]).to_vec();
        let expected = [0.0, 1.25, 1.5];
        for (g, e) in got.iter().zip(&expected) {
            assert!((g - e).abs() < 1e-15);
        }

        // empty set: global mean
        let got = adapter.aggregate(&emb, &[]).to_vec();
        let expected = [1.0, 1.625, 2.0];
        for (g, e) in got.iter().zip(&expected) {
            assert!((g - e).abs() < 1e-15);
        }
    }

    #[test]
    fn gate_limits_and_midpoint() {
        let mut adapter = adapter_for(2, 3, 1, 10);
        let d = 6;
        let h = Tensor::vector((0..d).map(|i| 0.1 * i as f64 - 0.2).collect());
        let g = Tensor::vector((0..d).map(|i| 0.3 - 0.05 * i as f64).collect());

        // closed gate: identity within 1e-8
        adapter.gate_weight = Tensor::param(&[d, 2 * d], vec![0.0; d * 2 * d]);
        adapter.gate_bias = Tensor::param(&[d], vec![-20.0; d]);
        let out = adapter.inject(&h, &g).unwrap().to_vec();
        for (o, hv) in out.iter().zip(&h.to_vec()) {
            assert!((o - hv).abs() < 1e-8);
        }

        // open gate: h + g within 1e-8
        adapter.gate_bias = Tensor::param(&[d], vec![20.0; d]);
        let out = adapter.inject(&h, &g).unwrap().to_vec();
        for ((o, hv), gv) in out.iter().zip(&h.to_vec()).zip(&g.to_vec()) {
            assert!((o - (hv + gv)).abs() < 1e-8);
        }

        // neutral gate: h + g/2 exactly
        adapter.gate_bias = Tensor::param(&[d], vec![0.0; d]);
        let out = adapter.inject(&h, &g).unwrap().to_vec();
        for ((o, hv), gv) in out.iter().zip(&h.to_vec()).zip(&g.to_vec()) {
            assert_eq!(*o, hv + 0.5 * gv);
        }

        // zero graph vector: exact identity
        let zero = Tensor::vector(vec![0.0; d]);
        let mut fresh = adapter_for(2, 3, 1, 11);
        fresh.gate_weight = Tensor::param(&[d, 2 * d], (0..d * 2 * d).map(|i| 0.01 * i as f64).collect());
        let out = fresh.inject(&h, &zero).unwrap().to_vec();
        assert_eq!(out, h.to_vec());
    }

    #[test]
    fn cohort_graph_has_hierarchy_and_pmi_edges() {
        use crate::cohort::{generate_cohort, CohortConfig};
        let cohort = generate_cohort(&CohortConfig {
            n_patients: 300,
            seed: 21,
            ..CohortConfig::default()
        })
        .unwrap();
        let (graph, held_out) = build_graph_from_cohort(&cohort, 24, 6).unwrap();
        assert_eq!(graph.n_nodes(), 28);
        let isa = graph
            .edges()
            .iter()
            .filter(|e| e.relation == Relation::IsA && e.src != e.dst)
            .count();
        assert_eq!(isa, 48, "two hierarchy edges per code");
        let co = graph
            .edges()
            .iter()
            .filter(|e| e.relation == Relation::CoOccurs)
            .count();
        assert!(co > 0, "expected learned co-occurrence edges");
        assert!(!held_out.is_empty(), "expected held-out link-prediction pairs");
    }

    #[test]
    fn gat_gradients_match_finite_differences() {
        use crate::gradcheck::{check_all, FD_STEP};
        let g = line_graph(4);
        let adapter = adapter_for(4, 3, 2, 12);
        let params = adapter.parameters();
        let probe = Tensor::constant(&[4, 3], (0..12).map(|i| 0.1 * (i as f64) - 0.5).collect());
        let report = check_all(
            || {
                let emb = adapter.propagate(&g)?;
                let gstar = adapter.aggregate(&emb, &[1, 3]);
                let state = adapter.project(&gstar);
                let injected = adapter.inject(&state, &adapter.project(&adapter.aggregate(&emb, &[])))?;
                Ok(emb.mul(&probe).sum().add(&injected.dot(&injected)))
            },
            &params,
            FD_STEP,
        )
        .unwrap();
        assert!(
            report.all_pass(),
            "{:?}",
            report
                .failures()
                .map(|c| (c.param.clone(), c.index, c.analytic, c.numeric))
                .collect::<Vec<_>>()
        );
    }
}
