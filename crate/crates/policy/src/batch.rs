//! Disjoint-union batching of graph snapshots.

use std::rc::Rc;

use isli_core::observation::{GRAPH_FEATURE_DIM, NODE_FEATURE_DIM};
use isli_core::GraphSnapshot;

use crate::error::{PolicyError, Result};
use crate::tensor::Tensor;

/// Many snapshots as one graph with offset node indices.
#[derive(Clone, Debug)]
pub struct GraphBatch {
    pub n_graphs: usize,
    pub node_features: Tensor,
    pub senders: Rc<[usize]>,
    pub receivers: Rc<[usize]>,
    pub edge_features: Tensor,
    pub node_graph: Rc<[usize]>,
    pub edge_graph: Rc<[usize]>,
    pub graph_features: Tensor,
    /// Raw timestep index per graph, `B x 1`.
    pub k: Tensor,
}

impl GraphBatch {
    pub fn from_snapshots<'a, I>(snapshots: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a GraphSnapshot>,
    {
        let mut nodes = Vec::new();
        let mut senders = Vec::new();
        let mut receivers = Vec::new();
        let mut edges = Vec::new();
        let mut node_graph = Vec::new();
        let mut edge_graph = Vec::new();
        let mut graph = Vec::new();
        let mut ks = Vec::new();
        let mut offset = 0usize;
        let mut n_graphs = 0usize;
        for (g, s) in snapshots.into_iter().enumerate() {
            let n = s.n_nodes();
            if s.senders.is_empty() {
                return Err(PolicyError::Empty("snapshot without edges"));
            }
            if s.senders.len() != s.receivers.len() || s.senders.len() != s.edge_features.len() {
                return Err(PolicyError::InvalidConfig(
                    "ragged edge arrays in snapshot".into(),
                ));
            }
            for f in &s.node_features {
                nodes.extend_from_slice(f);
            }
            node_graph.extend(std::iter::repeat(g).take(n));
            for ((&a, &b), &e) in s.senders.iter().zip(&s.receivers).zip(&s.edge_features) {
                if a as usize >= n || b as usize >= n {
                    return Err(PolicyError::InvalidConfig(
                        "edge endpoint out of range".into(),
                    ));
                }
                senders.push(offset + a as usize);
                receivers.push(offset + b as usize);
                edges.push(e);
                edge_graph.push(g);
            }
            graph.extend_from_slice(&s.graph_features);
            ks.push(s.k as f64);
            offset += n;
            n_graphs += 1;
        }
        if n_graphs == 0 {
            return Err(PolicyError::Empty("graph batch"));
        }
        Ok(Self {
            n_graphs,
            node_features: Tensor::from_vec(offset, NODE_FEATURE_DIM, nodes),
            senders: senders.into(),
            receivers: receivers.into(),
            edge_features: Tensor::from_vec(edges.len(), 1, edges),
            node_graph: node_graph.into(),
            edge_graph: edge_graph.into(),
            graph_features: Tensor::from_vec(n_graphs, GRAPH_FEATURE_DIM, graph),
            k: Tensor::from_vec(n_graphs, 1, ks),
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.node_features.rows
    }
}
