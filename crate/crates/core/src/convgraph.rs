//! Conversation graph over context utterances.
//!
//! Nodes are 1-based turn indices. Edges always point from an earlier turn
//! to a later one: a temporal edge joins each pair of adjacent turns, and a
//! role edge joins every earlier turn of the same speaker that is not
//! already adjacent. Node features are aggregated over in-neighbors, so
//! information only flows forward in time.

use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::corpus::Transcript;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GraphError {
    #[error("node {node} out of range 1..={n}")]
    NodeRange { node: usize, n: usize },
    #[error("edge {0} -> {1} does not point forward in time")]
    Backward(usize, usize),
    #[error("edge {0} -> {1} references a node outside 1..={2}")]
    EdgeRange(usize, usize, usize),
    #[error("duplicate edge {0} -> {1}")]
    Duplicate(usize, usize),
    #[error("in-neighbor lists disagree with the edge set at node {0}")]
    Adjacency(usize),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvGraph {
    pub n: usize,
    /// `(src, dst)` pairs sorted by destination, then source.
    pub edges: Vec<(usize, usize)>,
    /// `in_adj[i - 1]` holds the sorted in-neighbors of node `i`.
    pub in_adj: Vec<Vec<usize>>,
}

/// Builds the graph for a context whose turn `i` was spoken by
/// `speakers[i - 1]`.
pub fn build_graph<S: PartialEq>(speakers: &[S]) -> ConvGraph {
    let n = speakers.len();
    let mut in_adj = vec![Vec::new(); n];
    let mut edges = Vec::new();
    for i in 2..=n {
        for j in 1..i {
            if j == i - 1 || speakers[j - 1] == speakers[i - 1] {
                in_adj[i - 1].push(j);
                edges.push((j, i));
            }
        }
    }
    ConvGraph { n, edges, in_adj }
}

impl ConvGraph {
    pub fn in_neighbors(&self, i: usize) -> Result<&[usize], GraphError> {
        if i == 0 || i > self.n {
            return Err(GraphError::NodeRange { node: i, n: self.n });
        }
        Ok(&self.in_adj[i - 1])
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Checks edge direction, range, uniqueness and that `in_adj` is the
    /// transpose of `edges`.
    pub fn validate(&self) -> Result<(), GraphError> {
        let mut from_edges = vec![Vec::new(); self.n];
        for &(s, d) in &self.edges {
            if s == 0 || d == 0 || s > self.n || d > self.n {
                return Err(GraphError::EdgeRange(s, d, self.n));
            }
            if s >= d {
                return Err(GraphError::Backward(s, d));
            }
            if from_edges[d - 1].contains(&s) {
                return Err(GraphError::Duplicate(s, d));
            }
            from_edges[d - 1].push(s);
        }
        if self.in_adj.len() != self.n {
            return Err(GraphError::Adjacency(self.in_adj.len().min(self.n) + 1));
        }
        for (i, (want, have)) in from_edges.iter_mut().zip(&self.in_adj).enumerate() {
            want.sort_unstable();
            if want != have {
                return Err(GraphError::Adjacency(i + 1));
            }
        }
        Ok(())
    }

    /// Graphviz rendering, e.g. `digraph { 1 -> 2; 1 -> 3; }`.
    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph {");
        for i in 1..=self.n {
            if self.in_adj[i - 1].is_empty() && !self.edges.iter().any(|&(src, _)| src == i) {
                let _ = write!(s, " {i};");
            }
        }
        for &(a, b) in &self.edges {
            let _ = write!(s, " {a} -> {b};");
        }
        s.push_str(" }");
        s
    }
}

pub fn validate_dag(g: &ConvGraph) -> Result<(), GraphError> {
    g.validate()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GraphStats {
    pub count: usize,
    pub avg_turns: f64,
    pub avg_in_degree: f64,
    pub avg_out_degree: f64,
    pub avg_edges: f64,
}

/// Averages over whole-conversation graphs. Degrees are averaged over all
/// nodes of all conversations; since every edge has one head and one tail
/// the in- and out-degree averages coincide.
pub fn graph_stats(transcripts: &[Transcript]) -> GraphStats {
    let count = transcripts.len();
    if count == 0 {
        return GraphStats {
            count,
            avg_turns: 0.0,
            avg_in_degree: 0.0,
            avg_out_degree: 0.0,
            avg_edges: 0.0,
        };
    }
    let (mut nodes, mut edges) = (0usize, 0usize);
    for t in transcripts {
        let speakers: Vec<&str> = t.turns.iter().map(|u| u.speaker.as_str()).collect();
        nodes += speakers.len();
        edges += build_graph(&speakers).edge_count();
    }
    let degree = if nodes == 0 {
        0.0
    } else {
        edges as f64 / nodes as f64
    };
    GraphStats {
        count,
        avg_turns: nodes as f64 / count as f64,
        avg_in_degree: degree,
        avg_out_degree: degree,
        avg_edges: edges as f64 / count as f64,
    }
}
