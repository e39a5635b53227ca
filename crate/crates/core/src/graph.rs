//! Contour graphs and their spiral neighbourhood orderings.
//!
//! The ventricle contour is a ring: node `i` is joined to `i - 1` and
//! `i + 1` (mod N). "Clockwise" means increasing node index, which relies on
//! annotations storing points basal-left → apex → basal-right.

use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// A node in a (possibly two-frame) contour graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeRef {
    pub frame: usize,
    pub node: usize,
}

impl NodeRef {
    pub fn new(frame: usize, node: usize) -> Self {
        Self { frame, node }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContourGraph {
    n_nodes: usize,
    /// Spatial ring edges within one frame, stored as ordered pairs `(i, j)`
    /// with `i < j`. Every frame shares the same ring.
    edges: BTreeSet<(usize, usize)>,
    frame_count: usize,
    temporal_pairs: Vec<(usize, usize)>,
}

/// Fixed ordering of neighbours used by a spiral convolution. Indices refer
/// to rows of the node feature matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpiralSequence {
    pub center: usize,
    pub order: Vec<usize>,
}

impl SpiralSequence {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

/// Spiral over a two-frame graph, addressed by `(frame, node)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpatioTemporalSpiral {
    pub center: NodeRef,
    pub order: Vec<NodeRef>,
}

impl SpatioTemporalSpiral {
    /// Row indices into a frame-major `(frames·N) × d` feature matrix.
    pub fn flatten(&self, n_nodes: usize) -> SpiralSequence {
        let idx = |r: &NodeRef| r.frame * n_nodes + r.node;
        SpiralSequence {
            center: idx(&self.center),
            order: self.order.iter().map(idx).collect(),
        }
    }
}

fn ring_edges(n: usize) -> BTreeSet<(usize, usize)> {
    (0..n)
        .map(|i| {
            let j = (i + 1) % n;
            (i.min(j), i.max(j))
        })
        .collect()
}

pub fn build_ring_graph(n_nodes: usize) -> Result<ContourGraph> {
    if n_nodes < 3 {
        return Err(Error::InvalidGraph(format!(
            "a contour ring needs at least 3 nodes, got {n_nodes}"
        )));
    }
    Ok(ContourGraph {
        n_nodes,
        edges: ring_edges(n_nodes),
        frame_count: 1,
        temporal_pairs: Vec::new(),
    })
}

/// Two copies of the ring (ED and ES) with node `i` of frame 0 linked to
/// node `i` of frame 1.
pub fn build_spatiotemporal_graph(n_nodes: usize) -> Result<ContourGraph> {
    let mut g = build_ring_graph(n_nodes)?;
    g.frame_count = 2;
    g.temporal_pairs = (0..n_nodes).map(|i| (i, i)).collect();
    Ok(g)
}

impl ContourGraph {
    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn frame_count(&self) -> usize {
        self.frame_count
    }

    pub fn total_nodes(&self) -> usize {
        self.n_nodes * self.frame_count
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn temporal_pairs(&self) -> &[(usize, usize)] {
        &self.temporal_pairs
    }

    /// Spatial edge count summed over frames.
    pub fn spatial_edge_count(&self) -> usize {
        self.edges.len() * self.frame_count
    }

    pub fn degree(&self, node: usize) -> usize {
        self.edges
            .iter()
            .filter(|&&(a, b)| a == node || b == node)
            .count()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.edges.contains(&(a.min(b), a.max(b)))
    }

    /// Counterpart of `node` in the other frame, if the graph is two-frame.
    pub fn temporal_counterpart(&self, r: NodeRef) -> Option<NodeRef> {
        if self.frame_count != 2 || r.frame > 1 {
            return None;
        }
        let pair = self.temporal_pairs.get(r.node)?;
        Some(if r.frame == 0 {
            NodeRef::new(1, pair.1)
        } else {
            NodeRef::new(0, pair.0)
        })
    }

    /// Spirals for every node of a single-frame graph.
    pub fn all_spirals(&self, length: usize) -> Result<Vec<SpiralSequence>> {
        (0..self.n_nodes)
            .map(|i| spiral_sequence(self, i, length))
            .collect()
    }

    /// Spatio-temporal spirals for every node, frame-major, flattened to
    /// feature-row indices.
    pub fn all_spatiotemporal_spirals(&self, length: usize) -> Result<Vec<SpiralSequence>> {
        let mut out = Vec::with_capacity(self.total_nodes());
        for frame in 0..self.frame_count {
            for node in 0..self.n_nodes {
                out.push(spiral_sequence_st(self, NodeRef::new(frame, node), length)?.flatten(self.n_nodes));
            }
        }
        Ok(out)
    }
}

/// Contiguous clockwise run of `length` nodes starting at `start`.
pub fn spiral_sequence(graph: &ContourGraph, start: usize, length: usize) -> Result<SpiralSequence> {
    let n = graph.n_nodes;
    if start >= n {
        return Err(Error::InvalidSpiral(format!(
            "start node {start} outside 0..{n}"
        )));
    }
    if length == 0 || length > n {
        return Err(Error::InvalidSpiral(format!(
            "spiral length {length} must be in 1..={n}"
        )));
    }
    Ok(SpiralSequence {
        center: start,
        order: (0..length).map(|k| (start + k) % n).collect(),
    })
}

/// Spatial clockwise run in the centre's frame followed by the centre's
/// temporal counterpart (`length + 1` entries in total).
pub fn spiral_sequence_st(
    graph: &ContourGraph,
    center: NodeRef,
    length: usize,
) -> Result<SpatioTemporalSpiral> {
    if graph.frame_count != 2 {
        return Err(Error::InvalidGraph(
            "spatio-temporal spiral requested on a single-frame graph".into(),
        ));
    }
    if center.frame > 1 {
        return Err(Error::InvalidSpiral(format!("frame {} out of range", center.frame)));
    }
    let spatial = spiral_sequence(graph, center.node, length)?;
    let mut order: Vec<NodeRef> = spatial
        .order
        .iter()
        .map(|&j| NodeRef::new(center.frame, j))
        .collect();
    order.push(
        graph
            .temporal_counterpart(center)
            .expect("two-frame graph has a counterpart for every node"),
    );
    Ok(SpatioTemporalSpiral { center, order })
}
