use crate::numerics::Array;

/// Node identifier: a dense index into the node registry.
pub type NodeId = u32;

/// Which side of a bipartite dataset a node belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Partition {
    Source,
    Target,
    None,
}

impl Partition {
    pub fn code(self) -> u8 {
        match self {
            Partition::Source => 0,
            Partition::Target => 1,
            Partition::None => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Partition::Source),
            1 => Some(Partition::Target),
            2 => Some(Partition::None),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Partition::Source => "source",
            Partition::Target => "target",
            Partition::None => "none",
        }
    }
}

/// One timestamped edge event. Edge features live in the owning graph and
/// are reached through [`TemporalGraph::edge_features`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interaction {
    pub source: NodeId,
    pub target: NodeId,
    pub time: f64,
    /// Position in the global chronological order.
    pub ordinal: usize,
    pub label: i32,
}

impl Interaction {
    /// The endpoint that is not `node` (interactions are undirected).
    pub fn other(&self, node: NodeId) -> NodeId {
        if self.source == node {
            self.target
        } else {
            self.source
        }
    }

    pub fn touches(&self, node: NodeId) -> bool {
        self.source == node || self.target == node
    }
}

/// An event before ordering: `(source, target, time, label, edge features)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawEvent {
    pub source: NodeId,
    pub target: NodeId,
    pub time: f64,
    pub label: i32,
    pub features: Vec<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: empty interaction file")]
    Empty { path: String },
    #[error("{path}:{line}: expected {expected} features, found {found}")]
    RaggedFeatures { path: String, line: usize, expected: usize, found: usize },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("bad binary graph file: {0}")]
    Format(String),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("invalid interaction: {0}")]
    InvalidInteraction(String),
    #[error("split would produce an empty {0} range")]
    EmptySplit(&'static str),
    #[error("invalid split fractions: {0}")]
    InvalidSplit(String),
}

/// A chronologically ordered interaction log with its node registry.
///
/// Immutable once built; neighborhoods are answered from a per-node index of
/// incident interactions kept in chronological order.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalGraph {
    interactions: Vec<Interaction>,
    edge_features: Vec<f64>,
    edge_dim: usize,
    node_features: Vec<f64>,
    node_dim: usize,
    partition: Vec<Partition>,
    incident: Vec<Vec<usize>>,
}

impl TemporalGraph {
    /// Builds a graph from unordered events. Events are stably sorted by
    /// time, so input order breaks timestamp ties.
    pub fn new(
        node_features: Array,
        partition: Vec<Partition>,
        mut events: Vec<RawEvent>,
        edge_dim: usize,
    ) -> Result<Self, GraphError> {
        let n = partition.len();
        if node_features.rows() != n || node_features.rank() != 2 {
            return Err(GraphError::InvalidInteraction(format!(
                "node feature matrix {:?} does not match {n} nodes",
                node_features.shape()
            )));
        }
        for (i, e) in events.iter().enumerate() {
            if e.source as usize >= n {
                return Err(GraphError::UnknownNode(e.source));
            }
            if e.target as usize >= n {
                return Err(GraphError::UnknownNode(e.target));
            }
            if !(e.time >= 0.0 && e.time.is_finite()) {
                return Err(GraphError::InvalidInteraction(format!("event {i} has time {}", e.time)));
            }
            if e.features.len() != edge_dim {
                return Err(GraphError::InvalidInteraction(format!(
                    "event {i} has {} edge features, expected {edge_dim}",
                    e.features.len()
                )));
            }
        }
        events.sort_by(|a, b| a.time.total_cmp(&b.time));

        let node_dim = node_features.cols();
        let mut interactions = Vec::with_capacity(events.len());
        let mut edge_features = Vec::with_capacity(events.len() * edge_dim);
        let mut incident = vec![Vec::new(); n];
        for (ordinal, e) in events.into_iter().enumerate() {
            interactions.push(Interaction {
                source: e.source,
                target: e.target,
                time: e.time,
                ordinal,
                label: e.label,
            });
            edge_features.extend_from_slice(&e.features);
            incident[e.source as usize].push(ordinal);
            if e.target != e.source {
                incident[e.target as usize].push(ordinal);
            }
        }
        Ok(Self {
            interactions,
            edge_features,
            edge_dim,
            node_features: node_features.into_data(),
            node_dim,
            partition,
            incident,
        })
    }

    pub fn node_count(&self) -> usize {
        self.partition.len()
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn interaction(&self, ordinal: usize) -> &Interaction {
        &self.interactions[ordinal]
    }

    pub fn edge_dim(&self) -> usize {
        self.edge_dim
    }

    pub fn node_dim(&self) -> usize {
        self.node_dim
    }

    pub fn edge_features(&self, ordinal: usize) -> &[f64] {
        &self.edge_features[ordinal * self.edge_dim..(ordinal + 1) * self.edge_dim]
    }

    pub fn node_features(&self, node: NodeId) -> &[f64] {
        let i = node as usize;
        &self.node_features[i * self.node_dim..(i + 1) * self.node_dim]
    }

    pub fn partition(&self, node: NodeId) -> Partition {
        self.partition[node as usize]
    }

    pub fn partitions(&self) -> &[Partition] {
        &self.partition
    }

    pub fn check_node(&self, node: NodeId) -> Result<(), GraphError> {
        if (node as usize) < self.node_count() {
            Ok(())
        } else {
            Err(GraphError::UnknownNode(node))
        }
    }

    /// Ordinals of interactions incident to `node`, oldest first.
    pub fn incident(&self, node: NodeId) -> &[usize] {
        &self.incident[node as usize]
    }

    /// Ordinals of the at most `limit` most recent interactions incident to
    /// `node` with time strictly before `t`, oldest first.
    pub fn neighborhood_ordinals(&self, node: NodeId, t: f64, limit: usize) -> &[usize] {
        self.neighborhood_within(node, t, usize::MAX, limit)
    }

    /// Like [`Self::neighborhood_ordinals`], additionally hiding every
    /// interaction whose ordinal is `horizon` or later.
    pub fn neighborhood_within(&self, node: NodeId, t: f64, horizon: usize, limit: usize) -> &[usize] {
        let inc = &self.incident[node as usize];
        let end = inc.partition_point(|&o| o < horizon && self.interactions[o].time < t);
        &inc[end.saturating_sub(limit)..end]
    }

    /// The temporal neighborhood of `node` before `t`: the most recent
    /// `limit` incident interactions with time `< t`, oldest first.
    pub fn temporal_neighborhood(&self, node: NodeId, t: f64, limit: usize) -> Result<Vec<Interaction>, GraphError> {
        self.check_node(node)?;
        assert!(limit >= 1, "neighborhood limit must be at least 1");
        Ok(self
            .neighborhood_ordinals(node, t, limit)
            .iter()
            .map(|&o| self.interactions[o])
            .collect())
    }

    /// The events of this graph in chronological order, as raw events.
    pub fn raw_events(&self) -> Vec<RawEvent> {
        self.interactions
            .iter()
            .map(|e| RawEvent {
                source: e.source,
                target: e.target,
                time: e.time,
                label: e.label,
                features: self.edge_features(e.ordinal).to_vec(),
            })
            .collect()
    }

    pub fn node_feature_matrix(&self) -> Array {
        Array::matrix(self.node_count(), self.node_dim, self.node_features.clone())
    }

    /// Keeps only the first `m` interactions; the node registry is unchanged.
    pub fn truncated(&self, m: usize) -> Self {
        let mut events = self.raw_events();
        events.truncate(m);
        Self::new(self.node_feature_matrix(), self.partition.clone(), events, self.edge_dim)
            .expect("prefix of a valid graph is valid")
    }

    /// Nodes belonging to `part`, ascending.
    pub fn nodes_in(&self, part: Partition) -> Vec<NodeId> {
        (0..self.node_count() as NodeId).filter(|&v| self.partition(v) == part).collect()
    }
}
