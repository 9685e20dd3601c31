//! Communication graphs. Node ids are `1..=N`; an edge `i → j` means `j`
//! hears `i`.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn index(self) -> usize {
        (self.0 - 1) as usize
    }

    pub fn from_index(i: usize) -> Self {
        NodeId(i as u32 + 1)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("topology has no nodes")]
    Empty,
    #[error("self-loop on node {0}")]
    SelfLoop(u32),
    #[error("edge {from}->{to} references a node outside 1..={n}")]
    UnknownNode { from: u32, to: u32, n: u32 },
    #[error("cannot parse topology spec {0:?}; expected line:N, grid:RxC, grid-diameter:D, complete:N")]
    BadSpec(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TopologyKind {
    Line { n: u32 },
    Grid { rows: u32, cols: u32 },
    Complete { n: u32 },
    Custom,
}

impl fmt::Display for TopologyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TopologyKind::Line { n } => write!(f, "line{n}"),
            TopologyKind::Grid { rows, cols } => write!(f, "grid{rows}x{cols}"),
            TopologyKind::Complete { n } => write!(f, "complete{n}"),
            TopologyKind::Custom => write!(f, "custom"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    kind: TopologyKind,
    n: u32,
    edges: BTreeSet<(NodeId, NodeId)>,
    out: Vec<Vec<NodeId>>,
    undirected: Vec<Vec<NodeId>>,
}

impl Topology {
    pub fn from_edges(
        n: u32,
        edges: impl IntoIterator<Item = (u32, u32)>,
    ) -> Result<Self, TopologyError> {
        Self::build(TopologyKind::Custom, n, edges)
    }

    fn build(
        kind: TopologyKind,
        n: u32,
        edges: impl IntoIterator<Item = (u32, u32)>,
    ) -> Result<Self, TopologyError> {
        if n == 0 {
            return Err(TopologyError::Empty);
        }
        let mut set = BTreeSet::new();
        for (from, to) in edges {
            if from == to {
                return Err(TopologyError::SelfLoop(from));
            }
            if from == 0 || to == 0 || from > n || to > n {
                return Err(TopologyError::UnknownNode { from, to, n });
            }
            set.insert((NodeId(from), NodeId(to)));
        }
        let mut out = vec![Vec::new(); n as usize];
        let mut undirected = vec![BTreeSet::new(); n as usize];
        for &(a, b) in &set {
            out[a.index()].push(b);
            undirected[a.index()].insert(b);
            undirected[b.index()].insert(a);
        }
        Ok(Topology {
            kind,
            n,
            edges: set,
            out,
            undirected: undirected
                .into_iter()
                .map(|s| s.into_iter().collect())
                .collect(),
        })
    }

    pub fn line(n: u32) -> Result<Self, TopologyError> {
        let edges = (1..n).flat_map(|i| [(i, i + 1), (i + 1, i)]);
        Self::build(TopologyKind::Line { n }, n, edges)
    }

    /// `rows × cols` lattice, 4-neighbour links in both directions. Node ids
    /// run row-major.
    pub fn grid(rows: u32, cols: u32) -> Result<Self, TopologyError> {
        let id = |r: u32, c: u32| r * cols + c + 1;
        let mut edges = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                if c + 1 < cols {
                    edges.push((id(r, c), id(r, c + 1)));
                    edges.push((id(r, c + 1), id(r, c)));
                }
                if r + 1 < rows {
                    edges.push((id(r, c), id(r + 1, c)));
                    edges.push((id(r + 1, c), id(r, c)));
                }
            }
        }
        Self::build(TopologyKind::Grid { rows, cols }, rows * cols, edges)
    }

    /// Square grid whose hop diameter is `diameter` (rounded up to even).
    pub fn grid_with_diameter(diameter: u32) -> Result<Self, TopologyError> {
        let side = diameter.div_ceil(2) + 1;
        Self::grid(side, side)
    }

    pub fn complete(n: u32) -> Result<Self, TopologyError> {
        let edges = (1..=n).flat_map(|i| (1..=n).filter(move |&j| j != i).map(move |j| (i, j)));
        Self::build(TopologyKind::Complete { n }, n, edges)
    }

    /// Parses `line:20`, `grid:5x4`, `grid-diameter:16`, `complete:6`.
    pub fn parse_spec(spec: &str) -> Result<Self, TopologyError> {
        let bad = || TopologyError::BadSpec(spec.to_string());
        let (kind, arg) = spec.split_once(':').ok_or_else(bad)?;
        let num = |s: &str| s.trim().parse::<u32>().map_err(|_| bad());
        match kind.trim() {
            "line" => Self::line(num(arg)?),
            "complete" => Self::complete(num(arg)?),
            "grid-diameter" => Self::grid_with_diameter(num(arg)?),
            "grid" => {
                let (r, c) = arg.split_once(['x', 'X']).ok_or_else(bad)?;
                Self::grid(num(r)?, num(c)?)
            }
            _ => Err(bad()),
        }
    }

    pub fn kind(&self) -> &TopologyKind {
        &self.kind
    }

    pub fn node_count(&self) -> u32 {
        self.n
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> {
        (1..=self.n).map(NodeId)
    }

    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Nodes that hear `node`, ascending.
    pub fn out_neighbors(&self, node: NodeId) -> &[NodeId] {
        &self.out[node.index()]
    }

    /// Neighbours ignoring direction, ascending.
    pub fn neighbors(&self, node: NodeId) -> &[NodeId] {
        &self.undirected[node.index()]
    }

    /// Hop distances from `source` along directed edges; `None` if unreachable.
    pub fn hops_from(&self, source: NodeId) -> Vec<Option<u32>> {
        let mut dist = vec![None; self.n as usize];
        dist[source.index()] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            let d = dist[u.index()].unwrap_or(0);
            for &v in self.out_neighbors(u) {
                if dist[v.index()].is_none() {
                    dist[v.index()] = Some(d + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Every node reachable from every other along directed edges.
    pub fn is_strongly_connected(&self) -> bool {
        self.nodes()
            .all(|s| self.hops_from(s).iter().all(Option::is_some))
    }

    /// Longest shortest path; `None` when not strongly connected.
    pub fn diameter(&self) -> Option<u32> {
        self.nodes().try_fold(0, |acc, s| {
            self.hops_from(s)
                .into_iter()
                .try_fold(acc, |m, d| d.map(|d| m.max(d)))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_edges() {
        let t = Topology::line(20).unwrap();
        assert_eq!(t.edge_count(), 38);
        assert_eq!(t.out_neighbors(NodeId(1)), &[NodeId(2)]);
        assert_eq!(t.out_neighbors(NodeId(5)), &[NodeId(4), NodeId(6)]);
        assert_eq!(t.diameter(), Some(19));
    }

    #[test]
    fn grid_edges() {
        let t = Topology::grid(5, 4).unwrap();
        assert_eq!(t.node_count(), 20);
        // 2 * (horizontal 5*3 + vertical 4*4)
        assert_eq!(t.edge_count(), 2 * (15 + 16));
        assert_eq!(t.diameter(), Some(7));
        assert_eq!(
            t.out_neighbors(NodeId(6)),
            &[NodeId(2), NodeId(5), NodeId(7), NodeId(10)]
        );
    }

    #[test]
    fn grid_by_diameter() {
        for d in [4, 8, 16, 32] {
            assert_eq!(Topology::grid_with_diameter(d).unwrap().diameter(), Some(d));
        }
    }

    #[test]
    fn complete_edges() {
        let t = Topology::complete(6).unwrap();
        assert_eq!(t.edge_count(), 30);
        assert_eq!(t.diameter(), Some(1));
    }

    #[test]
    fn invalid_graphs() {
        assert_eq!(Topology::line(0).unwrap_err(), TopologyError::Empty);
        assert_eq!(
            Topology::from_edges(3, [(1, 1)]).unwrap_err(),
            TopologyError::SelfLoop(1)
        );
        assert!(matches!(
            Topology::from_edges(3, [(1, 4)]),
            Err(TopologyError::UnknownNode { .. })
        ));
    }

    #[test]
    fn disconnected_graph_detected() {
        let t = Topology::from_edges(3, [(1, 2), (2, 1)]).unwrap();
        assert!(!t.is_strongly_connected());
        assert_eq!(t.diameter(), None);
    }

    #[test]
    fn spec_parsing() {
        assert_eq!(Topology::parse_spec("line:20").unwrap().node_count(), 20);
        assert_eq!(Topology::parse_spec("grid:5x4").unwrap().node_count(), 20);
        assert_eq!(Topology::parse_spec("complete:6").unwrap().edge_count(), 30);
        assert_eq!(Topology::parse_spec("grid-diameter:8").unwrap().node_count(), 25);
        assert!(Topology::parse_spec("ring:5").is_err());
        assert!(Topology::parse_spec("line").is_err());
    }
}
