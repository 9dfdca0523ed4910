//! Undirected connectivity graphs over node ids.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::message::NodeId;

/// An undirected simple graph. Iteration order is by node id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Topology {
    adj: BTreeMap<NodeId, BTreeSet<NodeId>>,
}

impl Topology {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_edges(edges: impl IntoIterator<Item = (NodeId, NodeId)>) -> Self {
        let mut t = Topology::new();
        for (a, b) in edges {
            t.add_edge(a, b);
        }
        t
    }

    pub fn add_node(&mut self, n: NodeId) {
        self.adj.entry(n).or_default();
    }

    /// Adds the edge `a`–`b`. Self loops are ignored.
    pub fn add_edge(&mut self, a: NodeId, b: NodeId) {
        self.add_node(a);
        self.add_node(b);
        if a != b {
            self.adj.get_mut(&a).unwrap().insert(b);
            self.adj.get_mut(&b).unwrap().insert(a);
        }
    }

    pub fn remove_edge(&mut self, a: NodeId, b: NodeId) {
        if let Some(s) = self.adj.get_mut(&a) {
            s.remove(&b);
        }
        if let Some(s) = self.adj.get_mut(&b) {
            s.remove(&a);
        }
    }

    /// Removes `n` and every edge touching it.
    pub fn remove_node(&mut self, n: NodeId) {
        if let Some(nbrs) = self.adj.remove(&n) {
            for m in nbrs {
                if let Some(s) = self.adj.get_mut(&m) {
                    s.remove(&n);
                }
            }
        }
    }

    pub fn contains(&self, n: NodeId) -> bool {
        self.adj.contains_key(&n)
    }

    pub fn has_edge(&self, a: NodeId, b: NodeId) -> bool {
        self.adj.get(&a).is_some_and(|s| s.contains(&b))
    }

    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.adj.keys().copied()
    }

    pub fn node_count(&self) -> usize {
        self.adj.len()
    }

    pub fn neighbors(&self, n: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.adj.get(&n).into_iter().flatten().copied()
    }

    pub fn degree(&self, n: NodeId) -> usize {
        self.adj.get(&n).map_or(0, BTreeSet::len)
    }

    /// Edges as ordered pairs `(a, b)` with `a < b`.
    pub fn edges(&self) -> BTreeSet<(NodeId, NodeId)> {
        self.adj
            .iter()
            .flat_map(|(&a, nbrs)| nbrs.iter().filter(move |&&b| a < b).map(move |&b| (a, b)))
            .collect()
    }

    /// Hop distances from `src` to every reachable node (including `src` at 0).
    pub fn hop_distances(&self, src: NodeId) -> BTreeMap<NodeId, u32> {
        let mut dist = BTreeMap::new();
        if !self.contains(src) {
            return dist;
        }
        dist.insert(src, 0);
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            let d = dist[&u];
            for v in self.neighbors(u) {
                if let std::collections::btree_map::Entry::Vacant(e) = dist.entry(v) {
                    e.insert(d + 1);
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    pub fn is_connected(&self) -> bool {
        match self.nodes().next() {
            None => true,
            Some(first) => self.hop_distances(first).len() == self.node_count(),
        }
    }

    /// Largest eccentricity over all nodes, or `None` if disconnected.
    pub fn diameter(&self) -> Option<u32> {
        let mut best = 0;
        for n in self.nodes() {
            let d = self.hop_distances(n);
            if d.len() != self.node_count() {
                return None;
            }
            best = best.max(d.values().copied().max().unwrap_or(0));
        }
        Some(best)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n(i: u16) -> NodeId {
        NodeId::host(i)
    }

    #[test]
    fn path_distances() {
        let t = Topology::from_edges([(n(1), n(2)), (n(2), n(3))]);
        let d = t.hop_distances(n(1));
        assert_eq!(d[&n(3)], 2);
        assert_eq!(t.diameter(), Some(2));
        assert_eq!(t.edges().len(), 2);
    }

    #[test]
    fn remove_node_drops_edges() {
        let mut t = Topology::from_edges([(n(1), n(2)), (n(2), n(3))]);
        t.remove_node(n(2));
        assert!(!t.is_connected());
        assert_eq!(t.degree(n(1)), 0);
        assert_eq!(t.diameter(), None);
    }

    #[test]
    fn self_loops_ignored() {
        let t = Topology::from_edges([(n(1), n(1))]);
        assert_eq!(t.node_count(), 1);
        assert!(t.edges().is_empty());
    }
}
