//! Loss-free lockstep driver for a fixed graph: every node runs a real
//! [`TopologyState`], packets are delivered in rounds. Used to analyse
//! convergence and flooding cost without the full simulator.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::{ControlPacket, OlsrConfig, TopologyState};
use crate::graph::Topology;
use crate::message::NodeId;
use crate::Millis;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FloodReport {
    /// Nodes that received the TC, plus its origin.
    pub reached: BTreeSet<NodeId>,
    /// Retransmissions by relays (the origin's own send is not counted).
    pub retransmissions: usize,
    /// What blind flooding would cost: every reached node except the origin
    /// retransmits once.
    pub blind_retransmissions: usize,
}

#[derive(Debug, Clone)]
pub struct LockstepNetwork {
    graph: Topology,
    nodes: BTreeMap<NodeId, TopologyState>,
    now: Millis,
}

impl LockstepNetwork {
    pub fn new(graph: &Topology, config: OlsrConfig) -> Self {
        let nodes = graph
            .nodes()
            .map(|n| (n, TopologyState::new(n, config)))
            .collect();
        LockstepNetwork {
            graph: graph.clone(),
            nodes,
            now: 0,
        }
    }

    pub fn node(&self, id: NodeId) -> &TopologyState {
        &self.nodes[&id]
    }

    pub fn node_mut(&mut self, id: NodeId) -> &mut TopologyState {
        self.nodes.get_mut(&id).expect("node in graph")
    }

    pub fn nodes(&self) -> impl Iterator<Item = &TopologyState> {
        self.nodes.values()
    }

    pub fn graph(&self) -> &Topology {
        &self.graph
    }

    /// Every node broadcasts one HELLO, built before any is delivered.
    pub fn hello_round(&mut self) -> bool {
        self.now += 1;
        let hellos: Vec<ControlPacket> = self.nodes.values_mut().map(|s| s.generate_hello()).collect();
        let mut changed = false;
        for hello in &hellos {
            for nb in self.graph.neighbors(hello.origin) {
                changed |= self.nodes.get_mut(&nb).unwrap().process_hello(hello, self.now);
            }
        }
        changed
    }

    /// Runs HELLO rounds until neighborhoods and relay selections are stable.
    /// Returns the number of rounds taken.
    pub fn converge_links(&mut self) -> usize {
        let mut rounds = 0;
        loop {
            rounds += 1;
            if !self.hello_round() || rounds > 16 {
                return rounds;
            }
        }
    }

    /// Originates one TC at `origin` and delivers it breadth-first until the
    /// flood dies out.
    pub fn flood_tc(&mut self, origin: NodeId) -> FloodReport {
        self.now += 1;
        let now = self.now;
        let mut reached = BTreeSet::from([origin]);
        let mut retransmissions = 0;
        let Some(tc) = self.node_mut(origin).generate_tc() else {
            return FloodReport {
                reached,
                retransmissions,
                blind_retransmissions: 0,
            };
        };
        let mut queue = VecDeque::from([(origin, tc)]);
        while let Some((sender, packet)) = queue.pop_front() {
            let receivers: Vec<NodeId> = self.graph.neighbors(sender).collect();
            for r in receivers {
                reached.insert(r);
                if self.nodes.get_mut(&r).unwrap().process_tc(&packet, sender, now) {
                    retransmissions += 1;
                    queue.push_back((r, packet.forwarded()));
                }
            }
        }
        let blind_retransmissions = reached.len() - 1;
        FloodReport {
            reached,
            retransmissions,
            blind_retransmissions,
        }
    }

    /// HELLO convergence followed by one TC flood from every node.
    pub fn converge(&mut self) -> Vec<FloodReport> {
        self.converge_links();
        let origins: Vec<NodeId> = self.nodes.keys().copied().collect();
        origins.into_iter().map(|o| self.flood_tc(o)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_of_four_converges() {
        let n = NodeId::host;
        let g = Topology::from_edges([(n(1), n(2)), (n(2), n(3)), (n(3), n(4))]);
        let mut net = LockstepNetwork::new(&g, OlsrConfig::default());
        let reports = net.converge();
        assert!(reports.iter().all(|r| r.reached.len() == 4));
        let routes = net.node_mut(n(1)).routing_table().clone();
        assert_eq!(routes[&n(4)].hops, 3);
        assert_eq!(routes[&n(4)].next_hop, n(2));
    }
}
