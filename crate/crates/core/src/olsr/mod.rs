//! Per-node OLSR state: HELLO link sensing, multipoint relay selection,
//! TC flooding through relays and shortest-hop route computation.
//!
//! A node's [`TopologyState`] only changes through the `process_*` and
//! [`TopologyState::sweep`] entry points; timers belong to the caller.

mod lockstep;
mod packet;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

pub use lockstep::{FloodReport, LockstepNetwork};
pub use packet::{ControlDecodeError, ControlKind, ControlPacket, NeighborCode, SeqNum};

use crate::graph::Topology;
use crate::message::NodeId;
use crate::Millis;

/// Timer constants. All values in milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct OlsrConfig {
    pub hello_interval: Millis,
    pub tc_interval: Millis,
    /// Neighbor hold time; a link not refreshed for longer is dropped.
    pub neighbor_hold: Millis,
    pub topology_hold: Millis,
    pub duplicate_hold: Millis,
}

impl Default for OlsrConfig {
    fn default() -> Self {
        OlsrConfig {
            hello_interval: 2_000,
            tc_interval: 5_000,
            neighbor_hold: 6_000,
            topology_hold: 15_000,
            duplicate_hold: 30_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinkStatus {
    Asymmetric,
    Symmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkRecord {
    pub neighbor: NodeId,
    pub status: LinkStatus,
    pub last_heard: Millis,
    pub expiry: Millis,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct TopologyEntry {
    seq: SeqNum,
    advertised: BTreeSet<NodeId>,
    expiry: Millis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct DuplicateEntry {
    retransmitted: bool,
    expiry: Millis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Route {
    pub next_hop: NodeId,
    pub hops: u32,
}

/// Destination → route. Unreachable destinations are absent.
pub type RoutingTable = BTreeMap<NodeId, Route>;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OlsrCounters {
    pub hellos_processed: u64,
    pub tcs_processed: u64,
    pub tcs_duplicate: u64,
    pub tcs_stale: u64,
    pub tcs_ignored: u64,
    pub tcs_forwarded: u64,
}

#[derive(Debug, Clone)]
pub struct TopologyState {
    me: NodeId,
    config: OlsrConfig,
    links: BTreeMap<NodeId, LinkRecord>,
    two_hop: BTreeMap<NodeId, BTreeSet<NodeId>>,
    mpr_set: BTreeSet<NodeId>,
    mpr_selectors: BTreeMap<NodeId, Millis>,
    topology: BTreeMap<NodeId, TopologyEntry>,
    duplicates: BTreeMap<(NodeId, SeqNum), DuplicateEntry>,
    routes: RoutingTable,
    routes_dirty: bool,
    hello_seq: SeqNum,
    tc_seq: SeqNum,
    counters: OlsrCounters,
}

impl TopologyState {
    pub fn new(me: NodeId, config: OlsrConfig) -> Self {
        TopologyState {
            me,
            config,
            links: BTreeMap::new(),
            two_hop: BTreeMap::new(),
            mpr_set: BTreeSet::new(),
            mpr_selectors: BTreeMap::new(),
            topology: BTreeMap::new(),
            duplicates: BTreeMap::new(),
            routes: RoutingTable::new(),
            routes_dirty: false,
            hello_seq: SeqNum::default(),
            tc_seq: SeqNum::default(),
            counters: OlsrCounters::default(),
        }
    }

    pub fn id(&self) -> NodeId {
        self.me
    }

    pub fn config(&self) -> &OlsrConfig {
        &self.config
    }

    pub fn counters(&self) -> OlsrCounters {
        self.counters
    }

    pub fn link(&self, neighbor: NodeId) -> Option<&LinkRecord> {
        self.links.get(&neighbor)
    }

    pub fn links(&self) -> impl Iterator<Item = &LinkRecord> {
        self.links.values()
    }

    pub fn is_symmetric(&self, neighbor: NodeId) -> bool {
        self.links
            .get(&neighbor)
            .is_some_and(|l| l.status == LinkStatus::Symmetric)
    }

    pub fn symmetric_neighbors(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.links
            .values()
            .filter(|l| l.status == LinkStatus::Symmetric)
            .map(|l| l.neighbor)
    }

    pub fn two_hop(&self) -> &BTreeMap<NodeId, BTreeSet<NodeId>> {
        &self.two_hop
    }

    /// Nodes exactly two hops away: reachable through a symmetric neighbor,
    /// not ourselves and not themselves symmetric neighbors.
    pub fn strict_two_hop(&self) -> BTreeSet<NodeId> {
        let n1: BTreeSet<NodeId> = self.symmetric_neighbors().collect();
        n1.iter()
            .filter_map(|nb| self.two_hop.get(nb))
            .flatten()
            .copied()
            .filter(|x| *x != self.me && !n1.contains(x))
            .collect()
    }

    pub fn mpr_set(&self) -> &BTreeSet<NodeId> {
        &self.mpr_set
    }

    pub fn mpr_selectors(&self) -> BTreeSet<NodeId> {
        self.mpr_selectors.keys().copied().collect()
    }

    /// Known `(origin, advertised neighbor, sequence)` tuples.
    pub fn topology_set(&self) -> BTreeSet<(NodeId, NodeId, SeqNum)> {
        self.topology
            .iter()
            .flat_map(|(&o, e)| e.advertised.iter().map(move |&n| (o, n, e.seq)))
            .collect()
    }

    /// Builds the HELLO this node broadcasts now.
    pub fn generate_hello(&mut self) -> ControlPacket {
        self.hello_seq = self.hello_seq.next();
        let neighbor_list = self
            .links
            .values()
            .map(|l| {
                let code = match l.status {
                    LinkStatus::Asymmetric => NeighborCode::Asymmetric,
                    LinkStatus::Symmetric if self.mpr_set.contains(&l.neighbor) => NeighborCode::Mpr,
                    LinkStatus::Symmetric => NeighborCode::Symmetric,
                };
                (l.neighbor, code)
            })
            .collect();
        ControlPacket {
            kind: ControlKind::Hello,
            origin: self.me,
            sequence: self.hello_seq,
            neighbor_list,
            ttl: 1,
        }
    }

    /// Builds the TC this node originates now, advertising all symmetric
    /// neighbors. `None` when it has none.
    pub fn generate_tc(&mut self) -> Option<ControlPacket> {
        let neighbor_list: Vec<_> = self
            .symmetric_neighbors()
            .map(|n| (n, NeighborCode::Symmetric))
            .collect();
        if neighbor_list.is_empty() {
            return None;
        }
        self.tc_seq = self.tc_seq.next();
        Some(ControlPacket {
            kind: ControlKind::Tc,
            origin: self.me,
            sequence: self.tc_seq,
            neighbor_list,
            ttl: u8::MAX,
        })
    }

    /// Link sensing from a neighbor's HELLO. Returns whether the neighborhood
    /// (links, two-hop sets or selectors) changed.
    pub fn process_hello(&mut self, hello: &ControlPacket, now: Millis) -> bool {
        if hello.kind != ControlKind::Hello || hello.origin == self.me {
            return false;
        }
        self.counters.hellos_processed += 1;
        let sender = hello.origin;
        let expiry = now + self.config.neighbor_hold;
        let listed = hello.lists(self.me);
        let status = if listed.is_some() {
            LinkStatus::Symmetric
        } else {
            LinkStatus::Asymmetric
        };

        let mut changed = false;
        match self.links.get_mut(&sender) {
            Some(rec) => {
                changed |= rec.status != status;
                rec.status = status;
                rec.last_heard = now;
                rec.expiry = expiry;
            }
            None => {
                changed = true;
                self.links.insert(
                    sender,
                    LinkRecord {
                        neighbor: sender,
                        status,
                        last_heard: now,
                        expiry,
                    },
                );
            }
        }

        if status == LinkStatus::Symmetric {
            let reach: BTreeSet<NodeId> = hello
                .neighbor_list
                .iter()
                .filter(|(n, code)| code.is_symmetric() && *n != self.me)
                .map(|(n, _)| *n)
                .collect();
            if self.two_hop.get(&sender) != Some(&reach) {
                changed = true;
                self.two_hop.insert(sender, reach);
            }
        } else if self.two_hop.remove(&sender).is_some() {
            changed = true;
        }

        if listed == Some(NeighborCode::Mpr) {
            changed |= self.mpr_selectors.insert(sender, expiry).is_none();
        } else {
            changed |= self.mpr_selectors.remove(&sender).is_some();
        }

        if changed {
            self.mpr_set = self.select_mprs();
            self.routes_dirty = true;
        }
        changed
    }

    /// Relay selection over the current neighborhood; see [`select_relays`].
    pub fn select_mprs(&self) -> BTreeSet<NodeId> {
        let n1: BTreeSet<NodeId> = self.symmetric_neighbors().collect();
        select_relays(self.me, &n1, &self.two_hop)
    }

    /// Handles a TC received from `prev_hop`. Topology information is
    /// updated once per fresh `(origin, sequence)`; the return value says
    /// whether this node must retransmit the packet (as
    /// [`ControlPacket::forwarded`]).
    ///
    /// A packet is retransmitted at most once, and only when it arrives from
    /// a neighbor that selected this node as relay.
    pub fn process_tc(&mut self, tc: &ControlPacket, prev_hop: NodeId, now: Millis) -> bool {
        if tc.kind != ControlKind::Tc || tc.origin == self.me {
            return false;
        }
        if !self.is_symmetric(prev_hop) {
            self.counters.tcs_ignored += 1;
            return false;
        }
        let key = (tc.origin, tc.sequence);
        if !self.duplicates.contains_key(&key) {
            self.duplicates.insert(
                key,
                DuplicateEntry {
                    retransmitted: false,
                    expiry: now + self.config.duplicate_hold,
                },
            );
            match self.topology.get(&tc.origin) {
                Some(e) if !tc.sequence.is_newer_than(e.seq) => {
                    self.counters.tcs_stale += 1;
                    return false;
                }
                _ => {
                    self.counters.tcs_processed += 1;
                    let advertised = tc.neighbor_list.iter().map(|(n, _)| *n).collect();
                    self.topology.insert(
                        tc.origin,
                        TopologyEntry {
                            seq: tc.sequence,
                            advertised,
                            expiry: now + self.config.topology_hold,
                        },
                    );
                    self.routes_dirty = true;
                }
            }
        } else {
            self.counters.tcs_duplicate += 1;
        }

        let dup = self.duplicates.get_mut(&key).expect("inserted above");
        if !dup.retransmitted && self.mpr_selectors.contains_key(&prev_hop) && tc.ttl > 0 {
            dup.retransmitted = true;
            self.counters.tcs_forwarded += 1;
            true
        } else {
            false
        }
    }

    /// Drops every record whose hold time has passed. Returns whether the
    /// neighborhood or topology changed.
    pub fn sweep(&mut self, now: Millis) -> bool {
        let expired: Vec<NodeId> = self
            .links
            .values()
            .filter(|l| l.expiry < now)
            .map(|l| l.neighbor)
            .collect();
        let mut changed = !expired.is_empty();
        for n in expired {
            self.links.remove(&n);
            self.two_hop.remove(&n);
            self.mpr_selectors.remove(&n);
        }
        let before = self.mpr_selectors.len();
        self.mpr_selectors.retain(|_, exp| *exp >= now);
        changed |= before != self.mpr_selectors.len();

        let before = self.topology.len();
        self.topology.retain(|_, e| e.expiry >= now);
        let topo_changed = before != self.topology.len();
        self.duplicates.retain(|_, d| d.expiry >= now);

        if changed {
            self.mpr_set = self.select_mprs();
        }
        if changed || topo_changed {
            self.routes_dirty = true;
        }
        changed || topo_changed
    }

    /// Drops all state, as after a reboot.
    pub fn reset(&mut self) {
        *self = TopologyState::new(self.me, self.config);
    }

    /// The graph this node currently believes in: its own symmetric links,
    /// its neighbors' advertised links, and every TC-advertised link.
    /// Links other nodes claim to have with us are only trusted through our
    /// own link set.
    pub fn known_graph(&self) -> Topology {
        let mut g = Topology::new();
        g.add_node(self.me);
        let n1: BTreeSet<NodeId> = self.symmetric_neighbors().collect();
        for &nb in &n1 {
            g.add_edge(self.me, nb);
            for &x in self.two_hop.get(&nb).into_iter().flatten() {
                if x != self.me {
                    g.add_edge(nb, x);
                }
            }
        }
        for (&origin, e) in &self.topology {
            if origin == self.me {
                continue;
            }
            for &n in &e.advertised {
                if n != self.me {
                    g.add_edge(origin, n);
                }
            }
        }
        g
    }

    /// Shortest-hop routes over [`Self::known_graph`]. Among equal-length
    /// paths the smallest next-hop id wins.
    pub fn compute_routes(&self) -> RoutingTable {
        let g = self.known_graph();
        let mut dist: BTreeMap<NodeId, u32> = BTreeMap::new();
        let mut first: BTreeMap<NodeId, NodeId> = BTreeMap::new();
        let mut order = Vec::new();
        dist.insert(self.me, 0);
        let mut queue = VecDeque::from([self.me]);
        while let Some(u) = queue.pop_front() {
            let du = dist[&u];
            for v in g.neighbors(u) {
                if let std::collections::btree_map::Entry::Vacant(e) = dist.entry(v) {
                    e.insert(du + 1);
                    order.push(v);
                    queue.push_back(v);
                }
            }
        }
        // BFS order visits nodes by non-decreasing distance, so every
        // predecessor's first hop is final before its successors look at it.
        for &v in &order {
            let dv = dist[&v];
            let hop = if dv == 1 {
                v
            } else {
                g.neighbors(v)
                    .filter(|u| dist.get(u) == Some(&(dv - 1)))
                    .map(|u| first[&u])
                    .min()
                    .expect("a BFS predecessor exists")
            };
            first.insert(v, hop);
        }
        order
            .into_iter()
            .map(|v| {
                (
                    v,
                    Route {
                        next_hop: first[&v],
                        hops: dist[&v],
                    },
                )
            })
            .collect()
    }

    /// Cached routing table, recomputed when the topology changed.
    pub fn routing_table(&mut self) -> &RoutingTable {
        if self.routes_dirty {
            self.routes = self.compute_routes();
            self.routes_dirty = false;
        }
        &self.routes
    }
}

/// Greedy relay selection: first every neighbor that is the only way to
/// reach some strict two-hop node, then repeatedly the neighbor covering the
/// most still-uncovered two-hop nodes. Ties go to the smallest id.
/// `two_hop` maps each neighbor to the nodes it reports as its neighbors.
pub fn select_relays(
    me: NodeId,
    n1: &BTreeSet<NodeId>,
    two_hop: &BTreeMap<NodeId, BTreeSet<NodeId>>,
) -> BTreeSet<NodeId> {
    let mut covered_by: BTreeMap<NodeId, BTreeSet<NodeId>> = BTreeMap::new();
    for &nb in n1 {
        for &x in two_hop.get(&nb).into_iter().flatten() {
            if x != me && !n1.contains(&x) {
                covered_by.entry(x).or_default().insert(nb);
            }
        }
    }

    let mut mprs = BTreeSet::new();
    for vias in covered_by.values() {
        if vias.len() == 1 {
            mprs.extend(vias.iter().copied());
        }
    }
    let mut uncovered: BTreeSet<NodeId> = covered_by
        .iter()
        .filter(|(_, vias)| vias.is_disjoint(&mprs))
        .map(|(&x, _)| x)
        .collect();

    while !uncovered.is_empty() {
        let mut best: Option<(NodeId, usize)> = None;
        for &nb in n1.difference(&mprs) {
            let gain = two_hop
                .get(&nb)
                .map_or(0, |s| s.intersection(&uncovered).count());
            if gain > best.map_or(0, |(_, g)| g) {
                best = Some((nb, gain));
            }
        }
        let Some((pick, _)) = best else { break };
        mprs.insert(pick);
        if let Some(s) = two_hop.get(&pick) {
            for x in s {
                uncovered.remove(x);
            }
        }
    }
    mprs
}

/// Relay sets every node of `graph` would select once its neighborhood is
/// fully known.
pub fn graph_mprs(graph: &Topology) -> BTreeMap<NodeId, BTreeSet<NodeId>> {
    graph
        .nodes()
        .map(|me| {
            let n1: BTreeSet<NodeId> = graph.neighbors(me).collect();
            let two_hop = n1.iter().map(|&nb| (nb, graph.neighbors(nb).collect())).collect();
            (me, select_relays(me, &n1, &two_hop))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n(i: u16) -> NodeId {
        NodeId::host(i)
    }

    fn hello_from(origin: NodeId, listed: &[(NodeId, NeighborCode)]) -> ControlPacket {
        let mut neighbor_list = listed.to_vec();
        neighbor_list.sort();
        ControlPacket {
            kind: ControlKind::Hello,
            origin,
            sequence: SeqNum(1),
            neighbor_list,
            ttl: 1,
        }
    }

    #[test]
    fn one_way_hearing_is_asymmetric() {
        let mut a = TopologyState::new(n(1), OlsrConfig::default());
        a.process_hello(&hello_from(n(2), &[]), 0);
        assert_eq!(a.link(n(2)).unwrap().status, LinkStatus::Asymmetric);
    }

    #[test]
    fn listed_hello_is_symmetric() {
        let mut a = TopologyState::new(n(1), OlsrConfig::default());
        a.process_hello(&hello_from(n(2), &[(n(1), NeighborCode::Asymmetric)]), 0);
        assert_eq!(a.link(n(2)).unwrap().status, LinkStatus::Symmetric);
        assert_eq!(a.link(n(2)).unwrap().expiry, 6_000);
    }

    #[test]
    fn silent_neighbor_expires_after_hold_time() {
        // Trace: hellos from B at t = 0, 2 s, 4 s, then silence. Hold time is
        // 6 s, so the last expiry is 10 s: present at 10 s, gone just after.
        let mut a = TopologyState::new(n(1), OlsrConfig::default());
        for t in [0, 2_000, 4_000] {
            a.process_hello(&hello_from(n(2), &[(n(1), NeighborCode::Symmetric)]), t);
        }
        assert!(!a.sweep(9_999));
        assert!(!a.sweep(10_000));
        assert!(a.link(n(2)).is_some());
        assert!(a.sweep(10_001));
        assert!(a.link(n(2)).is_none());
        assert!(a.routing_table().is_empty());
    }

    #[test]
    fn star_leaf_picks_hub() {
        let mut leaf = TopologyState::new(n(2), OlsrConfig::default());
        leaf.process_hello(
            &hello_from(
                n(1),
                &[
                    (n(2), NeighborCode::Symmetric),
                    (n(3), NeighborCode::Symmetric),
                    (n(4), NeighborCode::Symmetric),
                ],
            ),
            0,
        );
        assert_eq!(leaf.select_mprs(), BTreeSet::from([n(1)]));
    }

    #[test]
    fn path_end_picks_middle() {
        let mut a = TopologyState::new(n(1), OlsrConfig::default());
        a.process_hello(
            &hello_from(n(2), &[(n(1), NeighborCode::Symmetric), (n(3), NeighborCode::Symmetric)]),
            0,
        );
        assert_eq!(a.select_mprs(), BTreeSet::from([n(2)]));
        let routes = a.routing_table().clone();
        assert_eq!(routes[&n(2)], Route { next_hop: n(2), hops: 1 });
        assert_eq!(routes[&n(3)], Route { next_hop: n(2), hops: 2 });
    }

    #[test]
    fn no_two_hop_means_no_mprs() {
        let mut a = TopologyState::new(n(1), OlsrConfig::default());
        a.process_hello(&hello_from(n(2), &[(n(1), NeighborCode::Symmetric)]), 0);
        assert!(a.select_mprs().is_empty());
    }

    #[test]
    fn tc_from_selector_is_forwarded_once() {
        let mut a = TopologyState::new(n(1), OlsrConfig::default());
        a.process_hello(&hello_from(n(2), &[(n(1), NeighborCode::Mpr)]), 0);
        assert!(a.mpr_selectors().contains(&n(2)));
        let tc = ControlPacket {
            kind: ControlKind::Tc,
            origin: n(9),
            sequence: SeqNum(4),
            neighbor_list: vec![(n(8), NeighborCode::Symmetric)],
            ttl: 255,
        };
        assert!(a.process_tc(&tc, n(2), 10));
        let snapshot = a.topology_set();
        assert!(snapshot.contains(&(n(9), n(8), SeqNum(4))));
        // Duplicate: nothing changes, nothing forwarded.
        assert!(!a.process_tc(&tc, n(2), 11));
        assert_eq!(a.topology_set(), snapshot);
        // Older sequence from the same origin is stale.
        let old = ControlPacket { sequence: SeqNum(3), ..tc.clone() };
        assert!(!a.process_tc(&old, n(2), 12));
        assert_eq!(a.counters().tcs_stale, 1);
        assert_eq!(a.topology_set(), snapshot);
    }

    #[test]
    fn tc_with_no_budget_is_not_forwarded() {
        let mut a = TopologyState::new(n(1), OlsrConfig::default());
        a.process_hello(&hello_from(n(2), &[(n(1), NeighborCode::Mpr)]), 0);
        let tc = ControlPacket {
            kind: ControlKind::Tc,
            origin: n(9),
            sequence: SeqNum(1),
            neighbor_list: vec![(n(8), NeighborCode::Symmetric)],
            ttl: 0,
        };
        assert!(!a.process_tc(&tc, n(2), 0));
        assert_eq!(a.topology_set().len(), 1);
    }

    #[test]
    fn tc_from_non_selector_updates_but_does_not_forward() {
        let mut a = TopologyState::new(n(1), OlsrConfig::default());
        a.process_hello(&hello_from(n(2), &[(n(1), NeighborCode::Symmetric)]), 0);
        let tc = ControlPacket {
            kind: ControlKind::Tc,
            origin: n(9),
            sequence: SeqNum(1),
            neighbor_list: vec![(n(2), NeighborCode::Symmetric)],
            ttl: 255,
        };
        assert!(!a.process_tc(&tc, n(2), 0));
        assert_eq!(a.routing_table()[&n(9)].hops, 2);
    }
}
