//! Position locating without GPS.
//!
//! Some routers and every station are configured with their coordinates. A
//! phone either floods a "where am I?" query N hops out and collects replies
//! (passive), or simply keeps the coordinates that configured routers push
//! to everyone within N hops whenever the topology changes (active). The
//! estimate is the nearest known router, or the centroid of the nearest
//! ones when several tie.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize, Serializer};

use crate::graph::Topology;
use crate::message::NodeId;

pub const DEFAULT_QUERY_HOPS: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coordinates {
    pub x: f64,
    pub y: f64,
}

impl Coordinates {
    pub const fn new(x: f64, y: f64) -> Self {
        Coordinates { x, y }
    }

    pub fn distance(self, other: Coordinates) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnownLocation {
    pub node: NodeId,
    pub coordinates: Coordinates,
    #[serde(default)]
    pub label: String,
}

pub type KnownLocations = BTreeMap<NodeId, KnownLocation>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocationReply {
    pub replier: NodeId,
    pub coordinates: Coordinates,
    pub hop_distance: u32,
}

/// One receipt of a query or push copy: who got it and how many hops it had
/// travelled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HopStamp {
    pub origin: NodeId,
    pub receiver: NodeId,
    pub hops: u32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct QueryOutcome {
    pub replies: Vec<LocationReply>,
    /// Every copy received, including ones dropped as duplicates.
    pub trace: Vec<HopStamp>,
    pub transmissions: usize,
}

/// First-receipt hop counts of a TTL-limited flood from `origin`, plus the
/// hop-stamped trace. A node that has seen the flood drops later copies and
/// retransmits the first one only while TTL remains.
fn ttl_flood(origin: NodeId, ttl: u32, topology: &Topology) -> (BTreeMap<NodeId, u32>, Vec<HopStamp>, usize) {
    let mut seen = BTreeMap::from([(origin, 0u32)]);
    let mut trace = Vec::new();
    let mut transmissions = 0;
    if ttl == 0 || !topology.contains(origin) {
        return (BTreeMap::new(), trace, 0);
    }
    let mut queue = VecDeque::from([(origin, ttl, 0u32)]);
    while let Some((sender, remaining, hops)) = queue.pop_front() {
        transmissions += 1;
        for r in topology.neighbors(sender) {
            trace.push(HopStamp {
                origin,
                receiver: r,
                hops: hops + 1,
            });
            if seen.contains_key(&r) {
                continue;
            }
            seen.insert(r, hops + 1);
            if remaining > 1 {
                queue.push_back((r, remaining - 1, hops + 1));
            }
        }
    }
    seen.remove(&origin);
    (seen, trace, transmissions)
}

/// Floods a query `n_hops` out from `origin`; every reached node with a
/// known location replies. Replies are ordered by replier id.
pub fn passive_query(origin: NodeId, n_hops: u32, topology: &Topology, known: &KnownLocations) -> QueryOutcome {
    let (reached, trace, transmissions) = ttl_flood(origin, n_hops, topology);
    let replies = reached
        .iter()
        .filter_map(|(node, &hop_distance)| {
            known.get(node).map(|k| LocationReply {
                replier: *node,
                coordinates: k.coordinates,
                hop_distance,
            })
        })
        .collect();
    QueryOutcome {
        replies,
        trace,
        transmissions,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LocationEstimate {
    Known {
        coordinates: Coordinates,
        source_count: usize,
        hop_distance: u32,
    },
    Unknown,
}

impl Serialize for LocationEstimate {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Known {
            x: f64,
            y: f64,
            hop_distance: u32,
            source_count: usize,
        }
        match *self {
            LocationEstimate::Unknown => s.serialize_str("unknown"),
            LocationEstimate::Known {
                coordinates,
                source_count,
                hop_distance,
            } => Known {
                x: coordinates.x,
                y: coordinates.y,
                hop_distance,
                source_count,
            }
            .serialize(s),
        }
    }
}

/// Coordinates of the minimum-hop replier, or the centroid of all repliers
/// tied at that distance. Duplicate replies from one node count once.
pub fn estimate_position(replies: &[LocationReply]) -> LocationEstimate {
    let Some(min_hop) = replies.iter().map(|r| r.hop_distance).min() else {
        return LocationEstimate::Unknown;
    };
    // Summing in id order keeps the float result independent of reply order.
    let nearest: BTreeMap<NodeId, Coordinates> = replies
        .iter()
        .filter(|r| r.hop_distance == min_hop)
        .map(|r| (r.replier, r.coordinates))
        .collect();
    let n = nearest.len() as f64;
    let (sx, sy) = nearest.values().fold((0.0, 0.0), |(x, y), c| (x + c.x, y + c.y));
    LocationEstimate::Known {
        coordinates: Coordinates::new(sx / n, sy / n),
        source_count: nearest.len(),
        hop_distance: min_hop,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PushDelivery {
    pub target: NodeId,
    pub router: NodeId,
    pub coordinates: Coordinates,
    pub hop_distance: u32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PushOutcome {
    pub deliveries: Vec<PushDelivery>,
    pub trace: Vec<HopStamp>,
    pub transmissions: usize,
}

/// Every known-location node present in `topology` pushes its coordinates
/// through a TTL-`n_hops` flood.
pub fn active_push(topology: &Topology, known: &KnownLocations, n_hops: u32) -> PushOutcome {
    let mut out = PushOutcome::default();
    for (router, k) in known {
        if !topology.contains(*router) {
            continue;
        }
        let (reached, trace, tx) = ttl_flood(*router, n_hops, topology);
        out.trace.extend(trace);
        out.transmissions += tx;
        out.deliveries.extend(reached.into_iter().map(|(target, hop_distance)| PushDelivery {
            target,
            router: *router,
            coordinates: k.coordinates,
            hop_distance,
        }));
    }
    out
}

/// Per-node caches of pushed locations. Each topology change starts a new
/// epoch: caches are rebuilt from that epoch's pushes, so entries from
/// routers that moved out of range disappear.
#[derive(Debug, Clone, Default)]
pub struct LocationCaches {
    epoch: u64,
    caches: BTreeMap<NodeId, BTreeMap<NodeId, LocationReply>>,
}

impl LocationCaches {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Handles a topology change event and returns the pushes it caused.
    pub fn on_topology_change(&mut self, topology: &Topology, known: &KnownLocations, n_hops: u32) -> PushOutcome {
        let push = active_push(topology, known, n_hops);
        self.epoch += 1;
        self.caches.clear();
        for n in topology.nodes() {
            self.caches.insert(n, BTreeMap::new());
        }
        for d in &push.deliveries {
            self.caches.entry(d.target).or_default().insert(
                d.router,
                LocationReply {
                    replier: d.router,
                    coordinates: d.coordinates,
                    hop_distance: d.hop_distance,
                },
            );
        }
        push
    }

    /// Cached replies of `node`, ordered by router id.
    pub fn cached(&self, node: NodeId) -> Vec<LocationReply> {
        self.caches
            .get(&node)
            .map(|c| c.values().copied().collect())
            .unwrap_or_default()
    }

    pub fn estimate(&self, node: NodeId) -> LocationEstimate {
        estimate_position(&self.cached(node))
    }

    pub fn nodes(&self) -> BTreeSet<NodeId> {
        self.caches.keys().copied().collect()
    }
}
