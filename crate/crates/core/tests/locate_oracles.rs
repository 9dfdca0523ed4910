mod common;

use std::collections::BTreeMap;

use lifeline_core::locate::{
    estimate_position, passive_query, Coordinates, KnownLocation, KnownLocations, LocationCaches, LocationReply,
};
use lifeline_core::{NodeId, Topology};
use proptest::prelude::*;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

fn configure(rng: &mut impl Rng, g: &Topology, fraction: f64) -> KnownLocations {
    let chosen: Vec<NodeId> = g.nodes().filter(|_| rng.random_bool(fraction)).collect();
    chosen
        .into_iter()
        .map(|node| {
            let coordinates = Coordinates::new(rng.random_range(0.0..100.0), rng.random_range(0.0..100.0));
            (
                node,
                KnownLocation {
                    node,
                    coordinates,
                    label: format!("router {node}"),
                },
            )
        })
        .collect()
}

/// BFS oracle: known nodes within `n` hops of `origin`, with distances.
fn oracle(g: &Topology, known: &KnownLocations, origin: NodeId, n: u32) -> BTreeMap<NodeId, u32> {
    g.hop_distances(origin)
        .into_iter()
        .filter(|&(node, d)| node != origin && d <= n && known.contains_key(&node))
        .collect()
}

#[test]
fn passive_replies_match_bfs_oracle() {
    let mut rng = common::rng(31);
    for _ in 0..100 {
        let g = common::connected_graph(&mut rng, 25, 0.06);
        let known = configure(&mut rng, &g, 0.25);
        for n in 1..=3 {
            for origin in g.nodes() {
                let q = passive_query(origin, n, &g, &known);
                let got: BTreeMap<NodeId, u32> = q.replies.iter().map(|r| (r.replier, r.hop_distance)).collect();
                assert_eq!(got, oracle(&g, &known, origin, n));
                for r in &q.replies {
                    assert_eq!(r.coordinates, known[&r.replier].coordinates);
                }
                assert!(q.trace.iter().all(|h| h.hops <= n), "query escaped its TTL");
            }
        }
    }
}

#[test]
fn churn_caches_agree_with_passive_queries() {
    let mut rng = common::rng(32);
    let mut g = common::connected_graph(&mut rng, 20, 0.08);
    let mut known = configure(&mut rng, &g, 0.3);
    let mut caches = LocationCaches::new();
    let n_hops = 3;
    caches.on_topology_change(&g, &known, n_hops);
    let mut next_id = 100u16;
    for _ in 0..50 {
        let nodes: Vec<NodeId> = g.nodes().collect();
        if rng.random_bool(0.5) || nodes.len() < 5 {
            let new = NodeId::host(next_id);
            next_id += 1;
            g.add_node(new);
            let k = rng.random_range(1..=3);
            for &peer in nodes.choose_multiple(&mut rng, k) {
                g.add_edge(new, peer);
            }
            if rng.random_bool(0.2) {
                known.insert(
                    new,
                    KnownLocation {
                        node: new,
                        coordinates: Coordinates::new(rng.random_range(0.0..100.0), 0.0),
                        label: String::new(),
                    },
                );
            }
        } else {
            let gone = *nodes.choose(&mut rng).unwrap();
            g.remove_node(gone);
        }
        let push = caches.on_topology_change(&g, &known, n_hops);
        assert!(push.trace.iter().all(|h| h.hops <= n_hops), "push escaped its TTL");
    }
    for node in g.nodes() {
        let passive = passive_query(node, n_hops, &g, &known).replies;
        assert_eq!(caches.cached(node), passive, "cache of {node} disagrees");
        assert_eq!(caches.estimate(node), estimate_position(&passive));
    }
}

#[test]
fn phone_one_hop_from_router_learns_its_location() {
    let router = NodeId::host(1);
    let phone = NodeId::host(2);
    let far = NodeId::host(4);
    let known = KnownLocations::from([(
        router,
        KnownLocation {
            node: router,
            coordinates: Coordinates::new(3.0, 4.0),
            label: "Building A, floor 2".into(),
        },
    )]);
    let mut caches = LocationCaches::new();
    let mut g = Topology::new();
    g.add_node(router);
    caches.on_topology_change(&g, &known, 2);
    g.add_edge(router, phone);
    caches.on_topology_change(&g, &known, 2);
    assert_eq!(caches.cached(phone).len(), 1);
    g.add_edge(phone, NodeId::host(3));
    g.add_edge(NodeId::host(3), far);
    caches.on_topology_change(&g, &known, 2);
    assert!(caches.cached(far).is_empty());
}

fn reply() -> impl Strategy<Value = LocationReply> {
    (1u16..30, -100.0f64..100.0, -100.0f64..100.0, 1u32..4).prop_map(|(id, x, y, h)| LocationReply {
        replier: NodeId::host(id),
        coordinates: Coordinates::new(x, y),
        hop_distance: h,
    })
}

proptest! {
    #[test]
    fn estimate_is_permutation_invariant(
        replies in proptest::collection::btree_map(1u16..30, reply(), 0..10),
        seed in any::<u64>(),
    ) {
        // One reply per replier, as a real query produces.
        let mut replies: Vec<LocationReply> = replies
            .into_iter()
            .map(|(id, r)| LocationReply { replier: NodeId::host(id), ..r })
            .collect();
        let before = estimate_position(&replies);
        replies.shuffle(&mut common::rng(seed));
        prop_assert_eq!(estimate_position(&replies), before);
    }
}
