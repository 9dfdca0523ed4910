#![allow(dead_code)]

use lifeline_core::{NodeId, Topology};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Connected random graph: a random spanning tree plus extra edges with
/// probability `p`.
pub fn connected_graph(rng: &mut impl Rng, n: u16, p: f64) -> Topology {
    let mut g = Topology::new();
    g.add_node(NodeId::host(1));
    for i in 2..=n {
        let parent = rng.random_range(1..i);
        g.add_edge(NodeId::host(i), NodeId::host(parent));
    }
    for a in 1..=n {
        for b in a + 1..=n {
            if rng.random_bool(p) {
                g.add_edge(NodeId::host(a), NodeId::host(b));
            }
        }
    }
    g
}

/// Unit-disk graph of `n` nodes scattered on a `side`×`side` square.
pub fn geometric_graph(rng: &mut impl Rng, n: u16, side: f64, range: f64) -> Topology {
    let pts: Vec<(f64, f64)> = (0..n)
        .map(|_| (rng.random_range(0.0..side), rng.random_range(0.0..side)))
        .collect();
    let mut g = Topology::new();
    for i in 0..n as usize {
        g.add_node(NodeId::host(i as u16 + 1));
        for j in 0..i {
            let d = (pts[i].0 - pts[j].0).hypot(pts[i].1 - pts[j].1);
            if d <= range {
                g.add_edge(NodeId::host(i as u16 + 1), NodeId::host(j as u16 + 1));
            }
        }
    }
    g
}
