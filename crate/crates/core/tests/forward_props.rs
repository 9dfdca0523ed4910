mod common;

use std::collections::{BTreeMap, HashMap};

use lifeline_core::codec::encoded_len;
use lifeline_core::forward::{
    BankEvent, EnqueueOutcome, ForwardEngine, ForwardOutcome, PriorityQueueBank, ReceiveOutcome,
    DEFAULT_RAM_BUDGET,
};
use lifeline_core::olsr::{LockstepNetwork, OlsrConfig};
use lifeline_core::{encode_message, EmergencyMessage, MessageId, NodeId, Payload, Percent, Priority, Topology};
use proptest::prelude::*;
use rand::Rng;

fn msg(src: u16, counter: u32, priority: u8, dst: NodeId, len: usize) -> EmergencyMessage {
    EmergencyMessage::new(
        MessageId::compose(NodeId::host(src), counter),
        NodeId::host(src),
        dst,
        Priority::new(priority).unwrap(),
        Payload::new(vec![b'x'; len]).unwrap(),
        Percent::ZERO,
        0,
    )
}

#[derive(Debug, Clone)]
enum Op {
    Enqueue(u8, usize),
    Dequeue,
    Promote,
    SwapIn,
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        4 => (0u8..5, 1usize..=255).prop_map(|(p, l)| Op::Enqueue(p, l)),
        2 => Just(Op::Dequeue),
        1 => Just(Op::Promote),
        1 => Just(Op::SwapIn),
    ]
}

/// Checks the recorded trace: strict priority at every dequeue, swap-in only
/// with queues 0 and 1 empty, and only priority 3–4 swapped out.
fn check_trace(trace: &[BankEvent]) -> Result<(), TestCaseError> {
    for ev in trace {
        match ev {
            BankEvent::Dequeued { level, lengths_before, .. } => {
                prop_assert!(lengths_before[..*level].iter().all(|&l| l == 0));
                prop_assert!(lengths_before[*level] > 0);
            }
            BankEvent::SwapIn { lengths_before, .. } => {
                prop_assert_eq!(lengths_before[0], 0);
                prop_assert_eq!(lengths_before[1], 0);
            }
            BankEvent::SwappedOut { priority, .. } => prop_assert!(priority.level() >= 3),
            _ => {}
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn bank_invariants_hold(ops in proptest::collection::vec(op(), 1..300), budget_msgs in 1usize..40) {
        let budget = budget_msgs * 300;
        let mut bank = PriorityQueueBank::new(budget);
        bank.enable_trace();
        let mut held: BTreeMap<MessageId, ()> = BTreeMap::new();
        let mut counter = 0;
        for op in ops {
            match op {
                Op::Enqueue(p, len) => {
                    let m = msg(1, counter, p, NodeId::host(9), len);
                    counter += 1;
                    match bank.enqueue(m.clone()) {
                        EnqueueOutcome::Queued { .. } => { held.insert(m.msg_id, ()); }
                        EnqueueOutcome::Dropped(_) => {
                            // Only dropped when urgent bytes alone overflow.
                            let urgent: usize = (0..3).flat_map(|l| bank.queue(l).map(encoded_len).collect::<Vec<_>>()).sum();
                            prop_assert!(p < 3 && urgent + encoded_len(&m) > budget);
                        }
                    }
                }
                Op::Dequeue => {
                    if let Some((m, _)) = bank.dequeue_next() {
                        prop_assert!(held.remove(&m.msg_id).is_some());
                    }
                }
                Op::Promote => bank.promote_queues(),
                Op::SwapIn => { bank.swap_in(); }
            }
            prop_assert!(bank.ram_used() <= budget);
            let ram: usize = (0..5).flat_map(|l| bank.queue(l).map(encoded_len).collect::<Vec<_>>()).sum();
            prop_assert_eq!(ram, bank.ram_used());
            for l in 0..5 {
                prop_assert!(bank.queue(l).all(|m| m.priority.index() == l));
            }
            prop_assert!(bank.swapped().all(|m| m.priority.level() >= 3));
            let mut now: Vec<MessageId> = bank.held_ids().collect();
            now.sort();
            prop_assert_eq!(now, held.keys().copied().collect::<Vec<_>>());
        }
        check_trace(&bank.take_trace())?;
    }

    #[test]
    fn drain_between_promotions_is_sorted(prios in proptest::collection::vec(0u8..5, 1..200)) {
        let mut bank = PriorityQueueBank::new(DEFAULT_RAM_BUDGET);
        for (i, p) in prios.iter().enumerate() {
            bank.enqueue(msg(1, i as u32, *p, NodeId::host(9), 16));
        }
        let mut out = Vec::new();
        while let Some((m, _)) = bank.dequeue_next() {
            out.push(m.priority.level());
        }
        prop_assert!(out.windows(2).all(|w| w[0] <= w[1]));
        let mut sorted = prios.clone();
        sorted.sort();
        prop_assert_eq!(out, sorted);
    }
}

#[test]
fn uniform_fill_swaps_only_low_priorities() {
    let mut rng = common::rng(11);
    let one = encoded_len(&msg(1, 0, 0, NodeId::host(9), 100));
    let mut bank = PriorityQueueBank::new(100 * one);
    let mut dropped = 0;
    for i in 0..500 {
        let p = rng.random_range(0..5u8);
        if let EnqueueOutcome::Dropped(_) = bank.enqueue(msg(1, i, p, NodeId::host(9), 100)) {
            dropped += 1;
        }
    }
    assert!(bank.swap_depth() > 0);
    assert!(bank.swapped().all(|m| m.priority.level() >= 3));
    assert_eq!(bank.queued() + bank.swap_depth() + dropped, 500);
}

#[test]
fn swap_churn_conserves_multiset() {
    let mut rng = common::rng(12);
    let one = encoded_len(&msg(1, 0, 0, NodeId::host(9), 64));
    let mut bank = PriorityQueueBank::new(50 * one);
    bank.enable_trace();
    let mut accepted = HashMap::new();
    let mut out = Vec::new();
    let mut dropped = Vec::new();
    for i in 0..10_000u32 {
        let m = msg(1, i, rng.random_range(0..5u8), NodeId::host(9), 64);
        match bank.enqueue(m.clone()) {
            EnqueueOutcome::Queued { .. } => {}
            EnqueueOutcome::Dropped(_) => dropped.push(m.msg_id),
        }
        *accepted.entry(m.msg_id).or_insert(0) += 1;
        if rng.random_bool(0.45) {
            bank.swap_in();
            if let Some((m, level)) = bank.dequeue_next() {
                out.push(m.msg_id);
                if bank.queue_len(level) == 0 {
                    bank.promote_queues();
                }
            }
        }
    }
    loop {
        bank.swap_in();
        match bank.dequeue_next() {
            Some((m, _)) => out.push(m.msg_id),
            None if bank.swap_depth() == 0 => break,
            None => {}
        }
    }
    let mut seen = HashMap::new();
    for id in out.iter().chain(&dropped) {
        *seen.entry(*id).or_insert(0) += 1;
    }
    assert_eq!(seen, accepted);
    for ev in bank.take_trace() {
        if let BankEvent::SwappedOut { priority, .. } = ev {
            assert!(priority.level() >= 3);
        }
    }
}

#[test]
fn receive_counts_only_valid_messages() {
    let mut rng = common::rng(13);
    let mut engine = ForwardEngine::new(NodeId::host(1), usize::MAX);
    let mut accepted = 0;
    for i in 0..1000u32 {
        let m = msg(2, i, rng.random_range(0..5u8), NodeId::host(9), rng.random_range(1..=255));
        let mut junk = vec![0u8; rng.random_range(0..300)];
        rng.fill(&mut junk[..]);
        for bytes in [encode_message(&m), junk] {
            if let ReceiveOutcome::Accepted { .. } = engine.receive(&bytes) {
                accepted += 1;
            }
        }
    }
    assert_eq!(accepted, 1000);
    assert_eq!(engine.bank().queued(), 1000);
    assert_eq!(engine.counters().ignored, 1000);
}

#[test]
fn line_to_station_delivers_with_bfs_hop_counts() {
    let r = NodeId::host;
    let station = NodeId::station(0);
    let g = Topology::from_edges([(r(1), r(2)), (r(2), r(3)), (r(3), station)]);
    let mut net = LockstepNetwork::new(&g, OlsrConfig::default());
    net.converge();
    let mut engines: BTreeMap<NodeId, ForwardEngine> =
        g.nodes().map(|n| (n, ForwardEngine::new(n, DEFAULT_RAM_BUDGET))).collect();
    let mut rng = common::rng(14);
    for i in 0..1000 {
        let origin = r(rng.random_range(1..=3));
        let m = msg(origin.0 as u16 & 0xFF, i, rng.random_range(0..5u8), station, 32);
        let m = EmergencyMessage { src: origin, ..m };
        engines.get_mut(&origin).unwrap().accept(m);
    }
    let dist = g.hop_distances(station);
    let mut delivered = 0;
    let mut now = 0;
    while engines.values().any(|e| !e.bank().is_empty()) {
        now += 1;
        let nodes: Vec<NodeId> = engines.keys().copied().collect();
        for n in nodes {
            let routes = net.node_mut(n).routing_table().clone();
            let outcomes = engines.get_mut(&n).unwrap().forward_tick(&routes, now);
            for o in outcomes {
                match o {
                    ForwardOutcome::Delivered { next_hop, message } if next_hop == n => {
                        assert_eq!(n, station);
                        assert_eq!(message.hop_count, dist[&message.src]);
                        delivered += 1;
                    }
                    ForwardOutcome::Delivered { next_hop, message } => {
                        engines.get_mut(&next_hop).unwrap().accept(message);
                    }
                    other => panic!("unexpected {other:?}"),
                }
            }
        }
    }
    assert_eq!(delivered, 1000);
    assert!(engines.values().all(ForwardEngine::is_conserved));
}
