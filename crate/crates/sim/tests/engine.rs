mod common;

use lifeline_core::NodeId;
use lifeline_sim::scenario::{Action, LinkModel, LinkSpec, NodeKind, NodeSpec, ScriptedEvent};
use lifeline_sim::setups::{build_setup, router, SetupId};
use lifeline_sim::{run, Scenario, Simulation, StopReason};
use proptest::prelude::*;

#[test]
fn two_idle_nodes_converge_and_deliver_nothing() {
    let (a, b) = (router(1), router(2));
    let mut s = Scenario::new("pair", 60_000);
    s.nodes = vec![NodeSpec::new(a, NodeKind::Router), NodeSpec::new(b, NodeKind::Router)];
    s.links.push(LinkSpec {
        a,
        b,
        model: LinkModel::SHORT,
    });
    let mut sim = Simulation::new(&s, 3).unwrap();
    assert_eq!(sim.run(), StopReason::Duration);
    assert_eq!(sim.routes(a).get(&b).map(|r| (r.next_hop, r.hops)), Some((b, 1)));
    assert_eq!(sim.routes(b).get(&a).map(|r| (r.next_hop, r.hops)), Some((a, 1)));
    let m = sim.finish();
    assert_eq!(m.counters.created, 0);
    assert_eq!(m.counters.delivered, 0);
    assert_eq!(m.end_time_ms, 60_000);
}

#[test]
fn crashed_router_recovers_backed_up_messages() {
    let mut s = build_setup(SetupId::F, 400, None);
    // Crash the second router while traffic is flowing through it.
    s.events = vec![
        ScriptedEvent {
            at_ms: 21_000,
            node: router(2),
            action: Action::Crash,
        },
        ScriptedEvent {
            at_ms: 24_000,
            node: router(2),
            action: Action::Restart,
        },
    ];
    let m = run(&s, 5).unwrap();
    let c = &m.counters;
    assert!(c.conservation_ok, "{c:?}");
    assert_eq!(c.delivered, 400, "{c:?}");
    assert_eq!(c.dropped_node_loss, 0);
    assert_eq!(c.duplicate_deliveries, 0);
    assert!(m.node(router(2)).unwrap().forward.accepted > 0);
}

#[test]
fn crash_without_backup_loses_held_messages() {
    let mut s = build_setup(SetupId::B, 400, None);
    // A slow hop makes messages pile up at router 2 before the crash.
    s.links[1].model.latency_ms = 40.0;
    s.policies.processing.router_ms = 20;
    s.events = vec![ScriptedEvent {
        at_ms: 22_000,
        node: router(2),
        action: Action::Crash,
    }];
    let m = run(&s, 5).unwrap();
    assert!(m.counters.conservation_ok);
    assert!(m.counters.dropped_node_loss > 0, "{:?}", m.counters);
    assert!(m.counters.delivered < 400);
}

#[test]
fn unreachable_destination_keeps_messages_queued() {
    let mut s = build_setup(SetupId::B, 50, None);
    s.nodes.push(NodeSpec::new(NodeId::host(9), NodeKind::Router));
    s.traffic[0].destination = NodeId::host(9);
    s.stop.when_drained = false;
    s.duration_ms = 60_000;
    let m = run(&s, 1).unwrap();
    assert_eq!(m.counters.delivered, 0);
    assert_eq!(m.counters.queued + m.counters.swapped, 50);
    assert!(m.counters.unreachable > 0);
    assert!(m.counters.conservation_ok);
}

#[test]
fn seeds_change_the_run() {
    let s = build_setup(SetupId::D, 500, None);
    let a = run(&s, 1).unwrap();
    let b = run(&s, 2).unwrap();
    assert_ne!(a.latency.overall.mean_ms, b.latency.overall.mean_ms);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_message_has_exactly_one_fate(seed in any::<u64>()) {
        let s = common::random_scenario(seed);
        let m = run(&s, seed).unwrap();
        let c = &m.counters;
        prop_assert!(c.conservation_ok, "{:?}", c);
        prop_assert_eq!(c.created, c.delivered + c.queued + c.swapped + c.in_flight + c.parked + c.dropped);
        for n in &m.nodes {
            prop_assert!(n.forward_conserved, "{}", n.id);
            prop_assert!(n.battery_percent.is_none_or(|b| (0.0..=100.0).contains(&b)));
        }
        if m.stop_reason == StopReason::Drained {
            prop_assert_eq!(c.queued + c.swapped + c.in_flight, 0);
        }
    }

    #[test]
    fn runs_are_reproducible(seed in any::<u64>()) {
        let s = common::random_scenario(seed);
        prop_assert_eq!(run(&s, seed).unwrap(), run(&s, seed).unwrap());
    }
}
