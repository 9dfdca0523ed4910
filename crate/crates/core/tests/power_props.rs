mod common;

use std::collections::BTreeSet;

use lifeline_core::backup::BackupStore;
use lifeline_core::forward::{ForwardEngine, DEFAULT_RAM_BUDGET};
use lifeline_core::olsr::{Route, RoutingTable};
use lifeline_core::power::{
    calibrate, classify_roles, low_battery_handoff, Activity, Battery, DutyConfig, EnergyModel, HandoffAction,
    HandoffConfig, Observation, Profile, Role,
};
use lifeline_core::{EmergencyMessage, MessageId, NodeId, Payload, Percent, Priority};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn ramp_monte_carlo() {
    let cfg = HandoffConfig::default();
    let mut rng = common::rng(41);
    for (battery, expected) in [(6.0, 0.5), (4.0, 0.25), (9.0, 0.875)] {
        assert_eq!(cfg.acceptance_probability(battery), expected);
        let n = 10_000;
        let accepted = (0..n).filter(|_| cfg.accept_incoming(battery, &mut rng)).count();
        let rate = accepted as f64 / n as f64;
        // 99.9% normal-approximation interval.
        let half = 3.29 * (expected * (1.0 - expected) / n as f64).sqrt();
        assert!((rate - expected).abs() <= half, "battery {battery}%: rate {rate}");
    }
    assert_eq!((0..1000).filter(|_| cfg.accept_incoming(1.5, &mut rng)).count(), 0);
    assert_eq!((0..1000).filter(|_| cfg.accept_incoming(50.0, &mut rng)).count(), 1000);
}

#[test]
fn calibrated_predictions_track_measurements() {
    let obs = [
        Observation {
            profile: Profile::IDLE,
            lifetime_h: Some(15.0),
        },
        Observation {
            profile: Profile::SCREEN,
            lifetime_h: Some(7.0),
        },
        Observation {
            profile: Profile::forwarding(10.0),
            lifetime_h: Some(7.0),
        },
    ];
    let m = calibrate(&obs).unwrap();
    // Closed form for the fitted model.
    let idle = 1.0 / 15.0;
    let e = (1.0 / 7.0 - 1.0 / 15.0) / 360.0;
    for (interval, measured) in [(60.0, 11.0), (300.0, 13.0)] {
        let predicted = m.lifetime_hours(&Profile::forwarding(interval), 1.0);
        let closed = 1.0 / (idle + 3600.0 / interval * e);
        assert!((predicted - closed).abs() < 1e-9);
        assert!((predicted - measured).abs() / measured <= 0.15, "{interval}s: {predicted}h");
    }
}

#[test]
fn inner_nodes_always_have_a_boundary_neighbor() {
    let mut rng = common::rng(42);
    for _ in 0..200 {
        let p = rng.random_range(0.0..0.25);
        let mut g = common::connected_graph(&mut rng, 20, p);
        let station = NodeId::station(0);
        let anchor = NodeId::host(rng.random_range(1..=20));
        g.add_edge(station, anchor);
        let roles = classify_roles(&g, &BTreeSet::from([station]), DutyConfig::default());
        for (n, r) in &roles {
            match r.role {
                Role::Boundary => assert_eq!(r.duty_cycle, 1.0),
                Role::Inner => {
                    assert!(r.duty_cycle < 1.0);
                    assert!(g.neighbors(*n).any(|m| roles[&m].role == Role::Boundary), "{n} isolated among inner nodes");
                }
            }
        }
    }
}

fn activity() -> impl Strategy<Value = (Activity, f64)> {
    (0usize..5, 0.0f64..3.0).prop_map(|(i, a)| (Activity::ALL[i], a))
}

proptest! {
    #[test]
    fn energy_ledger_is_exact(steps in proptest::collection::vec(activity(), 1..200), charges in 0.01f64..2.0) {
        let model = EnergyModel { energy_per_control: 1e-5, ..EnergyModel::default() };
        let mut b = Battery::new(model, charges);
        for (a, amount) in steps {
            let before = b.level();
            match b.drain(a, amount) {
                Ok(taken) => prop_assert_eq!(before - b.level(), taken),
                Err(_) => prop_assert!(b.is_dead()),
            }
            prop_assert!(b.level() <= before);
            prop_assert_eq!(b.drained(), b.capacity() - b.level());
        }
    }

    #[test]
    fn handoff_conserves_messages(prios in proptest::collection::vec(0u8..5, 0..60), has_route in any::<bool>(), store_slots in 0usize..80) {
        let me = NodeId::host(2);
        let mut engine = ForwardEngine::new(me, DEFAULT_RAM_BUDGET);
        for (i, p) in prios.iter().enumerate() {
            engine.accept(EmergencyMessage::new(
                MessageId::compose(me, i as u32),
                me,
                NodeId::station(0),
                Priority::new(*p).unwrap(),
                Payload::new(vec![1; 20]).unwrap(),
                Percent::ZERO,
                0,
            ));
        }
        let held: BTreeSet<MessageId> = engine.bank().held_ids().collect();
        let mut routes = RoutingTable::new();
        if has_route {
            routes.insert(NodeId::station(0), Route { next_hop: NodeId::host(1), hops: 2 });
        }
        let mut store = BackupStore::new(store_slots * 400);
        let report = low_battery_handoff(&mut engine, &routes, &mut store);
        let out: BTreeSet<MessageId> = report.actions.iter().map(|a| match a {
            HandoffAction::Flush { message, .. } | HandoffAction::Persist { message } | HandoffAction::Lost { message } => message.msg_id,
        }).collect();
        prop_assert_eq!(out.len(), report.actions.len());
        prop_assert_eq!(out, held);
        prop_assert_eq!(report.no_neighbor, !has_route);
        let persisted = report.count(|a| matches!(a, HandoffAction::Persist { .. }));
        prop_assert_eq!(persisted, store.len());
        prop_assert!(engine.bank().is_empty());
    }
}
