#![allow(dead_code)]

use lifeline_core::backup::BackupOption;
use lifeline_core::boot::DrainConfig;
use lifeline_core::power::{DutyConfig, HandoffConfig};
use lifeline_core::NodeId;
use lifeline_sim::scenario::{
    Action, BatteryProfile, BootPolicy, LinkModel, LinkSpec, LocationSpec, NodeKind, NodeSpec, PackSpec,
    PrioritySpec, ScriptedEvent, SizeSpec, TrafficSpec,
};
use lifeline_sim::Scenario;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A small random but valid scenario exercising most policies: crashes,
/// link flaps, low batteries, backup, duty cycling and self-boot.
pub fn random_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = Scenario::new(format!("random-{seed}"), rng.random_range(20_000..90_000));
    s.seed = seed;
    let n = rng.random_range(2..=8u16);
    let mut ids = Vec::new();
    for i in 1..=n {
        let kind = *[NodeKind::Phone, NodeKind::Router, NodeKind::Laptop].choose(&mut rng).unwrap();
        let mut spec = NodeSpec::new(NodeId::host(i), kind);
        if kind != NodeKind::Laptop && rng.random_bool(0.3) {
            spec.battery = Some(BatteryProfile::Pack(PackSpec {
                charges: rng.random_range(0.5..10.0),
                level_percent: rng.random_range(0.01..30.0),
                screen_on: rng.random_bool(0.5),
            }));
        }
        if rng.random_bool(0.3) {
            spec.location = Some(LocationSpec {
                x: rng.random_range(0.0..100.0),
                y: rng.random_range(0.0..100.0),
                label: format!("spot {i}"),
            });
        }
        if rng.random_bool(0.3) {
            spec.scan_offset_ms = Some(rng.random_range(0..5_000));
        }
        s.nodes.push(spec);
        ids.push(NodeId::host(i));
    }
    if rng.random_bool(0.5) {
        let mut st = NodeSpec::new(NodeId::station(1), NodeKind::Station);
        st.location = Some(LocationSpec {
            x: 0.0,
            y: 0.0,
            label: "station".into(),
        });
        s.nodes.push(st);
        ids.push(NodeId::station(1));
    }
    let model = |rng: &mut ChaCha8Rng| LinkModel {
        latency_ms: rng.random_range(0.5..20.0),
        jitter: rng.random_range(0.0..0.3),
        p_send_error: rng.random_range(0.0..0.1),
        p_recv_error: rng.random_range(0.0..0.1),
        distance_m: rng.random_range(1.0..80.0),
    };
    for i in 1..ids.len() {
        let parent = ids[rng.random_range(0..i)];
        let m = model(&mut rng);
        s.links.push(LinkSpec {
            a: ids[i],
            b: parent,
            model: m,
        });
    }
    for a in 0..ids.len() {
        for b in a + 1..ids.len() {
            let exists = s.links.iter().any(|l| (l.a, l.b) == (ids[a], ids[b]) || (l.a, l.b) == (ids[b], ids[a]));
            if !exists && rng.random_bool(0.2) {
                let m = model(&mut rng);
                s.links.push(LinkSpec {
                    a: ids[a],
                    b: ids[b],
                    model: m,
                });
            }
        }
    }
    for _ in 0..rng.random_range(1..=3) {
        let lo = rng.random_range(1..=255);
        s.traffic.push(TrafficSpec {
            source: *ids.choose(&mut rng).unwrap(),
            destination: *ids.choose(&mut rng).unwrap(),
            count: rng.random_range(0..80),
            size: SizeSpec::Uniform(lo, rng.random_range(lo..=255)),
            priority: *[PrioritySpec::Uniform, PrioritySpec::Fixed(rng.random_range(0..5)), PrioritySpec::Mixed {
                priority0_share: 0.3,
            }]
            .choose(&mut rng)
            .unwrap(),
            interval_ms: rng.random_range(1..300),
            start_ms: rng.random_range(0..10_000),
        });
    }
    let p = &mut s.policies;
    let enabled: Vec<u8> = (1..=6).filter(|_| rng.random_bool(0.3)).collect();
    p.backup = enabled
        .into_iter()
        .map(|o| {
            let t = match o {
                1 | 2 => None,
                3 => Some(rng.random_range(1..=100)),
                4 => Some(rng.random_range(0..=4)),
                _ => Some(rng.random_range(1..100)),
            };
            BackupOption::new(o, t).unwrap()
        })
        .collect();
    p.backup_capacity = rng.random_range(1_000..100_000);
    p.ram_budget = rng.random_range(600..16_000);
    p.handoff = rng.random_bool(0.7).then(HandoffConfig::default);
    p.duty_cycle = rng.random_bool(0.3).then(|| DutyConfig {
        duty_cycle: rng.random_range(0.2..1.0),
        period_ms: rng.random_range(1_000..6_000),
    });
    if rng.random_bool(0.3) {
        p.boot = Some(BootPolicy {
            drain: rng.random_bool(0.5).then(DrainConfig::default),
            scan_interval_ms: rng.random_range(1_000..20_000),
            ..BootPolicy::default()
        });
    }
    p.energy.energy_per_control = if rng.random_bool(0.3) { 1e-4 } else { 0.0 };
    for _ in 0..rng.random_range(0..6) {
        let node = *ids.choose(&mut rng).unwrap();
        let at_ms = rng.random_range(0..s.duration_ms);
        let action = match rng.random_range(0..4) {
            0 => Action::Crash,
            1 => Action::Restart,
            2 => {
                if rng.random_bool(0.5) {
                    Action::MainsLost
                } else {
                    Action::MainsRestored
                }
            }
            _ => {
                let l = s.links.choose(&mut rng).unwrap();
                let (a, b) = (l.a, l.b);
                s.events.push(ScriptedEvent {
                    at_ms,
                    node: a,
                    action: if rng.random_bool(0.5) { Action::LinkDown(b) } else { Action::LinkUp(b) },
                });
                continue;
            }
        };
        s.events.push(ScriptedEvent { at_ms, node, action });
    }
    s.stop.when_drained = rng.random_bool(0.5);
    s.snapshot_interval_ms = rng.random_range(1_000..20_000);
    s.validate().expect("generator builds valid scenarios");
    s
}
