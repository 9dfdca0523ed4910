//! Built-in scenarios: the seven measurement set-ups, the battery lifetime
//! rig, the boot trace, the duty-cycle grid and a queue stress run.

use std::fmt;
use std::str::FromStr;

use lifeline_core::backup::BackupOption;
use lifeline_core::power::{DutyConfig, EnergyModel};
use lifeline_core::{Millis, NodeId};

use crate::scenario::{
    Action, BatteryProfile, BootPolicy, DeathWatch, LinkModel, LinkSpec, NodeKind, NodeSpec, PackSpec, PrioritySpec,
    Scenario, ScriptedEvent, SizeSpec, TrafficSpec,
};

/// Traffic waits this long so OLSR has converged before the first message.
pub const WARM_UP_MS: Millis = 20_000;

pub const SETUP_INTERVAL_MS: Millis = 10;

pub const SETUP_MESSAGE_SIZE: usize = 255;

pub fn router(i: u16) -> NodeId {
    NodeId::host(i)
}

pub fn phone(i: u16) -> NodeId {
    NodeId::host(100 + i)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, clap::ValueEnum)]
pub enum SetupId {
    /// One router sending to itself.
    A,
    /// Four routers in a line, short links.
    B,
    /// Phone, four routers, phone; short links.
    C,
    /// As C with long, lossy links.
    D,
    /// A with backup enabled.
    E,
    /// B with backup enabled.
    F,
    /// C with backup enabled.
    G,
}

impl SetupId {
    pub const ALL: [SetupId; 7] = [SetupId::A, SetupId::B, SetupId::C, SetupId::D, SetupId::E, SetupId::F, SetupId::G];

    pub fn letter(self) -> char {
        match self {
            SetupId::A => 'A',
            SetupId::B => 'B',
            SetupId::C => 'C',
            SetupId::D => 'D',
            SetupId::E => 'E',
            SetupId::F => 'F',
            SetupId::G => 'G',
        }
    }

    pub fn has_backup(self) -> bool {
        matches!(self, SetupId::E | SetupId::F | SetupId::G)
    }
}

impl fmt::Display for SetupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.letter())
    }
}

fn chain(s: &mut Scenario, ids: &[NodeId], model: LinkModel) {
    for w in ids.windows(2) {
        s.links.push(LinkSpec {
            a: w[0],
            b: w[1],
            model,
        });
    }
}

/// Set-up `id` carrying `messages` constant-size messages, one every 10 ms.
/// E to G default to backing up everything (option 1).
pub fn build_setup(id: SetupId, messages: u32, backup: Option<BackupOption>) -> Scenario {
    let routers: Vec<NodeId> = (1..=4).map(router).collect();
    let mut s = Scenario::new(format!("setup-{id}"), 0);
    let (path, model): (Vec<NodeId>, LinkModel) = match id {
        SetupId::A | SetupId::E => (vec![router(1)], LinkModel::SHORT),
        SetupId::B | SetupId::F => (routers.clone(), LinkModel::SHORT),
        SetupId::C | SetupId::G => {
            let mut p = vec![phone(1)];
            p.extend(&routers);
            p.push(phone(2));
            (p, LinkModel::SHORT)
        }
        SetupId::D => {
            let mut p = vec![phone(1)];
            p.extend(&routers);
            p.push(phone(2));
            (p, LinkModel::LONG)
        }
    };
    for &n in &path {
        let kind = if n.0 >= phone(0).0 { NodeKind::Phone } else { NodeKind::Router };
        s.nodes.push(NodeSpec::new(n, kind));
    }
    chain(&mut s, &path, model);
    let (src, dst) = (path[0], *path.last().expect("non-empty"));
    s.traffic.push(TrafficSpec {
        source: src,
        destination: dst,
        count: messages,
        size: SizeSpec::Constant(SETUP_MESSAGE_SIZE),
        priority: if id.has_backup() {
            PrioritySpec::Mixed { priority0_share: 0.2 }
        } else {
            PrioritySpec::Uniform
        },
        interval_ms: SETUP_INTERVAL_MS,
        start_ms: WARM_UP_MS,
    });
    if id.has_backup() {
        s.policies.backup = vec![backup.unwrap_or_else(|| BackupOption::new(1, None).expect("valid option"))];
    }
    s.duration_ms = WARM_UP_MS + u64::from(messages) * SETUP_INTERVAL_MS + 600_000;
    s.stop.when_drained = true;
    s
}

/// Usage patterns of the battery rig.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Usage {
    Idle,
    Screen,
    /// One forwarded message every this many seconds.
    Every(u64),
}

impl FromStr for Usage {
    type Err = String;
    fn from_str(s: &str) -> Result<Usage, String> {
        match s {
            "idle" => Ok(Usage::Idle),
            "screen" => Ok(Usage::Screen),
            _ => s
                .strip_suffix('s')
                .and_then(|n| n.parse::<u64>().ok())
                .filter(|n| *n > 0)
                .map(Usage::Every)
                .ok_or_else(|| format!("expected idle, screen or <seconds>s, got {s:?}")),
        }
    }
}

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Usage::Idle => f.write_str("idle"),
            Usage::Screen => f.write_str("screen"),
            Usage::Every(n) => write!(f, "{n}s"),
        }
    }
}

pub const LAPTOP: NodeId = NodeId::host(201);

/// Laptop, two relaying phones and a station in a line. The run ends when
/// the first phone dies. Low-battery handoff is off so the phones keep
/// forwarding at a constant rate until empty.
pub fn battery_scenario(usage: Usage, energy: EnergyModel) -> Scenario {
    let mut s = Scenario::new(format!("battery-{usage}"), 48 * 3_600_000);
    let station = NodeId::station(1);
    let pack = PackSpec {
        charges: 1.0,
        level_percent: 100.0,
        screen_on: usage == Usage::Screen,
    };
    s.nodes.push(NodeSpec::new(LAPTOP, NodeKind::Laptop));
    for i in 1..=2 {
        let mut n = NodeSpec::new(phone(i), NodeKind::Phone);
        n.battery = Some(BatteryProfile::Pack(pack));
        s.nodes.push(n);
    }
    s.nodes.push(NodeSpec::new(station, NodeKind::Station));
    chain(&mut s, &[LAPTOP, phone(1), phone(2), station], LinkModel::SHORT);
    if let Usage::Every(secs) = usage {
        let interval_ms = secs * 1000;
        s.traffic.push(TrafficSpec {
            source: LAPTOP,
            destination: station,
            count: (s.duration_ms / interval_ms) as u32,
            size: SizeSpec::Constant(64),
            priority: PrioritySpec::Fixed(2),
            interval_ms,
            start_ms: WARM_UP_MS,
        });
    }
    s.policies.energy = energy;
    s.policies.handoff = None;
    s.snapshot_interval_ms = 600_000;
    s.stop.on_first_death = Some(DeathWatch::Phone);
    s
}

/// The boot trace: a temporary station T, router 1 next to it, router 2
/// next to router 1, and router 3 either next to router 2 or out of range
/// of everyone. All routers sit on mains, so only scanning can wake them.
pub fn figure5_scenario(router3_in_range: bool) -> Scenario {
    let mut s = Scenario::new(if router3_in_range { "boot-trace-a" } else { "boot-trace-b" }, 300_000);
    let t = NodeId::station(1);
    s.nodes.push(NodeSpec::new(t, NodeKind::Station));
    for (i, offset) in [(1, 1_000), (2, 2_000), (3, 0)] {
        let mut n = NodeSpec::new(router(i), NodeKind::Router);
        n.scan_offset_ms = Some(offset);
        s.nodes.push(n);
    }
    chain(&mut s, &[t, router(1), router(2)], LinkModel::SHORT);
    if router3_in_range {
        chain(&mut s, &[router(2), router(3)], LinkModel::SHORT);
    }
    s.policies.boot = Some(BootPolicy {
        drain: None,
        ..BootPolicy::default()
    });
    s
}

/// Grid cell spacing of the duty-cycle scenario, in metres.
pub const GRID_SPACING_M: f64 = 3.0;

/// A `w` by `h` grid of phones with diagonal neighbours in radio range and
/// a station beside the corner (0, 0). A few far phones report to the
/// station during the first ten minutes; the run ends at the first
/// boundary-node death. `duty` turns the inner-node schedule on.
pub fn duty_grid_scenario(w: u16, h: u16, duty: Option<f64>) -> Scenario {
    let mut s = Scenario::new(
        match duty {
            Some(d) => format!("duty-grid-{d}"),
            None => "duty-grid-off".to_string(),
        },
        12 * 3_600_000,
    );
    let at = |x: u16, y: u16| phone(1 + y * w + x);
    let station = NodeId::station(1);
    s.nodes.push(NodeSpec::new(station, NodeKind::Station));
    let pack = PackSpec {
        charges: 1.0,
        level_percent: 100.0,
        screen_on: false,
    };
    for y in 0..h {
        for x in 0..w {
            let mut n = NodeSpec::new(at(x, y), NodeKind::Phone);
            n.battery = Some(BatteryProfile::Pack(pack));
            s.nodes.push(n);
        }
    }
    let link = |a, b, d: f64| LinkSpec {
        a,
        b,
        model: LinkModel::for_distance(d),
    };
    s.links.push(link(station, at(0, 0), GRID_SPACING_M));
    for y in 0..h {
        for x in 0..w {
            let here = at(x, y);
            if x + 1 < w {
                s.links.push(link(here, at(x + 1, y), GRID_SPACING_M));
            }
            if y + 1 < h {
                s.links.push(link(here, at(x, y + 1), GRID_SPACING_M));
            }
            if x + 1 < w && y + 1 < h {
                s.links.push(link(here, at(x + 1, y + 1), GRID_SPACING_M * 2f64.sqrt()));
            }
            if x > 0 && y + 1 < h {
                s.links.push(link(here, at(x - 1, y + 1), GRID_SPACING_M * 2f64.sqrt()));
            }
        }
    }
    let sources = [at(w - 1, h - 1), at(w - 1, 0), at(0, h - 1), at(w / 2, h / 2)];
    for src in sources {
        s.traffic.push(TrafficSpec {
            source: src,
            destination: station,
            count: 60,
            size: SizeSpec::Constant(128),
            priority: PrioritySpec::Fixed(1),
            interval_ms: 10_000,
            start_ms: WARM_UP_MS,
        });
    }
    s.policies.energy = EnergyModel {
        energy_per_control: 1.0 / 40_000.0,
        ..EnergyModel::default()
    };
    s.policies.duty_cycle = duty.map(|d| DutyConfig {
        duty_cycle: d,
        ..DutyConfig::default()
    });
    s.policies.handoff = None;
    s.snapshot_interval_ms = 600_000;
    s.stop.on_first_death = Some(DeathWatch::Boundary);
    s
}

/// Ten routers in a ring with chords, heavy randomized traffic into a small
/// RAM budget, lossy links and scripted link flaps. Queue tracing is on.
pub fn queue_stress_scenario(messages: u32) -> Scenario {
    let mut s = Scenario::new("queue-stress", 0);
    let n = 10u16;
    for i in 1..=n {
        s.nodes.push(NodeSpec::new(router(i), NodeKind::Router));
    }
    let lossy = LinkModel {
        p_send_error: 0.05,
        p_recv_error: 0.05,
        ..LinkModel::SHORT
    };
    for i in 1..=n {
        let next = i % n + 1;
        s.links.push(LinkSpec {
            a: router(i),
            b: router(next),
            model: lossy,
        });
    }
    for (a, b) in [(1, 6), (3, 8)] {
        s.links.push(LinkSpec {
            a: router(a),
            b: router(b),
            model: lossy,
        });
    }
    let flows = [(1, 5), (2, 7), (4, 9), (6, 10), (8, 3)];
    let per_flow = messages / flows.len() as u32;
    for (k, (a, b)) in flows.iter().enumerate() {
        let extra = u32::from(k == 0) * (messages - per_flow * flows.len() as u32);
        s.traffic.push(TrafficSpec {
            source: router(*a),
            destination: router(*b),
            count: per_flow + extra,
            size: SizeSpec::Uniform(1, 255),
            priority: PrioritySpec::Uniform,
            interval_ms: 2,
            start_ms: WARM_UP_MS,
        });
    }
    // Flap the ring links in turn: each goes down for 8 s, long enough for
    // routes to break and messages to pile up behind them.
    let mut t = WARM_UP_MS + 1_000;
    for round in 0..6u16 {
        let i = round % n + 1;
        let next = i % n + 1;
        s.events.push(ScriptedEvent {
            at_ms: t,
            node: router(i),
            action: Action::LinkDown(router(next)),
        });
        s.events.push(ScriptedEvent {
            at_ms: t + 8_000,
            node: router(i),
            action: Action::LinkUp(router(next)),
        });
        t += 4_000;
    }
    s.policies.ram_budget = 6 * 1024;
    s.policies.trace_queues = true;
    s.duration_ms = WARM_UP_MS + 600_000;
    s.stop.when_drained = true;
    s
}
