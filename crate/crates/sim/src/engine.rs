//! The discrete-event engine. Each node is an actor owning its OLSR state,
//! forward engine, backup store, battery and boot controllers; the only way
//! any of them advances is an event popped from one `(time, sequence)`
//! ordered queue.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::rc::Rc;

use lifeline_core::backup::{evaluate_policy, BackupAction, BackupStore, NodeCondition};
use lifeline_core::boot::{BootAction, BootDecision, DrainDetector, MainsMonitor, PeerObservation, PowerEvent, PowerSource, ScanController, Signature};
use lifeline_core::forward::{BankEvent, EnqueueOutcome, ForwardEngine, ForwardOutcome};
use lifeline_core::locate::{Coordinates, KnownLocation, KnownLocations, LocationCaches};
use lifeline_core::message::MessageIdGen;
use lifeline_core::olsr::{ControlKind, ControlPacket, RoutingTable, TopologyState};
use lifeline_core::power::{classify_roles, low_battery_handoff, next_hop_to_station, Activity, Battery, DutyConfig, HandoffAction, Role, RoleAssignment};
use lifeline_core::{
    classify_packet, decode_message, encode_message, EmergencyMessage, MessageId, Millis, NodeId, PacketKind, Payload,
    Percent, Priority, Topology,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::metrics::{
    BackupMetrics, BootRecord, Counters, LatencyReport, LatencyStats, LocatedDelivery, NodeMetrics, RunMetrics,
    SnapshotNode, StopReason, TopologySnapshot, METRICS_SCHEMA_VERSION,
};
use crate::scenario::{
    Action, BatteryProfile, DeathWatch, LinkModel, MalformedScenario, NodeKind, PrioritySpec, Scenario, SizeSpec,
};

/// What a node-level random stream is used for.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
enum Purpose {
    Jitter = 1,
    Errors = 2,
    Handoff = 3,
    Timers = 4,
    Traffic = 5,
}

/// Independent ChaCha8 stream `stream` under `seed`. Each node draws from
/// streams keyed by its own address, so adding a node leaves every other
/// node's draws unchanged.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn node_stream(id: NodeId, purpose: Purpose) -> u64 {
    (u64::from(id.0) << 8) | purpose as u64
}

fn traffic_stream(index: usize) -> u64 {
    (1 << 48) | ((index as u64) << 8) | Purpose::Traffic as u64
}

#[derive(Debug)]
enum Ev {
    Hello(NodeId),
    Tc(NodeId),
    Control { to: NodeId, from: NodeId, bytes: Rc<[u8]> },
    Frame { to: NodeId, from: NodeId, id: MessageId, bytes: Vec<u8> },
    /// The sender learns that a transmission did not arrive.
    AckTimeout { node: NodeId, message: EmergencyMessage },
    Tick(NodeId),
    Inject(usize),
    Script(usize),
    MainsDeadline(NodeId),
    BatterySample(NodeId),
    Scan(NodeId),
    Wake(NodeId),
    Sleep(NodeId),
    Death(NodeId),
    Snapshot,
}

struct Queued {
    time: Millis,
    seq: u64,
    ev: Ev,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    // Reversed: BinaryHeap is a max-heap and we want the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

struct Node {
    id: NodeId,
    kind: NodeKind,
    alive: bool,
    /// False between a crash and the matching restart.
    up: bool,
    emergency: bool,
    olsr: TopologyState,
    engine: ForwardEngine,
    store: BackupStore,
    battery: Option<Battery>,
    screen_on: bool,
    /// Routers on mains do not drain their backup battery.
    on_mains: bool,
    settled_at: Millis,
    death_at: Option<Millis>,
    role: RoleAssignment,
    role_label: Role,
    awake: bool,
    mains: Option<MainsMonitor>,
    drain: Option<DrainDetector>,
    scan: Option<ScanController>,
    tick_at: Option<Millis>,
    ids: MessageIdGen,
    rng_jitter: ChaCha8Rng,
    rng_errors: ChaCha8Rng,
    rng_handoff: ChaCha8Rng,
    after_forward: BTreeSet<MessageId>,
    /// Messages whose only copy is in this node's backup store.
    parked: BTreeSet<MessageId>,
    handed_off: bool,
    station_reachable: bool,
    processing: Millis,
    death_time: Option<Millis>,
    consumed: u64,
    transmissions: u64,
    control_sent: u64,
    control_received: u64,
}

impl Node {
    fn activity(&self) -> Activity {
        if !self.awake {
            Activity::SleepHour
        } else if self.screen_on {
            Activity::ScreenHour
        } else {
            Activity::IdleHour
        }
    }

    fn running(&self) -> bool {
        self.alive && self.up
    }

    fn battery_percent(&self) -> f64 {
        self.battery.as_ref().map_or(100.0, Battery::percent)
    }

    fn load(&self) -> Percent {
        let bank = self.engine.bank();
        Percent::from_fraction(bank.ram_used() as f64 / bank.ram_budget().max(1) as f64)
    }

    fn holds_anything(&self) -> bool {
        let bank = self.engine.bank();
        bank.queued() + bank.swap_depth() > 0
    }

    fn signature(&self) -> Signature {
        match self.kind {
            NodeKind::Station => Signature::TemporaryStation,
            NodeKind::Router => match &self.scan {
                Some(s) => s.signature(),
                None if self.emergency => Signature::EmergencyNode,
                None => Signature::None,
            },
            NodeKind::Phone | NodeKind::Laptop => Signature::EmergencyNode,
        }
    }
}

struct TrafficPlan {
    priorities: Vec<Priority>,
    sizes: Vec<usize>,
    next: usize,
}

fn plan_traffic(seed: u64, index: usize, count: u32, size: SizeSpec, priority: PrioritySpec) -> TrafficPlan {
    let mut rng = substream(seed, traffic_stream(index));
    let n = count as usize;
    let level = |p: u8| Priority::new(p).expect("validated priority");
    let priorities = match priority {
        PrioritySpec::Fixed(p) => vec![level(p); n],
        PrioritySpec::Uniform => (0..n).map(|_| level(rng.random_range(0..5))).collect(),
        PrioritySpec::Mixed { priority0_share } => {
            let zeros = (n as f64 * priority0_share).round() as usize;
            let mut v: Vec<Priority> = (0..n)
                .map(|i| if i < zeros { Priority::HIGHEST } else { level(rng.random_range(1..5)) })
                .collect();
            v.shuffle(&mut rng);
            v
        }
    };
    let sizes = (0..n)
        .map(|_| match size {
            SizeSpec::Constant(s) => s,
            SizeSpec::Uniform(lo, hi) => rng.random_range(lo..=hi),
        })
        .collect();
    TrafficPlan {
        priorities,
        sizes,
        next: 0,
    }
}

fn payload(id: MessageId, size: usize) -> Payload {
    let mut bytes = format!("SOS {:016x} ", id.0).into_bytes();
    bytes.resize(size, b'.');
    Payload::new(bytes).expect("size validated to 1..=255")
}

fn sample_delay(rng: &mut ChaCha8Rng, model: &LinkModel) -> Millis {
    if model.latency_ms <= 0.0 {
        return 0;
    }
    let f = if model.jitter > 0.0 {
        1.0 + rng.random_range(-model.jitter..=model.jitter)
    } else {
        1.0
    };
    (model.latency_ms * f).round().max(1.0) as Millis
}

fn ack_wait(model: &LinkModel) -> Millis {
    2 * (model.latency_ms.ceil() as Millis).max(1)
}

fn pair(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    (a.min(b), a.max(b))
}

#[derive(Debug, Default)]
struct Tally {
    transmissions: u64,
    send_errors: u64,
    recv_errors: u64,
    link_failures: u64,
    rejected: u64,
    control_sent: u64,
    duplicate_deliveries: u64,
    dropped_node_loss: u64,
}

pub struct Simulation {
    scenario: Scenario,
    seed: u64,
    now: Millis,
    seq: u64,
    queue: BinaryHeap<Queued>,
    nodes: BTreeMap<NodeId, Node>,
    adjacency: BTreeMap<NodeId, BTreeMap<NodeId, LinkModel>>,
    down: BTreeSet<(NodeId, NodeId)>,
    traffic: Vec<TrafficPlan>,
    pending_injections: u64,
    created: BTreeMap<MessageId, (Priority, Millis)>,
    delivered: BTreeSet<MessageId>,
    dropped: BTreeSet<MessageId>,
    in_flight: BTreeMap<MessageId, u32>,
    parked_total: usize,
    latencies: Vec<(Priority, Millis)>,
    tally: Tally,
    known: KnownLocations,
    caches: LocationCaches,
    boot_log: Vec<BootRecord>,
    locations: Vec<LocatedDelivery>,
    snapshots: Vec<TopologySnapshot>,
    stop: Option<StopReason>,
    finished: bool,
}

impl Simulation {
    pub fn new(scenario: &Scenario, seed: u64) -> Result<Simulation, MalformedScenario> {
        scenario.validate()?;
        let policies = &scenario.policies;

        let mut adjacency: BTreeMap<NodeId, BTreeMap<NodeId, LinkModel>> =
            scenario.nodes.iter().map(|n| (n.id, BTreeMap::new())).collect();
        let mut graph = Topology::new();
        for n in &scenario.nodes {
            graph.add_node(n.id);
        }
        for l in &scenario.links {
            adjacency.get_mut(&l.a).expect("validated").insert(l.b, l.model);
            adjacency.get_mut(&l.b).expect("validated").insert(l.a, l.model);
            graph.add_edge(l.a, l.b);
        }
        let stations: BTreeSet<NodeId> = scenario
            .nodes
            .iter()
            .filter(|n| n.kind == NodeKind::Station)
            .map(|n| n.id)
            .collect();
        let roles = classify_roles(&graph, &stations, policies.duty_cycle.unwrap_or_default());

        let mut nodes = BTreeMap::new();
        for spec in &scenario.nodes {
            let id = spec.id;
            let (battery, screen_on) = match spec.battery() {
                BatteryProfile::Mains => (None, false),
                BatteryProfile::Pack(p) => (
                    Some(Battery::new(policies.energy, p.charges).with_level_percent(p.level_percent)),
                    p.screen_on,
                ),
            };
            let assigned = roles[&id];
            let role = if policies.duty_cycle.is_some() && battery.is_some() {
                assigned
            } else {
                RoleAssignment::ALWAYS_ON
            };
            let boot_gated = policies.boot.is_some() && spec.kind == NodeKind::Router;
            let boot = policies.boot.unwrap_or_default();
            let mut engine = ForwardEngine::new(id, policies.ram_budget);
            if policies.trace_queues {
                engine.bank_mut().enable_trace();
            }
            nodes.insert(
                id,
                Node {
                    id,
                    kind: spec.kind,
                    alive: true,
                    up: true,
                    emergency: !boot_gated,
                    olsr: TopologyState::new(id, policies.olsr),
                    engine,
                    store: BackupStore::new(policies.backup_capacity),
                    battery,
                    screen_on,
                    on_mains: boot_gated,
                    settled_at: 0,
                    death_at: None,
                    role,
                    role_label: assigned.role,
                    awake: role.is_awake(0),
                    mains: boot_gated.then(|| MainsMonitor::new(boot.mains_debounce_ms)),
                    drain: boot.drain.filter(|_| boot_gated).map(DrainDetector::new),
                    scan: boot_gated
                        .then(|| ScanController::new(boot.scan_interval_ms, spec.scan_offset_ms.unwrap_or(0))),
                    tick_at: None,
                    ids: MessageIdGen::new(id),
                    rng_jitter: substream(seed, node_stream(id, Purpose::Jitter)),
                    rng_errors: substream(seed, node_stream(id, Purpose::Errors)),
                    rng_handoff: substream(seed, node_stream(id, Purpose::Handoff)),
                    after_forward: BTreeSet::new(),
                    parked: BTreeSet::new(),
                    handed_off: false,
                    station_reachable: spec.kind == NodeKind::Station,
                    processing: policies.processing.for_kind(spec.kind).max(1),
                    death_time: None,
                    consumed: 0,
                    transmissions: 0,
                    control_sent: 0,
                    control_received: 0,
                },
            );
        }

        let known: KnownLocations = scenario
            .nodes
            .iter()
            .filter_map(|n| {
                n.location.as_ref().map(|l| {
                    (
                        n.id,
                        KnownLocation {
                            node: n.id,
                            coordinates: Coordinates::new(l.x, l.y),
                            label: l.label.clone(),
                        },
                    )
                })
            })
            .collect();

        let traffic: Vec<TrafficPlan> = scenario
            .traffic
            .iter()
            .enumerate()
            .map(|(i, t)| plan_traffic(seed, i, t.count, t.size, t.priority))
            .collect();

        let mut sim = Simulation {
            scenario: scenario.clone(),
            seed,
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            nodes,
            adjacency,
            down: BTreeSet::new(),
            traffic,
            pending_injections: scenario.traffic.iter().map(|t| u64::from(t.count)).sum(),
            created: BTreeMap::new(),
            delivered: BTreeSet::new(),
            dropped: BTreeSet::new(),
            in_flight: BTreeMap::new(),
            parked_total: 0,
            latencies: Vec::new(),
            tally: Tally::default(),
            known,
            caches: LocationCaches::new(),
            boot_log: Vec::new(),
            locations: Vec::new(),
            snapshots: Vec::new(),
            stop: None,
            finished: false,
        };
        sim.schedule_start();
        Ok(sim)
    }

    fn schedule_start(&mut self) {
        let olsr = self.scenario.policies.olsr;
        let boot = self.scenario.policies.boot;
        let ids: Vec<NodeId> = self.nodes.keys().copied().collect();
        for id in ids {
            let mut timers = substream(self.seed, node_stream(id, Purpose::Timers));
            let node = &self.nodes[&id];
            let (emergency, scan, drain, role, awake) = (
                node.emergency,
                node.scan.as_ref().and_then(ScanController::next_scan),
                node.drain.is_some(),
                node.role,
                node.awake,
            );
            if emergency {
                let (h, t) = (
                    timers.random_range(0..olsr.hello_interval),
                    timers.random_range(0..olsr.tc_interval),
                );
                self.push(h, Ev::Hello(id));
                self.push(t, Ev::Tc(id));
            }
            if let Some(at) = scan {
                self.push(at, Ev::Scan(id));
            }
            if drain {
                let every = boot.expect("drain implies boot policy").battery_sample_ms;
                self.push(every, Ev::BatterySample(id));
            }
            if role.duty_cycle < 1.0 {
                if awake {
                    let at = role.next_sleep(0).expect("duty cycled");
                    self.push(at, Ev::Sleep(id));
                } else {
                    self.push(role.next_wake(0), Ev::Wake(id));
                }
            }
            self.watch_battery(id);
        }
        for (i, t) in self.scenario.traffic.clone().iter().enumerate() {
            if t.count > 0 {
                self.push(t.start_ms, Ev::Inject(i));
            }
        }
        for (i, e) in self.scenario.events.clone().iter().enumerate() {
            self.push(e.at_ms, Ev::Script(i));
        }
        self.push(0, Ev::Snapshot);
        self.refresh_locations();
    }

    fn push(&mut self, time: Millis, ev: Ev) {
        debug_assert!(time >= self.now, "event scheduled in the past");
        self.seq += 1;
        self.queue.push(Queued {
            time,
            seq: self.seq,
            ev,
        });
    }

    pub fn now(&self) -> Millis {
        self.now
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Current routing table of `id`.
    pub fn routes(&mut self, id: NodeId) -> RoutingTable {
        self.nodes
            .get_mut(&id)
            .map(|n| n.olsr.routing_table().clone())
            .unwrap_or_default()
    }

    /// Queue traces recorded so far (needs `policies.trace_queues`).
    pub fn take_queue_traces(&mut self) -> BTreeMap<NodeId, Vec<BankEvent>> {
        self.nodes
            .iter_mut()
            .map(|(id, n)| (*id, n.engine.bank_mut().take_trace()))
            .collect()
    }

    /// Raw backup logs of every node whose store is not empty.
    pub fn backup_logs(&self) -> Vec<(NodeId, Vec<u8>)> {
        self.nodes
            .values()
            .filter(|n| !n.store.is_empty())
            .map(|n| (n.id, n.store.as_bytes().to_vec()))
            .collect()
    }

    /// Runs until a stop condition, the scenario duration or an empty queue.
    pub fn run(&mut self) -> StopReason {
        loop {
            if let Some(r) = self.stop {
                return r;
            }
            let Some(next) = self.queue.peek() else {
                self.stop = Some(StopReason::Idle);
                continue;
            };
            if next.time > self.scenario.duration_ms {
                self.now = self.scenario.duration_ms;
                self.stop = Some(StopReason::Duration);
                continue;
            }
            let Queued { time, ev, .. } = self.queue.pop().expect("peeked");
            debug_assert!(time >= self.now);
            self.now = time;
            self.dispatch(ev);
            if self.scenario.stop.when_drained && self.drained() {
                self.stop = Some(StopReason::Drained);
            }
        }
    }

    fn drained(&self) -> bool {
        self.pending_injections == 0
            && self.in_flight.is_empty()
            && self.created.len() == self.delivered.len() + self.dropped.len() + self.parked_total
    }

    fn dispatch(&mut self, ev: Ev) {
        match ev {
            Ev::Hello(id) => self.on_hello(id),
            Ev::Tc(id) => self.on_tc(id),
            Ev::Control { to, from, bytes } => self.on_control(to, from, &bytes),
            Ev::Frame { to, from, id, bytes } => self.on_frame(to, from, id, bytes),
            Ev::AckTimeout { node, message } => {
                self.leave_flight(message.msg_id);
                self.hand_back(node, message);
            }
            Ev::Tick(id) => self.on_tick(id),
            Ev::Inject(k) => self.on_inject(k),
            Ev::Script(i) => self.on_script(i),
            Ev::MainsDeadline(id) => {
                let now = self.now;
                let fire = self.nodes.get_mut(&id).and_then(|n| n.mains.as_mut()).map(|m| m.poll(now));
                if fire == Some(BootAction::EnterEmergency) {
                    self.log_boot(id, "mains_trigger");
                    self.enter_emergency(id);
                }
            }
            Ev::BatterySample(id) => self.on_battery_sample(id),
            Ev::Scan(id) => self.on_scan(id),
            Ev::Wake(id) => self.on_wake(id, true),
            Ev::Sleep(id) => self.on_wake(id, false),
            Ev::Death(id) => {
                let n = &self.nodes[&id];
                if n.alive && n.death_at == Some(self.now) {
                    self.nodes.get_mut(&id).expect("node").death_at = None;
                    self.settle(id);
                    self.watch_battery(id);
                }
            }
            Ev::Snapshot => {
                self.take_snapshot();
                let next = self.now + self.scenario.snapshot_interval_ms;
                self.push(next, Ev::Snapshot);
            }
        }
    }

    // ---- energy -------------------------------------------------------

    /// Charges the continuous drain since the last settle.
    fn settle(&mut self, id: NodeId) {
        let now = self.now;
        let node = self.nodes.get_mut(&id).expect("node");
        if !node.alive {
            return;
        }
        let elapsed = now - node.settled_at;
        node.settled_at = now;
        let activity = node.activity();
        let on_mains = node.on_mains;
        let Some(b) = node.battery.as_mut() else { return };
        if on_mains || elapsed == 0 {
            return;
        }
        if b.drain_time(activity, elapsed).is_err() {
            self.die(id);
        }
    }

    /// Charges one packet's worth of `activity`.
    fn spend(&mut self, id: NodeId, activity: Activity) {
        self.settle(id);
        let node = self.nodes.get_mut(&id).expect("node");
        if !node.alive {
            return;
        }
        let Some(b) = node.battery.as_mut() else { return };
        if b.unit_cost(activity) == 0.0 {
            return;
        }
        if b.drain(activity, 1.0).is_err() {
            self.die(id);
            return;
        }
        self.watch_battery(id);
        self.check_handoff(id);
    }

    /// Schedules a death check at the predicted empty time if that is
    /// earlier than the one already pending.
    fn watch_battery(&mut self, id: NodeId) {
        let now = self.now;
        let node = self.nodes.get_mut(&id).expect("node");
        if !node.alive || node.on_mains {
            return;
        }
        let activity = node.activity();
        let Some(tte) = node.battery.as_ref().and_then(|b| b.time_to_empty(activity)) else {
            return;
        };
        let at = now + tte.max(1);
        if node.death_at.is_none_or(|d| at < d) {
            node.death_at = Some(at);
            self.push(at, Ev::Death(id));
        }
    }

    fn die(&mut self, id: NodeId) {
        let now = self.now;
        let node = self.nodes.get_mut(&id).expect("node");
        node.alive = false;
        node.death_time = Some(now);
        node.tick_at = None;
        let watch = self.scenario.stop.on_first_death;
        let hit = match watch {
            Some(DeathWatch::Phone) => node.kind == NodeKind::Phone,
            Some(DeathWatch::Boundary) => node.role_label == Role::Boundary,
            None => false,
        };
        self.lose_ram(id);
        if hit {
            self.stop = Some(StopReason::Death);
        }
        self.refresh_locations();
    }

    /// Empties a node's RAM after death or a crash. Messages with an
    /// undelivered backup copy stay parked in the store; the rest are lost.
    fn lose_ram(&mut self, id: NodeId) {
        let node = self.nodes.get_mut(&id).expect("node");
        node.after_forward.clear();
        for m in node.engine.drain_all() {
            let mid = m.msg_id;
            if node.store.contains(mid) && !node.store.is_delivered(mid) {
                if node.parked.insert(mid) {
                    self.parked_total += 1;
                }
            } else {
                self.dropped.insert(mid);
                self.tally.dropped_node_loss += 1;
            }
        }
    }

    fn check_handoff(&mut self, id: NodeId) {
        let Some(cfg) = self.scenario.policies.handoff else { return };
        let node = self.nodes.get_mut(&id).expect("node");
        if !node.running() || node.handed_off || node.battery.is_none() || !cfg.should_hand_off(node.battery_percent()) {
            return;
        }
        node.handed_off = true;
        let Node { olsr, engine, store, .. } = node;
        let report = low_battery_handoff(engine, olsr.routing_table(), store);
        for action in report.actions {
            match action {
                HandoffAction::Flush { mut message, next_hop } => {
                    message.hop_count += 1;
                    self.transmit(id, next_hop, message);
                }
                HandoffAction::Persist { message } => self.park(id, message.msg_id),
                HandoffAction::Lost { message } => {
                    self.dropped.insert(message.msg_id);
                }
            }
        }
    }

    fn park(&mut self, id: NodeId, mid: MessageId) {
        if self.nodes.get_mut(&id).expect("node").parked.insert(mid) {
            self.parked_total += 1;
        }
    }

    /// Moves parked messages back into the node's queues.
    fn restore_parked(&mut self, id: NodeId) {
        let node = self.nodes.get_mut(&id).expect("node");
        if node.parked.is_empty() {
            return;
        }
        let parked = std::mem::take(&mut node.parked);
        self.parked_total -= parked.len();
        node.store.restore_into(&mut node.engine, |mid| !parked.contains(&mid));
        for mid in parked {
            if !node.engine.bank().contains(mid) {
                self.dropped.insert(mid);
            }
        }
        self.ensure_tick(id, self.now + 1);
    }

    // ---- OLSR ---------------------------------------------------------

    fn on_hello(&mut self, id: NodeId) {
        let interval = self.scenario.policies.olsr.hello_interval;
        let now = self.now;
        let node = self.nodes.get_mut(&id).expect("node");
        if !node.alive {
            return;
        }
        self.push(now + interval, Ev::Hello(id));
        let node = self.nodes.get_mut(&id).expect("node");
        if !node.up || !node.awake {
            return;
        }
        node.olsr.sweep(now);
        let hello = node.olsr.generate_hello().encode();
        self.update_reachability(id);
        self.broadcast(id, hello);
    }

    fn on_tc(&mut self, id: NodeId) {
        let interval = self.scenario.policies.olsr.tc_interval;
        let now = self.now;
        let node = self.nodes.get_mut(&id).expect("node");
        if !node.alive {
            return;
        }
        self.push(now + interval, Ev::Tc(id));
        let node = self.nodes.get_mut(&id).expect("node");
        if !node.up || !node.awake {
            return;
        }
        if let Some(tc) = node.olsr.generate_tc() {
            self.broadcast(id, tc.encode());
        }
    }

    fn update_reachability(&mut self, id: NodeId) {
        let node = self.nodes.get_mut(&id).expect("node");
        let reachable = node.kind == NodeKind::Station || next_hop_to_station(node.olsr.routing_table()).is_some();
        let regained = reachable && !node.station_reachable;
        node.station_reachable = reachable;
        if regained {
            self.restore_parked(id);
        }
    }

    fn link_up(&self, a: NodeId, b: NodeId) -> bool {
        !self.down.contains(&pair(a, b))
    }

    fn broadcast(&mut self, from: NodeId, bytes: Vec<u8>) {
        self.spend(from, Activity::ControlPacket);
        let node = self.nodes.get_mut(&from).expect("node");
        if !node.alive {
            return;
        }
        node.control_sent += 1;
        self.tally.control_sent += 1;
        let bytes: Rc<[u8]> = bytes.into();
        let neighbors: Vec<(NodeId, LinkModel)> = self.adjacency[&from].iter().map(|(n, m)| (*n, *m)).collect();
        for (to, model) in neighbors {
            if !self.link_up(from, to) || !self.nodes[&to].alive {
                continue;
            }
            let d = sample_delay(&mut self.nodes.get_mut(&from).expect("node").rng_jitter, &model);
            self.push(
                self.now + d,
                Ev::Control {
                    to,
                    from,
                    bytes: Rc::clone(&bytes),
                },
            );
        }
    }

    fn on_control(&mut self, to: NodeId, from: NodeId, bytes: &[u8]) {
        let node = &self.nodes[&to];
        // Asleep radios miss broadcasts.
        if !node.running() || !node.emergency || !node.awake || !self.link_up(from, to) {
            return;
        }
        self.spend(to, Activity::ControlPacket);
        let now = self.now;
        let node = self.nodes.get_mut(&to).expect("node");
        if !node.alive {
            return;
        }
        node.control_received += 1;
        let Ok(pkt) = ControlPacket::decode(bytes) else { return };
        match pkt.kind {
            ControlKind::Hello => {
                node.olsr.process_hello(&pkt, now);
            }
            ControlKind::Tc => {
                if node.olsr.process_tc(&pkt, from, now) {
                    self.broadcast(to, pkt.forwarded().encode());
                }
            }
        }
    }

    // ---- messages -----------------------------------------------------

    fn on_inject(&mut self, k: usize) {
        let spec = self.scenario.traffic[k];
        let plan = &mut self.traffic[k];
        let i = plan.next;
        plan.next += 1;
        let (priority, size) = (plan.priorities[i], plan.sizes[i]);
        self.pending_injections -= 1;
        if plan.next < spec.count as usize {
            self.push(self.now + spec.interval_ms, Ev::Inject(k));
        }
        let now = self.now;
        let src = self.nodes.get_mut(&spec.source).expect("validated");
        let mid = src.ids.next_id();
        let msg = EmergencyMessage::new(mid, spec.source, spec.destination, priority, payload(mid, size), src.load(), now);
        self.created.insert(mid, (priority, now));
        if !src.running() {
            self.dropped.insert(mid);
            self.tally.dropped_node_loss += 1;
            return;
        }
        self.admit(spec.source, msg);
    }

    /// Accepts a message into `id`'s queues and applies the backup policy.
    fn admit(&mut self, id: NodeId, msg: EmergencyMessage) {
        let mid = msg.msg_id;
        let is_router = self.nodes[&id].kind == NodeKind::Router;
        let policy_on = is_router && !self.scenario.policies.backup.is_empty();
        if policy_on {
            self.settle(id);
        }
        let node = self.nodes.get_mut(&id).expect("node");
        if let EnqueueOutcome::Dropped(_) = node.engine.accept(msg.clone()) {
            self.dropped.insert(mid);
            return;
        }
        if policy_on {
            let cond = NodeCondition {
                battery_percent: Percent::from_fraction(node.battery_percent() / 100.0),
                load_percent: node.load(),
                station_reachable: node.station_reachable,
            };
            match evaluate_policy(&self.scenario.policies.backup, &msg, &cond).action {
                BackupAction::BackupOnReceive => {
                    let _ = node.store.persist(&msg);
                }
                BackupAction::BackupAfterForward => {
                    node.after_forward.insert(mid);
                }
                BackupAction::NoBackup => {}
            }
        }
        let at = self.now + node.processing;
        self.ensure_tick(id, at);
    }

    fn ensure_tick(&mut self, id: NodeId, at: Millis) {
        let node = self.nodes.get_mut(&id).expect("node");
        if !node.running() || node.tick_at.is_some_and(|t| t <= at) {
            return;
        }
        node.tick_at = Some(at);
        self.push(at, Ev::Tick(id));
    }

    fn on_tick(&mut self, id: NodeId) {
        let now = self.now;
        let node = self.nodes.get_mut(&id).expect("node");
        if node.tick_at != Some(now) {
            return;
        }
        node.tick_at = None;
        if !node.running() {
            return;
        }
        if !node.awake {
            let wake = node.role.next_wake(now);
            self.ensure_tick(id, wake);
            return;
        }
        let Node { olsr, engine, .. } = node;
        let outcomes = engine.forward_tick(olsr.routing_table(), now);
        let mut delay = node.processing;
        for o in outcomes {
            match o {
                ForwardOutcome::Delivered { next_hop, message } => {
                    let node = self.nodes.get_mut(&id).expect("node");
                    if node.after_forward.remove(&message.msg_id) {
                        let _ = node.store.persist(&message);
                    }
                    if next_hop == id {
                        let at = now + self.scenario.policies.loopback_ms;
                        self.enter_flight(message.msg_id);
                        self.push(
                            at,
                            Ev::Frame {
                                to: id,
                                from: id,
                                id: message.msg_id,
                                bytes: encode_message(&message),
                            },
                        );
                    } else {
                        self.transmit(id, next_hop, message);
                    }
                }
                ForwardOutcome::Unreachable { .. } => delay = self.scenario.policies.retry_backoff_ms,
                ForwardOutcome::Dropped { id: mid, .. } => {
                    self.dropped.insert(mid);
                }
            }
        }
        if self.nodes[&id].holds_anything() {
            self.ensure_tick(id, now + delay);
        }
    }

    fn enter_flight(&mut self, mid: MessageId) {
        *self.in_flight.entry(mid).or_insert(0) += 1;
    }

    fn leave_flight(&mut self, mid: MessageId) {
        if let Some(c) = self.in_flight.get_mut(&mid) {
            *c -= 1;
            if *c == 0 {
                self.in_flight.remove(&mid);
            }
        }
    }

    /// Puts `message` (hop count already advanced) on the link to `to`.
    fn transmit(&mut self, from: NodeId, to: NodeId, message: EmergencyMessage) {
        let pre = EmergencyMessage {
            hop_count: message.hop_count.saturating_sub(1),
            ..message.clone()
        };
        self.spend(from, Activity::ForwardMessage);
        self.tally.transmissions += 1;
        let model = self.adjacency[&from].get(&to).copied();
        let reachable = model.is_some() && self.link_up(from, to) && self.nodes[&to].running();
        let node = self.nodes.get_mut(&from).expect("node");
        node.transmissions += 1;
        let mid = message.msg_id;
        let Some(model) = model.filter(|_| reachable) else {
            self.tally.link_failures += 1;
            let wait = model.as_ref().map_or(2, ack_wait);
            self.enter_flight(mid);
            self.push(self.now + wait, Ev::AckTimeout { node: from, message: pre });
            return;
        };
        if node.rng_errors.random_bool(model.p_send_error) {
            self.tally.send_errors += 1;
            self.hand_back(from, pre);
            return;
        }
        let d = sample_delay(&mut node.rng_jitter, &model);
        let lost = node.rng_errors.random_bool(model.p_recv_error);
        self.enter_flight(mid);
        if lost {
            self.tally.recv_errors += 1;
            self.push(self.now + 2 * d.max(1), Ev::AckTimeout { node: from, message: pre });
        } else {
            self.push(
                self.now + d,
                Ev::Frame {
                    to,
                    from,
                    id: mid,
                    bytes: encode_message(&message),
                },
            );
        }
    }

    /// A failed attempt comes back to its sender: demoted and re-queued, or
    /// lost if the sender is gone.
    fn hand_back(&mut self, id: NodeId, pre: EmergencyMessage) {
        let mid = pre.msg_id;
        let backoff = self.scenario.policies.retry_backoff_ms;
        let node = self.nodes.get_mut(&id).expect("node");
        if !node.running() {
            if node.store.contains(mid) && !node.store.is_delivered(mid) {
                self.park(id, mid);
            } else {
                self.dropped.insert(mid);
                self.tally.dropped_node_loss += 1;
            }
            return;
        }
        if let EnqueueOutcome::Dropped(_) = node.engine.on_transmission_failure(pre) {
            self.dropped.insert(mid);
        }
        self.ensure_tick(id, self.now + backoff);
    }

    fn on_frame(&mut self, to: NodeId, from: NodeId, mid: MessageId, bytes: Vec<u8>) {
        self.leave_flight(mid);
        let now = self.now;
        let node = &self.nodes[&to];
        let decoded = match classify_packet(&bytes) {
            PacketKind::Emergency => decode_message(&bytes).ok(),
            _ => None,
        };
        let Some(msg) = decoded else {
            self.nodes.get_mut(&to).expect("node").engine.receive(&bytes);
            return;
        };
        let pre = || EmergencyMessage {
            hop_count: msg.hop_count.saturating_sub(1),
            ..msg.clone()
        };
        let back_wait = self.adjacency[&from].get(&to).map_or(1, ack_wait) / 2;
        if !node.running() || (from != to && !self.link_up(from, to)) {
            self.tally.link_failures += 1;
            self.enter_flight(mid);
            self.push(now + back_wait, Ev::AckTimeout { node: from, message: pre() });
            return;
        }
        if !node.awake {
            // Unicast frames wait in the link layer until the radio wakes.
            let wake = node.role.next_wake(now);
            self.enter_flight(mid);
            self.push(wake, Ev::Frame { to, from, id: mid, bytes });
            return;
        }
        if from != to {
            if let Some(cfg) = self.scenario.policies.handoff {
                if self.nodes[&to].battery.is_some() {
                    self.settle(to);
                    let node = self.nodes.get_mut(&to).expect("node");
                    let accepted = node.alive && cfg.accept_incoming(node.battery_percent(), &mut node.rng_handoff);
                    if !accepted {
                        self.tally.rejected += 1;
                        self.enter_flight(mid);
                        self.push(now + back_wait, Ev::AckTimeout { node: from, message: pre() });
                        return;
                    }
                }
            }
        }
        let sender = self.nodes.get_mut(&from).expect("node");
        if sender.store.contains(mid) && !sender.store.is_delivered(mid) {
            let _ = sender.store.mark_delivered(mid);
        }
        let node = &self.nodes[&to];
        let is_sink = msg.dst == to || (node.kind == NodeKind::Station && msg.dst.is_station_reserved());
        if is_sink {
            self.consume(to, msg);
        } else {
            self.admit(to, msg);
        }
    }

    fn consume(&mut self, at: NodeId, msg: EmergencyMessage) {
        let node = self.nodes.get_mut(&at).expect("node");
        node.consumed += 1;
        let is_station = node.kind == NodeKind::Station;
        if !self.delivered.insert(msg.msg_id) {
            self.tally.duplicate_deliveries += 1;
            return;
        }
        let (priority, created) = self.created[&msg.msg_id];
        self.latencies.push((priority, self.now - created));
        if is_station && !self.known.is_empty() {
            self.locations.push(LocatedDelivery {
                msg_id: msg.msg_id.0,
                src: msg.src,
                station: at,
                estimate: self.caches.estimate(msg.src),
            });
        }
    }

    // ---- scripted events, boot and sleep --------------------------------

    fn on_script(&mut self, i: usize) {
        let e = self.scenario.events[i];
        let id = e.node;
        let now = self.now;
        match e.action {
            Action::MainsLost | Action::MainsRestored => {
                let ev = if e.action == Action::MainsLost {
                    PowerEvent::MainsLost
                } else {
                    PowerEvent::MainsRestored
                };
                self.settle(id);
                let node = self.nodes.get_mut(&id).expect("node");
                let Some(m) = node.mains.as_mut() else { return };
                let action = m.on_power_event(ev, now);
                node.on_mains = m.source() == PowerSource::Mains;
                if let Some(at) = m.deadline() {
                    self.push(at, Ev::MainsDeadline(id));
                }
                self.watch_battery(id);
                if action == BootAction::EnterEmergency {
                    self.log_boot(id, "mains_trigger");
                    self.enter_emergency(id);
                }
            }
            Action::Crash => {
                let node = self.nodes.get_mut(&id).expect("node");
                if !node.running() {
                    return;
                }
                node.up = false;
                node.tick_at = None;
                node.olsr.reset();
                self.lose_ram(id);
                self.refresh_locations();
            }
            Action::Restart => {
                let capacity = self.scenario.policies.backup_capacity;
                let node = self.nodes.get_mut(&id).expect("node");
                if !node.alive || node.up {
                    return;
                }
                node.up = true;
                let (store, _) = BackupStore::replay(node.store.as_bytes(), capacity).expect("own log replays");
                node.store = store;
                node.station_reachable = node.kind == NodeKind::Station;
                self.restore_parked(id);
                self.refresh_locations();
            }
            Action::LinkDown(peer) => {
                self.down.insert(pair(id, peer));
                self.refresh_locations();
            }
            Action::LinkUp(peer) => {
                self.down.remove(&pair(id, peer));
                self.refresh_locations();
            }
        }
    }

    fn log_boot(&mut self, node: NodeId, event: &str) {
        self.boot_log.push(BootRecord {
            t_ms: self.now,
            node,
            event: event.to_string(),
        });
    }

    fn enter_emergency(&mut self, id: NodeId) {
        let node = self.nodes.get_mut(&id).expect("node");
        if node.emergency {
            return;
        }
        node.emergency = true;
        if let Some(s) = node.scan.as_mut() {
            s.enter_emergency();
        }
        let now = self.now;
        self.push(now + 1, Ev::Hello(id));
        self.push(now + 1, Ev::Tc(id));
        self.refresh_locations();
    }

    fn on_battery_sample(&mut self, id: NodeId) {
        let every = self.scenario.policies.boot.map_or(10_000, |b| b.battery_sample_ms);
        let now = self.now;
        self.settle(id);
        let node = self.nodes.get_mut(&id).expect("node");
        if !node.alive || node.emergency {
            return;
        }
        self.push(now + every, Ev::BatterySample(id));
        let node = self.nodes.get_mut(&id).expect("node");
        let pct = node.battery_percent();
        let fired = node.drain.as_mut().map(|d| d.observe(now, pct));
        if fired == Some(BootAction::EnterEmergency) {
            self.log_boot(id, "drain_trigger");
            self.enter_emergency(id);
        }
    }

    fn on_scan(&mut self, id: NodeId) {
        let now = self.now;
        let node = &self.nodes[&id];
        if !node.running() || node.scan.as_ref().and_then(ScanController::next_scan) != Some(now) {
            return;
        }
        let observations: Vec<PeerObservation> = self.adjacency[&id]
            .iter()
            .filter(|(peer, _)| self.link_up(id, **peer) && self.nodes[*peer].running())
            .map(|(peer, model)| {
                let p = &self.nodes[peer];
                PeerObservation {
                    ssid: format!("{}-{}", p.kind.as_str(), peer),
                    signal_strength: -40.0 - model.distance_m,
                    signature: p.signature(),
                }
            })
            .collect();
        let node = self.nodes.get_mut(&id).expect("node");
        let scan = node.scan.as_mut().expect("checked");
        let decision = scan.on_scan(&observations, now);
        let next = scan.next_scan();
        let label = match decision {
            BootDecision::Switch => "switch",
            BootDecision::Join => "join",
            BootDecision::Wait => "wait",
        };
        self.log_boot(id, label);
        match next {
            Some(at) => self.push(at, Ev::Scan(id)),
            None => self.enter_emergency(id),
        }
    }

    fn on_wake(&mut self, id: NodeId, awake: bool) {
        self.settle(id);
        let now = self.now;
        let node = self.nodes.get_mut(&id).expect("node");
        if !node.alive {
            return;
        }
        node.awake = awake;
        let role = node.role;
        let has_work = node.holds_anything();
        let processing = node.processing;
        if awake {
            self.push(role.next_sleep(now).expect("duty cycled"), Ev::Sleep(id));
        } else {
            self.push(role.next_wake(now), Ev::Wake(id));
        }
        self.watch_battery(id);
        if awake && has_work {
            self.ensure_tick(id, now + processing);
        }
    }

    // ---- views ----------------------------------------------------------

    /// Rebuilds location caches from the live radio graph.
    fn refresh_locations(&mut self) {
        if self.known.is_empty() {
            return;
        }
        let graph = self.live_graph();
        self.caches
            .on_topology_change(&graph, &self.known, self.scenario.policies.locate_hops);
    }

    /// Running emergency-mode nodes and the working links between them.
    pub fn live_graph(&self) -> Topology {
        let mut g = Topology::new();
        let live = |n: &NodeId| self.nodes[n].running() && self.nodes[n].emergency;
        for id in self.nodes.keys().filter(|n| live(n)) {
            g.add_node(*id);
            for peer in self.adjacency[id].keys() {
                if live(peer) && self.link_up(*id, *peer) {
                    g.add_edge(*id, *peer);
                }
            }
        }
        g
    }

    fn take_snapshot(&mut self) {
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        let mut mpr_edges = BTreeSet::new();
        for (id, n) in &self.nodes {
            nodes.push(SnapshotNode {
                id: *id,
                kind: n.kind.as_str().to_string(),
                battery_percent: n.battery.as_ref().map(|b| (b.percent() * 100.0).round() / 100.0),
                alive: n.running(),
            });
            if !n.running() {
                continue;
            }
            for peer in n.olsr.symmetric_neighbors() {
                let p = &self.nodes[&peer];
                if *id < peer && p.running() && p.olsr.is_symmetric(*id) {
                    edges.push((*id, peer));
                }
            }
            for &m in n.olsr.mpr_set() {
                mpr_edges.insert(pair(*id, m));
            }
        }
        let mpr_edges = mpr_edges.into_iter().filter(|e| edges.contains(e)).collect();
        self.snapshots.push(TopologySnapshot {
            t_ms: self.now,
            nodes,
            edges,
            mpr_edges,
        });
    }

    /// Settles every battery at the current time and collects the metrics.
    pub fn finish(&mut self) -> RunMetrics {
        if !self.finished {
            self.finished = true;
            let ids: Vec<NodeId> = self.nodes.keys().copied().collect();
            for id in ids {
                self.settle(id);
            }
            if self.snapshots.last().is_none_or(|s| s.t_ms < self.now) {
                self.take_snapshot();
            }
        }
        self.metrics()
    }

    fn metrics(&self) -> RunMetrics {
        let mut fates: BTreeMap<MessageId, u32> = BTreeMap::new();
        let mut bump = |id: MessageId, k: u32| *fates.entry(id).or_insert(0) += k;
        for id in &self.delivered {
            bump(*id, 1);
        }
        for id in &self.dropped {
            bump(*id, 1);
        }
        for (id, k) in &self.in_flight {
            bump(*id, *k);
        }
        let mut c = Counters::default();
        let mut nodes = Vec::new();
        for (id, n) in &self.nodes {
            for h in n.engine.bank().held_ids() {
                bump(h, 1);
            }
            for p in &n.parked {
                bump(*p, 1);
            }
            let f = n.engine.counters();
            let bank = n.engine.bank();
            c.queued += bank.queued() as u64;
            c.swapped += bank.swap_depth() as u64;
            c.dropped_ram += f.dropped_ram;
            c.dropped_duplicate += f.dropped_duplicate;
            c.unreachable += f.unreachable;
            c.demotions += f.demotions;
            c.backed_up += n.store.len() as u64;
            c.backup_failures += n.store.failures();
            nodes.push(NodeMetrics {
                id: *id,
                kind: n.kind.as_str().to_string(),
                role: match n.role_label {
                    Role::Boundary => "boundary".into(),
                    Role::Inner => "inner".into(),
                },
                alive: n.alive,
                emergency_mode: n.emergency,
                death_time_ms: n.death_time,
                battery_percent: n.battery.as_ref().map(Battery::percent),
                energy: n.battery.as_ref().map(|b| b.ledger().clone()).unwrap_or_default(),
                energy_total: n.battery.as_ref().map_or(0, Battery::drained),
                consumed: n.consumed,
                transmissions: n.transmissions,
                control_sent: n.control_sent,
                control_received: n.control_received,
                forward: f,
                forward_conserved: n.engine.is_conserved(),
                olsr: n.olsr.counters(),
                backup: BackupMetrics {
                    persisted: n.store.len() as u64,
                    failures: n.store.failures(),
                    bytes: n.store.bytes_used() as u64,
                },
                queued: bank.queued() as u64,
                swapped: bank.swap_depth() as u64,
            });
        }
        let exactly_once = fates.len() == self.created.len()
            && fates.iter().all(|(id, k)| *k == 1 && self.created.contains_key(id));
        c.created = self.created.len() as u64;
        c.delivered = self.delivered.len() as u64;
        c.duplicate_deliveries = self.tally.duplicate_deliveries;
        c.in_flight = self.in_flight.values().map(|k| u64::from(*k)).sum();
        c.parked = self.parked_total as u64;
        c.dropped = self.dropped.len() as u64;
        c.dropped_node_loss = self.tally.dropped_node_loss;
        c.transmissions = self.tally.transmissions;
        c.send_errors = self.tally.send_errors;
        c.recv_errors = self.tally.recv_errors;
        c.link_failures = self.tally.link_failures;
        c.rejected = self.tally.rejected;
        c.control_sent = self.tally.control_sent;
        c.conservation_ok = exactly_once
            && c.created == c.delivered + c.queued + c.swapped + c.in_flight + c.parked + c.dropped
            && nodes.iter().all(|n| n.forward_conserved);

        let mut all: Vec<Millis> = self.latencies.iter().map(|(_, l)| *l).collect();
        let by_priority = Priority::all()
            .map(|p| {
                let mut v: Vec<Millis> = self.latencies.iter().filter(|(q, _)| *q == p).map(|(_, l)| *l).collect();
                LatencyStats::from_samples(Some(p.level()), &mut v)
            })
            .collect();
        RunMetrics {
            schema_version: METRICS_SCHEMA_VERSION,
            scenario: self.scenario.name.clone(),
            seed: self.seed,
            end_time_ms: self.now,
            stop_reason: self.stop.unwrap_or(StopReason::Duration),
            counters: c,
            latency: LatencyReport {
                overall: LatencyStats::from_samples(None, &mut all),
                by_priority,
            },
            nodes,
            boot_log: self.boot_log.clone(),
            locations: self.locations.clone(),
            snapshots: self.snapshots.clone(),
        }
    }
}

/// Runs `scenario` under `seed` to completion.
pub fn run(scenario: &Scenario, seed: u64) -> Result<RunMetrics, MalformedScenario> {
    let mut sim = Simulation::new(scenario, seed)?;
    sim.run();
    Ok(sim.finish())
}

/// Duty configuration used when a scenario turns the schedule on without
/// saying more.
pub fn default_duty() -> DutyConfig {
    DutyConfig::default()
}
