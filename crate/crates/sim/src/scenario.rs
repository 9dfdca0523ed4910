//! Scenario files: nodes, links, traffic, policies and scripted events.
//!
//! A scenario is plain JSON. Parsing goes through `serde_path_to_error` so a
//! bad field is reported with its full path, and [`Scenario::validate`]
//! reports semantic problems the same way.

use std::collections::BTreeSet;
use std::path::Path;

use lifeline_core::backup::{BackupOption, DEFAULT_STORE_CAPACITY};
use lifeline_core::boot::DrainConfig;
use lifeline_core::forward::DEFAULT_RAM_BUDGET;
use lifeline_core::locate::DEFAULT_QUERY_HOPS;
use lifeline_core::olsr::OlsrConfig;
use lifeline_core::power::{DutyConfig, EnergyModel, HandoffConfig};
use lifeline_core::{Millis, NodeId};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCENARIO_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed scenario at `{path}`: {reason}")]
pub struct MalformedScenario {
    pub path: String,
    pub reason: String,
}

fn bad(path: impl Into<String>, reason: impl Into<String>) -> MalformedScenario {
    MalformedScenario::new(path, reason)
}

impl MalformedScenario {
    fn new(path: impl Into<String>, reason: impl Into<String>) -> Self {
        MalformedScenario {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Phone,
    Router,
    Station,
    Laptop,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Phone => "phone",
            NodeKind::Router => "router",
            NodeKind::Station => "station",
            NodeKind::Laptop => "laptop",
        }
    }

    /// Default power source: phones carry one charge, routers ten, the rest
    /// run off mains.
    pub fn default_battery(self) -> BatteryProfile {
        match self {
            NodeKind::Phone => BatteryProfile::Pack(PackSpec::default()),
            NodeKind::Router => BatteryProfile::Pack(PackSpec {
                charges: 10.0,
                ..PackSpec::default()
            }),
            NodeKind::Station | NodeKind::Laptop => BatteryProfile::Mains,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PackSpec {
    /// Capacity in full phone charges.
    pub charges: f64,
    pub level_percent: f64,
    pub screen_on: bool,
}

impl Default for PackSpec {
    fn default() -> Self {
        PackSpec {
            charges: 1.0,
            level_percent: 100.0,
            screen_on: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum BatteryProfile {
    /// Unlimited supply.
    Mains,
    Pack(PackSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocationSpec {
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeSpec {
    pub id: NodeId,
    pub kind: NodeKind,
    /// Missing means the kind's default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub battery: Option<BatteryProfile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<LocationSpec>,
    /// Time of the first peer scan when the boot policy is on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan_offset_ms: Option<Millis>,
}

impl NodeSpec {
    pub fn new(id: NodeId, kind: NodeKind) -> Self {
        NodeSpec {
            id,
            kind,
            battery: None,
            location: None,
            scan_offset_ms: None,
        }
    }

    pub fn battery(&self) -> BatteryProfile {
        self.battery.unwrap_or_else(|| self.kind.default_battery())
    }
}

/// Per-link delay and loss. Errors are drawn once per transmission attempt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkModel {
    pub latency_ms: f64,
    /// Relative jitter: each delay is drawn uniformly from latency·(1 ± jitter).
    pub jitter: f64,
    pub p_send_error: f64,
    pub p_recv_error: f64,
    pub distance_m: f64,
}

impl LinkModel {
    /// Routers a few meters apart: 5 ms, no observed errors.
    pub const SHORT: LinkModel = LinkModel {
        latency_ms: 5.0,
        jitter: 0.2,
        p_send_error: 0.0,
        p_recv_error: 0.0,
        distance_m: 3.0,
    };

    /// 60 m apart: 15 ms, with the measured error rates (18 send and 32
    /// receive errors in 10 000 messages).
    pub const LONG: LinkModel = LinkModel {
        latency_ms: 15.0,
        jitter: 0.2,
        p_send_error: 0.0018,
        p_recv_error: 0.0032,
        distance_m: 60.0,
    };

    /// Error profile chosen by distance.
    pub fn for_distance(distance_m: f64) -> LinkModel {
        if distance_m >= 60.0 {
            LinkModel { distance_m, ..LinkModel::LONG }
        } else {
            LinkModel { distance_m, ..LinkModel::SHORT }
        }
    }
}

impl Default for LinkModel {
    fn default() -> Self {
        LinkModel::SHORT
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSpec {
    pub a: NodeId,
    pub b: NodeId,
    #[serde(default)]
    pub model: LinkModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SizeSpec {
    Constant(usize),
    /// Inclusive byte range.
    Uniform(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PrioritySpec {
    Fixed(u8),
    /// Each message uniform over 0..=4.
    Uniform,
    /// Exactly round(count·share) messages at priority 0, the rest uniform
    /// over 1..=4, in seeded random order.
    Mixed { priority0_share: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficSpec {
    pub source: NodeId,
    pub destination: NodeId,
    pub count: u32,
    pub size: SizeSpec,
    pub priority: PrioritySpec,
    pub interval_ms: Millis,
    #[serde(default)]
    pub start_ms: Millis,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootPolicy {
    pub mains_debounce_ms: Millis,
    pub scan_interval_ms: Millis,
    /// Battery-drop trigger; off when absent.
    pub drain: Option<DrainConfig>,
    pub battery_sample_ms: Millis,
}

impl Default for BootPolicy {
    fn default() -> Self {
        BootPolicy {
            mains_debounce_ms: 30_000,
            scan_interval_ms: 60_000,
            drain: None,
            battery_sample_ms: 10_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProcessingDelays {
    pub phone_ms: Millis,
    pub router_ms: Millis,
    pub station_ms: Millis,
    pub laptop_ms: Millis,
}

impl Default for ProcessingDelays {
    fn default() -> Self {
        ProcessingDelays {
            phone_ms: 2,
            router_ms: 1,
            station_ms: 1,
            laptop_ms: 1,
        }
    }
}

impl ProcessingDelays {
    pub fn for_kind(&self, kind: NodeKind) -> Millis {
        match kind {
            NodeKind::Phone => self.phone_ms,
            NodeKind::Router => self.router_ms,
            NodeKind::Station => self.station_ms,
            NodeKind::Laptop => self.laptop_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Policies {
    /// Enabled backup options, evaluated on routers.
    pub backup: Vec<BackupOption>,
    pub backup_capacity: usize,
    pub ram_budget: usize,
    /// Routers start in normal mode and boot on their own when present.
    pub boot: Option<BootPolicy>,
    /// Inner-node sleep schedule; off when absent.
    pub duty_cycle: Option<DutyConfig>,
    /// Low-battery handoff; off when absent.
    pub handoff: Option<HandoffConfig>,
    pub energy: EnergyModel,
    pub olsr: OlsrConfig,
    pub processing: ProcessingDelays,
    pub loopback_ms: Millis,
    /// Pause after a failed attempt before the node tries again.
    pub retry_backoff_ms: Millis,
    pub locate_hops: u32,
    /// Record priority-queue traces for offline checking.
    pub trace_queues: bool,
}

impl Default for Policies {
    fn default() -> Self {
        Policies {
            backup: Vec::new(),
            backup_capacity: DEFAULT_STORE_CAPACITY,
            ram_budget: DEFAULT_RAM_BUDGET,
            boot: None,
            duty_cycle: None,
            handoff: Some(HandoffConfig::default()),
            energy: EnergyModel::default(),
            olsr: OlsrConfig::default(),
            processing: ProcessingDelays::default(),
            loopback_ms: 1,
            retry_backoff_ms: 500,
            locate_hops: DEFAULT_QUERY_HOPS,
            trace_queues: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Action {
    MainsLost,
    MainsRestored,
    /// Loses RAM state; the backup log survives.
    Crash,
    Restart,
    LinkDown(NodeId),
    LinkUp(NodeId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedEvent {
    pub at_ms: Millis,
    pub node: NodeId,
    pub action: Action,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeathWatch {
    /// Stop when the first phone dies.
    Phone,
    /// Stop when the first boundary node dies.
    Boundary,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StopCondition {
    /// Stop once every message is injected and resolved.
    pub when_drained: bool,
    pub on_first_death: Option<DeathWatch>,
}

fn default_version() -> u32 {
    SCENARIO_VERSION
}

fn default_snapshot_interval() -> Millis {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_version")]
    pub schema_version: u32,
    pub name: String,
    /// Used when the caller does not pass a seed.
    #[serde(default)]
    pub seed: u64,
    pub duration_ms: Millis,
    pub nodes: Vec<NodeSpec>,
    #[serde(default)]
    pub links: Vec<LinkSpec>,
    #[serde(default)]
    pub traffic: Vec<TrafficSpec>,
    #[serde(default)]
    pub policies: Policies,
    #[serde(default)]
    pub events: Vec<ScriptedEvent>,
    #[serde(default)]
    pub stop: StopCondition,
    #[serde(default = "default_snapshot_interval")]
    pub snapshot_interval_ms: Millis,
}

impl Scenario {
    pub fn new(name: impl Into<String>, duration_ms: Millis) -> Self {
        Scenario {
            schema_version: SCENARIO_VERSION,
            name: name.into(),
            seed: 0,
            duration_ms,
            nodes: Vec::new(),
            links: Vec::new(),
            traffic: Vec::new(),
            policies: Policies::default(),
            events: Vec::new(),
            stop: StopCondition::default(),
            snapshot_interval_ms: default_snapshot_interval(),
        }
    }

    pub fn from_json(text: &str) -> Result<Scenario, MalformedScenario> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let scenario: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            MalformedScenario::new(path, e.into_inner().to_string())
        })?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn load(path: &Path) -> anyhow::Result<Scenario> {
        let text = std::fs::read_to_string(path)?;
        Ok(Scenario::from_json(&text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn node(&self, id: NodeId) -> Option<&NodeSpec> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn count_kind(&self, kind: NodeKind) -> usize {
        self.nodes.iter().filter(|n| n.kind == kind).count()
    }

    /// Checks everything serde cannot: references, ranges and uniqueness.
    pub fn validate(&self) -> Result<(), MalformedScenario> {
        if self.schema_version != SCENARIO_VERSION {
            return Err(bad("schema_version", format!("unsupported version {}", self.schema_version)));
        }
        if self.nodes.is_empty() {
            return Err(bad("nodes", "at least one node is required"));
        }
        let mut ids = BTreeSet::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if !ids.insert(n.id) {
                return Err(bad(format!("nodes[{i}].id"), format!("duplicate node {}", n.id)));
            }
            if (n.kind == NodeKind::Station) != n.id.is_station_reserved() {
                return Err(bad(
                    format!("nodes[{i}].id"),
                    "stations, and only stations, use the reserved station range",
                ));
            }
            if let Some(BatteryProfile::Pack(p)) = n.battery {
                if !(p.charges > 0.0 && p.charges.is_finite()) {
                    return Err(bad(format!("nodes[{i}].battery.pack.charges"), "must be positive"));
                }
                if !(0.0..=100.0).contains(&p.level_percent) {
                    return Err(bad(format!("nodes[{i}].battery.pack.level_percent"), "outside 0..=100"));
                }
            }
        }
        let known = |id: &NodeId| ids.contains(id);
        let mut pairs = BTreeSet::new();
        for (i, l) in self.links.iter().enumerate() {
            for (field, id) in [("a", l.a), ("b", l.b)] {
                if !known(&id) {
                    return Err(bad(format!("links[{i}].{field}"), format!("unknown node {id}")));
                }
            }
            if l.a == l.b {
                return Err(bad(format!("links[{i}].b"), "self links are implicit"));
            }
            if !pairs.insert((l.a.min(l.b), l.a.max(l.b))) {
                return Err(bad(format!("links[{i}]"), "duplicate link"));
            }
            let m = &l.model;
            for (field, p) in [("p_send_error", m.p_send_error), ("p_recv_error", m.p_recv_error)] {
                if !(0.0..=1.0).contains(&p) {
                    return Err(bad(format!("links[{i}].model.{field}"), format!("probability {p} outside [0, 1]")));
                }
            }
            if !(m.latency_ms >= 0.0 && m.latency_ms.is_finite()) {
                return Err(bad(format!("links[{i}].model.latency_ms"), "must be finite and non-negative"));
            }
            if !(0.0..1.0).contains(&m.jitter) {
                return Err(bad(format!("links[{i}].model.jitter"), "outside [0, 1)"));
            }
        }
        for (i, t) in self.traffic.iter().enumerate() {
            for (field, id) in [("source", t.source), ("destination", t.destination)] {
                if !known(&id) {
                    return Err(bad(format!("traffic[{i}].{field}"), format!("unknown node {id}")));
                }
            }
            match t.size {
                SizeSpec::Constant(n) if !(1..=255).contains(&n) => {
                    return Err(bad(format!("traffic[{i}].size"), "payload size outside 1..=255"));
                }
                SizeSpec::Uniform(lo, hi) if lo == 0 || lo > hi || hi > 255 => {
                    return Err(bad(format!("traffic[{i}].size"), "range must satisfy 1 <= min <= max <= 255"));
                }
                _ => {}
            }
            match t.priority {
                PrioritySpec::Fixed(p) if p > 4 => {
                    return Err(bad(format!("traffic[{i}].priority"), "priority outside 0..=4"));
                }
                PrioritySpec::Mixed { priority0_share } if !(0.0..=1.0).contains(&priority0_share) => {
                    return Err(bad(format!("traffic[{i}].priority"), "share outside [0, 1]"));
                }
                _ => {}
            }
            if t.interval_ms == 0 && t.count > 1 {
                return Err(bad(format!("traffic[{i}].interval_ms"), "must be positive"));
            }
        }
        for (i, e) in self.events.iter().enumerate() {
            if !known(&e.node) {
                return Err(bad(format!("events[{i}].node"), format!("unknown node {}", e.node)));
            }
            if let Action::LinkDown(p) | Action::LinkUp(p) = e.action {
                if !pairs.contains(&(e.node.min(p), e.node.max(p))) {
                    return Err(bad(format!("events[{i}].action"), format!("no link {} -- {p}", e.node)));
                }
            }
        }
        let p = &self.policies;
        if p.ram_budget == 0 {
            return Err(bad("policies.ram_budget", "must be positive"));
        }
        if p.olsr.hello_interval == 0 || p.olsr.tc_interval == 0 {
            return Err(bad("policies.olsr", "timer intervals must be positive"));
        }
        if let Some(d) = p.duty_cycle {
            if !(d.duty_cycle > 0.0 && d.duty_cycle <= 1.0) || d.period_ms == 0 {
                return Err(bad("policies.duty_cycle", "need 0 < duty_cycle <= 1 and a positive period"));
            }
        }
        if let Some(b) = p.boot {
            if b.scan_interval_ms == 0 || b.battery_sample_ms == 0 {
                return Err(bad("policies.boot", "intervals must be positive"));
            }
        }
        if self.snapshot_interval_ms == 0 {
            return Err(bad("snapshot_interval_ms", "must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> serde_json::Value {
        serde_json::json!({
            "name": "t",
            "duration_ms": 1000,
            "nodes": [
                {"id": "10.0.0.1", "kind": "router"},
                {"id": "10.0.255.0", "kind": "station"}
            ],
            "links": [{"a": "10.0.0.1", "b": "10.0.255.0"}]
        })
    }

    #[test]
    fn minimal_scenario_parses() {
        let s = Scenario::from_json(&minimal().to_string()).unwrap();
        assert_eq!(s.links[0].model, LinkModel::SHORT);
        assert_eq!(s.nodes[0].battery(), NodeKind::Router.default_battery());
    }

    #[test]
    fn round_trips() {
        let s = Scenario::from_json(&minimal().to_string()).unwrap();
        assert_eq!(Scenario::from_json(&s.to_json()).unwrap(), s);
    }

    #[test]
    fn type_errors_carry_the_field_path() {
        let mut v = minimal();
        v["links"][0]["model"] = serde_json::json!({"p_send_error": "high"});
        let e = Scenario::from_json(&v.to_string()).unwrap_err();
        assert_eq!(e.path, "links[0].model.p_send_error");
    }

    #[test]
    fn semantic_errors_carry_the_field_path() {
        let mut v = minimal();
        v["links"][0]["model"] = serde_json::json!({"p_recv_error": 1.5});
        assert_eq!(Scenario::from_json(&v.to_string()).unwrap_err().path, "links[0].model.p_recv_error");

        let mut v = minimal();
        v["links"][0]["b"] = serde_json::json!("10.0.0.9");
        assert_eq!(Scenario::from_json(&v.to_string()).unwrap_err().path, "links[0].b");

        let mut v = minimal();
        v["nodes"][1]["kind"] = serde_json::json!("phone");
        assert_eq!(Scenario::from_json(&v.to_string()).unwrap_err().path, "nodes[1].id");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let mut v = minimal();
        v["nodes"][0]["colour"] = serde_json::json!("red");
        let e = Scenario::from_json(&v.to_string()).unwrap_err();
        assert_eq!(e.path, "nodes[0].colour");
    }
}
