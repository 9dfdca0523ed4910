//! Run metrics and their JSON / CSV exports.

use std::collections::BTreeMap;

use lifeline_core::forward::ForwardCounters;
use lifeline_core::locate::LocationEstimate;
use lifeline_core::olsr::OlsrCounters;
use lifeline_core::power::Activity;
use lifeline_core::{Millis, NodeId};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const METRICS_SCHEMA_VERSION: u32 = 1;

/// JSON schema of [`RunMetrics`] as exported by [`export_metrics`].
pub const METRICS_SCHEMA: &str = include_str!("../schema/metrics.schema.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Duration,
    Drained,
    Death,
    Idle,
}

/// Network-wide message accounting. Every created message ends in exactly
/// one of delivered, queued, swapped, in flight, parked or dropped.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Counters {
    pub created: u64,
    pub delivered: u64,
    pub duplicate_deliveries: u64,
    pub queued: u64,
    pub swapped: u64,
    pub in_flight: u64,
    /// Held only in a backup store after a crash, death or handoff.
    pub parked: u64,
    pub dropped: u64,
    pub dropped_ram: u64,
    pub dropped_duplicate: u64,
    /// Lost with a node that died or crashed without a backup copy.
    pub dropped_node_loss: u64,
    pub backed_up: u64,
    pub backup_failures: u64,
    pub transmissions: u64,
    pub send_errors: u64,
    pub recv_errors: u64,
    pub link_failures: u64,
    pub rejected: u64,
    pub unreachable: u64,
    pub demotions: u64,
    pub control_sent: u64,
    pub conservation_ok: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LatencyStats {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub priority: Option<u8>,
    pub count: u64,
    pub mean_ms: f64,
    pub min_ms: u64,
    pub max_ms: u64,
    pub p50_ms: u64,
    pub p95_ms: u64,
}

impl LatencyStats {
    pub fn from_samples(priority: Option<u8>, samples: &mut [u64]) -> Self {
        if samples.is_empty() {
            return LatencyStats {
                priority,
                ..LatencyStats::default()
            };
        }
        samples.sort_unstable();
        let n = samples.len();
        let pct = |q: f64| samples[((n as f64 * q).ceil() as usize).clamp(1, n) - 1];
        LatencyStats {
            priority,
            count: n as u64,
            mean_ms: samples.iter().sum::<u64>() as f64 / n as f64,
            min_ms: samples[0],
            max_ms: samples[n - 1],
            p50_ms: pct(0.5),
            p95_ms: pct(0.95),
        }
    }
}

/// Latency from creation to arrival at the destination, overall and by the
/// priority a message was created with.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct LatencyReport {
    pub overall: LatencyStats,
    pub by_priority: Vec<LatencyStats>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BackupMetrics {
    pub persisted: u64,
    pub failures: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeMetrics {
    pub id: NodeId,
    pub kind: String,
    pub role: String,
    pub alive: bool,
    pub emergency_mode: bool,
    pub death_time_ms: Option<Millis>,
    pub battery_percent: Option<f64>,
    pub energy: BTreeMap<Activity, u64>,
    pub energy_total: u64,
    pub consumed: u64,
    pub transmissions: u64,
    pub control_sent: u64,
    pub control_received: u64,
    pub forward: ForwardCounters,
    pub forward_conserved: bool,
    pub olsr: OlsrCounters,
    pub backup: BackupMetrics,
    pub queued: u64,
    pub swapped: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootRecord {
    pub t_ms: Millis,
    pub node: NodeId,
    pub event: String,
}

/// Position estimate a station attaches to a message it received.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocatedDelivery {
    pub msg_id: u64,
    pub src: NodeId,
    pub station: NodeId,
    pub estimate: LocationEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotNode {
    pub id: NodeId,
    pub kind: String,
    pub battery_percent: Option<f64>,
    pub alive: bool,
}

/// The mesh as the nodes' own link tables saw it at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologySnapshot {
    pub t_ms: Millis,
    pub nodes: Vec<SnapshotNode>,
    /// Links both ends consider symmetric.
    pub edges: Vec<(NodeId, NodeId)>,
    /// Edges where one end picked the other as relay.
    pub mpr_edges: Vec<(NodeId, NodeId)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub schema_version: u32,
    pub scenario: String,
    pub seed: u64,
    pub end_time_ms: Millis,
    pub stop_reason: StopReason,
    pub counters: Counters,
    pub latency: LatencyReport,
    pub nodes: Vec<NodeMetrics>,
    pub boot_log: Vec<BootRecord>,
    pub locations: Vec<LocatedDelivery>,
    pub snapshots: Vec<TopologySnapshot>,
}

impl RunMetrics {
    pub fn node(&self, id: NodeId) -> Option<&NodeMetrics> {
        self.nodes.iter().find(|n| n.id == id)
    }

    /// Latest snapshot taken at or before `t`.
    pub fn snapshot_at(&self, t: Millis) -> Option<&TopologySnapshot> {
        latest_snapshot(&self.snapshots, t)
    }
}

pub fn latest_snapshot(snapshots: &[TopologySnapshot], t: Millis) -> Option<&TopologySnapshot> {
    snapshots.iter().take_while(|s| s.t_ms <= t).last()
}

/// The part of a metrics file the topology viewer reads back.
#[derive(Debug, Clone, Deserialize)]
pub struct SnapshotFile {
    pub snapshots: Vec<TopologySnapshot>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Csv,
}

pub fn export_metrics(metrics: &RunMetrics, format: Format) -> String {
    match format {
        Format::Json => {
            let mut s = serde_json::to_string_pretty(metrics).expect("metrics serialize");
            s.push('\n');
            s
        }
        Format::Csv => {
            let value = serde_json::to_value(metrics).expect("metrics serialize");
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(["metric", "value"]).expect("in-memory write");
            for (k, v) in flatten(&value) {
                w.write_record([k, v]).expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
        }
    }
}

/// Dotted-path view of every scalar leaf, in document order. Nulls are
/// skipped; everything else is rendered as JSON would render it.
pub fn flatten(value: &Value) -> Vec<(String, String)> {
    let mut out = Vec::new();
    walk(value, String::new(), &mut out);
    out
}

fn walk(v: &Value, path: String, out: &mut Vec<(String, String)>) {
    let join = |k: &str| if path.is_empty() { k.to_string() } else { format!("{path}.{k}") };
    match v {
        Value::Null => {}
        Value::Object(m) => {
            for (k, v) in m {
                walk(v, join(k), out);
            }
        }
        Value::Array(a) => {
            for (i, v) in a.iter().enumerate() {
                walk(v, join(&i.to_string()), out);
            }
        }
        Value::String(s) => out.push((path, s.clone())),
        other => out.push((path, other.to_string())),
    }
}
