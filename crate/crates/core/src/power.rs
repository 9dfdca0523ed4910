//! Battery accounting, inner/boundary duty cycling and low-battery handoff.
//!
//! The battery model is linear: a node drains a fixed amount per idle hour,
//! an extra amount per hour with the screen on, and a fixed amount per
//! forwarded message or control packet. Energy is tracked in integer units
//! (one full charge is [`UNITS_PER_CAPACITY`]) so per-activity ledgers add
//! up exactly.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backup::BackupStore;
use crate::forward::ForwardEngine;
use crate::graph::Topology;
use crate::message::{EmergencyMessage, NodeId};
use crate::olsr::{graph_mprs, RoutingTable};
use crate::Millis;

pub const UNITS_PER_CAPACITY: u64 = 1_000_000_000_000;
pub const MS_PER_HOUR: f64 = 3_600_000.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PowerError {
    #[error("battery is dead")]
    BatteryDead,
    #[error("calibration needs idle, screen-on and message-interval observations")]
    InsufficientObservations,
    #[error("observations imply a negative {0}")]
    InconsistentObservations(&'static str),
}

/// Drain rates as fractions of a full charge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyModel {
    /// Per hour, screen dimmed.
    pub drain_idle: f64,
    /// Extra per hour with the screen on.
    pub drain_screen_on: f64,
    pub energy_per_message: f64,
    pub energy_per_control: f64,
    /// Fraction of the idle drain spent while asleep.
    pub sleep_factor: f64,
}

impl Default for EnergyModel {
    /// The model fitted to the phone measurements (idle 15 h, screen on
    /// 7 h, one message every 10 s for 7 h).
    fn default() -> Self {
        let screen = 1.0 / 7.0 - 1.0 / 15.0;
        EnergyModel {
            drain_idle: 1.0 / 15.0,
            drain_screen_on: screen,
            energy_per_message: screen / 360.0,
            energy_per_control: 0.0,
            sleep_factor: 0.1,
        }
    }
}

/// A usage pattern: screen state plus a steady message forwarding rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Profile {
    #[serde(default)]
    pub screen_on: bool,
    /// Seconds between forwarded messages; absent means no traffic.
    #[serde(default)]
    pub interval_s: Option<f64>,
}

impl Profile {
    pub const IDLE: Profile = Profile {
        screen_on: false,
        interval_s: None,
    };
    pub const SCREEN: Profile = Profile {
        screen_on: true,
        interval_s: None,
    };

    pub fn forwarding(interval_s: f64) -> Profile {
        Profile {
            screen_on: false,
            interval_s: Some(interval_s),
        }
    }

    pub fn messages_per_hour(&self) -> f64 {
        self.interval_s.map_or(0.0, |s| 3600.0 / s)
    }
}

impl EnergyModel {
    /// Fraction of a full charge drained per hour under `profile`.
    pub fn hourly_drain(&self, profile: &Profile) -> f64 {
        self.drain_idle
            + if profile.screen_on { self.drain_screen_on } else { 0.0 }
            + profile.messages_per_hour() * self.energy_per_message
    }

    /// Hours a full battery of `capacity` charges lasts; infinite when
    /// nothing drains.
    pub fn lifetime_hours(&self, profile: &Profile, capacity: f64) -> f64 {
        let d = self.hourly_drain(profile);
        if d <= 0.0 {
            f64::INFINITY
        } else {
            capacity / d
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Observation {
    pub profile: Profile,
    /// Measured lifetime; `None` for a battery that never ran out.
    pub lifetime_h: Option<f64>,
}

/// Least-squares fit of idle, screen and per-message drain to measured
/// lifetimes, with capacity normalised to one charge. Needs at least one
/// idle, one screen-on and one forwarding observation.
pub fn calibrate(observations: &[Observation]) -> Result<EnergyModel, PowerError> {
    let has = |f: &dyn Fn(&Profile) -> bool| observations.iter().any(|o| f(&o.profile));
    if observations.len() < 3
        || !has(&|p| !p.screen_on && p.interval_s.is_none())
        || !has(&|p| p.screen_on)
        || !has(&|p| p.interval_s.is_some())
    {
        return Err(PowerError::InsufficientObservations);
    }
    let rows = observations.len();
    let a = DMatrix::from_fn(rows, 3, |i, j| {
        let p = &observations[i].profile;
        match j {
            0 => 1.0,
            1 => f64::from(u8::from(p.screen_on)),
            _ => p.messages_per_hour(),
        }
    });
    let b = DVector::from_fn(rows, |i, _| match observations[i].lifetime_h {
        Some(h) if h.is_finite() => 1.0 / h,
        _ => 0.0,
    });
    let x = a
        .svd(true, true)
        .solve(&b, 1e-15)
        .map_err(|_| PowerError::InsufficientObservations)?;
    let names = ["idle drain", "screen drain", "message energy"];
    let mut v = [0.0; 3];
    for (i, name) in names.iter().enumerate() {
        if x[i] < -1e-12 {
            return Err(PowerError::InconsistentObservations(name));
        }
        v[i] = x[i].max(0.0);
    }
    Ok(EnergyModel {
        drain_idle: v[0],
        drain_screen_on: v[1],
        energy_per_message: v[2],
        ..EnergyModel::default()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Activity {
    IdleHour,
    ScreenHour,
    SleepHour,
    ForwardMessage,
    ControlPacket,
}

impl Activity {
    pub const ALL: [Activity; 5] = [
        Activity::IdleHour,
        Activity::ScreenHour,
        Activity::SleepHour,
        Activity::ForwardMessage,
        Activity::ControlPacket,
    ];
}

/// Units drained per activity.
pub type EnergyLedger = BTreeMap<Activity, u64>;

#[derive(Debug, Clone)]
pub struct Battery {
    model: EnergyModel,
    capacity: u64,
    level: u64,
    ledger: EnergyLedger,
}

impl Battery {
    /// A full battery holding `charges` full phone charges.
    pub fn new(model: EnergyModel, charges: f64) -> Self {
        let capacity = (charges * UNITS_PER_CAPACITY as f64).round() as u64;
        Battery {
            model,
            capacity,
            level: capacity,
            ledger: Activity::ALL.iter().map(|&a| (a, 0)).collect(),
        }
    }

    /// Starts at `percent` of capacity instead of full.
    pub fn with_level_percent(mut self, percent: f64) -> Self {
        self.level = (self.capacity as f64 * percent.clamp(0.0, 100.0) / 100.0).round() as u64;
        self
    }

    pub fn model(&self) -> &EnergyModel {
        &self.model
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn level(&self) -> u64 {
        self.level
    }

    pub fn percent(&self) -> f64 {
        if self.capacity == 0 {
            0.0
        } else {
            100.0 * self.level as f64 / self.capacity as f64
        }
    }

    pub fn is_dead(&self) -> bool {
        self.level == 0
    }

    pub fn ledger(&self) -> &EnergyLedger {
        &self.ledger
    }

    /// Sum of the ledger: everything drained so far.
    pub fn drained(&self) -> u64 {
        self.ledger.values().sum()
    }

    /// Units one unit of `activity` costs (per hour for the hourly ones).
    pub fn unit_cost(&self, activity: Activity) -> f64 {
        let m = &self.model;
        let per_charge = match activity {
            Activity::IdleHour => m.drain_idle,
            Activity::ScreenHour => m.drain_idle + m.drain_screen_on,
            Activity::SleepHour => m.drain_idle * m.sleep_factor,
            Activity::ForwardMessage => m.energy_per_message,
            Activity::ControlPacket => m.energy_per_control,
        };
        per_charge * UNITS_PER_CAPACITY as f64
    }

    /// Drains `amount` of `activity` (hours, or a count of packets). Returns
    /// the units actually taken; errors once the battery is empty.
    pub fn drain(&mut self, activity: Activity, amount: f64) -> Result<u64, PowerError> {
        if self.level == 0 {
            return Err(PowerError::BatteryDead);
        }
        let cost = (self.unit_cost(activity) * amount.max(0.0)).round() as u64;
        let taken = cost.min(self.level);
        self.level -= taken;
        *self.ledger.entry(activity).or_insert(0) += taken;
        if self.level == 0 {
            Err(PowerError::BatteryDead)
        } else {
            Ok(taken)
        }
    }

    /// Drains elapsed wall time in the given hourly activity.
    pub fn drain_time(&mut self, activity: Activity, elapsed: Millis) -> Result<u64, PowerError> {
        self.drain(activity, elapsed as f64 / MS_PER_HOUR)
    }

    /// Milliseconds until empty if only `activity` keeps running.
    pub fn time_to_empty(&self, activity: Activity) -> Option<Millis> {
        let per_ms = self.unit_cost(activity) / MS_PER_HOUR;
        (per_ms > 0.0).then(|| (self.level as f64 / per_ms).ceil() as Millis)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Role {
    Boundary,
    Inner,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoleAssignment {
    pub role: Role,
    /// Fraction of each period spent awake; 1 for boundary nodes.
    pub duty_cycle: f64,
    pub period_ms: Millis,
    pub wake_offset_ms: Millis,
}

impl RoleAssignment {
    pub const ALWAYS_ON: RoleAssignment = RoleAssignment {
        role: Role::Boundary,
        duty_cycle: 1.0,
        period_ms: 1,
        wake_offset_ms: 0,
    };

    pub fn is_awake(&self, t: Millis) -> bool {
        if self.duty_cycle >= 1.0 {
            return true;
        }
        let awake = (self.duty_cycle * self.period_ms as f64).round() as Millis;
        (t + self.period_ms - self.wake_offset_ms % self.period_ms) % self.period_ms < awake
    }

    /// Next instant at or after `t` when the node is awake.
    pub fn next_wake(&self, t: Millis) -> Millis {
        if self.is_awake(t) {
            return t;
        }
        let phase = (t + self.period_ms - self.wake_offset_ms % self.period_ms) % self.period_ms;
        t + (self.period_ms - phase)
    }

    /// Next instant after `t` when the node falls asleep, if it ever does.
    pub fn next_sleep(&self, t: Millis) -> Option<Millis> {
        if self.duty_cycle >= 1.0 {
            return None;
        }
        let awake = (self.duty_cycle * self.period_ms as f64).round() as Millis;
        let phase = (t + self.period_ms - self.wake_offset_ms % self.period_ms) % self.period_ms;
        Some(if phase < awake { t + (awake - phase) } else { t + (self.period_ms - phase) + awake })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DutyConfig {
    pub duty_cycle: f64,
    pub period_ms: Millis,
}

impl Default for DutyConfig {
    fn default() -> Self {
        DutyConfig {
            duty_cycle: 0.5,
            period_ms: 4_000,
        }
    }
}

/// Boundary nodes are the stations, the nodes adjacent to a station, and
/// every node some neighbor picked as relay. The rest are inner nodes and
/// sleep part of each period, with wake phases staggered by address.
pub fn classify_roles(
    topology: &Topology,
    stations: &BTreeSet<NodeId>,
    duty: DutyConfig,
) -> BTreeMap<NodeId, RoleAssignment> {
    let mut boundary: BTreeSet<NodeId> = graph_mprs(topology).into_values().flatten().collect();
    for &s in stations {
        if topology.contains(s) {
            boundary.insert(s);
            boundary.extend(topology.neighbors(s));
        }
    }
    topology
        .nodes()
        .map(|n| {
            let a = if boundary.contains(&n) {
                RoleAssignment::ALWAYS_ON
            } else {
                RoleAssignment {
                    role: Role::Inner,
                    duty_cycle: duty.duty_cycle,
                    period_ms: duty.period_ms,
                    wake_offset_ms: u64::from(n.0.wrapping_mul(2_654_435_761)) % duty.period_ms,
                }
            };
            (n, a)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HandoffConfig {
    /// Below this battery percentage the node hands its messages off.
    pub threshold_percent: f64,
    /// At or below this percentage every incoming message is refused.
    pub floor_percent: f64,
}

impl Default for HandoffConfig {
    fn default() -> Self {
        HandoffConfig {
            threshold_percent: 10.0,
            floor_percent: 2.0,
        }
    }
}

impl HandoffConfig {
    /// Probability of accepting an incoming message: 1 at or above the
    /// threshold, falling linearly to 0 at the floor.
    pub fn acceptance_probability(&self, battery_percent: f64) -> f64 {
        if battery_percent >= self.threshold_percent {
            1.0
        } else if battery_percent <= self.floor_percent {
            0.0
        } else {
            (battery_percent - self.floor_percent) / (self.threshold_percent - self.floor_percent)
        }
    }

    pub fn accept_incoming(&self, battery_percent: f64, rng: &mut impl Rng) -> bool {
        let p = self.acceptance_probability(battery_percent);
        p >= 1.0 || (p > 0.0 && rng.random::<f64>() < p)
    }

    pub fn should_hand_off(&self, battery_percent: f64) -> bool {
        battery_percent < self.threshold_percent
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HandoffAction {
    Flush { message: EmergencyMessage, next_hop: NodeId },
    Persist { message: EmergencyMessage },
    /// Could not be persisted either (store full).
    Lost { message: EmergencyMessage },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HandoffReport {
    pub actions: Vec<HandoffAction>,
    /// No route toward a station existed, so messages went to backup.
    pub no_neighbor: bool,
}

impl HandoffReport {
    pub fn count(&self, f: impl Fn(&HandoffAction) -> bool) -> usize {
        self.actions.iter().filter(|a| f(a)).count()
    }
}

/// Next hop of the nearest reachable station (fewest hops, then lowest id).
pub fn next_hop_to_station(routes: &RoutingTable) -> Option<NodeId> {
    routes
        .iter()
        .filter(|(d, _)| d.is_station_reserved())
        .min_by_key(|(d, r)| (r.hops, **d))
        .map(|(_, r)| r.next_hop)
}

/// Empties the engine's queues and swap store: every message goes to the
/// next hop toward the nearest station, or into `store` when no station is
/// reachable.
pub fn low_battery_handoff(engine: &mut ForwardEngine, routes: &RoutingTable, store: &mut BackupStore) -> HandoffReport {
    let held = engine.drain_all();
    let next = next_hop_to_station(routes).filter(|&h| h != engine.node());
    let mut report = HandoffReport {
        actions: Vec::with_capacity(held.len()),
        no_neighbor: next.is_none(),
    };
    for message in held {
        let action = match next {
            Some(next_hop) => HandoffAction::Flush { message, next_hop },
            None => match store.persist(&message) {
                Ok(_) => HandoffAction::Persist { message },
                Err(_) => HandoffAction::Lost { message },
            },
        };
        report.actions.push(action);
    }
    report
}
