//! Emergency boot: deciding when an ordinary router switches into
//! emergency mode.
//!
//! Three independent triggers: loss of mains power (debounced), an abnormal
//! jump in the backup battery's drain rate, and peer scanning for beacons
//! that carry an emergency signature.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::Topology;
use crate::message::NodeId;
use crate::Millis;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BootAction {
    EnterEmergency,
    NoAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PowerEvent {
    MainsLost,
    MainsRestored,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PowerSource {
    Mains,
    Battery,
}

/// Mains-loss trigger. Emergency mode is entered only once mains has been
/// gone for the whole debounce window, and at most once per outage.
#[derive(Debug, Clone)]
pub struct MainsMonitor {
    debounce: Millis,
    lost_at: Option<Millis>,
    fired: bool,
}

impl Default for MainsMonitor {
    fn default() -> Self {
        MainsMonitor::new(30_000)
    }
}

impl MainsMonitor {
    pub fn new(debounce: Millis) -> Self {
        MainsMonitor {
            debounce,
            lost_at: None,
            fired: false,
        }
    }

    pub fn source(&self) -> PowerSource {
        if self.lost_at.is_some() {
            PowerSource::Battery
        } else {
            PowerSource::Mains
        }
    }

    /// Feeds a power event. Only [`Self::poll`] ever emits EnterEmergency,
    /// except that a zero debounce fires immediately.
    pub fn on_power_event(&mut self, event: PowerEvent, now: Millis) -> BootAction {
        match event {
            PowerEvent::MainsLost => {
                if self.lost_at.is_none() {
                    self.lost_at = Some(now);
                    self.fired = false;
                }
                self.poll(now)
            }
            PowerEvent::MainsRestored => {
                self.lost_at = None;
                BootAction::NoAction
            }
        }
    }

    /// When the current outage will have lasted the full window, if it has
    /// not fired yet.
    pub fn deadline(&self) -> Option<Millis> {
        match self.lost_at {
            Some(t) if !self.fired => Some(t + self.debounce),
            _ => None,
        }
    }

    pub fn poll(&mut self, now: Millis) -> BootAction {
        match self.deadline() {
            Some(d) if now >= d => {
                self.fired = true;
                BootAction::EnterEmergency
            }
            _ => BootAction::NoAction,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BootError {
    #[error("not enough battery history to judge the drain rate")]
    InsufficientHistory,
    #[error("sample at {0} ms is not after the previous one")]
    NonMonotonic(Millis),
    #[error("battery level {0} outside 0..=100")]
    BadLevel(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DrainConfig {
    pub window_ms: Millis,
    pub theta: f64,
    pub baseline_span_ms: Millis,
    pub rate_limit_ms: Millis,
    /// Lower bound on the baseline, in %/min, so a perfectly flat history
    /// does not make any measurement noise look like a spike.
    pub baseline_floor: f64,
    /// Window rates needed before a baseline is trusted.
    pub min_baseline_points: usize,
}

impl Default for DrainConfig {
    fn default() -> Self {
        DrainConfig {
            window_ms: 60_000,
            theta: 5.0,
            baseline_span_ms: 600_000,
            rate_limit_ms: 3_600_000,
            baseline_floor: 0.01,
            min_baseline_points: 5,
        }
    }
}

/// Battery-drop trigger. Each sample yields a drain rate (least-squares
/// slope over the last window, in %/min); the detector fires when that rate
/// exceeds θ times the median rate of the preceding span.
#[derive(Debug, Clone)]
pub struct DrainDetector {
    config: DrainConfig,
    samples: VecDeque<(Millis, f64)>,
    rates: VecDeque<(Millis, f64)>,
    last_fired: Option<Millis>,
}

impl Default for DrainDetector {
    fn default() -> Self {
        DrainDetector::new(DrainConfig::default())
    }
}

impl DrainDetector {
    pub fn new(config: DrainConfig) -> Self {
        DrainDetector {
            config,
            samples: VecDeque::new(),
            rates: VecDeque::new(),
            last_fired: None,
        }
    }

    pub fn config(&self) -> &DrainConfig {
        &self.config
    }

    fn window_rate(&self) -> Option<f64> {
        let n = self.samples.len() as f64;
        if n < 2.0 {
            return None;
        }
        let t0 = self.samples[0].0;
        let xs = || self.samples.iter().map(|&(t, _)| (t - t0) as f64 / 60_000.0);
        let mx = xs().sum::<f64>() / n;
        let my = self.samples.iter().map(|&(_, p)| p).sum::<f64>() / n;
        let sxx: f64 = xs().map(|x| (x - mx).powi(2)).sum();
        if sxx == 0.0 {
            return None;
        }
        let sxy: f64 = xs().zip(self.samples.iter()).map(|(x, &(_, p))| (x - mx) * (p - my)).sum();
        Some(-sxy / sxx)
    }

    /// Median of the window rates recorded in the baseline span before `now`.
    pub fn baseline(&self, now: Millis) -> Option<f64> {
        let from = now.saturating_sub(self.config.baseline_span_ms);
        let mut v: Vec<f64> = self
            .rates
            .iter()
            .filter(|&&(t, _)| t >= from && t < now)
            .map(|&(_, r)| r)
            .collect();
        if v.len() < self.config.min_baseline_points {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let m = v.len() / 2;
        Some(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2.0 })
    }

    /// Adds a `(time, battery %)` sample and judges the current drain rate.
    pub fn detect_battery_drop(&mut self, now: Millis, percent: f64) -> Result<BootAction, BootError> {
        if !(0.0..=100.0).contains(&percent) {
            return Err(BootError::BadLevel(percent));
        }
        if self.samples.back().is_some_and(|&(t, _)| t >= now) {
            return Err(BootError::NonMonotonic(now));
        }
        self.samples.push_back((now, percent));
        let window_start = now.saturating_sub(self.config.window_ms);
        while self.samples.front().is_some_and(|&(t, _)| t < window_start) {
            self.samples.pop_front();
        }
        let rate = self.window_rate().ok_or(BootError::InsufficientHistory)?;
        let baseline = self.baseline(now);
        self.rates.push_back((now, rate));
        let keep_from = now.saturating_sub(self.config.baseline_span_ms);
        while self.rates.front().is_some_and(|&(t, _)| t < keep_from) {
            self.rates.pop_front();
        }
        let baseline = baseline.ok_or(BootError::InsufficientHistory)?;
        let limited = self
            .last_fired
            .is_some_and(|t| now - t < self.config.rate_limit_ms);
        if !limited && rate > self.config.theta * baseline.max(self.config.baseline_floor) {
            self.last_fired = Some(now);
            Ok(BootAction::EnterEmergency)
        } else {
            Ok(BootAction::NoAction)
        }
    }

    /// [`Self::detect_battery_drop`] with missing history read as NoAction.
    pub fn observe(&mut self, now: Millis, percent: f64) -> BootAction {
        match self.detect_battery_drop(now, percent) {
            Ok(a) => a,
            Err(_) => BootAction::NoAction,
        }
    }
}

/// Marker carried in a node's beacon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub enum Signature {
    #[default]
    None,
    EmergencyNode,
    TemporaryStation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeerObservation {
    pub ssid: String,
    /// Received signal strength in dBm.
    pub signal_strength: f64,
    pub signature: Signature,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BootDecision {
    Switch,
    Join,
    Wait,
}

pub fn scan_and_decide(observations: &[PeerObservation]) -> BootDecision {
    let best = observations.iter().map(|o| o.signature).max().unwrap_or_default();
    match best {
        Signature::TemporaryStation => BootDecision::Switch,
        Signature::EmergencyNode => BootDecision::Join,
        Signature::None => BootDecision::Wait,
    }
}

/// Peer-scanning state of one router.
#[derive(Debug, Clone)]
pub struct ScanController {
    signature: Signature,
    interval: Millis,
    next_scan: Millis,
}

impl ScanController {
    /// A router in normal mode whose first scan happens at `first_scan`.
    pub fn new(interval: Millis, first_scan: Millis) -> Self {
        ScanController {
            signature: Signature::None,
            interval,
            next_scan: first_scan,
        }
    }

    pub fn signature(&self) -> Signature {
        self.signature
    }

    pub fn in_emergency(&self) -> bool {
        self.signature != Signature::None
    }

    /// Puts the router into emergency mode through another trigger.
    pub fn enter_emergency(&mut self) {
        if self.signature == Signature::None {
            self.signature = Signature::EmergencyNode;
        }
    }

    /// Next scheduled scan, or `None` once in emergency mode.
    pub fn next_scan(&self) -> Option<Millis> {
        (!self.in_emergency()).then_some(self.next_scan)
    }

    /// Applies one scan's result. Switch and Join set our own signature;
    /// Wait schedules the next scan one interval later.
    pub fn on_scan(&mut self, observations: &[PeerObservation], now: Millis) -> BootDecision {
        let d = scan_and_decide(observations);
        match d {
            BootDecision::Switch | BootDecision::Join => self.enter_emergency(),
            BootDecision::Wait => self.next_scan = now + self.interval,
        }
        d
    }
}

/// Synchronous scan rounds over `graph`: in each round every normal-mode
/// node scans its neighbors' signatures as they stood at the start of the
/// round. Returns the signatures after each round until nothing changes.
pub fn scan_rounds(graph: &Topology, initial: &BTreeMap<NodeId, Signature>) -> Vec<BTreeMap<NodeId, Signature>> {
    let mut current: BTreeMap<NodeId, Signature> = graph
        .nodes()
        .map(|n| (n, initial.get(&n).copied().unwrap_or_default()))
        .collect();
    let mut history = Vec::new();
    loop {
        let mut next = current.clone();
        for (&n, sig) in next.iter_mut() {
            if *sig != Signature::None {
                continue;
            }
            let obs: Vec<PeerObservation> = graph
                .neighbors(n)
                .map(|m| PeerObservation {
                    ssid: m.to_string(),
                    signal_strength: -60.0,
                    signature: current[&m],
                })
                .collect();
            if scan_and_decide(&obs) != BootDecision::Wait {
                *sig = Signature::EmergencyNode;
            }
        }
        if next == current {
            return history;
        }
        history.push(next.clone());
        current = next;
    }
}
