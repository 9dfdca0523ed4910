//! Store-and-forward of emergency messages through five priority queues.
//!
//! Messages live in one FIFO queue per priority level while they fit in the
//! node's RAM budget. Under memory pressure the newest priority-4, then
//! priority-3 messages are moved to a swap store on secondary storage; they
//! come back once queues 0 and 1 are both empty. A message whose destination
//! is unreachable is demoted one level and retried on the next tick.

use std::collections::{HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::codec::{decode_message, encoded_len};
use crate::message::{EmergencyMessage, MessageId, NodeId, Priority};
use crate::olsr::RoutingTable;
use crate::Millis;

/// Default RAM budget: 2 MiB of encoded-message bytes.
pub const DEFAULT_RAM_BUDGET: usize = 2 * 1024 * 1024;
/// Capacity of the recently-delivered id set used for duplicate suppression.
pub const RECENT_ID_CAPACITY: usize = 4096;

const LEVELS: usize = Priority::LEVELS;

#[derive(Debug, Clone)]
struct Slot {
    msg: EmergencyMessage,
    size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DropReason {
    /// Queues 0–2 alone leave no room for the message.
    RamExhausted,
    /// The id was already forwarded by this node.
    Duplicate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnqueueOutcome {
    /// Stored. `evicted` messages (possibly including this one) went to swap.
    Queued { evicted: usize },
    Dropped(DropReason),
}

/// Trace of bank operations, recorded only when enabled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BankEvent {
    Enqueued { id: MessageId, priority: Priority },
    Dequeued { id: MessageId, level: usize, lengths_before: [usize; LEVELS] },
    SwappedOut { id: MessageId, priority: Priority },
    SwapIn { lengths_before: [usize; LEVELS], count: usize },
    Promoted,
    /// A failed attempt lowered the message's priority.
    Demoted { id: MessageId, from: Priority, to: Priority },
}

/// Per-tick view of the bank, exported as JSON for metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueSnapshot {
    pub lengths: [usize; LEVELS],
    pub swap_depth: usize,
    pub ram_used: usize,
    pub ram_budget: usize,
}

/// Five FIFO queues plus the swap store.
#[derive(Debug, Clone)]
pub struct PriorityQueueBank {
    queues: [VecDeque<Slot>; LEVELS],
    queue_bytes: [usize; LEVELS],
    ram_used: usize,
    ram_budget: usize,
    swap_store: VecDeque<Slot>,
    trace: Option<Vec<BankEvent>>,
}

impl PriorityQueueBank {
    pub fn new(ram_budget: usize) -> Self {
        PriorityQueueBank {
            queues: Default::default(),
            queue_bytes: [0; LEVELS],
            ram_used: 0,
            ram_budget,
            swap_store: VecDeque::new(),
            trace: None,
        }
    }

    /// Starts recording [`BankEvent`]s.
    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    pub fn take_trace(&mut self) -> Vec<BankEvent> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    fn record(&mut self, ev: BankEvent) {
        if let Some(t) = self.trace.as_mut() {
            t.push(ev);
        }
    }

    pub fn ram_used(&self) -> usize {
        self.ram_used
    }

    pub fn ram_budget(&self) -> usize {
        self.ram_budget
    }

    pub fn lengths(&self) -> [usize; LEVELS] {
        std::array::from_fn(|i| self.queues[i].len())
    }

    pub fn queue_len(&self, level: usize) -> usize {
        self.queues[level].len()
    }

    pub fn swap_depth(&self) -> usize {
        self.swap_store.len()
    }

    pub fn queued(&self) -> usize {
        self.queues.iter().map(VecDeque::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.queued() == 0 && self.swap_store.is_empty()
    }

    pub fn snapshot(&self) -> QueueSnapshot {
        QueueSnapshot {
            lengths: self.lengths(),
            swap_depth: self.swap_store.len(),
            ram_used: self.ram_used,
            ram_budget: self.ram_budget,
        }
    }

    /// Messages currently queued, by level, in FIFO order.
    pub fn queue(&self, level: usize) -> impl Iterator<Item = &EmergencyMessage> {
        self.queues[level].iter().map(|s| &s.msg)
    }

    /// Swapped messages in swap order.
    pub fn swapped(&self) -> impl Iterator<Item = &EmergencyMessage> {
        self.swap_store.iter().map(|s| &s.msg)
    }

    /// Ids of every message held in RAM or swap.
    pub fn held_ids(&self) -> impl Iterator<Item = MessageId> + '_ {
        self.queues
            .iter()
            .flatten()
            .chain(self.swap_store.iter())
            .map(|s| s.msg.msg_id)
    }

    pub fn contains(&self, id: MessageId) -> bool {
        self.held_ids().any(|h| h == id)
    }

    /// Appends `msg` to the queue of its priority, then restores the RAM
    /// budget by swapping out the newest priority-4, then priority-3
    /// messages. If queues 0–2 (plus `msg` when it is urgent) cannot fit,
    /// `msg` is dropped and nothing is evicted.
    pub fn enqueue(&mut self, msg: EmergencyMessage) -> EnqueueOutcome {
        let size = encoded_len(&msg);
        let level = msg.priority.index();
        let evictable = self.queue_bytes[3] + self.queue_bytes[4];
        let pinned = self.ram_used - evictable + if level < 3 { size } else { 0 };
        if pinned > self.ram_budget {
            return EnqueueOutcome::Dropped(DropReason::RamExhausted);
        }
        self.record(BankEvent::Enqueued {
            id: msg.msg_id,
            priority: msg.priority,
        });
        self.queues[level].push_back(Slot { msg, size });
        self.queue_bytes[level] += size;
        self.ram_used += size;

        let mut evicted = 0;
        while self.ram_used > self.ram_budget {
            let from = if self.queues[4].is_empty() { 3 } else { 4 };
            let slot = self.queues[from]
                .pop_back()
                .expect("pinned bytes fit, so an evictable message exists");
            self.queue_bytes[from] -= slot.size;
            self.ram_used -= slot.size;
            self.record(BankEvent::SwappedOut {
                id: slot.msg.msg_id,
                priority: slot.msg.priority,
            });
            self.swap_store.push_back(slot);
            evicted += 1;
        }
        EnqueueOutcome::Queued { evicted }
    }

    /// Removes the head of the most urgent non-empty queue, returning it with
    /// the level it came from. The swap store is not consulted.
    pub fn dequeue_next(&mut self) -> Option<(EmergencyMessage, usize)> {
        let level = (0..LEVELS).find(|&l| !self.queues[l].is_empty())?;
        let lengths_before = self.lengths();
        let slot = self.queues[level].pop_front().expect("non-empty");
        self.queue_bytes[level] -= slot.size;
        self.ram_used -= slot.size;
        self.record(BankEvent::Dequeued {
            id: slot.msg.msg_id,
            level,
            lengths_before,
        });
        Some((slot.msg, level))
    }

    /// Shifts every queue one level up (4→3, …, 1→0), appending behind what
    /// the target already holds and rewriting the moved messages' priority.
    pub fn promote_queues(&mut self) {
        for k in 1..LEVELS {
            let moved = std::mem::take(&mut self.queues[k]);
            let bytes = std::mem::take(&mut self.queue_bytes[k]);
            let target = Priority::new((k - 1) as u8).expect("level in range");
            self.queues[k - 1].extend(moved.into_iter().map(|mut s| {
                s.msg.priority = target;
                s
            }));
            self.queue_bytes[k - 1] += bytes;
        }
        self.record(BankEvent::Promoted);
    }

    /// Whether [`Self::swap_in`] would act: queues 0 and 1 empty and
    /// something swapped out.
    pub fn swap_in_eligible(&self) -> bool {
        self.queues[0].is_empty() && self.queues[1].is_empty() && !self.swap_store.is_empty()
    }

    /// Re-enqueues every swapped message in swap order at the priority it
    /// had when swapped out. Messages that still do not fit go straight back
    /// to swap. Returns how many were taken out of the store.
    pub fn swap_in(&mut self) -> usize {
        if !self.swap_in_eligible() {
            return 0;
        }
        let batch = std::mem::take(&mut self.swap_store);
        let count = batch.len();
        self.record(BankEvent::SwapIn {
            lengths_before: self.lengths(),
            count,
        });
        for slot in batch {
            // Swapped messages are priority 3 or 4, hence always storable.
            let outcome = self.enqueue(slot.msg);
            debug_assert!(matches!(outcome, EnqueueOutcome::Queued { .. }));
        }
        count
    }

    /// Empties the bank, returning queued messages (most urgent first) then
    /// swapped ones.
    pub fn drain_all(&mut self) -> Vec<EmergencyMessage> {
        let mut out: Vec<EmergencyMessage> = Vec::with_capacity(self.queued() + self.swap_depth());
        for q in self.queues.iter_mut() {
            out.extend(q.drain(..).map(|s| s.msg));
        }
        out.extend(self.swap_store.drain(..).map(|s| s.msg));
        self.queue_bytes = [0; LEVELS];
        self.ram_used = 0;
        out
    }
}

/// Bounded set of recently forwarded ids. Re-inserting refreshes an entry;
/// the least recently inserted id is evicted when full.
#[derive(Debug, Clone)]
pub struct RecentIds {
    capacity: usize,
    order: VecDeque<MessageId>,
    members: HashSet<MessageId>,
}

impl RecentIds {
    pub fn new(capacity: usize) -> Self {
        RecentIds {
            capacity,
            order: VecDeque::with_capacity(capacity),
            members: HashSet::with_capacity(capacity),
        }
    }

    pub fn contains(&self, id: MessageId) -> bool {
        self.members.contains(&id)
    }

    pub fn insert(&mut self, id: MessageId) {
        if self.members.contains(&id) {
            self.order.retain(|x| *x != id);
        } else {
            self.members.insert(id);
        }
        self.order.push_back(id);
        while self.order.len() > self.capacity {
            if let Some(old) = self.order.pop_front() {
                self.members.remove(&old);
            }
        }
    }

    pub fn remove(&mut self, id: MessageId) {
        if self.members.remove(&id) {
            self.order.retain(|x| *x != id);
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ForwardOutcome {
    /// Handed to `next_hop` (which is this node itself for loopback delivery).
    Delivered { next_hop: NodeId, message: EmergencyMessage },
    /// No route; the message was demoted and re-queued.
    Unreachable { message: EmergencyMessage },
    Dropped { id: MessageId, reason: DropReason },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ReceiveOutcome {
    Accepted { message: EmergencyMessage, placement: EnqueueOutcome },
    Ignored,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForwardCounters {
    pub accepted: u64,
    pub ignored: u64,
    pub delivered: u64,
    pub unreachable: u64,
    /// Messages handed back after a failed transmission.
    pub returned: u64,
    pub dropped_ram: u64,
    pub dropped_duplicate: u64,
    /// Messages removed wholesale by [`ForwardEngine::drain_all`].
    pub drained: u64,
    pub demotions: u64,
    pub promotions: u64,
    pub swapped_in: u64,
}

impl ForwardCounters {
    pub fn dropped(&self) -> u64 {
        self.dropped_ram + self.dropped_duplicate
    }
}

/// One node's forward message module: receive filter, priority bank and
/// forwarding loop.
#[derive(Debug, Clone)]
pub struct ForwardEngine {
    node: NodeId,
    bank: PriorityQueueBank,
    recent: RecentIds,
    counters: ForwardCounters,
}

impl ForwardEngine {
    pub fn new(node: NodeId, ram_budget: usize) -> Self {
        ForwardEngine {
            node,
            bank: PriorityQueueBank::new(ram_budget),
            recent: RecentIds::new(RECENT_ID_CAPACITY),
            counters: ForwardCounters::default(),
        }
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn bank(&self) -> &PriorityQueueBank {
        &self.bank
    }

    pub fn bank_mut(&mut self) -> &mut PriorityQueueBank {
        &mut self.bank
    }

    pub fn counters(&self) -> ForwardCounters {
        self.counters
    }

    /// Whether this node already forwarded `id` recently.
    pub fn recently_forwarded(&self, id: MessageId) -> bool {
        self.recent.contains(id)
    }

    /// Receive filter: only bytes that decode as a valid emergency message
    /// are accepted; everything else is ignored and counted.
    pub fn receive(&mut self, bytes: &[u8]) -> ReceiveOutcome {
        match decode_message(bytes) {
            Ok(message) => {
                let placement = self.accept(message.clone());
                ReceiveOutcome::Accepted { message, placement }
            }
            Err(_) => {
                self.counters.ignored += 1;
                ReceiveOutcome::Ignored
            }
        }
    }

    /// Admits an already-decoded message (e.g. one created locally).
    pub fn accept(&mut self, message: EmergencyMessage) -> EnqueueOutcome {
        self.counters.accepted += 1;
        if self.recent.contains(message.msg_id) {
            self.counters.dropped_duplicate += 1;
            return EnqueueOutcome::Dropped(DropReason::Duplicate);
        }
        self.enqueue_counted(message)
    }

    fn enqueue_counted(&mut self, message: EmergencyMessage) -> EnqueueOutcome {
        let outcome = self.bank.enqueue(message);
        if outcome == EnqueueOutcome::Dropped(DropReason::RamExhausted) {
            self.counters.dropped_ram += 1;
        }
        outcome
    }

    /// Next hop for `dst`: ourselves for local delivery, the routing table
    /// entry, or for a station address the nearest reachable station.
    pub fn next_hop(&self, routes: &RoutingTable, dst: NodeId) -> Option<NodeId> {
        if dst == self.node {
            return Some(self.node);
        }
        if let Some(r) = routes.get(&dst) {
            return Some(r.next_hop);
        }
        if dst.is_station_reserved() {
            return routes
                .iter()
                .filter(|(d, _)| d.is_station_reserved())
                .min_by_key(|(d, r)| (r.hops, **d))
                .map(|(_, r)| r.next_hop);
        }
        None
    }

    /// Demotes `message` one level (saturating at 4) and re-queues it.
    pub fn on_send_failure(&mut self, mut message: EmergencyMessage) -> EnqueueOutcome {
        let from = message.priority;
        message.priority = from.demoted();
        self.bank.record(BankEvent::Demoted {
            id: message.msg_id,
            from,
            to: message.priority,
        });
        self.counters.demotions += 1;
        self.enqueue_counted(message)
    }

    /// Hands back a message whose transmission failed after it was
    /// delivered to the link: it is forgotten as forwarded, demoted and
    /// re-queued. `message` is the copy as it was before the send.
    pub fn on_transmission_failure(&mut self, message: EmergencyMessage) -> EnqueueOutcome {
        self.counters.returned += 1;
        self.recent.remove(message.msg_id);
        self.on_send_failure(message)
    }

    /// One scheduling step: swap in if queues 0–1 ran dry, take the most
    /// urgent message and route it. Handing to a neighbor counts a hop;
    /// local delivery does not. A delivery that empties its queue level
    /// promotes the lower queues; a missing route demotes the message.
    pub fn forward_tick(&mut self, routes: &RoutingTable, _now: Millis) -> Vec<ForwardOutcome> {
        let mut out = Vec::new();
        if self.bank.swap_in_eligible() {
            self.counters.swapped_in += self.bank.swap_in() as u64;
        }
        let Some((mut message, level)) = self.bank.dequeue_next() else {
            return out;
        };
        match self.next_hop(routes, message.dst) {
            Some(next_hop) => {
                if next_hop != self.node {
                    message.hop_count += 1;
                }
                self.recent.insert(message.msg_id);
                self.counters.delivered += 1;
                out.push(ForwardOutcome::Delivered { next_hop, message });
                if self.bank.queue_len(level) == 0 {
                    self.bank.promote_queues();
                    self.counters.promotions += 1;
                }
            }
            None => {
                self.counters.unreachable += 1;
                let id = message.msg_id;
                out.push(ForwardOutcome::Unreachable {
                    message: message.clone(),
                });
                if let EnqueueOutcome::Dropped(reason) = self.on_send_failure(message) {
                    out.push(ForwardOutcome::Dropped { id, reason });
                }
            }
        }
        out
    }

    /// Removes every held message (queued first, then swapped).
    pub fn drain_all(&mut self) -> Vec<EmergencyMessage> {
        let out = self.bank.drain_all();
        self.counters.drained += out.len() as u64;
        out
    }

    /// Bookkeeping identity: everything accepted or handed back is either
    /// delivered, dropped, drained or still held.
    pub fn is_conserved(&self) -> bool {
        let c = &self.counters;
        c.accepted + c.returned
            == c.delivered + c.dropped() + c.drained + (self.bank.queued() + self.bank.swap_depth()) as u64
    }
}
