use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::protocols::SyncMessage;
use crate::topology::NodeId;

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    /// Power-up. `initial` marks the staggered first start, which skips the
    /// listen-only warm-up.
    PowerOn { node: NodeId, initial: bool },
    PowerOff { node: NodeId },
    FreqStep { node: NodeId, new_freq: f64 },
    Beacon { node: NodeId, epoch: u64 },
    /// Delayed relay of whatever the node's payload is at that instant.
    Transmit { node: NodeId, life: u64 },
    Deliver { to: NodeId, message: SyncMessage },
    Sample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimEvent {
    pub time: f64,
    pub tiebreak: u64,
    pub kind: EventKind,
}

impl Eq for SimEvent {}

impl Ord for SimEvent {
    // Reversed so that BinaryHeap pops the earliest event first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.tiebreak.cmp(&self.tiebreak))
    }
}

impl PartialOrd for SimEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Min-queue on `(time, tiebreak)` with tiebreaks assigned in insertion
/// order.
#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<SimEvent>,
    next_tiebreak: u64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, time: f64, kind: EventKind) {
        let tiebreak = self.next_tiebreak;
        self.next_tiebreak += 1;
        self.heap.push(SimEvent {
            time,
            tiebreak,
            kind,
        });
    }

    pub fn pop(&mut self) -> Option<SimEvent> {
        self.heap.pop()
    }

    pub fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|e| e.time)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn drain(self) -> impl Iterator<Item = SimEvent> {
        self.heap.into_iter()
    }
}
