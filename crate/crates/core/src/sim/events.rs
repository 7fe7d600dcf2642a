use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;

use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    TrainingComplete,
    UploadArrive,
    BroadcastDeliver,
    PullPoll,
    RefinementTick,
    DriftTrigger,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::TrainingComplete => "training_complete",
            Self::UploadArrive => "upload_arrive",
            Self::BroadcastDeliver => "broadcast_deliver",
            Self::PullPoll => "pull_poll",
            Self::RefinementTick => "refinement_tick",
            Self::DriftTrigger => "drift_trigger",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Self::TrainingComplete,
            Self::UploadArrive,
            Self::BroadcastDeliver,
            Self::PullPoll,
            Self::RefinementTick,
            Self::DriftTrigger,
        ]
        .into_iter()
        .find(|k| k.as_str() == s)
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct Event<P> {
    pub at: f64,
    pub seq: u64,
    pub kind: EventKind,
    pub payload: P,
}

impl<P> PartialEq for Event<P> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<P> Eq for Event<P> {}

impl<P> PartialOrd for Event<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Event<P> {
    /// Reversed so the max-heap pops the earliest `(at, seq)` first.
    fn cmp(&self, other: &Self) -> Ordering {
        other.at.total_cmp(&self.at).then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Min-queue on `(at, seq)`; `seq` is assigned on insertion.
#[derive(Debug)]
pub struct EventQueue<P> {
    heap: BinaryHeap<Event<P>>,
    next_seq: u64,
    now: f64,
}

impl<P> Default for EventQueue<P> {
    fn default() -> Self {
        Self { heap: BinaryHeap::new(), next_seq: 0, now: 0.0 }
    }
}

impl<P> EventQueue<P> {
    pub fn new() -> Self {
        Self::default()
    }

    /// # Panics
    /// If `at` is negative, not finite, or earlier than the last popped event.
    pub fn schedule(&mut self, at: f64, kind: EventKind, payload: P) -> u64 {
        assert!(at.is_finite() && at >= 0.0, "event scheduled at invalid time {at}");
        assert!(at >= self.now, "event scheduled in the past ({at} < {})", self.now);
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Event { at, seq, kind, payload });
        seq
    }

    pub fn pop(&mut self) -> Option<Event<P>> {
        let e = self.heap.pop()?;
        self.now = e.at;
        Some(e)
    }

    pub fn peek_time(&self) -> Option<f64> {
        self.heap.peek().map(|e| e.at)
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pops_in_time_then_seq_order() {
        let mut q = EventQueue::new();
        q.schedule(2.0, EventKind::PullPoll, 'a');
        q.schedule(1.0, EventKind::PullPoll, 'b');
        q.schedule(1.0, EventKind::PullPoll, 'c');
        let order: Vec<char> = std::iter::from_fn(|| q.pop().map(|e| e.payload)).collect();
        assert_eq!(order, vec!['b', 'c', 'a']);
    }

    #[test]
    #[should_panic]
    fn negative_time_aborts() {
        EventQueue::new().schedule(-1.0, EventKind::PullPoll, ());
    }
}
