//! Deterministic discrete-event queue for virtual-time scenarios.
//!
//! Events pop in `(time, priority, insertion order)` order, so two events
//! at the same instant resolve the same way on every run. Priorities keep
//! model updates ahead of observations at shared instants (the simulator
//! refreshes its registers before a poll scheduled at the same time reads
//! them).

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::time::SimTime;

/// Fires first among same-instant events.
pub const PRIO_MODEL: u8 = 0;
pub const PRIO_EXCHANGE: u8 = 1;
pub const PRIO_OBSERVE: u8 = 2;

struct Scheduled<E> {
    at: SimTime,
    prio: u8,
    order: u64,
    event: E,
}

impl<E> PartialEq for Scheduled<E> {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.prio, self.order) == (other.at, other.prio, other.order)
    }
}
impl<E> Eq for Scheduled<E> {}
impl<E> PartialOrd for Scheduled<E> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<E> Ord for Scheduled<E> {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed for min-heap behavior on a max-heap.
        (other.at, other.prio, other.order).cmp(&(self.at, self.prio, self.order))
    }
}

pub struct EventQueue<E> {
    heap: BinaryHeap<Scheduled<E>>,
    next_order: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        EventQueue {
            heap: BinaryHeap::new(),
            next_order: 0,
        }
    }
}

impl<E> EventQueue<E> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn schedule(&mut self, at: SimTime, prio: u8, event: E) {
        let order = self.next_order;
        self.next_order += 1;
        self.heap.push(Scheduled {
            at,
            prio,
            order,
            event,
        });
    }

    pub fn pop(&mut self) -> Option<(SimTime, E)> {
        self.heap.pop().map(|s| (s.at, s.event))
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pops_in_time_then_priority_then_insertion_order() {
        let mut q = EventQueue::new();
        q.schedule(SimTime::from_micros(10), PRIO_OBSERVE, "poll");
        q.schedule(SimTime::from_micros(10), PRIO_MODEL, "tick");
        q.schedule(SimTime::from_micros(5), PRIO_OBSERVE, "early");
        q.schedule(SimTime::from_micros(10), PRIO_MODEL, "tick2");
        let order: Vec<&str> = std::iter::from_fn(|| q.pop().map(|(_, e)| e)).collect();
        assert_eq!(order, vec!["early", "tick", "tick2", "poll"]);
    }
}
