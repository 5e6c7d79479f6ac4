//! Bounded FIFO channel between rollout workers and the learner.
//!
//! Producers block while the queue is full (backpressure), so sampling can
//! never race far ahead of optimization. Each item receives a sequence
//! number at enqueue time, under the same lock that inserts it, so sequence
//! order and queue order are identical by construction. At shutdown the
//! queue is drained and the counters must reconcile exactly:
//! produced = consumed + drained.

use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};

/// An item tagged with its enqueue sequence number (0-based).
#[derive(Debug, Clone, PartialEq)]
pub struct Sequenced<T> {
    pub seq: u64,
    pub item: T,
}

#[derive(Debug)]
struct Inner<T> {
    buf: VecDeque<Sequenced<T>>,
    next_seq: u64,
    consumed: u64,
    closed: bool,
}

#[derive(Debug)]
pub struct BoundedQueue<T> {
    capacity: usize,
    inner: Mutex<Inner<T>>,
    not_full: Condvar,
    not_empty: Condvar,
}

/// Final reconciliation counters returned by `drain`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueueAccounting {
    pub produced: u64,
    pub consumed: u64,
    pub drained: u64,
}

impl QueueAccounting {
    pub fn balances(&self) -> bool {
        self.produced == self.consumed + self.drained
    }
}

impl<T> BoundedQueue<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "queue capacity must be positive");
        BoundedQueue {
            capacity,
            inner: Mutex::new(Inner {
                buf: VecDeque::with_capacity(capacity),
                next_seq: 0,
                consumed: 0,
                closed: false,
            }),
            not_full: Condvar::new(),
            not_empty: Condvar::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Items currently waiting.
    pub fn occupancy(&self) -> usize {
        self.inner.lock().unwrap().buf.len()
    }

    /// Total items ever enqueued.
    pub fn produced(&self) -> u64 {
        self.inner.lock().unwrap().next_seq
    }

    /// Total items ever dequeued by `pop`.
    pub fn consumed(&self) -> u64 {
        self.inner.lock().unwrap().consumed
    }

    /// Blocks while full; returns the assigned sequence number, or `None`
    /// if the queue was closed before the item could be inserted.
    pub fn push(&self, item: T) -> Option<u64> {
        let mut inner = self.inner.lock().unwrap();
        loop {
            if inner.closed {
                return None;
            }
            if inner.buf.len() < self.capacity {
                let seq = inner.next_seq;
                inner.next_seq += 1;
                inner.buf.push_back(Sequenced { seq, item });
                drop(inner);
                self.not_empty.notify_one();
                return Some(seq);
            }
            inner = self.not_full.wait(inner).unwrap();
        }
    }

    /// Non-blocking push; returns the item back when the queue is full.
    pub fn try_push(&self, item: T) -> Result<u64, T> {
        let mut inner = self.inner.lock().unwrap();
        if inner.closed || inner.buf.len() >= self.capacity {
            return Err(item);
        }
        let seq = inner.next_seq;
        inner.next_seq += 1;
        inner.buf.push_back(Sequenced { seq, item });
        drop(inner);
        self.not_empty.notify_one();
        Ok(seq)
    }

    /// Blocks while empty; returns `None` once the queue is closed and
    /// empty, making it safe to use as the consumer's loop condition.
    pub fn pop(&self) -> Option<Sequenced<T>> {
        let mut inner = self.inner.lock().unwrap();
        loop {
            if let Some(item) = inner.buf.pop_front() {
                inner.consumed += 1;
                drop(inner);
                self.not_full.notify_one();
                return Some(item);
            }
            if inner.closed {
                return None;
            }
            inner = self.not_empty.wait(inner).unwrap();
        }
    }

    /// Marks the queue closed and wakes all waiters. Blocked producers
    /// return `None`; consumers keep draining whatever is already queued.
    pub fn close(&self) {
        let mut inner = self.inner.lock().unwrap();
        inner.closed = true;
        drop(inner);
        self.not_full.notify_all();
        self.not_empty.notify_all();
    }

    pub fn is_closed(&self) -> bool {
        self.inner.lock().unwrap().closed
    }

    /// Closes the queue, removes whatever is still buffered, and returns
    /// the leftover items with the final counters.
    pub fn drain(&self) -> (Vec<Sequenced<T>>, QueueAccounting) {
        let mut inner = self.inner.lock().unwrap();
        inner.closed = true;
        let leftovers: Vec<Sequenced<T>> = inner.buf.drain(..).collect();
        let acct = QueueAccounting {
            produced: inner.next_seq,
            consumed: inner.consumed,
            drained: leftovers.len() as u64,
        };
        drop(inner);
        self.not_full.notify_all();
        self.not_empty.notify_all();
        (leftovers, acct)
    }
}
