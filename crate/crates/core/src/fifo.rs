//! Bounded single-producer single-consumer request queue between a device
//! context and its proxy worker.
//!
//! The producer checks `head - tail < capacity` before writing a slot and then
//! advances `head`. The proxy reads the slot at `tail`, zeroes it and advances
//! `tail`. Popping a request ("processed") is distinct from finishing the
//! transfer it describes ("completed"); flushes wait on the latter.

use std::collections::BTreeSet;

use crate::sim::{RegionId, VectorClock};
use crate::{Error, Result};

pub const DEFAULT_CAPACITY: usize = 128;

pub type Ticket = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RequestKind {
    Put,
    Signal,
    /// Put followed by signal, carried as one queue entry.
    PutWithSignal,
    /// Put whose payload is written as LL packets carrying `flag`.
    PutPackets { flag: u32 },
    Flush,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub kind: RequestKind,
    pub src: RegionId,
    pub dst: RegionId,
    pub src_off: usize,
    pub dst_off: usize,
    pub size: usize,
    pub ticket: Ticket,
    /// Producer's clock at push time (release edge to the proxy).
    pub clock: VectorClock,
    /// Producer's simulated time at push.
    pub time: f64,
}

impl Request {
    pub fn new(kind: RequestKind, src: RegionId, dst: RegionId, src_off: usize, dst_off: usize, size: usize) -> Self {
        Self {
            kind,
            src,
            dst,
            src_off,
            dst_off,
            size,
            ticket: 0,
            clock: VectorClock::new(),
            time: 0.0,
        }
    }

    pub fn signal() -> Self {
        Self::new(RequestKind::Signal, RegionId(0), RegionId(0), 0, 0, 0)
    }

    pub fn flush() -> Self {
        Self::new(RequestKind::Flush, RegionId(0), RegionId(0), 0, 0, 0)
    }
}

#[derive(Debug)]
pub struct RequestQueue {
    /// `None` is the zeroed (empty) slot state.
    slots: Vec<Option<Request>>,
    head: u64,
    tail: u64,
    next_ticket: Ticket,
    /// Length of the fully completed ticket prefix.
    done_prefix: u64,
    done_out_of_order: BTreeSet<Ticket>,
    /// Prefix-maximum completion time, indexed by ticket.
    done_times: Vec<f64>,
    pending_times: std::collections::BTreeMap<Ticket, f64>,
    completion_clock: VectorClock,
    alive: bool,
    /// Largest `head - tail` observed.
    pub max_depth: usize,
}

impl RequestQueue {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "queue capacity must be positive");
        Self {
            slots: vec![None; capacity],
            head: 0,
            tail: 0,
            next_ticket: 0,
            done_prefix: 0,
            done_out_of_order: BTreeSet::new(),
            done_times: Vec::new(),
            pending_times: Default::default(),
            completion_clock: VectorClock::new(),
            alive: true,
            max_depth: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.slots.len()
    }

    pub fn head(&self) -> u64 {
        self.head
    }

    pub fn tail(&self) -> u64 {
        self.tail
    }

    pub fn len(&self) -> usize {
        (self.head - self.tail) as usize
    }

    pub fn is_empty(&self) -> bool {
        self.head == self.tail
    }

    pub fn is_full(&self) -> bool {
        self.len() == self.capacity()
    }

    /// Tickets issued so far.
    pub fn issued(&self) -> u64 {
        self.next_ticket
    }

    /// Highest ticket `t` such that every ticket `<= t` has completed.
    pub fn completed(&self) -> Option<Ticket> {
        self.done_prefix.checked_sub(1)
    }

    pub fn is_alive(&self) -> bool {
        self.alive
    }

    /// Writes `req` at the head. Returns `None` while the queue is full; the
    /// producer retries after the consumer pops.
    pub fn push(&mut self, mut req: Request) -> Option<Ticket> {
        if self.is_full() {
            return None;
        }
        let ticket = self.next_ticket;
        req.ticket = ticket;
        let cap = self.capacity() as u64;
        let slot = &mut self.slots[(self.head % cap) as usize];
        debug_assert!(slot.is_none(), "producer overwrote a live slot");
        *slot = Some(req);
        self.next_ticket += 1;
        self.head += 1;
        self.max_depth = self.max_depth.max(self.len());
        Some(ticket)
    }

    /// Takes the request at the tail, zeroing its slot.
    pub fn pop(&mut self) -> Option<Request> {
        if self.is_empty() {
            return None;
        }
        let cap = self.capacity() as u64;
        let req = self.slots[(self.tail % cap) as usize].take();
        self.tail += 1;
        req
    }

    /// Marks `ticket` as fully completed at simulated `time`; the proxy's
    /// `clock` becomes visible to anyone waiting on completion.
    pub fn mark_completed(&mut self, ticket: Ticket, clock: &VectorClock, time: f64) {
        self.completion_clock.join(clock);
        self.pending_times.insert(ticket, time);
        self.done_out_of_order.insert(ticket);
        while self.done_out_of_order.remove(&self.done_prefix) {
            let t = self.pending_times.remove(&self.done_prefix).unwrap_or(0.0);
            let prev = self.done_times.last().copied().unwrap_or(0.0);
            self.done_times.push(prev.max(t));
            self.done_prefix += 1;
        }
    }

    /// Polls completion of every request up to `ticket`. On success returns
    /// the completion clock and the time the prefix finished.
    pub fn wait_completed(&self, ticket: Ticket) -> Result<Option<(VectorClock, f64)>> {
        if ticket < self.done_prefix {
            return Ok(Some((
                self.completion_clock.clone(),
                self.done_times[ticket as usize],
            )));
        }
        if !self.alive {
            return Err(Error::ProxyDown(0));
        }
        Ok(None)
    }

    /// Stops the proxy; pending and future completion waits fail.
    pub fn stop(&mut self) {
        self.alive = false;
    }
}
