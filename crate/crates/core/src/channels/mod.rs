//! Port, memory and switch channels over a [`SimWorld`].
//!
//! Every primitive is a poll: it takes the calling context's [`Actor`] and
//! either completes (`Ok(true)` / `Ok(Some(..))`) or reports that it would
//! block, in which case the caller yields to the scheduler and retries.

pub mod memory;
pub mod port;
pub mod switch;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::sim::{Actor, RegionId, SimWorld};
use crate::{Error, Result};

pub use memory::MemoryChannel;
pub use port::{enqueue, PortChannel, ProxyWorker};
pub use switch::SwitchChannel;

/// Payload bytes per LL packet; each packet occupies twice that.
pub const LL_DATA: usize = 4;
pub const LL_PACKET: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Protocol {
    LL,
    HB,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::LL => "LL",
            Protocol::HB => "HB",
        })
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "LL" => Ok(Protocol::LL),
            "HB" => Ok(Protocol::HB),
            _ => Err(Error::Config(format!("unknown protocol {s:?}"))),
        }
    }
}

fn check_ll_shape(offset: usize, size: usize) -> Result<()> {
    if !offset.is_multiple_of(LL_DATA) || !size.is_multiple_of(LL_DATA) {
        return Err(Error::BadAlign(LL_DATA));
    }
    Ok(())
}

/// Packet-by-packet LL transfer of `size` payload bytes from
/// `src[src_off..]` into the packet buffer `dst` starting at payload offset
/// `dst_off`. Packets land in a seeded-random order, a few per
/// [`advance`](LlWriter::advance) call, so readers may observe any prefix of
/// that order.
#[derive(Debug)]
pub struct LlWriter {
    dst: RegionId,
    base: usize,
    data: Vec<u8>,
    order: Vec<usize>,
    next: usize,
    /// Packet count of a ghost-world transfer, which has no order.
    ghost_packets: usize,
    flag: u32,
    clock: Arc<crate::sim::VectorClock>,
    time: f64,
}

impl LlWriter {
    /// Reads the source and fixes the delivery order. `arrival` is the time
    /// the packets become visible to readers.
    #[allow(clippy::too_many_arguments)]
    pub fn start(
        world: &mut SimWorld,
        actor: &Actor,
        src: (RegionId, usize),
        dst: (RegionId, usize),
        size: usize,
        flag: u32,
        arrival: f64,
    ) -> Result<Self> {
        if flag == 0 {
            return Err(Error::ZeroFlag);
        }
        check_ll_shape(dst.1, size)?;
        let base = dst.1 / LL_DATA;
        let packets = size / LL_DATA;
        let dst_len = world.region(dst.0).len;
        if (base + packets) * LL_PACKET > dst_len {
            return Err(Error::Oob {
                offset: base * LL_PACKET,
                size: packets * LL_PACKET,
                len: dst_len,
            });
        }
        let data = if world.is_ghost() {
            world.check_range(src.0, src.1, size)?;
            Vec::new()
        } else {
            world.read(actor.ctx, src.0, src.1, size)?
        };
        let mut order: Vec<usize> = Vec::new();
        if !world.is_ghost() {
            order = (0..packets).collect();
            order.shuffle(world.rng());
        }
        let clock = Arc::new(world.release(actor.ctx));
        Ok(Self {
            dst: dst.0,
            base,
            data,
            ghost_packets: if world.is_ghost() { packets } else { 0 },
            order,
            next: 0,
            flag,
            clock,
            time: arrival,
        })
    }

    /// Writes up to `max` more packets; returns `true` once all have landed.
    pub fn advance(&mut self, world: &mut SimWorld, max: usize) -> Result<bool> {
        if world.is_ghost() {
            if self.ghost_packets > 0 {
                world.write_packet_range(self.dst, self.base, self.base + self.ghost_packets, self.flag, self.time)?;
                self.ghost_packets = 0;
            }
            return Ok(true);
        }
        let end = (self.next + max.max(1)).min(self.order.len());
        for &p in &self.order[self.next..end] {
            let mut word = [0u8; 4];
            word.copy_from_slice(&self.data[p * LL_DATA..p * LL_DATA + LL_DATA]);
            world.write_packet(self.dst, self.base + p, word, self.flag, &self.clock, self.time)?;
        }
        self.next = end;
        Ok(self.is_done())
    }

    pub fn is_done(&self) -> bool {
        self.next == self.order.len() && self.ghost_packets == 0
    }
}

/// Polls LL packets for payload range `[off, off + size)` of packet buffer
/// `region` until every packet carries `flag`; then returns the payload.
/// Reads the packets that are already valid on each poll and remembers them
/// in `got` so a partially arrived transfer is not rescanned.
pub fn ll_poll_range(
    world: &mut SimWorld,
    actor: &mut Actor,
    region: RegionId,
    off: usize,
    size: usize,
    flag: u32,
    got: &mut LlReadState,
) -> Result<Option<Vec<u8>>> {
    check_ll_shape(off, size)?;
    let base = off / LL_DATA;
    let packets = size / LL_DATA;
    if world.is_ghost() {
        // Ghost worlds carry no payload; an empty vector signals arrival.
        return Ok(world.range_arrival(region, base, base + packets, flag).map(|t| {
            actor.now = actor.now.max(t);
            Vec::new()
        }));
    }
    if got.data.len() != size {
        got.data = vec![0; size];
        got.next = 0;
    }
    while got.next < packets {
        match world.read_packet(region, base + got.next, flag, actor)? {
            Some(word) => {
                got.data[got.next * LL_DATA..(got.next + 1) * LL_DATA].copy_from_slice(&word);
                got.next += 1;
            }
            None => return Ok(None),
        }
    }
    got.next = 0;
    Ok(Some(std::mem::take(&mut got.data)))
}

/// Progress of a multi-packet LL read.
#[derive(Debug, Default, Clone)]
pub struct LlReadState {
    data: Vec<u8>,
    next: usize,
}
