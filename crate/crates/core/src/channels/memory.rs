//! Memory-mapped channel: the calling context moves the bytes itself.

use super::{check_ll_shape, ll_poll_range, LlReadState, LlWriter, Protocol};
use crate::element::DType;
use crate::sim::{Actor, RankId, RegionId, SemId, SimWorld};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct MemoryChannel {
    pub protocol: Protocol,
    pub src_rank: RankId,
    pub dst_rank: RankId,
    /// Local buffer; LL packets sent to us by the peer land here.
    pub src_region: RegionId,
    /// Peer buffer.
    pub dst_region: RegionId,
    pub remote_sem: SemId,
    pub local_sem: SemId,
    pub expected: u64,
}

impl MemoryChannel {
    pub fn new(
        world: &SimWorld,
        protocol: Protocol,
        src_region: RegionId,
        dst_region: RegionId,
        remote_sem: SemId,
        local_sem: SemId,
    ) -> Self {
        Self {
            protocol,
            src_rank: world.region(src_region).rank,
            dst_rank: world.region(dst_region).rank,
            src_region,
            dst_region,
            remote_sem,
            local_sem,
            expected: 0,
        }
    }

    fn require(&self, p: Protocol) -> Result<()> {
        if self.protocol != p {
            return Err(Error::WrongProtocol(format!(
                "{p} primitive on a {} channel",
                self.protocol
            )));
        }
        Ok(())
    }

    /// Zero-copy write into the peer buffer; done when it returns.
    pub fn put_hb(&self, world: &mut SimWorld, actor: &mut Actor, dst_off: usize, src_off: usize, size: usize) -> Result<()> {
        self.require(Protocol::HB)?;
        world.copy(actor.ctx, (self.src_region, src_off), (self.dst_region, dst_off), size)?;
        actor.now = world.transfer(self.src_rank, self.dst_rank, size, actor.now);
        Ok(())
    }

    /// Starts an LL transfer; drive it with [`LlWriter::advance`].
    pub fn put_ll(
        &self,
        world: &mut SimWorld,
        actor: &mut Actor,
        dst_off: usize,
        src_off: usize,
        size: usize,
        flag: u32,
    ) -> Result<LlWriter> {
        self.require(Protocol::LL)?;
        let end = world.transfer(self.src_rank, self.dst_rank, 2 * size, actor.now);
        let w = LlWriter::start(world, actor, (self.src_region, src_off), (self.dst_region, dst_off), size, flag, end)?;
        actor.now = end;
        Ok(w)
    }

    /// Polls one packet of our local packet buffer.
    pub fn read_ll(&self, world: &mut SimWorld, actor: &mut Actor, off: usize, flag: u32) -> Result<Option<[u8; 4]>> {
        self.require(Protocol::LL)?;
        check_ll_shape(off, 4)?;
        world.read_packet(self.src_region, off / 4, flag, actor)
    }

    /// Polls a range of our local packet buffer.
    pub fn read_ll_range(
        &self,
        world: &mut SimWorld,
        actor: &mut Actor,
        off: usize,
        size: usize,
        flag: u32,
        state: &mut LlReadState,
    ) -> Result<Option<Vec<u8>>> {
        self.require(Protocol::LL)?;
        ll_poll_range(world, actor, self.src_region, off, size, flag, state)
    }

    /// Writes one packet into the peer buffer.
    pub fn write_ll(&self, world: &mut SimWorld, actor: &mut Actor, off: usize, data: [u8; 4], flag: u32) -> Result<()> {
        self.require(Protocol::LL)?;
        if flag == 0 {
            return Err(Error::ZeroFlag);
        }
        check_ll_shape(off, 4)?;
        let end = world.transfer(self.src_rank, self.dst_rank, 8, actor.now);
        let clock = std::sync::Arc::new(world.release(actor.ctx));
        world.write_packet(self.dst_region, off / 4, data, flag, &clock, end)?;
        actor.now = end;
        Ok(())
    }

    pub fn signal(&self, world: &mut SimWorld, actor: &mut Actor) -> Result<()> {
        self.require(Protocol::HB)?;
        let lands = actor.now + world.signal_latency(self.src_rank, self.dst_rank);
        world.sem_add(self.remote_sem, 1, Actor { ctx: actor.ctx, now: lands })?;
        Ok(())
    }

    pub fn wait(&mut self, world: &mut SimWorld, actor: &mut Actor) -> Result<bool> {
        self.require(Protocol::HB)?;
        let target = self.expected + 1;
        if world.sem_wait_geq(self.local_sem, target, actor)? {
            self.expected = target;
            return Ok(true);
        }
        Ok(false)
    }

    /// Writes complete before `put` returns, so there is nothing to flush.
    pub fn flush(&self) {}

    /// `local[dst_off..] += peer[src_off..]`, reading the peer directly.
    pub fn reduce(
        &self,
        world: &mut SimWorld,
        actor: &mut Actor,
        dst_off: usize,
        src_off: usize,
        size: usize,
        dtype: DType,
    ) -> Result<()> {
        self.require(Protocol::HB)?;
        world.reduce(actor.ctx, dtype, (self.src_region, dst_off), (self.dst_region, src_off), size)?;
        actor.now = world.transfer(self.dst_rank, self.src_rank, size, actor.now);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::element::{decode, encode};
    use crate::sim::WorldSpec;

    fn pair(protocol: Protocol) -> (SimWorld, MemoryChannel, MemoryChannel) {
        let mut w = SimWorld::new(WorldSpec::single_node(2)).unwrap();
        let a = w.alloc_region(0, 64).unwrap();
        let b = w.alloc_region(1, 64).unwrap();
        let sa = w.sem_create(0);
        let sb = w.sem_create(1);
        let ab = MemoryChannel::new(&w, protocol, a, b, sb, sa);
        let ba = MemoryChannel::new(&w, protocol, b, a, sa, sb);
        (w, ab, ba)
    }

    #[test]
    fn ll_single_packet_round_trip() {
        let (mut w, ab, ba) = pair(Protocol::LL);
        let mut a = Actor::new(w.new_context("a"));
        let mut b = Actor::new(w.new_context("b"));
        ab.write_ll(&mut w, &mut a, 4, [1, 2, 3, 4], 7).unwrap();
        assert_eq!(ba.read_ll(&mut w, &mut b, 4, 7).unwrap(), Some([1, 2, 3, 4]));
        assert_eq!(ba.read_ll(&mut w, &mut b, 4, 8).unwrap(), None);
        // packet 1 occupies bytes [8, 16)
        assert_eq!(w.peek(ab.dst_region, 8, 8).unwrap(), vec![1, 2, 3, 4, 7, 0, 0, 0]);
    }

    #[test]
    fn ll_put_expands_two_times() {
        let (mut w, ab, _) = pair(Protocol::LL);
        w.host_write(ab.src_region, 0, &[9; 16]).unwrap();
        let mut a = Actor::new(w.new_context("a"));
        let mut wr = ab.put_ll(&mut w, &mut a, 0, 0, 16, 3).unwrap();
        assert!(wr.advance(&mut w, usize::MAX).unwrap());
        let bytes = w.peek(ab.dst_region, 0, 32).unwrap();
        for p in 0..4 {
            assert_eq!(&bytes[p * 8..p * 8 + 4], &[9; 4]);
            assert_eq!(&bytes[p * 8 + 4..p * 8 + 8], &[3, 0, 0, 0]);
        }
        assert_eq!(w.peek(ab.dst_region, 32, 8).unwrap(), vec![0; 8]);
    }

    #[test]
    fn zero_flag_is_rejected() {
        let (mut w, ab, _) = pair(Protocol::LL);
        let mut a = Actor::new(w.new_context("a"));
        assert_eq!(ab.write_ll(&mut w, &mut a, 0, [0; 4], 0), Err(Error::ZeroFlag));
        assert_eq!(ab.put_ll(&mut w, &mut a, 0, 0, 4, 0).unwrap_err(), Error::ZeroFlag);
    }

    #[test]
    fn protocols_do_not_mix() {
        let (mut w, ab, _) = pair(Protocol::LL);
        let mut a = Actor::new(w.new_context("a"));
        assert!(matches!(ab.put_hb(&mut w, &mut a, 0, 0, 4), Err(Error::WrongProtocol(_))));
        assert!(matches!(ab.signal(&mut w, &mut a), Err(Error::WrongProtocol(_))));
    }

    #[test]
    fn hb_put_without_wait_races() {
        let (mut w, ab, ba) = pair(Protocol::HB);
        let mut a = Actor::new(w.new_context("a"));
        let mut b = Actor::new(w.new_context("b"));
        ab.put_hb(&mut w, &mut a, 0, 0, 16).unwrap();
        w.read(b.ctx, ba.src_region, 0, 16).unwrap();
        assert_eq!(w.races().len(), 1);
        w.clear_races();

        // ordered through signal/wait
        let (mut w, ab, mut ba) = pair(Protocol::HB);
        let mut a2 = Actor::new(w.new_context("a"));
        let mut b2 = Actor::new(w.new_context("b"));
        ab.put_hb(&mut w, &mut a2, 0, 0, 16).unwrap();
        assert!(!ba.wait(&mut w, &mut b2).unwrap());
        ab.signal(&mut w, &mut a2).unwrap();
        assert!(ba.wait(&mut w, &mut b2).unwrap());
        w.read(b2.ctx, ba.src_region, 0, 16).unwrap();
        assert!(w.races().is_empty());
        let _ = (&mut a, &mut b);
    }

    #[test]
    fn reduce_adds_peer_values() {
        let (mut w, ab, _) = pair(Protocol::HB);
        w.host_write(ab.src_region, 0, &encode(&[1i32, 2])).unwrap();
        w.host_write(ab.dst_region, 8, &encode(&[10i32, 20])).unwrap();
        let mut a = Actor::new(w.new_context("a"));
        ab.reduce(&mut w, &mut a, 0, 8, 8, DType::I32).unwrap();
        assert_eq!(decode::<i32>(&w.peek(ab.src_region, 0, 8).unwrap()), vec![11, 22]);
        ab.reduce(&mut w, &mut a, 0, 40, 8, DType::I32).unwrap();
        assert_eq!(decode::<i32>(&w.peek(ab.src_region, 0, 8).unwrap()), vec![11, 22]);
        assert_eq!(ab.reduce(&mut w, &mut a, 0, 0, 6, DType::I32), Err(Error::BadAlign(4)));
    }

    #[test]
    fn counting_waits() {
        let (mut w, ab, mut ba) = pair(Protocol::HB);
        let mut a = Actor::new(w.new_context("a"));
        let mut b = Actor::new(w.new_context("b"));
        for _ in 0..3 {
            ab.signal(&mut w, &mut a).unwrap();
        }
        for _ in 0..3 {
            assert!(ba.wait(&mut w, &mut b).unwrap());
        }
        assert!(!ba.wait(&mut w, &mut b).unwrap());
        assert_eq!(ba.expected, 3);
    }
}
