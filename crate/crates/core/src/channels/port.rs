//! Port-mapped channel: the device side enqueues requests, a proxy worker
//! performs the DMA and the remote semaphore increments.

use super::LlWriter;
use crate::fifo::{Request, RequestKind, Ticket};
use crate::sim::{Actor, Context, CtxId, QueueId, RankId, RegionId, SemId, SimWorld, Step};
use crate::timing::Overhead;
use crate::Result;

#[derive(Debug, Clone)]
pub struct PortChannel {
    pub src_rank: RankId,
    pub dst_rank: RankId,
    pub src_region: RegionId,
    pub dst_region: RegionId,
    /// Owned by the destination rank; our proxy increments it.
    pub remote_sem: SemId,
    /// Owned by this rank; the peer's proxy increments it.
    pub local_sem: SemId,
    pub expected: u64,
    pub queue: QueueId,
    pub proxy: CtxId,
    last_ticket: Option<Ticket>,
}

impl PortChannel {
    /// Creates the channel, its request queue and its proxy worker.
    pub fn new(
        world: &mut SimWorld,
        src_region: RegionId,
        dst_region: RegionId,
        remote_sem: SemId,
        local_sem: SemId,
        capacity: usize,
    ) -> (Self, ProxyWorker) {
        let src_rank = world.region(src_region).rank;
        let dst_rank = world.region(dst_region).rank;
        let queue = world.add_queue(capacity);
        let label = format!("proxy {src_rank}->{dst_rank} q{}", queue.0);
        let proxy = world.new_context(label.clone());
        let worker = ProxyWorker::new(label, queue, proxy, src_rank, dst_rank, Some(remote_sem));
        let ch = Self {
            src_rank,
            dst_rank,
            src_region,
            dst_region,
            remote_sem,
            local_sem,
            expected: 0,
            queue,
            proxy,
            last_ticket: None,
        };
        (ch, worker)
    }

    pub fn last_ticket(&self) -> Option<Ticket> {
        self.last_ticket
    }

    /// Enqueues `req`. Returns `None` while the queue is full.
    pub fn push(&mut self, world: &mut SimWorld, actor: &Actor, req: Request) -> Result<Option<Ticket>> {
        let ticket = enqueue(world, self.queue, actor, req)?;
        if ticket.is_some() {
            self.last_ticket = ticket;
        }
        Ok(ticket)
    }

    pub fn put(
        &mut self,
        world: &mut SimWorld,
        actor: &Actor,
        dst_off: usize,
        src_off: usize,
        size: usize,
    ) -> Result<Option<Ticket>> {
        let req = Request::new(RequestKind::Put, self.src_region, self.dst_region, src_off, dst_off, size);
        self.push(world, actor, req)
    }

    pub fn signal(&mut self, world: &mut SimWorld, actor: &Actor) -> Result<Option<Ticket>> {
        self.push(world, actor, Request::signal())
    }

    pub fn put_with_signal(
        &mut self,
        world: &mut SimWorld,
        actor: &Actor,
        dst_off: usize,
        src_off: usize,
        size: usize,
    ) -> Result<Option<Ticket>> {
        let req = Request::new(
            RequestKind::PutWithSignal,
            self.src_region,
            self.dst_region,
            src_off,
            dst_off,
            size,
        );
        self.push(world, actor, req)
    }

    /// Counting wait on the local semaphore.
    pub fn wait(&mut self, world: &mut SimWorld, actor: &mut Actor) -> Result<bool> {
        let target = self.expected + 1;
        if world.sem_wait_geq(self.local_sem, target, actor)? {
            self.expected = target;
            return Ok(true);
        }
        Ok(false)
    }

    /// Waits until every request issued so far has completed.
    pub fn flush(&mut self, world: &mut SimWorld, actor: &mut Actor) -> Result<bool> {
        match self.last_ticket {
            Some(t) => world.wait_completed(self.queue, t, actor),
            None => Ok(true),
        }
    }
}

/// Bounds-checks `req`, stamps it with the producer's clock and time, and
/// pushes it onto queue `q`. Returns `None` while the queue is full.
pub fn enqueue(world: &mut SimWorld, q: QueueId, actor: &Actor, mut req: Request) -> Result<Option<Ticket>> {
    if world.queue(q).is_full() {
        return Ok(None);
    }
    if matches!(
        req.kind,
        RequestKind::Put | RequestKind::PutWithSignal | RequestKind::PutPackets { .. }
    ) {
        world.check_range(req.src, req.src_off, req.size)?;
        let (off, len) = match req.kind {
            RequestKind::PutPackets { .. } => {
                super::check_ll_shape(req.dst_off, req.size)?;
                (req.dst_off * 2, req.size * 2)
            }
            _ => (req.dst_off, req.size),
        };
        world.check_range(req.dst, off, len)?;
    }
    req.clock = world.release(actor.ctx);
    req.time = actor.now;
    Ok(world.queue_mut(q).push(req))
}

/// Drains one channel's queue. Functional transfers land when the request is
/// processed; timed transfers complete per the world's timeline.
#[derive(Debug)]
pub struct ProxyWorker {
    label: String,
    pub queue: QueueId,
    pub actor: Actor,
    src_rank: RankId,
    dst_rank: RankId,
    remote_sem: Option<SemId>,
    /// Completion time of the latest data transfer; signals order after it.
    last_end: f64,
}

impl ProxyWorker {
    /// A worker running as context `ctx`. Without a `remote_sem` signals
    /// are rejected.
    pub fn new(
        label: String,
        queue: QueueId,
        ctx: CtxId,
        src_rank: RankId,
        dst_rank: RankId,
        remote_sem: Option<SemId>,
    ) -> Self {
        Self {
            label,
            queue,
            actor: Actor::new(ctx),
            src_rank,
            dst_rank,
            remote_sem,
            last_end: 0.0,
        }
    }

    fn process(&mut self, world: &mut SimWorld, req: Request) -> Result<()> {
        let ctx = self.actor.ctx;
        world.acquire(ctx, &req.clock);
        self.actor.now = self.actor.now.max(req.time) + world.overhead(Overhead::ProxyHop);
        let mut done = self.actor.now;
        match req.kind {
            RequestKind::Put | RequestKind::PutWithSignal => {
                world.copy(ctx, (req.src, req.src_off), (req.dst, req.dst_off), req.size)?;
                let end = world.transfer(self.src_rank, self.dst_rank, req.size, self.actor.now);
                self.last_end = self.last_end.max(end);
                done = end;
            }
            RequestKind::PutPackets { flag } => {
                let end = world.transfer(self.src_rank, self.dst_rank, 2 * req.size, self.actor.now);
                let mut w = LlWriter::start(
                    world,
                    &self.actor,
                    (req.src, req.src_off),
                    (req.dst, req.dst_off),
                    req.size,
                    flag,
                    end,
                )?;
                w.advance(world, usize::MAX)?;
                self.last_end = self.last_end.max(end);
                done = end;
            }
            RequestKind::Signal | RequestKind::Flush => {}
        }
        if matches!(req.kind, RequestKind::Signal | RequestKind::PutWithSignal) {
            let at = self.last_end.max(self.actor.now);
            let lands = at + world.signal_latency(self.src_rank, self.dst_rank);
            let sem = self
                .remote_sem
                .ok_or_else(|| crate::Error::Invalid(format!("{}: signal without a receiving semaphore", self.label)))?;
            world.sem_add(sem, 1, Actor { ctx, now: lands })?;
            done = at;
        }
        if req.kind == RequestKind::Flush {
            done = self.last_end.max(self.actor.now);
        }
        let clock = world.release(ctx);
        world.queue_mut(self.queue).mark_completed(req.ticket, &clock, done);
        Ok(())
    }
}

impl Context for ProxyWorker {
    fn label(&self) -> String {
        self.label.clone()
    }

    fn step(&mut self, world: &mut SimWorld, _spawn: &mut Vec<Box<dyn Context>>) -> Result<Step> {
        match world.queue_mut(self.queue).pop() {
            Some(req) => {
                self.process(world, req)?;
                Ok(Step::Ran)
            }
            None => Ok(Step::Blocked),
        }
    }

    fn is_daemon(&self) -> bool {
        true
    }

    fn ready_time(&self) -> f64 {
        self.actor.now
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{run_schedule, ScheduleMode, ScriptContext, ScriptStep, WorldSpec};
    use std::cell::RefCell;
    use std::rc::Rc;

    struct Setup {
        world: SimWorld,
        ch: Rc<RefCell<PortChannel>>,
        peer: Rc<RefCell<PortChannel>>,
        proxy: ProxyWorker,
        peer_proxy: ProxyWorker,
        src: RegionId,
        dst: RegionId,
    }

    fn setup(seed: u64) -> Setup {
        let mut world = SimWorld::new(WorldSpec::single_node(2).with_seed(seed)).unwrap();
        let src = world.alloc_region(0, 64).unwrap();
        let dst = world.alloc_region(1, 64).unwrap();
        let s0 = world.sem_create(0);
        let s1 = world.sem_create(1);
        let (ch, proxy) = PortChannel::new(&mut world, src, dst, s1, s0, 4);
        let (peer, peer_proxy) = PortChannel::new(&mut world, dst, src, s0, s1, 4);
        Setup {
            world,
            ch: Rc::new(RefCell::new(ch)),
            peer: Rc::new(RefCell::new(peer)),
            proxy,
            peer_proxy,
            src,
            dst,
        }
    }

    fn step(f: impl FnMut(&mut SimWorld, &mut Actor) -> Result<bool> + 'static) -> ScriptStep {
        Box::new(f)
    }

    #[test]
    fn put_signal_wait_delivers() {
        for seed in 0..50 {
            let mut s = setup(seed);
            s.world.host_write(s.src, 0, &[1, 2, 3, 4, 5, 6, 7, 8]).unwrap();
            let a = s.world.new_context("rank0");
            let b = s.world.new_context("rank1");
            let (ch, peer) = (s.ch.clone(), s.peer.clone());
            let dst = s.dst;
            let got = Rc::new(RefCell::new(Vec::new()));
            let g = got.clone();
            let ctxs: Vec<Box<dyn Context>> = vec![
                Box::new(ScriptContext::new(
                    "rank0",
                    a,
                    vec![
                        step(move |w, a| Ok(ch.borrow_mut().put(w, a, 0, 0, 8)?.is_some())),
                        step({
                            let ch = s.ch.clone();
                            move |w, a| Ok(ch.borrow_mut().signal(w, a)?.is_some())
                        }),
                    ],
                )),
                Box::new(ScriptContext::new(
                    "rank1",
                    b,
                    vec![
                        step(move |w, a| peer.borrow_mut().wait(w, a)),
                        step(move |w, a| {
                            *g.borrow_mut() = w.read(a.ctx, dst, 0, 8)?;
                            Ok(true)
                        }),
                    ],
                )),
                Box::new(s.proxy),
                Box::new(s.peer_proxy),
            ];
            run_schedule(&mut s.world, ctxs, ScheduleMode::SeededRandom).unwrap();
            assert_eq!(*got.borrow(), vec![1, 2, 3, 4, 5, 6, 7, 8]);
            assert!(s.world.races().is_empty(), "seed {seed}: {:?}", s.world.races());
        }
    }

    #[test]
    fn overwrite_before_flush_races() {
        let mut found = false;
        for seed in 0..20 {
            let mut s = setup(seed);
            let a = s.world.new_context("rank0");
            let ch = s.ch.clone();
            let src = s.src;
            let ctxs: Vec<Box<dyn Context>> = vec![
                Box::new(ScriptContext::new(
                    "rank0",
                    a,
                    vec![
                        step(move |w, a| Ok(ch.borrow_mut().put(w, a, 0, 0, 8)?.is_some())),
                        step(move |w, a| {
                            w.write(a.ctx, src, 0, &[9; 8])?;
                            Ok(true)
                        }),
                    ],
                )),
                Box::new(s.proxy),
            ];
            run_schedule(&mut s.world, ctxs, ScheduleMode::SeededRandom).unwrap();
            found |= !s.world.races().is_empty();
        }
        assert!(found);
    }

    #[test]
    fn flush_then_overwrite_is_safe() {
        for seed in 0..20 {
            let mut s = setup(seed);
            s.world.host_write(s.src, 0, &[5; 8]).unwrap();
            let a = s.world.new_context("rank0");
            let (c1, c2) = (s.ch.clone(), s.ch.clone());
            let src = s.src;
            let ctxs: Vec<Box<dyn Context>> = vec![
                Box::new(ScriptContext::new(
                    "rank0",
                    a,
                    vec![
                        step(move |w, a| Ok(c1.borrow_mut().put(w, a, 0, 0, 8)?.is_some())),
                        step(move |w, a| c2.borrow_mut().flush(w, a)),
                        step(move |w, a| {
                            w.write(a.ctx, src, 0, &[9; 8])?;
                            Ok(true)
                        }),
                    ],
                )),
                Box::new(s.proxy),
            ];
            run_schedule(&mut s.world, ctxs, ScheduleMode::SeededRandom).unwrap();
            assert!(s.world.races().is_empty());
            assert_eq!(s.world.peek(s.dst, 0, 8).unwrap(), vec![5; 8]);
            assert_eq!(s.ch.borrow().last_ticket(), s.world.queue(s.ch.borrow().queue).completed());
        }
    }

    #[test]
    fn put_with_signal_is_one_ticket() {
        let mut s = setup(0);
        let a = Actor::new(s.world.new_context("rank0"));
        let t = s.ch.borrow_mut().put_with_signal(&mut s.world, &a, 0, 0, 8).unwrap();
        assert_eq!(t, Some(0));
        assert_eq!(s.world.queue(s.ch.borrow().queue).issued(), 1);
    }

    #[test]
    fn out_of_bounds_put_is_rejected() {
        let mut s = setup(0);
        let a = Actor::new(s.world.new_context("rank0"));
        let err = s.ch.borrow_mut().put(&mut s.world, &a, 60, 0, 8).unwrap_err();
        assert!(matches!(err, crate::Error::Oob { .. }));
    }

    #[test]
    fn flush_without_requests_returns() {
        let mut s = setup(0);
        let mut a = Actor::new(s.world.new_context("rank0"));
        assert!(s.ch.borrow_mut().flush(&mut s.world, &mut a).unwrap());
    }
}
