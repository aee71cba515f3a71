//! Thread-block lead and lane contexts.

use std::cell::RefCell;
use std::rc::Rc;

use super::Shared;
use crate::channels::{enqueue, ll_poll_range, LlReadState, LlWriter};
use crate::element::reduce_bytes_into;
use crate::fifo::{Request, RequestKind};
use crate::plan::{ChannelDecl, ChunkRef, OpKind, PlanOp};
use crate::sim::{Actor, Context, CtxId, RankId, RegionId, SimWorld, Step, VectorClock};
use crate::timing::Overhead;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Issue,
    Complete,
}

/// One trace entry; `seq` is the logical timestamp, `time` the simulated
/// time (0 in untimed runs).
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent {
    pub seq: u64,
    pub rank: RankId,
    pub tb: usize,
    pub index: usize,
    pub op: OpKind,
    pub phase: Phase,
    pub time: f64,
}

/// Per-block state shared between the lead and its lanes.
#[derive(Debug, Default)]
pub(crate) struct Block {
    /// The block's clock as of its last `tb_sync`; lanes fork from it.
    clock_b: VectorClock,
    outstanding: usize,
    lane_join: VectorClock,
    lane_end: f64,
    free: Vec<CtxId>,
    busy: Vec<CtxId>,
}

impl Block {
    pub fn reset(&mut self, host: &VectorClock) {
        self.clock_b = host.clone();
        self.outstanding = 0;
        self.lane_join = VectorClock::new();
        self.lane_end = 0.0;
        let busy = std::mem::take(&mut self.busy);
        self.free.extend(busy);
    }
}

fn bytes(c: &ChunkRef, elem: usize) -> (usize, usize) {
    (c.offset * elem, c.size * elem)
}

pub(crate) struct Lead {
    rank: RankId,
    tb: usize,
    label: String,
    actor: Actor,
    ops: Vec<PlanOp>,
    pc: usize,
    issued: bool,
    arrived: bool,
    /// Barriers passed so far, per participating group.
    barrier_seq: std::collections::BTreeMap<Vec<usize>, u64>,
    block: Rc<RefCell<Block>>,
    shared: Rc<RefCell<Shared>>,
}

impl Lead {
    pub fn new(
        rank: RankId,
        tb: usize,
        ctx: CtxId,
        ops: Vec<PlanOp>,
        block: Rc<RefCell<Block>>,
        shared: Rc<RefCell<Shared>>,
    ) -> Self {
        Self {
            rank,
            tb,
            label: format!("rank {rank} tb {tb}"),
            actor: Actor::new(ctx),
            ops,
            pc: 0,
            issued: false,
            arrived: false,
            barrier_seq: Default::default(),
            block,
            shared,
        }
    }

    fn port_push(&mut self, world: &mut SimWorld, chan: usize, req: Request) -> Result<bool> {
        let mut sh = self.shared.borrow_mut();
        let ch = sh.chan(chan);
        let q = ch.queue.ok_or_else(|| Error::Invalid(format!("channel {chan} is not a port channel")))?;
        match enqueue(world, q, &self.actor, req)? {
            Some(t) => {
                ch.last_ticket = Some(t);
                Ok(true)
            }
            None => Ok(false),
        }
    }

    fn port_request(&self, world: &SimWorld, op: &PlanOp, kind: RequestKind) -> Result<Request> {
        let sh = self.shared.borrow();
        let elem = sh.plan.dtype.size();
        let chan = op.chan.expect("validated");
        let peer = sh.plan.channel(chan).and_then(|c| c.endpoints()).map(|(_, d)| d).expect("validated");
        let (src, dst) = (op.src.expect("validated"), op.dst.expect("validated"));
        let (so, size) = bytes(&src, elem);
        let (dof, _) = bytes(&dst, elem);
        let _ = world;
        Ok(Request::new(kind, sh.region(src.buffer, self.rank)?, sh.region(dst.buffer, peer)?, so, dof, size))
    }

    /// Joins the lanes into the block clock. `false` while lanes run.
    fn tb_sync(&mut self, world: &mut SimWorld) -> bool {
        let mut b = self.block.borrow_mut();
        if b.outstanding > 0 {
            return false;
        }
        let mut clk = world.clock(self.actor.ctx).clone();
        clk.join(&b.lane_join);
        world.set_clock(self.actor.ctx, clk);
        b.clock_b = world.clock(self.actor.ctx).clone();
        b.lane_join = VectorClock::new();
        let busy = std::mem::take(&mut b.busy);
        b.free.extend(busy);
        self.actor.now = self.actor.now.max(b.lane_end) + world.overhead(Overhead::TbSync);
        true
    }

    fn device_barrier(&mut self, world: &mut SimWorld, op: &PlanOp) -> Result<bool> {
        let group = match &op.tb_group {
            Some(g) => {
                let mut g = g.clone();
                g.sort_unstable();
                g
            }
            None => {
                let plan = self.shared.borrow().plan.clone();
                let mut g: Vec<usize> = plan.programs.iter().filter(|p| p.rank == self.rank).map(|p| p.tb).collect();
                g.sort_unstable();
                g
            }
        };
        let seq = self.barrier_seq.get(&group).copied().unwrap_or(0);
        let key = (self.rank, group.clone(), seq);
        if !self.arrived {
            // Only this block's own lanes hold us up; their time is folded in
            // through tb_sync, the overhead is charged once on release.
            let before = self.actor.now;
            if !self.tb_sync(world) {
                return Ok(false);
            }
            self.actor.now = self.actor.now.max(before);
            let snap = world.release(self.actor.ctx);
            let mut sh = self.shared.borrow_mut();
            let st = sh.barriers.entry(key.clone()).or_default();
            st.arrived += 1;
            st.clock.join(&snap);
            st.time = st.time.max(self.actor.now);
            self.arrived = true;
        }
        let (ready, clock, time) = {
            let sh = self.shared.borrow();
            let st = &sh.barriers[&key];
            (st.arrived >= group.len(), st.clock.clone(), st.time)
        };
        if !ready {
            return Ok(false);
        }
        world.acquire(self.actor.ctx, &clock);
        self.actor.now = self.actor.now.max(time);
        self.block.borrow_mut().clock_b = world.clock(self.actor.ctx).clone();
        self.arrived = false;
        *self.barrier_seq.entry(group).or_insert(0) += 1;
        Ok(true)
    }

    fn spawn_lane(&mut self, world: &mut SimWorld, index: usize, op: PlanOp, spawn: &mut Vec<Box<dyn Context>>) {
        let mut b = self.block.borrow_mut();
        let label = format!("rank {} tb {} lane", self.rank, self.tb);
        let ctx = match b.free.pop() {
            Some(ctx) => {
                world.set_clock(ctx, b.clock_b.clone());
                ctx
            }
            None => world.new_context_from(label.clone(), &b.clock_b),
        };
        b.busy.push(ctx);
        b.outstanding += 1;
        spawn.push(Box::new(Lane {
            label: format!("{label} (op {index} {})", op.op.name()),
            rank: self.rank,
            tb: self.tb,
            index,
            actor: Actor {
                ctx,
                now: self.actor.now,
            },
            op,
            state: LaneState::Start,
            block: self.block.clone(),
            shared: self.shared.clone(),
        }));
    }

    fn chan_kind(&self, op: &PlanOp) -> Option<ChannelDecl> {
        op.chan.and_then(|c| self.shared.borrow().plan.channel(c).cloned())
    }

    /// Runs the op at `pc`; `Some(true)` if it completed on the lead,
    /// `Some(false)` if it was handed to a lane, `None` if blocked.
    fn run_op(&mut self, world: &mut SimWorld, op: &PlanOp, spawn: &mut Vec<Box<dyn Context>>) -> Result<Option<bool>> {
        let chan = self.chan_kind(op);
        let port = matches!(chan, Some(ChannelDecl::Port { .. }));
        let done = |b: bool| if b { Some(true) } else { None };
        Ok(match op.op {
            OpKind::TbSync => done(self.tb_sync(world)),
            OpKind::DeviceBarrier => done(self.device_barrier(world, op)?),
            OpKind::Wait => {
                let mut sh = self.shared.borrow_mut();
                let ch = sh.chan(op.chan.expect("validated"));
                let sem = ch.inbox.ok_or_else(|| Error::Invalid("wait on a channel without a semaphore".into()))?;
                let target = ch.expected + 1;
                if world.sem_wait_geq(sem, target, &mut self.actor)? {
                    ch.expected = target;
                    Some(true)
                } else {
                    None
                }
            }
            OpKind::Signal if port => done(self.port_push(world, op.chan.expect("validated"), Request::signal())?),
            OpKind::Signal => {
                let (sem, src, dst) = {
                    let mut sh = self.shared.borrow_mut();
                    let ch = sh.chan(op.chan.expect("validated"));
                    let (s, d) = ch.decl.endpoints().expect("validated");
                    (ch.outbox, s, d)
                };
                let sem = sem.ok_or_else(|| Error::Invalid("signal on a channel without a counterpart".into()))?;
                let lands = self.actor.now + world.signal_latency(src, dst);
                world.sem_add(
                    sem,
                    1,
                    Actor {
                        ctx: self.actor.ctx,
                        now: lands,
                    },
                )?;
                Some(true)
            }
            OpKind::Flush => {
                let (q, t) = {
                    let mut sh = self.shared.borrow_mut();
                    let ch = sh.chan(op.chan.expect("validated"));
                    (ch.queue, ch.last_ticket)
                };
                match (q, t) {
                    (Some(q), Some(t)) => done(world.wait_completed(q, t, &mut self.actor)?),
                    _ => Some(true),
                }
            }
            OpKind::Put | OpKind::PutWithSignal | OpKind::PutPackets if port => {
                let kind = match op.op {
                    OpKind::Put => RequestKind::Put,
                    OpKind::PutWithSignal => RequestKind::PutWithSignal,
                    _ => RequestKind::PutPackets {
                        flag: op.flag.expect("validated") + self.shared.borrow().flag_offset,
                    },
                };
                let req = self.port_request(world, op, kind)?;
                done(self.port_push(world, op.chan.expect("validated"), req)?)
            }
            OpKind::Put
            | OpKind::PutPackets
            | OpKind::PutWithSignal
            | OpKind::ReadPackets
            | OpKind::Reduce
            | OpKind::ReducePut
            | OpKind::Copy => {
                self.spawn_lane(world, self.pc, op.clone(), spawn);
                Some(false)
            }
        })
    }
}

impl Context for Lead {
    fn label(&self) -> String {
        self.label.clone()
    }

    fn step(&mut self, world: &mut SimWorld, spawn: &mut Vec<Box<dyn Context>>) -> Result<Step> {
        let Some(op) = self.ops.get(self.pc).cloned() else {
            let mut sh = self.shared.borrow_mut();
            sh.end_time = sh.end_time.max(self.actor.now);
            return Ok(Step::Done);
        };
        if !self.issued {
            self.issued = true;
            self.shared
                .borrow_mut()
                .event(self.rank, self.tb, self.pc, op.op, Phase::Issue, self.actor.now);
        }
        match self.run_op(world, &op, spawn)? {
            None => Ok(Step::Blocked),
            Some(on_lead) => {
                if on_lead {
                    self.shared
                        .borrow_mut()
                        .event(self.rank, self.tb, self.pc, op.op, Phase::Complete, self.actor.now);
                }
                self.pc += 1;
                self.issued = false;
                Ok(Step::Ran)
            }
        }
    }

    fn ready_time(&self) -> f64 {
        self.actor.now
    }
}

enum LaneState {
    Start,
    Writing(LlWriter, f64),
    Reading(LlReadState),
}

struct Lane {
    label: String,
    rank: RankId,
    tb: usize,
    index: usize,
    actor: Actor,
    op: PlanOp,
    state: LaneState,
    block: Rc<RefCell<Block>>,
    shared: Rc<RefCell<Shared>>,
}

impl Lane {
    fn region(&self, buffer: usize, rank: RankId) -> Result<RegionId> {
        self.shared.borrow().region(buffer, rank)
    }

    fn peer(&self) -> RankId {
        let sh = self.shared.borrow();
        self.op
            .chan
            .and_then(|c| sh.plan.channel(c))
            .and_then(|c| c.endpoints())
            .map_or(self.rank, |(_, d)| d)
    }

    fn members(&self) -> Option<Vec<RankId>> {
        let sh = self.shared.borrow();
        match self.op.chan.and_then(|c| sh.plan.channel(c)) {
            Some(ChannelDecl::Switch { ranks, .. }) => Some(ranks.clone()),
            _ => None,
        }
    }

    /// Returns `true` once the op has finished.
    fn run(&mut self, world: &mut SimWorld) -> Result<bool> {
        let (elem, dtype, burst, flag_offset) = {
            let sh = self.shared.borrow();
            (sh.plan.dtype.size(), sh.plan.dtype, sh.ll_burst, sh.flag_offset)
        };
        let ctx = self.actor.ctx;
        let op = self.op.clone();
        let src = op.src.expect("validated");
        let dst = op.dst.expect("validated");
        let (so, size) = bytes(&src, elem);
        let (dof, _) = bytes(&dst, elem);
        let rank = self.rank;
        match op.op {
            OpKind::Copy => {
                world.copy(ctx, (self.region(src.buffer, rank)?, so), (self.region(dst.buffer, rank)?, dof), size)?;
                Ok(true)
            }
            OpKind::Reduce => {
                let dreg = self.region(dst.buffer, rank)?;
                if let Some(members) = self.members() {
                    if world.is_ghost() {
                        for &m in &members {
                            world.check_range(self.region(src.buffer, m)?, so, size)?;
                        }
                        world.check_range(dreg, dof, size)?;
                    } else {
                        let mut acc = vec![0u8; size];
                        for &m in &members {
                            let part = world.read(ctx, self.region(src.buffer, m)?, so, size)?;
                            reduce_bytes_into(dtype, &mut acc, &part);
                        }
                        world.write(ctx, dreg, dof, &acc)?;
                    }
                    self.actor.now = world.transfer_switch(&members, rank, size, self.actor.now, true);
                } else {
                    let from = if op.chan.is_some() { self.peer() } else { rank };
                    world.reduce(ctx, dtype, (dreg, dof), (self.region(src.buffer, from)?, so), size)?;
                    self.actor.now = world.transfer(from, rank, size, self.actor.now);
                }
                Ok(true)
            }
            OpKind::ReducePut => {
                let aux = op.aux.expect("validated");
                let (ao, _) = bytes(&aux, elem);
                let sreg = self.region(src.buffer, rank)?;
                world.reduce(ctx, dtype, (sreg, so), (self.region(aux.buffer, rank)?, ao), size)?;
                let peer = self.peer();
                world.copy(ctx, (sreg, so), (self.region(dst.buffer, peer)?, dof), size)?;
                self.actor.now = world.transfer(rank, peer, size, self.actor.now);
                Ok(true)
            }
            OpKind::Put | OpKind::PutWithSignal => {
                let sreg = self.region(src.buffer, rank)?;
                if let Some(members) = self.members() {
                    if world.is_ghost() {
                        world.check_range(sreg, so, size)?;
                        for &m in &members {
                            world.check_range(self.region(dst.buffer, m)?, dof, size)?;
                        }
                    } else {
                        let data = world.read(ctx, sreg, so, size)?;
                        for &m in &members {
                            world.write(ctx, self.region(dst.buffer, m)?, dof, &data)?;
                        }
                    }
                    self.actor.now = world.transfer_switch(&members, rank, size, self.actor.now, false);
                } else {
                    let peer = self.peer();
                    world.copy(ctx, (sreg, so), (self.region(dst.buffer, peer)?, dof), size)?;
                    self.actor.now = world.transfer(rank, peer, size, self.actor.now);
                }
                Ok(true)
            }
            OpKind::PutPackets => {
                if matches!(self.state, LaneState::Start) {
                    let peer = self.peer();
                    let end = world.transfer(rank, peer, 2 * size, self.actor.now);
                    let w = LlWriter::start(
                        world,
                        &self.actor,
                        (self.region(src.buffer, rank)?, so),
                        (self.region(dst.buffer, peer)?, dof),
                        size,
                        op.flag.expect("validated") + flag_offset,
                        end,
                    )?;
                    self.state = LaneState::Writing(w, end);
                }
                let LaneState::Writing(w, end) = &mut self.state else { unreachable!() };
                if w.advance(world, burst)? {
                    self.actor.now = self.actor.now.max(*end);
                    return Ok(true);
                }
                Ok(false)
            }
            OpKind::ReadPackets => {
                if matches!(self.state, LaneState::Start) {
                    self.state = LaneState::Reading(LlReadState::default());
                }
                let LaneState::Reading(st) = &mut self.state else { unreachable!() };
                let sreg = self.shared.borrow().region(src.buffer, rank)?;
                let flag = op.flag.expect("validated") + flag_offset;
                match ll_poll_range(world, &mut self.actor, sreg, so, size, flag, st)? {
                    Some(data) => {
                        let dreg = self.region(dst.buffer, rank)?;
                        if world.is_ghost() {
                            world.check_range(dreg, dof, size)?;
                        } else {
                            world.write(ctx, dreg, dof, &data)?;
                        }
                        Ok(true)
                    }
                    None => Ok(false),
                }
            }
            other => Err(Error::Invalid(format!("{} cannot run on a lane", other.name()))),
        }
    }
}

impl Context for Lane {
    fn label(&self) -> String {
        self.label.clone()
    }

    fn step(&mut self, world: &mut SimWorld, _spawn: &mut Vec<Box<dyn Context>>) -> Result<Step> {
        let progressed = !matches!(self.state, LaneState::Reading(_));
        if !self.run(world)? {
            // Writers always make progress; readers only when packets land.
            return Ok(if progressed { Step::Ran } else { Step::Blocked });
        }
        let mut b = self.block.borrow_mut();
        b.outstanding -= 1;
        b.lane_join.join(world.clock(self.actor.ctx));
        b.lane_end = b.lane_end.max(self.actor.now);
        let mut sh = self.shared.borrow_mut();
        sh.event(self.rank, self.tb, self.index, self.op.op, Phase::Complete, self.actor.now);
        sh.end_time = sh.end_time.max(self.actor.now);
        Ok(Step::Done)
    }

    fn ready_time(&self) -> f64 {
        self.actor.now
    }
}
