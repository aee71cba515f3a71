//! Plan interpreter: binds a plan to a [`SimWorld`] and runs every thread
//! block as a scheduler context.
//!
//! Each (rank, thread block) runs a lead context that issues ops in program
//! order. Synchronization and port-channel ops execute on the lead; data
//! movement ops run asynchronously on lane contexts forked from the block's
//! state at its last `tb_sync`, so effects of an op are only guaranteed
//! visible to later ops of the block after a `tb_sync` (or, for data that
//! arrives from peers, after a `wait` followed by a `tb_sync`).

mod block;

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;

use crate::element::{decode, encode, Element};
use crate::fifo::{Ticket, DEFAULT_CAPACITY};
use crate::plan::{validate_plan, BufferKind, ChannelDecl, ChannelType, ExecutionPlan, OpKind, Severity};
use crate::sim::{
    run_schedule, Context, CtxId, QueueId, RaceReport, RankId, RegionId, ScheduleMode, SemId, SimWorld, VectorClock,
    HOST,
};
use crate::timing::{CostParams, Timeline};
use crate::{Error, Result};

use block::{Block, Lead};

pub use block::{Phase, TraceEvent};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExecOptions {
    pub schedule: ScheduleMode,
    /// Run against the alpha-beta timeline; forces timed scheduling.
    pub timing: Option<CostParams>,
    /// LL packets a lane writes per scheduler step.
    pub ll_burst: usize,
    pub queue_capacity: usize,
}

impl Default for ExecOptions {
    fn default() -> Self {
        Self {
            schedule: ScheduleMode::RoundRobin,
            timing: None,
            ll_burst: 8,
            queue_capacity: DEFAULT_CAPACITY,
        }
    }
}

impl ExecOptions {
    pub fn seeded() -> Self {
        Self {
            schedule: ScheduleMode::SeededRandom,
            ..Self::default()
        }
    }

    pub fn timed(params: CostParams) -> Self {
        Self {
            schedule: ScheduleMode::Timed,
            timing: Some(params),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunResult<T> {
    /// Contents of each rank's output buffer (empty when it has none).
    pub outputs: Vec<Vec<T>>,
    pub races: Vec<RaceReport>,
    pub trace: Vec<TraceEvent>,
    /// Latest simulated time reached by any context or transfer (0 in
    /// untimed runs).
    pub makespan: f64,
    pub timeline: Option<Timeline>,
}

/// Per-channel runtime state.
#[derive(Debug)]
pub(crate) struct ChanRt {
    pub decl: ChannelDecl,
    /// Semaphore waits on this channel poll; owned by the channel's source.
    pub inbox: Option<SemId>,
    /// Semaphore signals on this channel raise: the counterpart's inbox.
    pub outbox: Option<SemId>,
    pub expected: u64,
    pub queue: Option<QueueId>,
    pub proxy: Option<CtxId>,
    pub last_ticket: Option<Ticket>,
}

/// Barrier instance shared by the blocks of one rank.
#[derive(Debug, Default)]
pub(crate) struct BarrierState {
    pub arrived: usize,
    pub clock: VectorClock,
    pub time: f64,
}

/// Runtime state the contexts of one launch share.
pub(crate) struct Shared {
    pub plan: Rc<ExecutionPlan>,
    pub regions: HashMap<(usize, RankId), RegionId>,
    pub chans: Vec<ChanRt>,
    pub chan_pos: HashMap<usize, usize>,
    pub trace: Vec<TraceEvent>,
    pub seq: u64,
    pub flag_offset: u32,
    pub ll_burst: usize,
    pub barriers: HashMap<(RankId, Vec<usize>, u64), BarrierState>,
    pub end_time: f64,
}

impl Shared {
    pub fn region(&self, buffer: usize, rank: RankId) -> Result<RegionId> {
        self.regions
            .get(&(buffer, rank))
            .copied()
            .ok_or_else(|| Error::Invalid(format!("buffer {buffer} is not allocated on rank {rank}")))
    }

    pub fn chan(&mut self, id: usize) -> &mut ChanRt {
        let pos = self.chan_pos[&id];
        &mut self.chans[pos]
    }

    pub fn event(&mut self, rank: RankId, tb: usize, index: usize, op: OpKind, phase: Phase, time: f64) {
        self.trace.push(TraceEvent {
            seq: self.seq,
            rank,
            tb,
            index,
            op,
            phase,
            time,
        });
        self.seq += 1;
    }
}

/// A plan bound to a world.
pub struct Runtime {
    world: SimWorld,
    shared: Rc<RefCell<Shared>>,
    blocks: BTreeMap<(RankId, usize), (CtxId, Rc<RefCell<Block>>)>,
    max_flag: u32,
    launches: u32,
    queue_capacity: usize,
}

impl Runtime {
    /// Allocates regions, semaphores, request queues and contexts for
    /// `plan` on `world`.
    pub fn init(plan: ExecutionPlan, world: SimWorld) -> Result<Self> {
        Self::init_with(plan, world, DEFAULT_CAPACITY)
    }

    pub fn init_with(plan: ExecutionPlan, mut world: SimWorld, queue_capacity: usize) -> Result<Self> {
        if world.num_ranks() != plan.num_ranks {
            return Err(Error::RankMismatch {
                expected: plan.num_ranks,
                actual: world.num_ranks(),
            });
        }
        if !plan.is_lowered() {
            return Err(Error::Invalid("plan has not been lowered".into()));
        }
        if let Some(d) = validate_plan(&plan).into_iter().find(|d| d.severity == Severity::Error) {
            return Err(Error::Invalid(d.to_string()));
        }
        let topo = world.topology().clone();
        let mut regions = HashMap::new();
        for b in &plan.buffers {
            for r in 0..plan.num_ranks {
                if b.rank.includes(r) {
                    regions.insert((b.id, r), world.alloc_region(r, b.elems * plan.dtype.size())?);
                }
            }
        }
        let pairs = plan.counterparts();
        let mut chans = Vec::new();
        let mut chan_pos = HashMap::new();
        for c in &plan.channels {
            if let Some((s, d)) = c.endpoints() {
                if c.kind() == ChannelType::Memory && topo.node_of(s) != topo.node_of(d) {
                    return Err(Error::Topology(format!(
                        "memory channel {} crosses nodes ({s} -> {d})",
                        c.id()
                    )));
                }
            }
            if let ChannelDecl::Switch { ranks, .. } = c {
                if topo.intra_kind != crate::sim::IntraKind::SwitchAttached
                    || ranks.iter().any(|&r| topo.node_of(r) != topo.node_of(ranks[0]))
                {
                    return Err(Error::Topology(format!("switch channel {} needs one switch-attached node", c.id())));
                }
            }
            chan_pos.insert(c.id(), chans.len());
            let inbox = c.endpoints().map(|(s, _)| world.sem_create(s));
            let (queue, proxy) = match c {
                ChannelDecl::Port { src, dst, .. } => {
                    let q = world.add_queue(queue_capacity);
                    let ctx = world.new_context(format!("proxy {src}->{dst} chan {}", c.id()));
                    (Some(q), Some(ctx))
                }
                _ => (None, None),
            };
            chans.push(ChanRt {
                decl: c.clone(),
                inbox,
                outbox: None,
                expected: 0,
                queue,
                proxy,
                last_ticket: None,
            });
        }
        for i in 0..chans.len() {
            let id = chans[i].decl.id();
            if let Some(back) = pairs.get(&id) {
                chans[i].outbox = chans[chan_pos[back]].inbox;
            }
        }
        let max_flag = plan
            .programs
            .iter()
            .flat_map(|p| &p.ops)
            .filter_map(|o| o.flag)
            .max()
            .unwrap_or(0);
        let mut blocks = BTreeMap::new();
        for p in &plan.programs {
            let ctx = world.new_context(format!("rank {} tb {}", p.rank, p.tb));
            blocks.insert((p.rank, p.tb), (ctx, Rc::new(RefCell::new(Block::default()))));
        }
        let shared = Shared {
            plan: Rc::new(plan),
            regions,
            chans,
            chan_pos,
            trace: Vec::new(),
            seq: 0,
            flag_offset: 0,
            ll_burst: 8,
            barriers: HashMap::new(),
            end_time: 0.0,
        };
        Ok(Self {
            world,
            shared: Rc::new(RefCell::new(shared)),
            blocks,
            max_flag,
            launches: 0,
            queue_capacity,
        })
    }

    /// Re-running initialization on a bound runtime changes nothing.
    pub fn rebind(&mut self) -> Result<()> {
        let plan = self.shared.borrow().plan.clone();
        if self.world.num_ranks() != plan.num_ranks {
            return Err(Error::RankMismatch {
                expected: plan.num_ranks,
                actual: self.world.num_ranks(),
            });
        }
        Ok(())
    }

    pub fn plan(&self) -> Rc<ExecutionPlan> {
        self.shared.borrow().plan.clone()
    }

    pub fn world(&self) -> &SimWorld {
        &self.world
    }

    pub fn world_mut(&mut self) -> &mut SimWorld {
        &mut self.world
    }

    pub fn into_world(self) -> SimWorld {
        self.world
    }

    pub fn queue_capacity(&self) -> usize {
        self.queue_capacity
    }

    /// Number of proxy workers (one per port channel).
    pub fn proxy_count(&self) -> usize {
        self.shared.borrow().chans.iter().filter(|c| c.proxy.is_some()).count()
    }

    pub fn region(&self, buffer: usize, rank: RankId) -> Option<RegionId> {
        self.shared.borrow().regions.get(&(buffer, rank)).copied()
    }

    pub fn execute<T: Element>(&mut self, inputs: &[Vec<T>], opts: ExecOptions) -> Result<RunResult<T>> {
        let plan = self.plan();
        if T::DTYPE != plan.dtype {
            return Err(Error::Shape(format!(
                "plan dtype is {} but inputs are {}",
                plan.dtype.name(),
                T::DTYPE.name()
            )));
        }
        let ghost = self.world.is_ghost();
        if !ghost && inputs.len() != plan.num_ranks {
            return Err(Error::Shape(format!(
                "expected inputs for {} ranks, got {}",
                plan.num_ranks,
                inputs.len()
            )));
        }

        self.world.host_join_all();
        self.world.clear_races();
        self.world.set_timeline(opts.timing.map(Timeline::new));
        if !ghost {
            for (r, data) in inputs.iter().enumerate() {
                match plan.buffer_of(BufferKind::Input, r) {
                    Some(b) => {
                        if data.len() != b.elems {
                            return Err(Error::Shape(format!(
                                "rank {r} input has {} elements, buffer {} holds {}",
                                data.len(),
                                b.id,
                                b.elems
                            )));
                        }
                        let reg = self.shared.borrow().region(b.id, r)?;
                        self.world.host_write(reg, 0, &encode(data))?;
                    }
                    None if !data.is_empty() => {
                        return Err(Error::Shape(format!("rank {r} has no input buffer")));
                    }
                    None => {}
                }
            }
        }
        let host = self.world.release(HOST);

        {
            let mut sh = self.shared.borrow_mut();
            sh.trace.clear();
            sh.seq = 0;
            sh.barriers.clear();
            sh.end_time = 0.0;
            sh.ll_burst = opts.ll_burst.max(1);
            sh.flag_offset = self
                .launches
                .checked_mul(self.max_flag)
                .ok_or_else(|| Error::Invalid("LL flag space exhausted".into()))?;
        }

        let mut contexts: Vec<Box<dyn Context>> = Vec::new();
        for (&(rank, tb), (ctx, block)) in &self.blocks {
            self.world.set_clock(*ctx, host.clone());
            block.borrow_mut().reset(&host);
            let ops = plan
                .programs
                .iter()
                .find(|p| p.rank == rank && p.tb == tb)
                .map(|p| p.ops.clone())
                .unwrap_or_default();
            contexts.push(Box::new(Lead::new(rank, tb, *ctx, ops, block.clone(), self.shared.clone())));
        }
        {
            let sh = self.shared.borrow();
            for ch in &sh.chans {
                if let (Some(q), Some(ctx), Some((s, d))) = (ch.queue, ch.proxy, ch.decl.endpoints()) {
                    self.world.set_clock(ctx, host.clone());
                    contexts.push(Box::new(crate::channels::ProxyWorker::new(
                        format!("proxy {s}->{d} chan {}", ch.decl.id()),
                        q,
                        ctx,
                        s,
                        d,
                        ch.outbox,
                    )));
                }
            }
        }

        let mode = if opts.timing.is_some() {
            ScheduleMode::Timed
        } else {
            opts.schedule
        };
        let outcome = run_schedule(&mut self.world, contexts, mode);
        self.launches += 1;
        outcome?;

        self.world.host_join_all();
        let mut outputs = Vec::with_capacity(plan.num_ranks);
        for r in 0..plan.num_ranks {
            match plan.buffer_of(BufferKind::Output, r) {
                Some(b) if !ghost => {
                    let reg = self.shared.borrow().region(b.id, r)?;
                    let bytes = self.world.peek(reg, 0, b.elems * plan.dtype.size())?;
                    outputs.push(decode::<T>(&bytes));
                }
                _ => outputs.push(Vec::new()),
            }
        }
        let timeline = self.world.take_timeline();
        let sh = self.shared.borrow();
        let makespan = timeline
            .as_ref()
            .map_or(0.0, |t| t.last_completion())
            .max(sh.end_time);
        Ok(RunResult {
            outputs,
            races: self.world.races().to_vec(),
            trace: sh.trace.clone(),
            makespan,
            timeline,
        })
    }

    /// Same as [`execute`](Self::execute); the trace is always recorded.
    pub fn execute_traced<T: Element>(&mut self, inputs: &[Vec<T>], opts: ExecOptions) -> Result<RunResult<T>> {
        self.execute(inputs, opts)
    }
}
