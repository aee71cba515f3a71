//! The simulated cluster: ranks, memory regions, semaphores, topology and
//! the happens-before bookkeeping shared by every execution context.

pub mod clock;
pub mod race;
pub mod sched;

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::element::{reduce_bytes_into, DType};
use crate::fifo::{RequestQueue, Ticket};
use crate::timing::Timeline;
use crate::{Error, Result};

pub use clock::VectorClock;
pub use race::{AccessKind, AccessRecord, RaceDetector, RaceReport};
pub use sched::{run_schedule, Context, ScheduleMode, ScriptContext, ScriptStep, Step, Trace};

pub type RankId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RegionId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SemId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CtxId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct QueueId(pub usize);

/// The context every world starts with; host-side setup runs as it.
pub const HOST: CtxId = CtxId(0);

/// Environment variable overriding the world seed.
pub const SEED_ENV: &str = "COMMFORGE_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntraKind {
    SwitchAttached,
    PeerMesh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkClass {
    Intra,
    Inter,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Endpoint {
    Gpu(RankId),
    NodeSwitch(usize),
    Nic(RankId),
    Fabric,
}

/// A directed hop; each one is an exclusive resource in the timing model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Hop(pub Endpoint, pub Endpoint);

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub num_nodes: usize,
    pub gpus_per_node: usize,
    pub intra_kind: IntraKind,
    pub links: Vec<(Endpoint, Endpoint, LinkClass)>,
}

impl Topology {
    pub fn new(num_nodes: usize, gpus_per_node: usize, intra_kind: IntraKind) -> Self {
        let mut links = Vec::new();
        for node in 0..num_nodes {
            let ranks = node * gpus_per_node..(node + 1) * gpus_per_node;
            match intra_kind {
                IntraKind::SwitchAttached => {
                    for r in ranks.clone() {
                        links.push((Endpoint::Gpu(r), Endpoint::NodeSwitch(node), LinkClass::Intra));
                    }
                }
                IntraKind::PeerMesh => {
                    for a in ranks.clone() {
                        for b in a + 1..ranks.end {
                            links.push((Endpoint::Gpu(a), Endpoint::Gpu(b), LinkClass::Intra));
                        }
                    }
                }
            }
            if num_nodes > 1 {
                for r in ranks {
                    links.push((Endpoint::Gpu(r), Endpoint::Nic(r), LinkClass::Inter));
                    links.push((Endpoint::Nic(r), Endpoint::Fabric, LinkClass::Inter));
                }
            }
        }
        Self {
            num_nodes,
            gpus_per_node,
            intra_kind,
            links,
        }
    }

    pub fn num_ranks(&self) -> usize {
        self.num_nodes * self.gpus_per_node
    }

    pub fn node_of(&self, rank: RankId) -> usize {
        rank / self.gpus_per_node
    }

    pub fn class(&self, a: RankId, b: RankId) -> LinkClass {
        if self.node_of(a) == self.node_of(b) {
            LinkClass::Intra
        } else {
            LinkClass::Inter
        }
    }

    /// The directed hops a transfer from `a` to `b` occupies.
    pub fn path(&self, a: RankId, b: RankId) -> Vec<Hop> {
        match self.class(a, b) {
            LinkClass::Intra => match self.intra_kind {
                IntraKind::SwitchAttached => {
                    let sw = Endpoint::NodeSwitch(self.node_of(a));
                    vec![Hop(Endpoint::Gpu(a), sw), Hop(sw, Endpoint::Gpu(b))]
                }
                IntraKind::PeerMesh => vec![Hop(Endpoint::Gpu(a), Endpoint::Gpu(b))],
            },
            LinkClass::Inter => vec![
                Hop(Endpoint::Nic(a), Endpoint::Fabric),
                Hop(Endpoint::Fabric, Endpoint::Nic(b)),
            ],
        }
    }
}

/// Shape of a world to construct.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldSpec {
    pub num_nodes: usize,
    pub gpus_per_node: usize,
    pub intra_kind: IntraKind,
    pub seed: u64,
    /// Ghost worlds track sizes, synchronization and time but hold no bytes.
    pub ghost: bool,
}

impl WorldSpec {
    pub fn single_node(gpus: usize) -> Self {
        Self {
            num_nodes: 1,
            gpus_per_node: gpus,
            intra_kind: IntraKind::SwitchAttached,
            seed: 0,
            ghost: false,
        }
    }

    pub fn multi_node(nodes: usize, gpus_per_node: usize) -> Self {
        Self {
            num_nodes: nodes,
            ..Self::single_node(gpus_per_node)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn ghost(mut self) -> Self {
        self.ghost = true;
        self
    }

    /// Applies the `COMMFORGE_SEED` override when set.
    pub fn with_env_seed(mut self) -> Result<Self> {
        if let Ok(raw) = std::env::var(SEED_ENV) {
            self.seed = raw
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={raw:?} is not a u64")))?;
        }
        Ok(self)
    }

    pub fn num_ranks(&self) -> usize {
        self.num_nodes * self.gpus_per_node
    }
}

#[derive(Debug, Clone)]
pub struct Region {
    pub id: RegionId,
    pub rank: RankId,
    pub len: usize,
    bytes: Vec<u8>,
}

impl Region {
    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }
}

#[derive(Debug, Clone)]
pub struct Semaphore {
    pub id: SemId,
    pub rank: RankId,
    pub value: u64,
    released: VectorClock,
    /// `(value after increment, time of increment)`, ascending.
    history: Vec<(u64, f64)>,
}

impl Semaphore {
    /// Simulated time at which the counter first reached `target`.
    fn reached_at(&self, target: u64) -> f64 {
        let idx = self.history.partition_point(|(v, _)| *v < target);
        self.history.get(idx).map_or(0.0, |(_, t)| *t)
    }
}

/// An execution context together with its simulated local time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Actor {
    pub ctx: CtxId,
    pub now: f64,
}

impl Actor {
    pub fn new(ctx: CtxId) -> Self {
        Self { ctx, now: 0.0 }
    }
}

#[derive(Debug, Clone)]
struct PacketMeta {
    clock: Arc<VectorClock>,
    time: f64,
}

/// Range-level LL arrival record used by ghost worlds.
#[derive(Debug, Clone)]
struct Arrival {
    lo: usize,
    hi: usize,
    flag: u32,
    time: f64,
}

pub struct SimWorld {
    spec: WorldSpec,
    topology: Topology,
    regions: Vec<Region>,
    semaphores: Vec<Semaphore>,
    pub(crate) queues: Vec<RequestQueue>,
    clocks: Vec<VectorClock>,
    labels: Vec<String>,
    detector: RaceDetector,
    rng: ChaCha8Rng,
    packets: HashMap<(RegionId, usize), PacketMeta>,
    arrivals: BTreeMap<RegionId, Vec<Arrival>>,
    check_races: bool,
    timeline: Option<Timeline>,
}

impl SimWorld {
    pub fn new(spec: WorldSpec) -> Result<Self> {
        if spec.num_nodes == 0 || spec.gpus_per_node == 0 {
            return Err(Error::Topology("a world needs at least one rank".into()));
        }
        let topology = Topology::new(spec.num_nodes, spec.gpus_per_node, spec.intra_kind);
        let mut host_clock = VectorClock::new();
        host_clock.set(HOST, 1);
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
            check_races: !spec.ghost,
            spec,
            topology,
            regions: Vec::new(),
            semaphores: Vec::new(),
            queues: Vec::new(),
            clocks: vec![host_clock],
            labels: vec!["host".into()],
            detector: RaceDetector::new(),
            packets: HashMap::new(),
            arrivals: BTreeMap::new(),
            timeline: None,
        })
    }

    pub fn spec(&self) -> &WorldSpec {
        &self.spec
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn num_ranks(&self) -> usize {
        self.spec.num_ranks()
    }

    pub fn seed(&self) -> u64 {
        self.spec.seed
    }

    pub fn is_ghost(&self) -> bool {
        self.spec.ghost
    }

    /// Resets the schedule RNG; used to replay a run under another seed.
    pub fn reseed(&mut self, seed: u64) {
        self.spec.seed = seed;
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    // ---- regions -------------------------------------------------------

    pub fn alloc_region(&mut self, rank: RankId, len: usize) -> Result<RegionId> {
        if len == 0 {
            return Err(Error::BadSize);
        }
        if rank >= self.num_ranks() {
            return Err(Error::Topology(format!("rank {rank} does not exist")));
        }
        let id = RegionId(self.regions.len());
        let bytes = if self.spec.ghost { Vec::new() } else { vec![0; len] };
        self.regions.push(Region {
            id,
            rank,
            len,
            bytes,
        });
        Ok(id)
    }

    pub fn region(&self, id: RegionId) -> &Region {
        &self.regions[id.0]
    }

    pub fn regions(&self) -> &[Region] {
        &self.regions
    }

    pub fn check_range(&self, region: RegionId, offset: usize, size: usize) -> Result<()> {
        let len = self
            .regions
            .get(region.0)
            .ok_or_else(|| Error::Invalid(format!("unknown region {}", region.0)))?
            .len;
        if offset.checked_add(size).is_none_or(|end| end > len) {
            return Err(Error::Oob { offset, size, len });
        }
        Ok(())
    }

    /// Reads bytes without recording an access (host inspection).
    pub fn peek(&self, region: RegionId, offset: usize, size: usize) -> Result<Vec<u8>> {
        self.check_range(region, offset, size)?;
        if self.spec.ghost {
            return Ok(vec![0; size]);
        }
        Ok(self.regions[region.0].bytes[offset..offset + size].to_vec())
    }

    /// Writes bytes as the host context.
    pub fn host_write(&mut self, region: RegionId, offset: usize, data: &[u8]) -> Result<()> {
        self.write(HOST, region, offset, data)
    }

    pub fn read(&mut self, ctx: CtxId, region: RegionId, offset: usize, size: usize) -> Result<Vec<u8>> {
        self.access(ctx, region, offset, size, AccessKind::Read)?;
        self.peek(region, offset, size)
    }

    pub fn write(&mut self, ctx: CtxId, region: RegionId, offset: usize, data: &[u8]) -> Result<()> {
        self.access(ctx, region, offset, data.len(), AccessKind::Write)?;
        if !self.spec.ghost {
            self.regions[region.0].bytes[offset..offset + data.len()].copy_from_slice(data);
        }
        Ok(())
    }

    /// `dst[..] = src[..]`, recorded as a read and a write by `ctx`.
    pub fn copy(
        &mut self,
        ctx: CtxId,
        src: (RegionId, usize),
        dst: (RegionId, usize),
        size: usize,
    ) -> Result<()> {
        if self.spec.ghost {
            self.check_range(src.0, src.1, size)?;
            return self.check_range(dst.0, dst.1, size);
        }
        let data = self.read(ctx, src.0, src.1, size)?;
        self.write(ctx, dst.0, dst.1, &data)
    }

    /// `dst[..] = dst[..] + src[..]` element-wise.
    pub fn reduce(
        &mut self,
        ctx: CtxId,
        dtype: DType,
        dst: (RegionId, usize),
        src: (RegionId, usize),
        size: usize,
    ) -> Result<()> {
        if !size.is_multiple_of(dtype.size()) {
            return Err(Error::BadAlign(dtype.size()));
        }
        if self.spec.ghost {
            self.check_range(src.0, src.1, size)?;
            return self.check_range(dst.0, dst.1, size);
        }
        let rhs = self.read(ctx, src.0, src.1, size)?;
        let mut acc = self.read(ctx, dst.0, dst.1, size)?;
        reduce_bytes_into(dtype, &mut acc, &rhs);
        self.write(ctx, dst.0, dst.1, &acc)
    }

    /// Bounds-checks and records an access, returning a race report if the
    /// access conflicts with a concurrent one.
    pub fn access(
        &mut self,
        ctx: CtxId,
        region: RegionId,
        offset: usize,
        size: usize,
        kind: AccessKind,
    ) -> Result<Option<RaceReport>> {
        self.check_range(region, offset, size)?;
        if !self.check_races {
            return Ok(None);
        }
        let rec = AccessRecord {
            ctx,
            region,
            lo: offset,
            hi: offset + size,
            kind,
            epoch: self.clocks[ctx.0].get(ctx),
        };
        Ok(self.detector.record(rec, &self.clocks[ctx.0]))
    }

    /// Records an access described by `rec`, stamping it with the context's
    /// current epoch.
    pub fn record_access(&mut self, rec: AccessRecord) -> Result<Option<RaceReport>> {
        self.access(rec.ctx, rec.region, rec.lo, rec.hi - rec.lo, rec.kind)
    }

    pub fn races(&self) -> &[RaceReport] {
        self.detector.reports()
    }

    pub fn clear_races(&mut self) {
        self.detector.clear();
    }

    pub fn set_race_checking(&mut self, on: bool) {
        self.check_races = on && !self.spec.ghost;
    }

    // ---- contexts and clocks -------------------------------------------

    /// Registers a context whose history starts after everything the host
    /// has done so far.
    pub fn new_context(&mut self, label: impl Into<String>) -> CtxId {
        let parent = self.clocks[HOST.0].clone();
        self.new_context_from(label, &parent)
    }

    pub fn new_context_from(&mut self, label: impl Into<String>, parent: &VectorClock) -> CtxId {
        let id = CtxId(self.clocks.len());
        let mut clock = parent.clone();
        clock.set(id, 1);
        self.clocks.push(clock);
        self.labels.push(label.into());
        id
    }

    pub fn label(&self, ctx: CtxId) -> &str {
        &self.labels[ctx.0]
    }

    pub fn clock(&self, ctx: CtxId) -> &VectorClock {
        &self.clocks[ctx.0]
    }

    /// Replaces a context's clock, keeping its own component monotone.
    pub fn set_clock(&mut self, ctx: CtxId, mut clock: VectorClock) {
        let own = self.clocks[ctx.0].get(ctx).max(clock.get(ctx)) + 1;
        clock.set(ctx, own);
        self.clocks[ctx.0] = clock;
    }

    /// Snapshot of `ctx`'s clock for a release edge; later accesses by `ctx`
    /// are not covered by it.
    pub fn release(&mut self, ctx: CtxId) -> VectorClock {
        let snap = self.clocks[ctx.0].clone();
        self.clocks[ctx.0].tick(ctx);
        snap
    }

    pub fn acquire(&mut self, ctx: CtxId, clock: &VectorClock) {
        self.clocks[ctx.0].join(clock);
    }

    /// Makes the host happen after every context (end of a kernel launch).
    pub fn host_join_all(&mut self) {
        let mut all = VectorClock::new();
        for c in &self.clocks {
            all.join(c);
        }
        all.tick(HOST);
        self.clocks[HOST.0] = all;
    }

    // ---- semaphores ----------------------------------------------------

    pub fn sem_create(&mut self, rank: RankId) -> SemId {
        let id = SemId(self.semaphores.len());
        self.semaphores.push(Semaphore {
            id,
            rank,
            value: 0,
            released: VectorClock::new(),
            history: Vec::new(),
        });
        id
    }

    pub fn semaphore(&self, sem: SemId) -> Result<&Semaphore> {
        self.semaphores.get(sem.0).ok_or(Error::NoSem(sem.0))
    }

    pub fn sem_value(&self, sem: SemId) -> Result<u64> {
        Ok(self.semaphore(sem)?.value)
    }

    /// Atomic release-ordered increment; returns the new value.
    pub fn sem_add(&mut self, sem: SemId, delta: u64, actor: Actor) -> Result<u64> {
        if sem.0 >= self.semaphores.len() {
            return Err(Error::NoSem(sem.0));
        }
        if delta == 0 {
            return Err(Error::BadDelta);
        }
        let snap = self.release(actor.ctx);
        let s = &mut self.semaphores[sem.0];
        s.value += delta;
        s.released.join(&snap);
        s.history.push((s.value, actor.now));
        Ok(s.value)
    }

    /// Polls `value >= expected`. On success the waiter acquires every
    /// increment observed so far and its time advances to when the counter
    /// reached `expected`.
    pub fn sem_wait_geq(&mut self, sem: SemId, expected: u64, actor: &mut Actor) -> Result<bool> {
        let s = self.semaphores.get(sem.0).ok_or(Error::NoSem(sem.0))?;
        if s.value < expected {
            return Ok(false);
        }
        let released = s.released.clone();
        let at = s.reached_at(expected);
        self.acquire(actor.ctx, &released);
        actor.now = actor.now.max(at);
        Ok(true)
    }

    // ---- LL packets ----------------------------------------------------

    /// Writes one 8-byte LL packet `{data, flag}` at packet index `idx`
    /// atomically.
    pub fn write_packet(
        &mut self,
        region: RegionId,
        idx: usize,
        data: [u8; 4],
        flag: u32,
        clock: &Arc<VectorClock>,
        time: f64,
    ) -> Result<()> {
        if flag == 0 {
            return Err(Error::ZeroFlag);
        }
        self.check_range(region, idx * 8, 8)?;
        if self.spec.ghost {
            self.arrivals.entry(region).or_default().push(Arrival {
                lo: idx,
                hi: idx + 1,
                flag,
                time,
            });
            return Ok(());
        }
        let bytes = &mut self.regions[region.0].bytes[idx * 8..idx * 8 + 8];
        bytes[..4].copy_from_slice(&data);
        bytes[4..].copy_from_slice(&flag.to_le_bytes());
        self.packets.insert(
            (region, idx),
            PacketMeta {
                clock: Arc::clone(clock),
                time,
            },
        );
        Ok(())
    }

    /// Ghost-world bulk arrival of packets `[lo, hi)` carrying `flag`.
    pub fn write_packet_range(&mut self, region: RegionId, lo: usize, hi: usize, flag: u32, time: f64) -> Result<()> {
        if flag == 0 {
            return Err(Error::ZeroFlag);
        }
        self.check_range(region, lo * 8, (hi - lo) * 8)?;
        self.arrivals
            .entry(region)
            .or_default()
            .push(Arrival { lo, hi, flag, time });
        Ok(())
    }

    /// Polls packet `idx` for `flag`. Returns its data once the flag
    /// matches, acquiring the writer's clock.
    pub fn read_packet(
        &mut self,
        region: RegionId,
        idx: usize,
        flag: u32,
        actor: &mut Actor,
    ) -> Result<Option<[u8; 4]>> {
        self.check_range(region, idx * 8, 8)?;
        if self.spec.ghost {
            return Ok(self
                .range_arrival(region, idx, idx + 1, flag)
                .map(|t| {
                    actor.now = actor.now.max(t);
                    [0; 4]
                }));
        }
        let bytes = &self.regions[region.0].bytes[idx * 8..idx * 8 + 8];
        let seen = u32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]);
        if seen != flag {
            return Ok(None);
        }
        let data = [bytes[0], bytes[1], bytes[2], bytes[3]];
        if let Some(meta) = self.packets.get(&(region, idx)) {
            let (clock, time) = (Arc::clone(&meta.clock), meta.time);
            self.acquire(actor.ctx, &clock);
            actor.now = actor.now.max(time);
        }
        Ok(Some(data))
    }

    /// Ghost worlds: latest arrival time covering `[lo, hi)` with `flag`,
    /// or `None` while some packet is missing.
    pub fn range_arrival(&self, region: RegionId, lo: usize, hi: usize, flag: u32) -> Option<f64> {
        if lo >= hi {
            return Some(0.0);
        }
        let log = self.arrivals.get(&region)?;
        let mut covered = lo;
        let mut latest: f64 = 0.0;
        // Arrivals may come in any order; sweep by start.
        let mut spans: Vec<&Arrival> = log
            .iter()
            .filter(|a| a.flag == flag && a.hi > lo && a.lo < hi)
            .collect();
        spans.sort_by_key(|a| a.lo);
        for a in spans {
            if a.lo > covered {
                break;
            }
            if a.hi > covered {
                covered = a.hi;
            }
            latest = latest.max(a.time);
        }
        (covered >= hi).then_some(latest)
    }

    // ---- proxy queues --------------------------------------------------

    pub fn add_queue(&mut self, capacity: usize) -> QueueId {
        self.queues.push(RequestQueue::new(capacity));
        QueueId(self.queues.len() - 1)
    }

    pub fn queue(&self, q: QueueId) -> &RequestQueue {
        &self.queues[q.0]
    }

    pub fn queue_mut(&mut self, q: QueueId) -> &mut RequestQueue {
        &mut self.queues[q.0]
    }

    /// Polls completion of `ticket` on queue `q`, acquiring the proxy's
    /// completion clock on success.
    pub fn wait_completed(&mut self, q: QueueId, ticket: Ticket, actor: &mut Actor) -> Result<bool> {
        match self.queues[q.0].wait_completed(ticket) {
            Ok(Some((clock, at))) => {
                self.acquire(actor.ctx, &clock);
                actor.now = actor.now.max(at);
                Ok(true)
            }
            Ok(None) => Ok(false),
            Err(Error::ProxyDown(_)) => Err(Error::ProxyDown(q.0)),
            Err(e) => Err(e),
        }
    }

    // ---- timing --------------------------------------------------------

    pub fn set_timeline(&mut self, timeline: Option<Timeline>) {
        self.timeline = timeline;
    }

    pub fn timeline(&self) -> Option<&Timeline> {
        self.timeline.as_ref()
    }

    pub fn take_timeline(&mut self) -> Option<Timeline> {
        self.timeline.take()
    }

    /// Occupies the links between `src` and `dst` for `bytes`, starting no
    /// earlier than `start`; returns the completion time. Without a timeline
    /// every transfer is instantaneous.
    pub fn transfer(&mut self, src: RankId, dst: RankId, bytes: usize, start: f64) -> f64 {
        match self.timeline.as_mut() {
            Some(t) => t.transfer(&self.topology, src, dst, bytes, start),
            None => start,
        }
    }

    /// Multimem transfer through the node switch: a reduce pulls `bytes` from
    /// every member into the caller, a broadcast pushes them from the caller
    /// to every member. All involved switch ports are held together.
    pub fn transfer_switch(&mut self, members: &[RankId], caller: RankId, bytes: usize, start: f64, reduce: bool) -> f64 {
        let Some(t) = self.timeline.as_mut() else {
            return start;
        };
        let sw = Endpoint::NodeSwitch(self.topology.node_of(caller));
        let mut hops = Vec::with_capacity(members.len() + 1);
        for &r in members {
            hops.push(if reduce {
                Hop(Endpoint::Gpu(r), sw)
            } else {
                Hop(sw, Endpoint::Gpu(r))
            });
        }
        hops.push(if reduce {
            Hop(sw, Endpoint::Gpu(caller))
        } else {
            Hop(Endpoint::Gpu(caller), sw)
        });
        hops.sort();
        hops.dedup();
        let end = t.reserve(&hops, LinkClass::Intra, bytes, start);
        for &r in members.iter().filter(|&&r| r != caller) {
            let (src, dst) = if reduce { (r, caller) } else { (caller, r) };
            t.log(src, dst, LinkClass::Intra, bytes, end);
        }
        end
    }

    /// Delay between a semaphore increment being issued and it landing.
    pub fn signal_latency(&self, src: RankId, dst: RankId) -> f64 {
        self.timeline
            .as_ref()
            .map_or(0.0, |t| t.signal_latency(self.topology.class(src, dst)))
    }

    pub fn overhead(&self, kind: crate::timing::Overhead) -> f64 {
        self.timeline.as_ref().map_or(0.0, |t| t.overhead(kind))
    }
}
