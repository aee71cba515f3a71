//! In-process program builder: records ops per (rank, thread block).

use super::{InstrId, ProgramGraph};
use crate::channels::Protocol;
use crate::element::DType;
use crate::plan::validate::channel_rule;
use crate::plan::{
    BufferDecl, BufferKind, BufferRank, ChannelDecl, ChunkRef, Collective, ExecutionPlan, OpKind, PlanOp,
    ThreadBlockProgram, PLAN_VERSION,
};
use crate::sim::RankId;
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct ProgramBuilder {
    plan: ExecutionPlan,
}

impl ProgramBuilder {
    pub fn new(name: &str, collective: Collective, protocol: Protocol, dtype: DType, num_ranks: usize) -> Self {
        Self {
            plan: ExecutionPlan {
                version: PLAN_VERSION,
                name: name.to_string(),
                collective,
                protocol,
                dtype,
                num_ranks,
                buffers: Vec::new(),
                channels: Vec::new(),
                programs: Vec::new(),
                lowered: Some(false),
            },
        }
    }

    pub fn num_ranks(&self) -> usize {
        self.plan.num_ranks
    }

    pub fn protocol(&self) -> Protocol {
        self.plan.protocol
    }

    /// Declares a buffer present on every rank.
    pub fn buffer(&mut self, kind: BufferKind, elems: usize) -> usize {
        self.declare(kind, BufferRank::All, elems)
    }

    pub fn buffer_on(&mut self, kind: BufferKind, rank: RankId, elems: usize) -> usize {
        self.declare(kind, BufferRank::One(rank), elems)
    }

    fn declare(&mut self, kind: BufferKind, rank: BufferRank, elems: usize) -> usize {
        let id = self.plan.buffers.len();
        self.plan.buffers.push(BufferDecl { id, kind, rank, elems });
        id
    }

    pub fn port(&mut self, src: RankId, dst: RankId) -> usize {
        let id = self.plan.channels.len();
        self.plan.channels.push(ChannelDecl::Port { id, src, dst });
        id
    }

    pub fn memory(&mut self, src: RankId, dst: RankId) -> usize {
        let id = self.plan.channels.len();
        self.plan.channels.push(ChannelDecl::Memory { id, src, dst });
        id
    }

    pub fn switch(&mut self, ranks: Vec<RankId>) -> usize {
        let id = self.plan.channels.len();
        self.plan.channels.push(ChannelDecl::Switch { id, ranks });
        id
    }

    /// Appends `op` to the stream of `(rank, tb)`. An op with a `tb_group`
    /// is recorded on every member block.
    pub fn emit(&mut self, rank: RankId, tb: usize, op: PlanOp) -> Result<InstrId> {
        self.check(rank, &op)?;
        let targets = match &op.tb_group {
            Some(g) => {
                if !g.contains(&tb) {
                    return Err(Error::Invalid(format!("tb_group {g:?} does not include issuing block {tb}")));
                }
                if let Some(c) = op.chan.and_then(|c| self.plan.channel(c)) {
                    if matches!(c, ChannelDecl::Port { .. }) {
                        return Err(Error::Protocol("port channels have one producer and cannot take a tb_group".into()));
                    }
                }
                if matches!(op.op, OpKind::Signal | OpKind::Wait | OpKind::Flush | OpKind::TbSync) {
                    return Err(Error::Protocol(format!("{} cannot take a tb_group", op.op.name())));
                }
                g.clone()
            }
            None => vec![tb],
        };
        let mut id = InstrId { rank, tb, index: 0 };
        for t in targets {
            let prog = self.stream(rank, t);
            prog.ops.push(op.clone());
            if t == tb {
                id.index = prog.ops.len() - 1;
            }
        }
        Ok(id)
    }

    fn stream(&mut self, rank: RankId, tb: usize) -> &mut ThreadBlockProgram {
        let pos = match self.plan.programs.iter().position(|p| p.rank == rank && p.tb == tb) {
            Some(p) => p,
            None => {
                self.plan.programs.push(ThreadBlockProgram { rank, tb, ops: Vec::new() });
                self.plan.programs.len() - 1
            }
        };
        &mut self.plan.programs[pos]
    }

    fn check(&self, rank: RankId, op: &PlanOp) -> Result<()> {
        if rank >= self.plan.num_ranks {
            return Err(Error::Invalid(format!("rank {rank} out of range")));
        }
        if let Some(cid) = op.chan {
            let ch = self
                .plan
                .channel(cid)
                .ok_or_else(|| Error::Invalid(format!("unknown channel {cid}")))?;
            if !ch.has_member(rank) {
                return Err(Error::Invalid(format!("channel {cid} is not issued from rank {rank}")));
            }
            match channel_rule(op.op, ch.kind()) {
                Err(m) => return Err(Error::Protocol(m)),
                Ok(Some(p)) if p != self.plan.protocol => {
                    return Err(Error::Protocol(format!(
                        "{} needs protocol {p} but the program uses {}",
                        op.op.name(),
                        self.plan.protocol
                    )))
                }
                Ok(_) => {}
            }
        } else if matches!(
            op.op,
            OpKind::Put | OpKind::PutPackets | OpKind::PutWithSignal | OpKind::Signal | OpKind::Wait | OpKind::Flush | OpKind::ReducePut
        ) {
            return Err(Error::Invalid(format!("{} needs a channel", op.op.name())));
        }
        for a in self.plan.accesses(rank, op) {
            let buf = self
                .plan
                .buffer(a.chunk.buffer)
                .ok_or_else(|| Error::Invalid(format!("unknown buffer {}", a.chunk.buffer)))?;
            for r in &a.ranks {
                if !buf.rank.includes(*r) {
                    return Err(Error::Invalid(format!("buffer {} does not exist on rank {r}", buf.id)));
                }
            }
            let scale = if a.packet { 2 } else { 1 };
            if scale * a.chunk.end() > buf.elems {
                return Err(Error::Oob {
                    offset: scale * a.chunk.offset,
                    size: scale * a.chunk.size,
                    len: buf.elems,
                });
            }
        }
        Ok(())
    }

    pub fn put(&mut self, rank: RankId, tb: usize, chan: usize, dst: ChunkRef, src: ChunkRef) -> Result<InstrId> {
        self.emit(rank, tb, PlanOp::new(OpKind::Put).chan(chan).src(src).dst(dst))
    }

    pub fn put_with_signal(&mut self, rank: RankId, tb: usize, chan: usize, dst: ChunkRef, src: ChunkRef) -> Result<InstrId> {
        self.emit(rank, tb, PlanOp::new(OpKind::PutWithSignal).chan(chan).src(src).dst(dst))
    }

    /// LL put; the flag is assigned during lowering.
    pub fn put_packets(&mut self, rank: RankId, tb: usize, chan: usize, dst: ChunkRef, src: ChunkRef) -> Result<InstrId> {
        self.emit(rank, tb, PlanOp::new(OpKind::PutPackets).chan(chan).src(src).dst(dst))
    }

    /// Unpacks LL packets from local packet buffer chunk `src` into `dst`.
    pub fn read_packets(&mut self, rank: RankId, tb: usize, dst: ChunkRef, src: ChunkRef) -> Result<InstrId> {
        self.emit(rank, tb, PlanOp::new(OpKind::ReadPackets).src(src).dst(dst))
    }

    pub fn signal(&mut self, rank: RankId, tb: usize, chan: usize) -> Result<InstrId> {
        self.emit(rank, tb, PlanOp::new(OpKind::Signal).chan(chan))
    }

    pub fn wait(&mut self, rank: RankId, tb: usize, chan: usize) -> Result<InstrId> {
        self.emit(rank, tb, PlanOp::new(OpKind::Wait).chan(chan))
    }

    pub fn flush(&mut self, rank: RankId, tb: usize, chan: usize) -> Result<InstrId> {
        self.emit(rank, tb, PlanOp::new(OpKind::Flush).chan(chan))
    }

    /// `dst += src`; `chan` selects where `src` lives (none: local).
    pub fn reduce(&mut self, rank: RankId, tb: usize, chan: Option<usize>, dst: ChunkRef, src: ChunkRef) -> Result<InstrId> {
        let mut op = PlanOp::new(OpKind::Reduce).src(src).dst(dst);
        op.chan = chan;
        self.emit(rank, tb, op)
    }

    pub fn copy(&mut self, rank: RankId, tb: usize, dst: ChunkRef, src: ChunkRef) -> Result<InstrId> {
        self.emit(rank, tb, PlanOp::new(OpKind::Copy).src(src).dst(dst))
    }

    pub fn tb_sync(&mut self, rank: RankId, tb: usize) -> Result<InstrId> {
        self.emit(rank, tb, PlanOp::new(OpKind::TbSync))
    }

    pub fn barrier(&mut self, rank: RankId, tb: usize, group: Option<Vec<usize>>) -> Result<InstrId> {
        let mut op = PlanOp::new(OpKind::DeviceBarrier);
        if let Some(g) = group {
            // Recorded once per member like any grouped op.
            op.tb_group = Some(g);
        }
        self.emit(rank, tb, op)
    }

    pub fn finish(mut self) -> ProgramGraph {
        self.plan.programs.sort_by_key(|p| (p.rank, p.tb));
        ProgramGraph::new(self.plan)
    }
}
