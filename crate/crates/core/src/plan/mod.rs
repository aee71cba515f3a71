//! Execution-plan IR: the serializable, fully concretized program consumed by
//! the executor.
//!
//! Offsets and sizes are in elements of the plan dtype. Packet buffers (the
//! destinations of `put_packets`, sources of `read_packets`) are addressed by
//! payload offset and must be declared with twice the payload length.

mod parse;
pub(crate) mod validate;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::channels::Protocol;
use crate::element::DType;
use crate::sim::RankId;

pub use parse::{parse_plan, serialize_plan};
pub use validate::{validate_plan, Diagnostic, Severity};

pub const PLAN_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Collective {
    AllReduce,
    AllGather,
    ReduceScatter,
    Custom,
}

impl Collective {
    pub fn name(self) -> &'static str {
        match self {
            Collective::AllReduce => "allreduce",
            Collective::AllGather => "allgather",
            Collective::ReduceScatter => "reducescatter",
            Collective::Custom => "custom",
        }
    }
}

impl std::str::FromStr for Collective {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "allreduce" => Ok(Collective::AllReduce),
            "allgather" => Ok(Collective::AllGather),
            "reducescatter" => Ok(Collective::ReduceScatter),
            "custom" => Ok(Collective::Custom),
            _ => Err(crate::Error::Config(format!("unknown collective {s:?}"))),
        }
    }
}

impl fmt::Display for Collective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BufferKind {
    Input,
    Output,
    Scratch,
}

/// Which ranks hold a buffer: every rank, or a single one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BufferRank {
    All,
    One(RankId),
}

impl BufferRank {
    pub fn includes(self, rank: RankId) -> bool {
        match self {
            BufferRank::All => true,
            BufferRank::One(r) => r == rank,
        }
    }
}

impl Serialize for BufferRank {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            BufferRank::All => s.serialize_str("all"),
            BufferRank::One(r) => s.serialize_u64(*r as u64),
        }
    }
}

impl<'de> Deserialize<'de> for BufferRank {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(usize),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(r) => Ok(BufferRank::One(r)),
            Raw::Text(t) if t == "all" => Ok(BufferRank::All),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("buffer rank must be a number or \"all\", got {t:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BufferDecl {
    pub id: usize,
    pub kind: BufferKind,
    pub rank: BufferRank,
    pub elems: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelType {
    Port,
    Memory,
    Switch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ChannelDecl {
    Port { id: usize, src: RankId, dst: RankId },
    Memory { id: usize, src: RankId, dst: RankId },
    Switch { id: usize, ranks: Vec<RankId> },
}

impl ChannelDecl {
    pub fn id(&self) -> usize {
        match self {
            ChannelDecl::Port { id, .. } | ChannelDecl::Memory { id, .. } | ChannelDecl::Switch { id, .. } => *id,
        }
    }

    pub fn kind(&self) -> ChannelType {
        match self {
            ChannelDecl::Port { .. } => ChannelType::Port,
            ChannelDecl::Memory { .. } => ChannelType::Memory,
            ChannelDecl::Switch { .. } => ChannelType::Switch,
        }
    }

    /// `(src, dst)` for point-to-point channels.
    pub fn endpoints(&self) -> Option<(RankId, RankId)> {
        match self {
            ChannelDecl::Port { src, dst, .. } | ChannelDecl::Memory { src, dst, .. } => Some((*src, *dst)),
            ChannelDecl::Switch { .. } => None,
        }
    }

    pub fn has_member(&self, rank: RankId) -> bool {
        match self {
            ChannelDecl::Switch { ranks, .. } => ranks.contains(&rank),
            _ => self.endpoints().is_some_and(|(s, _)| s == rank),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Put,
    PutPackets,
    PutWithSignal,
    Signal,
    Wait,
    Flush,
    ReadPackets,
    Reduce,
    ReducePut,
    Copy,
    TbSync,
    DeviceBarrier,
}

impl OpKind {
    pub fn name(self) -> &'static str {
        match self {
            OpKind::Put => "put",
            OpKind::PutPackets => "put_packets",
            OpKind::PutWithSignal => "put_with_signal",
            OpKind::Signal => "signal",
            OpKind::Wait => "wait",
            OpKind::Flush => "flush",
            OpKind::ReadPackets => "read_packets",
            OpKind::Reduce => "reduce",
            OpKind::ReducePut => "reduce_put",
            OpKind::Copy => "copy",
            OpKind::TbSync => "tb_sync",
            OpKind::DeviceBarrier => "device_barrier",
        }
    }

    pub fn is_sync(self) -> bool {
        matches!(self, OpKind::TbSync | OpKind::DeviceBarrier)
    }
}

/// A contiguous element range of a buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChunkRef {
    pub buffer: usize,
    pub offset: usize,
    pub size: usize,
}

impl ChunkRef {
    pub fn new(buffer: usize, offset: usize, size: usize) -> Self {
        Self { buffer, offset, size }
    }

    pub fn end(&self) -> usize {
        self.offset + self.size
    }

    pub fn overlaps(&self, other: &ChunkRef) -> bool {
        self.buffer == other.buffer && self.offset < other.end() && other.offset < self.end()
    }
}

/// One plan instruction.
///
/// Which rank a chunk lives on follows from the op: `src` is local and `dst`
/// is on the channel's peer for puts; `reduce` adds `src` into local `dst`,
/// reading `src` from the peer (memory channel), from every member (switch
/// channel) or locally (no channel); `reduce_put` adds local `aux` into local
/// `src` and puts the result to the peer's `dst`. A put on a switch channel
/// broadcasts into every member's `dst`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanOp {
    pub op: OpKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chan: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src: Option<ChunkRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dst: Option<ChunkRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aux: Option<ChunkRef>,
    /// LL flag carried by `put_packets` / expected by `read_packets`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tb_group: Option<Vec<usize>>,
}

impl PlanOp {
    pub fn new(op: OpKind) -> Self {
        Self {
            op,
            chan: None,
            src: None,
            dst: None,
            aux: None,
            flag: None,
            tb_group: None,
        }
    }

    pub fn chan(mut self, c: usize) -> Self {
        self.chan = Some(c);
        self
    }

    pub fn src(mut self, c: ChunkRef) -> Self {
        self.src = Some(c);
        self
    }

    pub fn dst(mut self, c: ChunkRef) -> Self {
        self.dst = Some(c);
        self
    }

    pub fn aux(mut self, c: ChunkRef) -> Self {
        self.aux = Some(c);
        self
    }

    pub fn flag(mut self, f: u32) -> Self {
        self.flag = Some(f);
        self
    }

    pub fn tb_group(mut self, g: Vec<usize>) -> Self {
        self.tb_group = Some(g);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThreadBlockProgram {
    pub rank: RankId,
    pub tb: usize,
    pub ops: Vec<PlanOp>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecutionPlan {
    pub version: u64,
    pub name: String,
    pub collective: Collective,
    pub protocol: Protocol,
    pub dtype: DType,
    pub num_ranks: usize,
    pub buffers: Vec<BufferDecl>,
    pub channels: Vec<ChannelDecl>,
    pub programs: Vec<ThreadBlockProgram>,
    /// Present and `false` on documents that still need lowering.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lowered: Option<bool>,
}

impl ExecutionPlan {
    pub fn is_lowered(&self) -> bool {
        self.lowered != Some(false)
    }

    pub fn buffer(&self, id: usize) -> Option<&BufferDecl> {
        self.buffers.iter().find(|b| b.id == id)
    }

    pub fn channel(&self, id: usize) -> Option<&ChannelDecl> {
        self.channels.iter().find(|c| c.id() == id)
    }

    pub fn op_count(&self) -> usize {
        self.programs.iter().map(|p| p.ops.len()).sum()
    }

    /// The buffer of `kind` on `rank`, if any.
    pub fn buffer_of(&self, kind: BufferKind, rank: RankId) -> Option<&BufferDecl> {
        self.buffers.iter().find(|b| b.kind == kind && b.rank.includes(rank))
    }

    /// Counterpart of a point-to-point channel: the channel of the same type
    /// in the opposite direction with the same ordinal among its parallel
    /// siblings. Signals on a channel are consumed by waits on its
    /// counterpart.
    pub fn counterparts(&self) -> BTreeMap<usize, usize> {
        let mut by_dir: BTreeMap<(ChannelType, RankId, RankId), Vec<usize>> = BTreeMap::new();
        for c in &self.channels {
            if let Some((s, d)) = c.endpoints() {
                by_dir.entry((c.kind(), s, d)).or_default().push(c.id());
            }
        }
        let mut out = BTreeMap::new();
        for ((kind, s, d), ids) in &by_dir {
            if let Some(back) = by_dir.get(&(*kind, *d, *s)) {
                for (a, b) in ids.iter().zip(back) {
                    out.insert(*a, *b);
                }
            }
        }
        out
    }
}

/// One chunk an op touches, and on which ranks it lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChunkAccess {
    pub chunk: ChunkRef,
    pub ranks: Vec<RankId>,
    /// Addressed by payload offset in a packet buffer.
    pub packet: bool,
    pub write: bool,
}

impl ExecutionPlan {
    /// Chunks touched by `op` issued on `rank`, in evaluation order (reads
    /// before the write of the same chunk). Unknown channels resolve to the
    /// issuing rank.
    pub fn accesses(&self, rank: RankId, op: &PlanOp) -> Vec<ChunkAccess> {
        let chan = op.chan.and_then(|c| self.channel(c));
        let peer = || chan.and_then(|c| c.endpoints()).map_or(rank, |(_, d)| d);
        let members = || match chan {
            Some(ChannelDecl::Switch { ranks, .. }) => ranks.clone(),
            _ => vec![peer()],
        };
        let on_switch = matches!(chan, Some(ChannelDecl::Switch { .. }));
        let acc = |chunk: Option<ChunkRef>, ranks: Vec<RankId>, packet: bool, write: bool| {
            chunk.map(|chunk| ChunkAccess {
                chunk,
                ranks,
                packet,
                write,
            })
        };
        let local = || vec![rank];
        let out: Vec<Option<ChunkAccess>> = match op.op {
            OpKind::Put | OpKind::PutWithSignal => vec![
                acc(op.src, local(), false, false),
                acc(op.dst, if on_switch { members() } else { vec![peer()] }, false, true),
            ],
            OpKind::PutPackets => vec![acc(op.src, local(), false, false), acc(op.dst, vec![peer()], true, true)],
            OpKind::ReadPackets => vec![acc(op.src, local(), true, false), acc(op.dst, local(), false, true)],
            OpKind::Reduce => {
                let src_ranks = match chan {
                    None => local(),
                    Some(_) => members(),
                };
                vec![
                    acc(op.src, src_ranks, false, false),
                    acc(op.dst, local(), false, false),
                    acc(op.dst, local(), false, true),
                ]
            }
            OpKind::ReducePut => vec![
                acc(op.aux, local(), false, false),
                acc(op.src, local(), false, false),
                acc(op.src, local(), false, true),
                acc(op.dst, vec![peer()], false, true),
            ],
            OpKind::Copy => vec![acc(op.src, local(), false, false), acc(op.dst, local(), false, true)],
            OpKind::Signal | OpKind::Wait | OpKind::Flush | OpKind::TbSync | OpKind::DeviceBarrier => vec![],
        };
        out.into_iter().flatten().collect()
    }
}
