//! Chunk-level dependence analysis within each thread block.

use std::collections::BTreeMap;

use crate::plan::{ChannelDecl, ChunkRef, ExecutionPlan, OpKind, PlanOp};
use crate::sim::RankId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DepKind {
    Raw,
    War,
    Waw,
}

/// `from` must complete before `to`; both index the same block's stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub kind: DepKind,
}

/// Something an op can touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Resource {
    Buffer { buffer: usize, rank: RankId },
    /// Data written through a memory channel that a later signal on the
    /// same channel publishes.
    Outbox(usize),
}

#[derive(Debug, Clone)]
struct Seg {
    hi: usize,
    last_writer: Option<usize>,
    readers: Vec<usize>,
}

/// Last writer and active readers per element range of every resource.
#[derive(Debug, Default)]
pub struct ChunkState {
    segs: BTreeMap<Resource, BTreeMap<usize, Seg>>,
}

impl ChunkState {
    /// Splits so that `at` starts a segment (if it lies inside one).
    fn split(map: &mut BTreeMap<usize, Seg>, at: usize) {
        let Some((&lo, seg)) = map.range(..at).next_back() else { return };
        if seg.hi > at {
            let mut tail = seg.clone();
            let hi = seg.hi;
            map.get_mut(&lo).expect("segment exists").hi = at;
            tail.hi = hi;
            map.insert(at, tail);
        }
    }

    /// Segment keys covering `[lo, hi)`, creating empty ones for gaps.
    fn cover(&mut self, res: Resource, lo: usize, hi: usize) -> Vec<usize> {
        let map = self.segs.entry(res).or_default();
        Self::split(map, lo);
        Self::split(map, hi);
        let mut keys = Vec::new();
        let mut pos = lo;
        let existing: Vec<(usize, usize)> = map.range(lo..hi).map(|(&k, s)| (k, s.hi)).collect();
        for (k, khi) in existing {
            if k > pos {
                map.insert(pos, Seg { hi: k, last_writer: None, readers: Vec::new() });
                keys.push(pos);
            }
            keys.push(k);
            pos = khi;
        }
        if pos < hi {
            map.insert(pos, Seg { hi, last_writer: None, readers: Vec::new() });
            keys.push(pos);
        }
        keys
    }

    fn read(&mut self, res: Resource, lo: usize, hi: usize, at: usize, edges: &mut Vec<Edge>) {
        if lo >= hi {
            return;
        }
        for k in self.cover(res, lo, hi) {
            let seg = self.segs.get_mut(&res).and_then(|m| m.get_mut(&k)).expect("covered");
            if let Some(w) = seg.last_writer {
                push(edges, w, at, DepKind::Raw);
            }
            if !seg.readers.contains(&at) {
                seg.readers.push(at);
            }
        }
    }

    /// Records a write. With `ordered_after` false no incoming edges are
    /// created: the writer is a point where remote data becomes visible,
    /// which local ops cannot delay.
    fn write(&mut self, res: Resource, lo: usize, hi: usize, at: usize, ordered_after: bool, edges: &mut Vec<Edge>) {
        if lo >= hi {
            return;
        }
        for k in self.cover(res, lo, hi) {
            let seg = self.segs.get_mut(&res).and_then(|m| m.get_mut(&k)).expect("covered");
            if ordered_after {
                if let Some(w) = seg.last_writer {
                    push(edges, w, at, DepKind::Waw);
                }
                for &r in &seg.readers {
                    push(edges, r, at, DepKind::War);
                }
            }
            seg.last_writer = Some(at);
            seg.readers.clear();
        }
    }
}

fn push(edges: &mut Vec<Edge>, from: usize, to: usize, kind: DepKind) {
    if from != to {
        edges.push(Edge { from, to, kind });
    }
}

/// Per point-to-point channel, the chunks (on the receiving rank) published
/// by each successive signal.
pub(crate) fn signal_groups(plan: &ExecutionPlan) -> BTreeMap<usize, Vec<Vec<ChunkRef>>> {
    let mut groups: BTreeMap<usize, Vec<Vec<ChunkRef>>> = BTreeMap::new();
    for p in &plan.programs {
        let mut open: BTreeMap<usize, Vec<ChunkRef>> = BTreeMap::new();
        for op in &p.ops {
            let Some(c) = op.chan else { continue };
            match op.op {
                OpKind::Put | OpKind::ReducePut | OpKind::PutPackets => {
                    open.entry(c).or_default().extend(op.dst);
                }
                OpKind::PutWithSignal => {
                    let mut g = open.remove(&c).unwrap_or_default();
                    g.extend(op.dst);
                    groups.entry(c).or_default().push(g);
                }
                OpKind::Signal => {
                    groups.entry(c).or_default().push(open.remove(&c).unwrap_or_default());
                }
                _ => {}
            }
        }
    }
    groups
}

/// Whether `op` runs asynchronously to its block's issue order (data
/// movement on memory or switch channels, or local compute). Such ops are
/// only ordered with later ops by a `tb_sync`.
pub fn is_async(plan: &ExecutionPlan, op: &PlanOp) -> bool {
    let port = matches!(op.chan.and_then(|c| plan.channel(c)), Some(ChannelDecl::Port { .. }));
    match op.op {
        OpKind::Put | OpKind::PutPackets | OpKind::PutWithSignal => !port,
        OpKind::ReadPackets | OpKind::Reduce | OpKind::ReducePut | OpKind::Copy => true,
        OpKind::Signal | OpKind::Wait | OpKind::Flush | OpKind::TbSync | OpKind::DeviceBarrier => false,
    }
}

/// RAW, WAR and WAW edges for one block's stream, in program order.
///
/// A `wait` counts as the writer of every chunk the matching signal on the
/// counterpart channel published, so reads of received data depend on it.
pub fn analyze_stream(
    plan: &ExecutionPlan,
    rank: RankId,
    ops: &[PlanOp],
    groups: &BTreeMap<usize, Vec<Vec<ChunkRef>>>,
    counterparts: &BTreeMap<usize, usize>,
) -> Vec<Edge> {
    let mut st = ChunkState::default();
    let mut edges = Vec::new();
    let mut waits: BTreeMap<usize, usize> = BTreeMap::new();
    for (i, op) in ops.iter().enumerate() {
        let memory = matches!(op.chan.and_then(|c| plan.channel(c)), Some(ChannelDecl::Memory { .. }));
        match op.op {
            OpKind::Wait => {
                let c = op.chan.expect("wait has a channel");
                let k = waits.entry(c).or_insert(0);
                let published = counterparts
                    .get(&c)
                    .and_then(|back| groups.get(back))
                    .and_then(|g| g.get(*k))
                    .cloned()
                    .unwrap_or_default();
                *k += 1;
                for ch in published {
                    let res = Resource::Buffer { buffer: ch.buffer, rank };
                    st.write(res, ch.offset, ch.end(), i, false, &mut edges);
                }
                continue;
            }
            OpKind::Signal if memory => {
                st.read(Resource::Outbox(op.chan.expect("signal has a channel")), 0, 1, i, &mut edges);
            }
            OpKind::Put | OpKind::PutPackets | OpKind::ReducePut if memory => {
                let c = op.chan.expect("put has a channel");
                st.write(Resource::Outbox(c), 0, 1, i, true, &mut edges);
            }
            _ => {}
        }
        for a in plan.accesses(rank, op) {
            for r in a.ranks {
                let res = Resource::Buffer { buffer: a.chunk.buffer, rank: r };
                if a.write {
                    st.write(res, a.chunk.offset, a.chunk.end(), i, true, &mut edges);
                } else {
                    st.read(res, a.chunk.offset, a.chunk.end(), i, &mut edges);
                }
            }
        }
    }
    edges.sort();
    edges.dedup();
    edges
}
