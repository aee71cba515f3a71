//! Static checks on execution plans.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::{BufferKind, ChannelDecl, ChannelType, ExecutionPlan, OpKind, PlanOp};
use crate::channels::Protocol;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub severity: Severity,
    pub location: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{sev}: {}: {}", self.location, self.message)
    }
}

struct Sink(Vec<Diagnostic>);

impl Sink {
    fn error(&mut self, location: impl Into<String>, message: impl Into<String>) {
        self.0.push(Diagnostic {
            severity: Severity::Error,
            location: location.into(),
            message: message.into(),
        });
    }

    fn warn(&mut self, location: impl Into<String>, message: impl Into<String>) {
        self.0.push(Diagnostic {
            severity: Severity::Warning,
            location: location.into(),
            message: message.into(),
        });
    }
}

/// Returns every violation found; an empty list means the plan is valid.
pub fn validate_plan(plan: &ExecutionPlan) -> Vec<Diagnostic> {
    let mut s = Sink(Vec::new());
    declarations(plan, &mut s);
    for (pi, prog) in plan.programs.iter().enumerate() {
        for (oi, op) in prog.ops.iter().enumerate() {
            let loc = format!("programs[{pi}].ops[{oi}] ({} on rank {} tb {})", op.op.name(), prog.rank, prog.tb);
            check_op(plan, prog.rank, op, &loc, &mut s);
            if let Some(group) = &op.tb_group {
                if plan.is_lowered() && op.op != OpKind::DeviceBarrier {
                    s.error(&loc, "tb_group on a data op must be expanded by lowering");
                }
                for tb in group {
                    if !plan.programs.iter().any(|p| p.rank == prog.rank && p.tb == *tb) {
                        s.error(&loc, format!("tb_group names missing thread block {tb}"));
                    }
                }
            }
        }
    }
    flags(plan, &mut s);
    balance(plan, &mut s);
    s.0
}

fn declarations(plan: &ExecutionPlan, s: &mut Sink) {
    if plan.num_ranks == 0 {
        s.error("num_ranks", "a plan needs at least one rank");
    }
    let mut ids = BTreeSet::new();
    for (i, b) in plan.buffers.iter().enumerate() {
        let loc = format!("buffers[{i}]");
        if !ids.insert(b.id) {
            s.error(&loc, format!("duplicate buffer id {}", b.id));
        }
        if b.elems == 0 {
            s.error(&loc, "buffer must have at least one element");
        }
        if let super::BufferRank::One(r) = b.rank {
            if r >= plan.num_ranks {
                s.error(&loc, format!("rank {r} out of range"));
            }
        }
    }
    for kind in [BufferKind::Input, BufferKind::Output] {
        for r in 0..plan.num_ranks {
            let n = plan.buffers.iter().filter(|b| b.kind == kind && b.rank.includes(r)).count();
            if n > 1 {
                s.error("buffers", format!("rank {r} has {n} {kind:?} buffers"));
            }
        }
    }
    let mut ids = BTreeSet::new();
    for (i, c) in plan.channels.iter().enumerate() {
        let loc = format!("channels[{i}]");
        if !ids.insert(c.id()) {
            s.error(&loc, format!("duplicate channel id {}", c.id()));
        }
        match c {
            ChannelDecl::Port { src, dst, .. } | ChannelDecl::Memory { src, dst, .. } => {
                if src == dst {
                    s.error(&loc, "channel endpoints must differ");
                }
                if *src >= plan.num_ranks || *dst >= plan.num_ranks {
                    s.error(&loc, "channel endpoint out of range");
                }
            }
            ChannelDecl::Switch { ranks, .. } => {
                if ranks.is_empty() {
                    s.error(&loc, "switch channel needs at least one rank");
                }
                if ranks.iter().any(|&r| r >= plan.num_ranks) {
                    s.error(&loc, "switch member out of range");
                }
                if ranks.iter().collect::<BTreeSet<_>>().len() != ranks.len() {
                    s.error(&loc, "switch members repeat");
                }
            }
        }
    }
    let mut blocks = BTreeSet::new();
    for (i, p) in plan.programs.iter().enumerate() {
        if p.rank >= plan.num_ranks {
            s.error(format!("programs[{i}]"), format!("rank {} out of range", p.rank));
        }
        if !blocks.insert((p.rank, p.tb)) {
            s.error(format!("programs[{i}]"), format!("duplicate program for rank {} tb {}", p.rank, p.tb));
        }
    }
}

/// Which fields an op kind takes: (chan, src, dst, aux, flag).
fn shape(op: OpKind) -> (Need, Need, Need, Need, Need) {
    use Need::*;
    match op {
        OpKind::Put | OpKind::PutWithSignal => (Yes, Yes, Yes, No, No),
        OpKind::PutPackets => (Yes, Yes, Yes, No, Yes),
        OpKind::ReadPackets => (Maybe, Yes, Yes, No, Yes),
        OpKind::Signal | OpKind::Wait | OpKind::Flush => (Yes, No, No, No, No),
        OpKind::Reduce => (Maybe, Yes, Yes, No, No),
        OpKind::ReducePut => (Yes, Yes, Yes, Yes, No),
        OpKind::Copy => (No, Yes, Yes, No, No),
        OpKind::TbSync | OpKind::DeviceBarrier => (No, No, No, No, No),
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Need {
    Yes,
    No,
    Maybe,
}

fn presence(s: &mut Sink, loc: &str, field: &str, need: Need, present: bool) {
    match (need, present) {
        (Need::Yes, false) => s.error(loc, format!("missing {field}")),
        (Need::No, true) => s.error(loc, format!("unexpected {field}")),
        _ => {}
    }
}

/// Channel types each op accepts, and whether an HB (`Some(HB)`) or LL
/// (`Some(LL)`) plan protocol is required on memory channels.
pub(crate) fn channel_rule(op: OpKind, kind: ChannelType) -> Result<Option<Protocol>, String> {
    use ChannelType::*;
    match (op, kind) {
        (OpKind::Put, Switch) => Ok(None),
        (OpKind::Put, Port) => Ok(Some(Protocol::HB)),
        (OpKind::Put, Memory) => Ok(Some(Protocol::HB)),
        (OpKind::PutPackets, Port | Memory) => Ok(Some(Protocol::LL)),
        (OpKind::ReadPackets, Port | Memory) => Ok(Some(Protocol::LL)),
        (OpKind::PutWithSignal, Port) => Ok(Some(Protocol::HB)),
        (OpKind::Signal | OpKind::Wait, Port | Memory) => Ok(Some(Protocol::HB)),
        (OpKind::Flush, Port) => Ok(None),
        (OpKind::Reduce, Memory | Switch) => Ok(Some(Protocol::HB)),
        (OpKind::ReducePut, Memory) => Ok(Some(Protocol::HB)),
        (op, kind) => Err(format!("{} does not accept a {kind:?} channel", op.name())),
    }
}

fn check_op(plan: &ExecutionPlan, rank: usize, op: &PlanOp, loc: &str, s: &mut Sink) {
    let (c, src, dst, aux, flag) = shape(op.op);
    presence(s, loc, "chan", c, op.chan.is_some());
    presence(s, loc, "src", src, op.src.is_some());
    presence(s, loc, "dst", dst, op.dst.is_some());
    presence(s, loc, "aux", aux, op.aux.is_some());
    presence(s, loc, "flag", flag, op.flag.is_some());
    if op.flag == Some(0) {
        s.error(loc, "LL flag 0 is reserved");
    }

    if let Some(cid) = op.chan {
        match plan.channel(cid) {
            None => s.error(loc, format!("unknown channel {cid}")),
            Some(ch) => {
                if !ch.has_member(rank) {
                    s.error(loc, format!("channel {cid} is not issued from rank {rank}"));
                }
                match channel_rule(op.op, ch.kind()) {
                    Err(m) => s.error(loc, m),
                    Ok(Some(p)) if p != plan.protocol => s.error(
                        loc,
                        format!("{} on a {:?} channel needs protocol {p}, plan uses {}", op.op.name(), ch.kind(), plan.protocol),
                    ),
                    Ok(_) => {}
                }
                if ch.kind() == ChannelType::Switch && plan.protocol != Protocol::HB {
                    s.error(loc, format!("switch channels need protocol HB, plan uses {}", plan.protocol));
                }
            }
        }
    }

    let sizes: BTreeSet<usize> = [op.src, op.dst, op.aux].iter().flatten().map(|c| c.size).collect();
    if sizes.len() > 1 {
        s.error(loc, format!("chunk sizes differ: {sizes:?}"));
    }
    for a in plan.accesses(rank, op) {
        let Some(buf) = plan.buffer(a.chunk.buffer) else {
            s.error(loc, format!("unknown buffer {}", a.chunk.buffer));
            continue;
        };
        for r in &a.ranks {
            if !buf.rank.includes(*r) {
                s.error(loc, format!("buffer {} does not exist on rank {r}", buf.id));
            }
        }
        let need = if a.packet { 2 * a.chunk.end() } else { a.chunk.end() };
        if need > buf.elems {
            s.error(
                loc,
                format!(
                    "chunk [{}, {}) of buffer {} exceeds {} elements{}",
                    a.chunk.offset,
                    a.chunk.end(),
                    buf.id,
                    buf.elems,
                    if a.packet { " (packet buffer, 2x)" } else { "" }
                ),
            );
        }
    }
}

/// LL obligations: overlapping packet writes into one buffer use distinct
/// flags, and every packet read is covered by a write with its flag.
fn flags(plan: &ExecutionPlan, s: &mut Sink) {
    // (rank, buffer) -> [(lo, hi, flag, location)]
    let mut writes: BTreeMap<(usize, usize), Vec<(usize, usize, u32, String)>> = BTreeMap::new();
    for (pi, prog) in plan.programs.iter().enumerate() {
        for (oi, op) in prog.ops.iter().enumerate() {
            if op.op != OpKind::PutPackets {
                continue;
            }
            let (Some(dst), Some(flag)) = (op.dst, op.flag) else { continue };
            for a in plan.accesses(prog.rank, op).into_iter().filter(|a| a.packet) {
                for r in a.ranks {
                    writes.entry((r, dst.buffer)).or_default().push((
                        dst.offset,
                        dst.end(),
                        flag,
                        format!("programs[{pi}].ops[{oi}]"),
                    ));
                }
            }
        }
    }
    for ((rank, buffer), ws) in &writes {
        for (i, a) in ws.iter().enumerate() {
            for b in &ws[i + 1..] {
                if a.2 == b.2 && a.0 < b.1 && b.0 < a.1 {
                    s.error(
                        &b.3,
                        format!(
                            "packet writes into buffer {buffer} on rank {rank} reuse flag {} over [{}, {}) (also {})",
                            a.2,
                            a.0.max(b.0),
                            a.1.min(b.1),
                            a.3
                        ),
                    );
                }
            }
        }
    }
    for (pi, prog) in plan.programs.iter().enumerate() {
        for (oi, op) in prog.ops.iter().enumerate() {
            if op.op != OpKind::ReadPackets {
                continue;
            }
            let (Some(src), Some(flag)) = (op.src, op.flag) else { continue };
            let mut spans: Vec<(usize, usize)> = writes
                .get(&(prog.rank, src.buffer))
                .map(|ws| ws.iter().filter(|w| w.2 == flag).map(|w| (w.0, w.1)).collect())
                .unwrap_or_default();
            spans.sort();
            let mut covered = src.offset;
            for (lo, hi) in spans {
                if lo <= covered && hi > covered {
                    covered = hi;
                }
            }
            if covered < src.end() {
                s.warn(
                    format!("programs[{pi}].ops[{oi}]"),
                    format!("no packet write with flag {flag} covers [{covered}, {})", src.end()),
                );
            }
        }
    }
}

/// Signals sent on a channel must match the waits on its counterpart.
fn balance(plan: &ExecutionPlan, s: &mut Sink) {
    let mut signals: BTreeMap<usize, usize> = BTreeMap::new();
    let mut waits: BTreeMap<usize, usize> = BTreeMap::new();
    for prog in &plan.programs {
        for op in &prog.ops {
            let Some(c) = op.chan else { continue };
            match op.op {
                OpKind::Signal | OpKind::PutWithSignal => *signals.entry(c).or_default() += 1,
                OpKind::Wait => *waits.entry(c).or_default() += 1,
                _ => {}
            }
        }
    }
    let pairs = plan.counterparts();
    for ch in &plan.channels {
        let id = ch.id();
        let sent = signals.get(&id).copied().unwrap_or(0);
        if sent == 0 && !waits.contains_key(&id) {
            continue;
        }
        match pairs.get(&id) {
            None => {
                if sent > 0 || waits.get(&id).copied().unwrap_or(0) > 0 {
                    s.error(format!("channel {id}"), "signal/wait on a channel without a counterpart");
                }
            }
            Some(back) => {
                let got = waits.get(back).copied().unwrap_or(0);
                if sent != got {
                    s.warn(
                        format!("channel {id}"),
                        format!("{sent} signals but {got} waits on counterpart channel {back}"),
                    );
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::element::DType;
    use crate::plan::{BufferDecl, BufferRank, ChunkRef, Collective, ThreadBlockProgram};

    fn base(protocol: Protocol) -> ExecutionPlan {
        ExecutionPlan {
            version: 1,
            name: "t".into(),
            collective: Collective::Custom,
            protocol,
            dtype: DType::I32,
            num_ranks: 2,
            buffers: vec![
                BufferDecl {
                    id: 0,
                    kind: BufferKind::Input,
                    rank: BufferRank::All,
                    elems: 4,
                },
                BufferDecl {
                    id: 1,
                    kind: BufferKind::Scratch,
                    rank: BufferRank::All,
                    elems: 8,
                },
            ],
            channels: vec![
                ChannelDecl::Memory { id: 0, src: 0, dst: 1 },
                ChannelDecl::Memory { id: 1, src: 1, dst: 0 },
            ],
            programs: vec![
                ThreadBlockProgram {
                    rank: 0,
                    tb: 0,
                    ops: vec![],
                },
                ThreadBlockProgram {
                    rank: 1,
                    tb: 0,
                    ops: vec![],
                },
            ],
            lowered: None,
        }
    }

    #[test]
    fn mixed_protocol_is_flagged() {
        let mut p = base(Protocol::LL);
        p.programs[0].ops.push(
            PlanOp::new(OpKind::Put)
                .chan(0)
                .src(ChunkRef::new(0, 0, 4))
                .dst(ChunkRef::new(1, 0, 4)),
        );
        let d = validate_plan(&p);
        assert!(d.iter().any(|d| d.message.contains("needs protocol HB")), "{d:?}");
    }

    #[test]
    fn signal_wait_imbalance_warns() {
        let mut p = base(Protocol::HB);
        for _ in 0..3 {
            p.programs[0].ops.push(PlanOp::new(OpKind::Signal).chan(0));
        }
        for _ in 0..2 {
            p.programs[1].ops.push(PlanOp::new(OpKind::Wait).chan(1));
        }
        let d = validate_plan(&p);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].severity, Severity::Warning);
    }

    #[test]
    fn packet_bounds_use_double_width() {
        let mut p = base(Protocol::LL);
        p.programs[0].ops.push(
            PlanOp::new(OpKind::PutPackets)
                .chan(0)
                .src(ChunkRef::new(0, 0, 4))
                .dst(ChunkRef::new(1, 0, 4))
                .flag(1),
        );
        p.programs[1].ops.push(
            PlanOp::new(OpKind::ReadPackets)
                .src(ChunkRef::new(1, 0, 4))
                .dst(ChunkRef::new(0, 0, 4))
                .flag(1),
        );
        assert!(validate_plan(&p).is_empty(), "{:?}", validate_plan(&p));
        p.programs[0].ops[0].dst = Some(ChunkRef::new(1, 1, 4));
        assert!(validate_plan(&p).iter().any(|d| d.message.contains("packet buffer")));
    }

    #[test]
    fn reused_flag_on_overlap_is_an_error() {
        let mut p = base(Protocol::LL);
        for _ in 0..2 {
            p.programs[0].ops.push(
                PlanOp::new(OpKind::PutPackets)
                    .chan(0)
                    .src(ChunkRef::new(0, 0, 2))
                    .dst(ChunkRef::new(1, 0, 2))
                    .flag(5),
            );
        }
        assert!(validate_plan(&p).iter().any(|d| d.message.contains("reuse flag 5")));
    }

    #[test]
    fn validation_is_pure() {
        let p = base(Protocol::HB);
        assert_eq!(validate_plan(&p), validate_plan(&p));
    }
}
