//! Algorithm builders. Every builder takes the full logical vector length
//! `elems` (for AllGather: the gathered length) and records one program per
//! rank.

use super::{Algo, AlgoParams};
use crate::channels::Protocol;
use crate::lowering::{ProgramBuilder, ProgramGraph};
use crate::plan::{BufferKind, ChunkRef, Collective};
use crate::sim::RankId;
use crate::{Error, Result};

fn ch(buffer: usize, offset: usize, size: usize) -> ChunkRef {
    ChunkRef::new(buffer, offset, size)
}

fn builder(algo: Algo, p: &AlgoParams) -> ProgramBuilder {
    ProgramBuilder::new(algo.name(), algo.collective(), algo.protocol(), p.dtype, p.num_ranks)
}

fn shape(p: &AlgoParams, multiple: usize, why: &str) -> Result<()> {
    if p.num_ranks == 0 || p.elems == 0 {
        return Err(Error::Shape("need at least one rank and one element".into()));
    }
    if !p.elems.is_multiple_of(multiple) {
        return Err(Error::Shape(format!("{} elements is not a multiple of {multiple} ({why})", p.elems)));
    }
    Ok(())
}

/// Chunk index the ring puts at `step` from `rank`.
pub fn ring_chunk(rank: RankId, step: usize, n: usize) -> usize {
    (rank + n - step % n) % n
}

/// Single rank: the collective is a local copy.
fn identity(algo: Algo, p: &AlgoParams) -> Result<ProgramGraph> {
    let mut b = builder(algo, p);
    let (ins, outs) = algo.io_elems(p.elems, 1);
    let input = b.buffer(BufferKind::Input, ins);
    let output = b.buffer(BufferKind::Output, outs);
    b.copy(0, 0, ch(output, 0, outs), ch(input, 0, ins))?;
    Ok(b.finish())
}

/// Memory channels from every rank to every other rank, indexed `[src][dst]`.
fn mesh(b: &mut ProgramBuilder, ranks: &[RankId], memory: bool) -> Vec<Vec<usize>> {
    let n = b.num_ranks();
    let mut chans = vec![vec![usize::MAX; n]; n];
    for &s in ranks {
        for &d in ranks {
            if s != d {
                chans[s][d] = if memory { b.memory(s, d) } else { b.port(s, d) };
            }
        }
    }
    chans
}

fn peers(r: RankId, n: usize) -> impl Iterator<Item = RankId> {
    (1..n).map(move |k| (r + k) % n)
}

pub(super) fn one_pa(p: &AlgoParams) -> Result<ProgramGraph> {
    shape(p, 1, "1pa")?;
    let algo = Algo::OnePa;
    let (n, e) = (p.num_ranks, p.elems);
    if n == 1 {
        return identity(algo, p);
    }
    let mut b = builder(algo, p);
    let input = b.buffer(BufferKind::Input, e);
    let output = b.buffer(BufferKind::Output, e);
    let packets = b.buffer(BufferKind::Scratch, 2 * n * e);
    let recv = b.buffer(BufferKind::Scratch, n * e);
    let all: Vec<RankId> = (0..n).collect();
    let chans = mesh(&mut b, &all, true);
    for r in 0..n {
        for q in peers(r, n) {
            b.put_packets(r, 0, chans[r][q], ch(packets, r * e, e), ch(input, 0, e))?;
        }
        b.copy(r, 0, ch(output, 0, e), ch(input, 0, e))?;
        for q in peers(r, n) {
            b.read_packets(r, 0, ch(recv, q * e, e), ch(packets, q * e, e))?;
        }
        for q in peers(r, n) {
            b.reduce(r, 0, None, ch(output, 0, e), ch(recv, q * e, e))?;
        }
    }
    Ok(b.finish())
}

pub(super) fn two_pa_ll(p: &AlgoParams) -> Result<ProgramGraph> {
    let algo = Algo::TwoPaLl;
    shape(p, p.num_ranks, "2pa chunks")?;
    let (n, e) = (p.num_ranks, p.elems);
    if n == 1 {
        return identity(algo, p);
    }
    let c = e / n;
    let mut b = builder(algo, p);
    let input = b.buffer(BufferKind::Input, e);
    let output = b.buffer(BufferKind::Output, e);
    let pk1 = b.buffer(BufferKind::Scratch, 2 * e);
    let recv = b.buffer(BufferKind::Scratch, e);
    let pk2 = b.buffer(BufferKind::Scratch, 2 * e);
    let all: Vec<RankId> = (0..n).collect();
    let chans = mesh(&mut b, &all, true);
    for r in 0..n {
        let own = ch(output, r * c, c);
        for q in peers(r, n) {
            b.put_packets(r, 0, chans[r][q], ch(pk1, r * c, c), ch(input, q * c, c))?;
        }
        b.copy(r, 0, own, ch(input, r * c, c))?;
        for q in peers(r, n) {
            b.read_packets(r, 0, ch(recv, q * c, c), ch(pk1, q * c, c))?;
        }
        for q in peers(r, n) {
            b.reduce(r, 0, None, own, ch(recv, q * c, c))?;
        }
        for q in peers(r, n) {
            b.put_packets(r, 0, chans[r][q], ch(pk2, r * c, c), own)?;
        }
        for q in peers(r, n) {
            b.read_packets(r, 0, ch(output, q * c, c), ch(pk2, q * c, c))?;
        }
    }
    Ok(b.finish())
}

pub(super) fn two_pa_hb(p: &AlgoParams) -> Result<ProgramGraph> {
    let algo = Algo::TwoPaHb;
    shape(p, p.num_ranks, "2pa chunks")?;
    let (n, e) = (p.num_ranks, p.elems);
    if n == 1 {
        return identity(algo, p);
    }
    let c = e / n;
    let mut b = builder(algo, p);
    let input = b.buffer(BufferKind::Input, e);
    let output = b.buffer(BufferKind::Output, e);
    let all: Vec<RankId> = (0..n).collect();
    let chans = mesh(&mut b, &all, true);
    for r in 0..n {
        let own = ch(output, r * c, c);
        b.copy(r, 0, own, ch(input, r * c, c))?;
        // Pull the owned chunk straight out of every peer's input.
        for q in peers(r, n) {
            b.reduce(r, 0, Some(chans[r][q]), own, ch(input, r * c, c))?;
        }
        for q in peers(r, n) {
            b.put(r, 0, chans[r][q], own, own)?;
        }
        for q in peers(r, n) {
            b.signal(r, 0, chans[r][q])?;
        }
        for q in peers(r, n) {
            b.wait(r, 0, chans[r][q])?;
        }
    }
    Ok(b.finish())
}

pub(super) fn two_pa_port(p: &AlgoParams) -> Result<ProgramGraph> {
    let algo = Algo::TwoPaPort;
    shape(p, p.num_ranks, "2pa chunks")?;
    let (n, e) = (p.num_ranks, p.elems);
    if n == 1 {
        return identity(algo, p);
    }
    let c = e / n;
    let mut b = builder(algo, p);
    let input = b.buffer(BufferKind::Input, e);
    let output = b.buffer(BufferKind::Output, e);
    let scratch = b.buffer(BufferKind::Scratch, e);
    let all: Vec<RankId> = (0..n).collect();
    let chans = mesh(&mut b, &all, false);
    for r in 0..n {
        let own = ch(output, r * c, c);
        for q in peers(r, n) {
            b.put(r, 0, chans[r][q], ch(scratch, r * c, c), ch(input, q * c, c))?;
            b.signal(r, 0, chans[r][q])?;
        }
        b.copy(r, 0, own, ch(input, r * c, c))?;
        for q in peers(r, n) {
            b.wait(r, 0, chans[r][q])?;
        }
        for q in peers(r, n) {
            b.reduce(r, 0, None, own, ch(scratch, q * c, c))?;
        }
        for q in peers(r, n) {
            b.put(r, 0, chans[r][q], own, own)?;
            b.signal(r, 0, chans[r][q])?;
        }
        for q in peers(r, n) {
            b.wait(r, 0, chans[r][q])?;
        }
        for q in peers(r, n) {
            b.flush(r, 0, chans[r][q])?;
        }
    }
    Ok(b.finish())
}

pub(super) fn switch_2pa(p: &AlgoParams) -> Result<ProgramGraph> {
    let algo = Algo::Switch2pa;
    shape(p, p.num_ranks, "2pa chunks")?;
    let (n, e) = (p.num_ranks, p.elems);
    if n == 1 {
        return identity(algo, p);
    }
    let c = e / n;
    let mut b = builder(algo, p);
    let input = b.buffer(BufferKind::Input, e);
    let output = b.buffer(BufferKind::Output, e);
    let sw = b.switch((0..n).collect());
    for r in 0..n {
        let own = ch(output, r * c, c);
        b.reduce(r, 0, Some(sw), own, ch(input, r * c, c))?;
        b.put(r, 0, sw, own, own)?;
    }
    Ok(b.finish())
}

/// Ring neighbours' port channels: `(to next, to previous)`. With two
/// ranks both are the same channel.
fn ring_channels(b: &mut ProgramBuilder, n: usize) -> Vec<(usize, usize)> {
    let next: Vec<usize> = (0..n).map(|r| b.port(r, (r + 1) % n)).collect();
    let prev: Vec<usize> = if n == 2 {
        next.clone()
    } else {
        (0..n).map(|r| b.port(r, (r + n - 1) % n)).collect()
    };
    next.into_iter().zip(prev).collect()
}

/// Ring ReduceScatter over `work` with halves overlapped: while one half is
/// in flight the other is reduced. Leaves chunk `r` of `work` fully reduced
/// on rank `r`. With `ag_out` set, the first AllGather puts of the owned
/// chunk into the next rank's `ag_out` are interleaved with the final
/// reduce.
#[allow(clippy::too_many_arguments)]
fn ring_rs_steps(
    b: &mut ProgramBuilder,
    r: RankId,
    n: usize,
    c: usize,
    work: usize,
    recv: usize,
    (next, prev): (usize, usize),
    ag_out: Option<usize>,
) -> Result<()> {
    let h = c / 2;
    for s in 1..n {
        let cur = ring_chunk(r, s, n) * c;
        let nxt = ring_chunk(r, s + 1, n) * c;
        b.put(r, 0, next, ch(recv, cur, h), ch(work, cur, h))?;
        b.signal(r, 0, next)?;
        if s > 1 {
            b.reduce(r, 0, None, ch(work, cur + h, h), ch(recv, cur + h, h))?;
        }
        b.wait(r, 0, prev)?;
        b.flush(r, 0, next)?;
        b.put(r, 0, next, ch(recv, cur + h, h), ch(work, cur + h, h))?;
        b.signal(r, 0, next)?;
        b.reduce(r, 0, None, ch(work, nxt, h), ch(recv, nxt, h))?;
        b.wait(r, 0, prev)?;
        b.flush(r, 0, next)?;
        if s == n - 1 {
            if let Some(out) = ag_out {
                b.put(r, 0, next, ch(out, nxt, h), ch(work, nxt, h))?;
                b.signal(r, 0, next)?;
            }
            b.reduce(r, 0, None, ch(work, nxt + h, h), ch(recv, nxt + h, h))?;
            if let Some(out) = ag_out {
                b.put(r, 0, next, ch(out, nxt + h, h), ch(work, nxt + h, h))?;
                b.signal(r, 0, next)?;
            }
        }
    }
    Ok(())
}

/// Ring AllGather over `out`, where each rank starts holding chunk `r`.
/// Chunks travel in `pieces` parts; with `first_sent` the owned chunk was
/// already put.
#[allow(clippy::too_many_arguments)]
fn ring_ag_steps(
    b: &mut ProgramBuilder,
    r: RankId,
    n: usize,
    c: usize,
    out: usize,
    (next, prev): (usize, usize),
    pieces: usize,
    first_sent: bool,
) -> Result<()> {
    let part = c / pieces;
    for s in 0..n - 1 {
        let cur = ring_chunk(r, s, n) * c;
        if !(first_sent && s == 0) {
            for k in 0..pieces {
                let piece = ch(out, cur + k * part, part);
                b.put(r, 0, next, piece, piece)?;
                b.signal(r, 0, next)?;
            }
        }
        for _ in 0..pieces {
            b.wait(r, 0, prev)?;
        }
    }
    b.flush(r, 0, next)?;
    Ok(())
}

pub(super) fn ring_rs(p: &AlgoParams) -> Result<ProgramGraph> {
    let algo = Algo::RingRs;
    shape(p, 2 * p.num_ranks, "ring halves")?;
    let (n, e) = (p.num_ranks, p.elems);
    if n == 1 {
        return identity(algo, p);
    }
    let c = e / n;
    let mut b = builder(algo, p);
    let input = b.buffer(BufferKind::Input, e);
    let output = b.buffer(BufferKind::Output, c);
    let recv = b.buffer(BufferKind::Scratch, e);
    let rings = ring_channels(&mut b, n);
    for (r, &chans) in rings.iter().enumerate() {
        ring_rs_steps(&mut b, r, n, c, input, recv, chans, None)?;
        b.copy(r, 0, ch(output, 0, c), ch(input, r * c, c))?;
    }
    Ok(b.finish())
}

pub(super) fn two_pr(p: &AlgoParams) -> Result<ProgramGraph> {
    let algo = Algo::TwoPr;
    shape(p, 2 * p.num_ranks, "ring halves")?;
    let (n, e) = (p.num_ranks, p.elems);
    if n == 1 {
        return identity(algo, p);
    }
    let c = e / n;
    let mut b = builder(algo, p);
    let input = b.buffer(BufferKind::Input, e);
    let output = b.buffer(BufferKind::Output, e);
    let recv = b.buffer(BufferKind::Scratch, e);
    let rings = ring_channels(&mut b, n);
    for (r, &chans) in rings.iter().enumerate() {
        b.copy(r, 0, ch(output, 0, e), ch(input, 0, e))?;
        ring_rs_steps(&mut b, r, n, c, output, recv, chans, Some(output))?;
        ring_ag_steps(&mut b, r, n, c, output, chans, 2, true)?;
    }
    Ok(b.finish())
}

pub(super) fn ring_ag(p: &AlgoParams) -> Result<ProgramGraph> {
    let algo = Algo::RingAg;
    shape(p, p.num_ranks, "one chunk per rank")?;
    let (n, e) = (p.num_ranks, p.elems);
    if n == 1 {
        return identity(algo, p);
    }
    let c = e / n;
    let mut b = builder(algo, p);
    let input = b.buffer(BufferKind::Input, c);
    let output = b.buffer(BufferKind::Output, e);
    let rings = ring_channels(&mut b, n);
    for (r, &chans) in rings.iter().enumerate() {
        b.copy(r, 0, ch(output, r * c, c), ch(input, 0, c))?;
        ring_ag_steps(&mut b, r, n, c, output, chans, 1, false)?;
    }
    Ok(b.finish())
}

pub(super) fn allpairs_ag(p: &AlgoParams) -> Result<ProgramGraph> {
    let algo = Algo::AllpairsAg;
    shape(p, p.num_ranks, "one chunk per rank")?;
    let (n, e) = (p.num_ranks, p.elems);
    if n == 1 {
        return identity(algo, p);
    }
    let c = e / n;
    let mut b = builder(algo, p);
    let input = b.buffer(BufferKind::Input, c);
    let output = b.buffer(BufferKind::Output, e);
    let all: Vec<RankId> = (0..n).collect();
    let chans = mesh(&mut b, &all, true);
    for r in 0..n {
        b.copy(r, 0, ch(output, r * c, c), ch(input, 0, c))?;
        for q in peers(r, n) {
            b.put(r, 0, chans[r][q], ch(output, r * c, c), ch(input, 0, c))?;
        }
        for q in peers(r, n) {
            b.signal(r, 0, chans[r][q])?;
        }
        for q in peers(r, n) {
            b.wait(r, 0, chans[r][q])?;
        }
    }
    Ok(b.finish())
}

/// Node layout of a hierarchical run: `(nodes, gpus per node)`.
fn hierarchy(p: &AlgoParams) -> Result<(usize, usize)> {
    let g = p.gpus_per_node;
    if g == 0 || !p.num_ranks.is_multiple_of(g) {
        return Err(Error::Topology(format!("{} ranks do not split into nodes of {g}", p.num_ranks)));
    }
    let m = p.num_ranks / g;
    if m < 2 {
        return Err(Error::Topology("hierarchical algorithms need at least two nodes".into()));
    }
    Ok((m, g))
}

/// Hierarchical HB AllReduce with one chunk per GPU. GPU `(n, g)` reduces
/// chunks `{m·G + g}` inside its node, exchanges them with the GPUs of the
/// same local index on other nodes, and broadcasts the results locally.
pub(super) fn two_ph_hb(p: &AlgoParams) -> Result<ProgramGraph> {
    let algo = Algo::TwoPhHb;
    let (m, g) = hierarchy(p)?;
    let n = p.num_ranks;
    shape(p, n, "one chunk per GPU")?;
    let c = p.elems / n;
    let mut b = builder(algo, p);
    let input = b.buffer(BufferKind::Input, p.elems);
    let output = b.buffer(BufferKind::Output, p.elems);
    let scratch = b.buffer(BufferKind::Scratch, m * c);
    let mut local = vec![vec![usize::MAX; n]; n];
    let mut remote = vec![vec![usize::MAX; n]; n];
    for node in 0..m {
        let ranks: Vec<RankId> = (node * g..(node + 1) * g).collect();
        for &s in &ranks {
            for &d in &ranks {
                if s != d {
                    local[s][d] = b.memory(s, d);
                }
            }
        }
    }
    for lg in 0..g {
        for s in 0..m {
            for d in 0..m {
                if s != d {
                    remote[s * g + lg][d * g + lg] = b.port(s * g + lg, d * g + lg);
                }
            }
        }
    }
    for r in 0..n {
        let (node, lg) = (r / g, r % g);
        let owned: Vec<usize> = (0..m).map(|k| k * g + lg).collect();
        let lpeers: Vec<RankId> = (0..g).filter(|&l| l != lg).map(|l| node * g + l).collect();
        let rpeers: Vec<RankId> = (0..m).filter(|&k| k != node).map(|k| k * g + lg).collect();
        for &k in &owned {
            b.copy(r, 0, ch(output, k * c, c), ch(input, k * c, c))?;
            for &q in &lpeers {
                b.reduce(r, 0, Some(local[r][q]), ch(output, k * c, c), ch(input, k * c, c))?;
            }
        }
        for &q in &rpeers {
            b.put(r, 0, remote[r][q], ch(scratch, node * c, c), ch(output, q * c, c))?;
            b.signal(r, 0, remote[r][q])?;
        }
        for &q in &rpeers {
            b.wait(r, 0, remote[r][q])?;
        }
        for &q in &rpeers {
            b.reduce(r, 0, None, ch(output, r * c, c), ch(scratch, (q / g) * c, c))?;
        }
        for &q in &rpeers {
            b.put(r, 0, remote[r][q], ch(output, r * c, c), ch(output, r * c, c))?;
            b.signal(r, 0, remote[r][q])?;
        }
        for &q in &rpeers {
            b.wait(r, 0, remote[r][q])?;
        }
        for &k in &owned {
            for &q in &lpeers {
                b.put(r, 0, local[r][q], ch(output, k * c, c), ch(output, k * c, c))?;
            }
        }
        for &q in &lpeers {
            b.signal(r, 0, local[r][q])?;
        }
        for &q in &lpeers {
            b.wait(r, 0, local[r][q])?;
        }
        for &q in &rpeers {
            b.flush(r, 0, remote[r][q])?;
        }
    }
    Ok(b.finish())
}

/// Hierarchical LL AllReduce with one chunk per local GPU: a local LL
/// ReduceScatter, an LL exchange of node partials across nodes, and a local
/// LL AllGather.
pub(super) fn two_ph_ll(p: &AlgoParams) -> Result<ProgramGraph> {
    let algo = Algo::TwoPhLl;
    let (m, g) = hierarchy(p)?;
    let n = p.num_ranks;
    shape(p, g, "one chunk per local GPU")?;
    let e = p.elems;
    let c = e / g;
    let mut b = builder(algo, p);
    let input = b.buffer(BufferKind::Input, e);
    let output = b.buffer(BufferKind::Output, e);
    let pk1 = b.buffer(BufferKind::Scratch, 2 * e);
    let recv1 = b.buffer(BufferKind::Scratch, e);
    let pk2 = b.buffer(BufferKind::Scratch, 2 * m * c);
    let recv2 = b.buffer(BufferKind::Scratch, m * c);
    let pk3 = b.buffer(BufferKind::Scratch, 2 * e);
    let mut local = vec![vec![usize::MAX; n]; n];
    let mut remote = vec![vec![usize::MAX; n]; n];
    for node in 0..m {
        for s in 0..g {
            for d in 0..g {
                if s != d {
                    local[node * g + s][node * g + d] = b.memory(node * g + s, node * g + d);
                }
            }
        }
    }
    for lg in 0..g {
        for s in 0..m {
            for d in 0..m {
                if s != d {
                    remote[s * g + lg][d * g + lg] = b.port(s * g + lg, d * g + lg);
                }
            }
        }
    }
    for r in 0..n {
        let (node, lg) = (r / g, r % g);
        let own = ch(output, lg * c, c);
        let lpeers: Vec<RankId> = (0..g).filter(|&l| l != lg).map(|l| node * g + l).collect();
        let rpeers: Vec<RankId> = (0..m).filter(|&k| k != node).map(|k| k * g + lg).collect();
        for &q in &lpeers {
            b.put_packets(r, 0, local[r][q], ch(pk1, lg * c, c), ch(input, (q % g) * c, c))?;
        }
        b.copy(r, 0, own, ch(input, lg * c, c))?;
        for &q in &lpeers {
            let slot = (q % g) * c;
            b.read_packets(r, 0, ch(recv1, slot, c), ch(pk1, slot, c))?;
        }
        for &q in &lpeers {
            b.reduce(r, 0, None, own, ch(recv1, (q % g) * c, c))?;
        }
        for &q in &rpeers {
            b.put_packets(r, 0, remote[r][q], ch(pk2, node * c, c), own)?;
        }
        for &q in &rpeers {
            let slot = (q / g) * c;
            b.read_packets(r, 0, ch(recv2, slot, c), ch(pk2, slot, c))?;
        }
        // The proxies must be done reading the node partial before it is
        // reduced in place.
        for &q in &rpeers {
            b.flush(r, 0, remote[r][q])?;
        }
        for &q in &rpeers {
            b.reduce(r, 0, None, own, ch(recv2, (q / g) * c, c))?;
        }
        for &q in &lpeers {
            b.put_packets(r, 0, local[r][q], ch(pk3, lg * c, c), own)?;
        }
        for &q in &lpeers {
            let slot = (q % g) * c;
            b.read_packets(r, 0, ch(output, slot, c), ch(pk3, slot, c))?;
        }
    }
    Ok(b.finish())
}

pub(super) fn protocol_of(algo: Algo) -> Protocol {
    match algo {
        Algo::OnePa | Algo::TwoPaLl | Algo::TwoPhLl => Protocol::LL,
        _ => Protocol::HB,
    }
}

pub(super) fn collective_of(algo: Algo) -> Collective {
    match algo {
        Algo::RingRs => Collective::ReduceScatter,
        Algo::RingAg | Algo::AllpairsAg => Collective::AllGather,
        _ => Collective::AllReduce,
    }
}
