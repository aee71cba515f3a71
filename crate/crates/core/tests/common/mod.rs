//! Harnesses shared by the integration suites.
#![allow(dead_code)]

use std::cell::RefCell;
use std::rc::Rc;

use commforge::channels::{LlReadState, LlWriter, MemoryChannel, PortChannel, Protocol, ProxyWorker};
use commforge::fifo::{Request, RequestKind};
use commforge::sim::{run_schedule, Actor, Context, RegionId, ScheduleMode, ScriptContext, ScriptStep, SimWorld, WorldSpec};

pub type Shared<T> = Rc<RefCell<T>>;

pub fn shared<T>(v: T) -> Shared<T> {
    Rc::new(RefCell::new(v))
}

pub fn step(f: impl FnMut(&mut SimWorld, &mut Actor) -> commforge::Result<bool> + 'static) -> ScriptStep {
    Box::new(f)
}

pub struct PortPair {
    pub world: SimWorld,
    pub ch: Shared<PortChannel>,
    pub peer: Shared<PortChannel>,
    pub proxies: Vec<ProxyWorker>,
    pub src: RegionId,
    pub dst: RegionId,
}

pub fn port_pair(seed: u64, len: usize) -> PortPair {
    let mut world = SimWorld::new(WorldSpec::single_node(2).with_seed(seed)).unwrap();
    let src = world.alloc_region(0, len).unwrap();
    let dst = world.alloc_region(1, len).unwrap();
    let s0 = world.sem_create(0);
    let s1 = world.sem_create(1);
    let (ch, p0) = PortChannel::new(&mut world, src, dst, s1, s0, 8);
    let (peer, p1) = PortChannel::new(&mut world, dst, src, s0, s1, 8);
    PortPair {
        world,
        ch: shared(ch),
        peer: shared(peer),
        proxies: vec![p0, p1],
        src,
        dst,
    }
}

pub fn run(world: &mut SimWorld, mut ctxs: Vec<Box<dyn Context>>, proxies: Vec<ProxyWorker>) {
    for p in proxies {
        ctxs.push(Box::new(p));
    }
    run_schedule(world, ctxs, ScheduleMode::SeededRandom).unwrap();
}

pub struct MemPair {
    pub world: SimWorld,
    pub ch: Shared<MemoryChannel>,
    pub peer: Shared<MemoryChannel>,
    pub a: RegionId,
    pub b: RegionId,
}

pub fn mem_pair(seed: u64, protocol: Protocol, len: usize) -> MemPair {
    let mut world = SimWorld::new(WorldSpec::single_node(2).with_seed(seed)).unwrap();
    let a = world.alloc_region(0, len).unwrap();
    let b = world.alloc_region(1, len).unwrap();
    let sa = world.sem_create(0);
    let sb = world.sem_create(1);
    let ch = MemoryChannel::new(&world, protocol, a, b, sb, sa);
    let peer = MemoryChannel::new(&world, protocol, b, a, sa, sb);
    MemPair {
        world,
        ch: shared(ch),
        peer: shared(peer),
        a,
        b,
    }
}

/// Checksummed payload word: packet index in the high half, a hash of the
/// index and generation in the low half.
pub fn word(i: u32, generation: u32) -> [u8; 4] {
    let check = (i.wrapping_mul(2654435761) ^ generation.wrapping_mul(40503)) & 0xffff;
    ((i << 16) | check).to_le_bytes()
}

pub fn payload(n: u32, generation: u32) -> Vec<u8> {
    (0..n).flat_map(|i| word(i, generation)).collect()
}

/// Writer sends `packets` LL packets a few at a time in shuffled order
/// while the reader polls; returns what the reader reconstructed.
pub fn ll_transfer(seed: u64, packets: u32, stale_generation: bool) -> (Vec<u8>, usize) {
    let mut m = mem_pair(seed, Protocol::LL, 8 * packets as usize);
    let flag = if stale_generation { 2 } else { 1 };
    m.world.host_write(m.a, 0, &payload(packets, flag)).unwrap();
    if stale_generation {
        // leftovers of generation 1 already sit in the packet buffer
        let mut old = Actor::new(m.world.new_context("old"));
        for i in 0..packets {
            m.ch.borrow().write_ll(&mut m.world, &mut old, 4 * i as usize, word(i, 1), 1).unwrap();
        }
    }
    let (x, y) = (m.world.new_context("writer"), m.world.new_context("reader"));
    let size = 4 * packets as usize;
    let writer: Shared<Option<LlWriter>> = shared(None);
    let (w1, w2) = (writer.clone(), writer);
    let ch = m.ch.clone();
    let peer = m.peer.clone();
    let out = shared(Vec::new());
    let out2 = out.clone();
    let mut state = LlReadState::default();
    // one scheduler step per burst of three packets
    let mut send = vec![step(move |w, a| {
        *w1.borrow_mut() = Some(ch.borrow().put_ll(w, a, 0, 0, size, flag)?);
        Ok(true)
    })];
    for _ in 0..packets.div_ceil(3) {
        let wr = w2.clone();
        send.push(step(move |w, _| {
            wr.borrow_mut().as_mut().unwrap().advance(w, 3)?;
            Ok(true)
        }));
    }
    let ctxs: Vec<Box<dyn Context>> = vec![
        Box::new(ScriptContext::new("writer", x, send)),
        Box::new(ScriptContext::new(
            "reader",
            y,
            vec![step(move |w, a| {
                Ok(match peer.borrow().read_ll_range(w, a, 0, size, flag, &mut state)? {
                    Some(d) => {
                        *out2.borrow_mut() = d;
                        true
                    }
                    None => false,
                })
            })],
        )),
    ];
    run_schedule(&mut m.world, ctxs, ScheduleMode::SeededRandom).unwrap();
    let got = out.borrow().clone();
    (got, m.world.races().len())
}

/// Producer pushes `total` requests into a queue of capacity `cap`, a
/// consumer pops them; returns the popped tickets and the max depth seen.
pub fn spsc(seed: u64, total: u64, cap: usize) -> (Vec<u64>, usize) {
    let mut w = SimWorld::new(WorldSpec::single_node(1).with_seed(seed)).unwrap();
    let q = w.add_queue(cap);
    let p = w.new_context("producer");
    let c = w.new_context("consumer");
    let popped = Rc::new(RefCell::new(Vec::new()));
    let depth = Rc::new(RefCell::new(0usize));
    let producer: Vec<ScriptStep> = (0..total)
        .map(|i| -> ScriptStep {
            let depth = depth.clone();
            Box::new(move |w: &mut SimWorld, _a: &mut Actor| {
                let queue = w.queue_mut(q);
                let req = Request::new(RequestKind::Put, RegionId(0), RegionId(0), i as usize, 0, 4);
                let pushed = queue.push(req).is_some();
                let d = (queue.head() - queue.tail()) as usize;
                assert!(d <= queue.capacity());
                let mut m = depth.borrow_mut();
                *m = (*m).max(d);
                Ok(pushed)
            })
        })
        .collect();
    let consumer: Vec<ScriptStep> = (0..total)
        .map(|_| -> ScriptStep {
            let popped = popped.clone();
            Box::new(move |w: &mut SimWorld, _a: &mut Actor| {
                let queue = w.queue_mut(q);
                match queue.pop() {
                    Some(r) => {
                        assert_eq!(r.src_off as u64, r.ticket, "payload travels with its ticket");
                        popped.borrow_mut().push(r.ticket);
                        Ok(true)
                    }
                    None => Ok(false),
                }
            })
        })
        .collect();
    let ctxs: Vec<Box<dyn Context>> = vec![
        Box::new(ScriptContext::new("producer", p, producer)),
        Box::new(ScriptContext::new("consumer", c, consumer)),
    ];
    run_schedule(&mut w, ctxs, ScheduleMode::SeededRandom).unwrap();
    let out = popped.borrow().clone();
    let d = *depth.borrow();
    (out, d)
}

/// `puts` port puts of 4 bytes each, then a flush, then the source is
/// overwritten. Returns what the peer holds and the race count. More puts
/// than the queue holds makes the producer block at capacity.
pub fn flush_then_reuse(seed: u64, puts: usize) -> (Vec<u8>, usize) {
    let len = 4 * puts;
    let mut s = port_pair(seed, len);
    let data: Vec<u8> = (0..len).map(|i| (i % 251) as u8 + 1).collect();
    s.world.host_write(s.src, 0, &data).unwrap();
    let a = s.world.new_context("r0");
    let mut steps = Vec::new();
    for i in 0..puts {
        let ch = s.ch.clone();
        steps.push(step(move |w, a| Ok(ch.borrow_mut().put(w, a, 4 * i, 4 * i, 4)?.is_some())));
    }
    let ch = s.ch.clone();
    steps.push(step(move |w, a| ch.borrow_mut().flush(w, a)));
    let src = s.src;
    steps.push(step(move |w, a| {
        w.write(a.ctx, src, 0, &vec![0; len])?;
        Ok(true)
    }));
    run(&mut s.world, vec![Box::new(ScriptContext::new("r0", a, steps))], s.proxies);
    (s.world.peek(s.dst, 0, len).unwrap(), s.world.races().len())
}
