use commforge::channels::Protocol;
use commforge::collectives::{build_plan, select_algorithm, Algo, AlgoParams, Selector, Thresholds, GB, KB, MB};
use commforge::lowering::{PassConfig, ProgramBuilder};
use commforge::plan::{BufferKind, ChunkRef, Collective, ExecutionPlan};
use commforge::sim::{IntraKind, LinkClass, Topology, WorldSpec};
use commforge::timing::{algobw, geometric_sizes, measure, run_benchmark, simulate_timed, to_csv, CostParams};
use commforge::DType;
use proptest::prelude::*;

const MIB: usize = 1 << 20;

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * b.abs().max(1.0)
}

/// Raw port puts, one block per `(src, dst)` pair.
fn puts(n: usize, elems: usize, pairs: &[(usize, usize)]) -> ExecutionPlan {
    let mut b = ProgramBuilder::new("puts", Collective::Custom, Protocol::HB, DType::I32, n);
    let i = b.buffer(BufferKind::Input, elems);
    let o = b.buffer(BufferKind::Output, elems);
    for (tb, &(s, d)) in pairs.iter().enumerate() {
        let c = b.port(s, d);
        b.put(s, tb, c, ChunkRef::new(o, 0, elems), ChunkRef::new(i, 0, elems)).unwrap();
    }
    let mut p = b.finish().plan;
    p.lowered = None;
    p
}

fn inter_world() -> WorldSpec {
    WorldSpec::multi_node(4, 1)
}

#[test]
fn inter_link_cost_of_one_mebibyte() {
    let p = CostParams::default();
    let t = p.transfer_time(LinkClass::Inter, MIB);
    // 4.89 us + 2^20 B / 48.94e9 B/s
    assert!(close(t, 4.89 + MIB as f64 / 48.94e3));
    assert!((t - 26.3).abs() < 0.05);
    assert!(close(p.transfer_time(LinkClass::Inter, 0), 4.89));
    assert!(close(p.transfer_time(LinkClass::Intra, 0), 0.829));
}

#[test]
fn single_put_is_hop_plus_link() {
    let p = CostParams::default();
    let t = simulate_timed(puts(4, MIB / 4, &[(0, 1)]), inter_world(), p).unwrap();
    assert!(close(t.makespan_us, p.proxy_hop_us + p.transfer_time(LinkClass::Inter, MIB)));
    assert_eq!(t.bytes(LinkClass::Inter), MIB as u64);
}

#[test]
fn disjoint_links_overlap_shared_links_serialize() {
    let p = CostParams::default();
    let one = simulate_timed(puts(4, MIB / 4, &[(0, 1)]), inter_world(), p).unwrap().makespan_us;
    let par = simulate_timed(puts(4, MIB / 4, &[(0, 1), (2, 3)]), inter_world(), p).unwrap().makespan_us;
    let ser = simulate_timed(puts(4, MIB / 4, &[(0, 1), (0, 1)]), inter_world(), p).unwrap().makespan_us;
    assert!(close(par, one));
    assert!(close(ser, p.proxy_hop_us + 2.0 * p.transfer_time(LinkClass::Inter, MIB)));
}

#[test]
fn packets_double_the_wire_bytes() {
    let payload = 4096;
    let mut b = ProgramBuilder::new("ll", Collective::Custom, Protocol::LL, DType::I32, 2);
    let i = b.buffer(BufferKind::Input, payload);
    let s = b.buffer(BufferKind::Scratch, 2 * payload);
    let c = b.port(0, 1);
    b.put_packets(0, 0, c, ChunkRef::new(s, 0, payload), ChunkRef::new(i, 0, payload)).unwrap();
    let mut plan = b.finish().plan;
    plan.lowered = None;
    plan.programs[0].ops[0].flag = Some(1);
    let t = simulate_timed(plan, WorldSpec::multi_node(2, 1), CostParams::default()).unwrap();
    assert_eq!(t.bytes(LinkClass::Inter), 2 * 4 * payload as u64);
}

#[test]
fn timed_traces_are_deterministic_and_ordered() {
    let spec = WorldSpec::multi_node(2, 4).ghost();
    for algo in [Algo::TwoPhHb, Algo::TwoPhLl, Algo::TwoPr, Algo::RingRs] {
        let params = AlgoParams { gpus_per_node: 4, ..AlgoParams::new(8, 1 << 16, DType::I32) };
        let plan = build_plan(algo, &params, PassConfig::SyncFuse).unwrap();
        let a = simulate_timed(plan.clone(), spec.clone(), CostParams::default()).unwrap();
        let b = simulate_timed(plan, spec.clone(), CostParams::default()).unwrap();
        assert_eq!(a, b, "{algo}");
        for w in a.events.windows(2) {
            assert!(w[0].start <= w[0].end);
            if (w[0].rank, w[0].tb) == (w[1].rank, w[1].tb) {
                assert!(w[0].start <= w[1].start, "{algo}: issue order broken at {:?}", w[1]);
            }
        }
        let last = a.events.iter().map(|e| e.end).fold(0.0, f64::max);
        assert!(a.makespan_us >= last);
    }
}

#[test]
fn small_messages_favour_one_pa_large_favour_two_pr() {
    let spec = WorldSpec::single_node(8);
    let p = CostParams::default();
    assert!(measure(Algo::OnePa, KB, &spec, &p).unwrap() < measure(Algo::TwoPr, KB, &spec, &p).unwrap());
    let bw = |a| algobw(GB, measure(a, GB, &spec, &p).unwrap() * 1e-6).unwrap();
    assert!(bw(Algo::TwoPr) > bw(Algo::OnePa));
}

/// The 1pa/2pr latency ordering flips once, somewhere between the selector's
/// 1pa ceiling and its 2pr floor.
#[test]
fn crossover_lies_within_the_selector_thresholds() {
    let spec = WorldSpec::single_node(8);
    let p = CostParams::default();
    let sizes = geometric_sizes(KB, GB, 2);
    let wins: Vec<bool> = sizes
        .iter()
        .map(|&s| measure(Algo::OnePa, s, &spec, &p).unwrap() < measure(Algo::TwoPr, s, &spec, &p).unwrap())
        .collect();
    let flip = wins.iter().position(|w| !w).expect("2pr never overtakes 1pa");
    assert!(wins[flip..].iter().all(|w| !w), "ordering flips more than once: {wins:?}");
    let t = Thresholds::default();
    let s_star = sizes[flip];
    assert!(t.one_pa_max <= s_star && s_star <= t.two_pr_min, "crossover at {s_star}");
}

#[test]
fn hierarchy_wins_large_multi_node() {
    let spec = WorldSpec::multi_node(2, 4);
    let p = CostParams::default();
    for bytes in [64 * MB, 256 * MB] {
        let ph = measure(Algo::TwoPhHb, bytes, &spec, &p).unwrap();
        let pa = measure(Algo::TwoPaPort, bytes, &spec, &p).unwrap();
        assert!(ph < pa, "{bytes}: 2ph-hb {ph} vs 2pa {pa}");
    }
}

#[test]
fn hierarchy_moves_fewer_inter_node_bytes() {
    let spec = WorldSpec::multi_node(2, 4).ghost();
    let params = AlgoParams { gpus_per_node: 4, ..AlgoParams::new(8, 1 << 20, DType::I32) };
    let inter = |algo| {
        let plan = build_plan(algo, &params, PassConfig::SyncFuse).unwrap();
        simulate_timed(plan, spec.clone(), CostParams::default()).unwrap().bytes(LinkClass::Inter)
    };
    let pa = inter(Algo::TwoPaPort);
    assert!(inter(Algo::TwoPhHb) <= pa);
    assert!(inter(Algo::TwoPhLl) <= 2 * pa);
}

#[test]
fn ring_algobw_grows_with_size() {
    let spec = WorldSpec::single_node(8);
    let p = CostParams::default();
    let mut prev = 0.0;
    for s in geometric_sizes(KB, 256 * MB, 4) {
        let bw = algobw(s, measure(Algo::RingRs, s, &spec, &p).unwrap() * 1e-6).unwrap();
        assert!(bw > prev, "{s}: {bw} <= {prev}");
        prev = bw;
    }
}

#[test]
fn benchmark_table_shape_and_determinism() {
    let spec = WorldSpec::single_node(8);
    let sizes = geometric_sizes(KB, GB, 2);
    let run = || run_benchmark(&[Collective::AllReduce], &sizes, &spec, &CostParams::default(), &Selector::default()).unwrap();
    let rows = run();
    for &s in &sizes {
        let at: Vec<_> = rows.iter().filter(|r| r.bytes == s).collect();
        assert!(at.len() >= 4, "{s}: {} variants", at.len());
        assert_eq!(at.iter().filter(|r| r.selected).count(), 1);
    }
    assert_eq!(to_csv(&rows), to_csv(&run()));
}

#[test]
fn selection_examples() {
    let s = Selector::default();
    let one = Topology::new(1, 8, IntraKind::SwitchAttached);
    let four = Topology::new(4, 8, IntraKind::SwitchAttached);
    let pick = |b, t: &Topology| select_algorithm(Collective::AllReduce, b, t, &s).unwrap().algo;
    assert_eq!(pick(KB, &one), Algo::OnePa);
    assert_eq!(pick(GB, &one), Algo::TwoPr);
    assert_eq!(pick(256 * MB, &four), Algo::TwoPhHb);
    assert_eq!(pick(512 * KB, &four), Algo::TwoPhLl);
}

proptest! {
    #[test]
    fn selection_is_total_and_pure(bytes in 4u64..=16 * GB, nodes in 1usize..=4, gpn in 1usize..=8) {
        let topo = Topology::new(nodes, gpn, IntraKind::SwitchAttached);
        let s = Selector::default();
        for coll in [Collective::AllReduce, Collective::AllGather, Collective::ReduceScatter] {
            let a = select_algorithm(coll, bytes, &topo, &s).unwrap();
            prop_assert_eq!(a, select_algorithm(coll, bytes, &topo, &s).unwrap());
            prop_assert_eq!(a.algo.collective(), coll);
            prop_assert!(a.algo.supports(nodes));
        }
    }

    #[test]
    fn link_time_is_affine(bytes in 0usize..(1 << 34), extra in 1usize..(1 << 20)) {
        let p = CostParams::default();
        for class in [LinkClass::Intra, LinkClass::Inter] {
            let t = p.transfer_time(class, bytes);
            prop_assert!(t >= p.link(class).alpha_us);
            prop_assert!(p.transfer_time(class, bytes + extra) > t);
        }
    }
}
