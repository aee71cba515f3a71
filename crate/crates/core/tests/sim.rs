use std::cell::RefCell;
use std::rc::Rc;

use commforge::sim::{
    run_schedule, AccessKind, AccessRecord, Actor, Context, CtxId, LinkClass, RegionId, ScheduleMode, ScriptContext,
    ScriptStep, SimWorld, Topology, IntraKind, WorldSpec,
};
use commforge::Error;
use proptest::prelude::*;

mod common;
use common::*;

fn world(ranks: usize) -> SimWorld {
    SimWorld::new(WorldSpec::single_node(ranks)).unwrap()
}

fn rec(ctx: CtxId, region: RegionId, lo: usize, hi: usize, kind: AccessKind) -> AccessRecord {
    AccessRecord { ctx, region, lo, hi, kind, epoch: 0 }
}

#[test]
fn regions_start_zeroed() {
    let mut w = world(8);
    let r = w.alloc_region(0, 64).unwrap();
    assert_eq!(w.peek(r, 0, 64).unwrap(), vec![0u8; 64]);
    let one = w.alloc_region(7, 1).unwrap();
    assert_eq!(w.region(one).bytes().len(), 1);
    assert_eq!(w.alloc_region(0, 0), Err(Error::BadSize));
}

#[test]
fn accesses_are_bounds_checked() {
    let mut w = world(1);
    let r = w.alloc_region(0, 16).unwrap();
    let c = w.new_context("c");
    assert!(w.read(c, r, 8, 8).is_ok());
    assert!(matches!(w.read(c, r, 9, 8), Err(Error::Oob { .. })));
    assert!(matches!(w.record_access(rec(c, r, 12, 20, AccessKind::Write)), Err(Error::Oob { .. })));
}

#[test]
fn semaphore_counting() {
    let mut w = world(2);
    let s = w.sem_create(1);
    let a = Actor::new(w.new_context("a"));
    let b = Actor::new(w.new_context("b"));
    assert_eq!(w.sem_add(s, 1, a).unwrap(), 1);

    let t = w.sem_create(0);
    w.sem_add(t, 5, a).unwrap();
    w.sem_add(t, 1, b).unwrap();
    assert_eq!(w.sem_add(t, 1, a).unwrap(), 7);

    assert_eq!(w.sem_add(t, 0, a), Err(Error::BadDelta));
    assert_eq!(w.sem_add(commforge::sim::SemId(99), 1, a), Err(Error::NoSem(99)));
}

#[test]
fn wait_returns_once_value_reached() {
    let mut w = world(1);
    let s = w.sem_create(0);
    let mut a = Actor::new(w.new_context("a"));
    assert!(!w.sem_wait_geq(s, 1, &mut a).unwrap());
    let b = Actor::new(w.new_context("b"));
    w.sem_add(s, 1, b).unwrap();
    assert!(w.sem_wait_geq(s, 1, &mut a).unwrap());
}

#[test]
fn ordered_accesses_do_not_race() {
    let mut w = world(1);
    let r = w.alloc_region(0, 16).unwrap();
    let s = w.sem_create(0);
    let a = w.new_context("a");
    let b = w.new_context("b");
    w.write(a, r, 0, &[1; 8]).unwrap();
    w.sem_add(s, 1, Actor::new(a)).unwrap();
    let mut bb = Actor::new(b);
    assert!(w.sem_wait_geq(s, 1, &mut bb).unwrap());
    assert_eq!(w.record_access(rec(b, r, 0, 8, AccessKind::Read)).unwrap(), None);
    assert!(w.races().is_empty());
}

#[test]
fn overlapping_concurrent_writes_race_on_the_overlap() {
    let mut w = world(1);
    let r = w.alloc_region(0, 16).unwrap();
    let a = w.new_context("a");
    let b = w.new_context("b");
    assert_eq!(w.record_access(rec(a, r, 0, 8, AccessKind::Write)).unwrap(), None);
    let report = w.record_access(rec(b, r, 4, 12, AccessKind::Write)).unwrap().expect("race");
    assert_eq!(report.first.ctx, a);
    assert_eq!(report.second.ctx, b);
    assert_eq!(report.range, (4, 8));
}

#[test]
fn concurrent_reads_never_race() {
    let mut w = world(1);
    let r = w.alloc_region(0, 16).unwrap();
    let a = w.new_context("a");
    let b = w.new_context("b");
    w.record_access(rec(a, r, 0, 8, AccessKind::Read)).unwrap();
    assert_eq!(w.record_access(rec(b, r, 0, 8, AccessKind::Read)).unwrap(), None);
}

#[test]
fn topology_classes() {
    let t = Topology::new(2, 4, IntraKind::PeerMesh);
    assert_eq!(t.num_ranks(), 8);
    assert_eq!(t.class(0, 3), LinkClass::Intra);
    assert_eq!(t.class(3, 4), LinkClass::Inter);
    assert!(SimWorld::new(WorldSpec::multi_node(0, 8)).is_err());
}

/// Token written before `sem_add`, read after the wait: every seed must see
/// the token and report no race.
#[test]
fn release_acquire_carries_prior_writes() {
    for seed in 0..1000 {
        let mut w = SimWorld::new(WorldSpec::single_node(2).with_seed(seed)).unwrap();
        let region = w.alloc_region(1, 4).unwrap();
        let sem = w.sem_create(1);
        let p = w.new_context("producer");
        let c = w.new_context("consumer");
        let seen = Rc::new(RefCell::new(Vec::new()));
        let seen2 = seen.clone();
        let producer: Vec<ScriptStep> = vec![
            Box::new(move |w: &mut SimWorld, a: &mut Actor| {
                w.write(a.ctx, region, 0, &[7, 7, 7, 7])?;
                Ok(true)
            }),
            Box::new(move |w: &mut SimWorld, a: &mut Actor| {
                w.sem_add(sem, 1, *a)?;
                Ok(true)
            }),
        ];
        let consumer: Vec<ScriptStep> = vec![
            Box::new(move |w: &mut SimWorld, a: &mut Actor| w.sem_wait_geq(sem, 1, a)),
            Box::new(move |w: &mut SimWorld, a: &mut Actor| {
                seen2.borrow_mut().extend(w.read(a.ctx, region, 0, 4)?);
                Ok(true)
            }),
        ];
        let ctxs: Vec<Box<dyn Context>> = vec![
            Box::new(ScriptContext::new("producer", p, producer)),
            Box::new(ScriptContext::new("consumer", c, consumer)),
        ];
        run_schedule(&mut w, ctxs, ScheduleMode::SeededRandom).unwrap();
        assert_eq!(*seen.borrow(), vec![7; 4], "seed {seed}");
        assert!(w.races().is_empty(), "seed {seed}: {:?}", w.races());
    }
}

/// Two unsynchronized overlapping writers are reported whatever the order.
#[test]
fn unsynchronized_writers_always_reported() {
    for seed in 0..1000 {
        let mut w = SimWorld::new(WorldSpec::single_node(2).with_seed(seed)).unwrap();
        let region = w.alloc_region(0, 8).unwrap();
        let mut ctxs: Vec<Box<dyn Context>> = Vec::new();
        for (name, lo) in [("a", 0), ("b", 4)] {
            let id = w.new_context(name);
            let step: ScriptStep = Box::new(move |w: &mut SimWorld, a: &mut Actor| {
                w.write(a.ctx, region, lo, &[1; 4])?;
                w.write(a.ctx, region, 2, &[1; 4])?;
                Ok(true)
            });
            ctxs.push(Box::new(ScriptContext::new(name, id, vec![step])));
        }
        run_schedule(&mut w, ctxs, ScheduleMode::SeededRandom).unwrap();
        assert!(!w.races().is_empty(), "seed {seed}");
    }
}

#[test]
fn wait_without_writer_deadlocks() {
    let mut w = world(1);
    let sem = w.sem_create(0);
    let c = w.new_context("lonely");
    let ctx = ScriptContext::new(
        "lonely",
        c,
        vec![Box::new(move |w: &mut SimWorld, a: &mut Actor| w.sem_wait_geq(sem, 1, a))],
    );
    match run_schedule(&mut w, vec![Box::new(ctx)], ScheduleMode::SeededRandom) {
        Err(Error::Deadlock { blocked }) => assert_eq!(blocked, vec!["lonely".to_string()]),
        other => panic!("{other:?}"),
    }
}

#[test]
fn spsc_queue_is_fifo_under_random_schedules() {
    let want: Vec<u64> = (0..1000).collect();
    let (got, _) = spsc(1, 1000, 128);
    assert_eq!(got, want);
    for seed in 0..1000 {
        let (got, depth) = spsc(seed, 64, 4);
        assert_eq!(got, (0..64).collect::<Vec<_>>(), "seed {seed}");
        assert!(depth <= 4);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn queue_depth_stays_within_capacity(seed in any::<u64>(), cap in 1usize..9, total in 1u64..80) {
        let (got, depth) = spsc(seed, total, cap);
        prop_assert_eq!(got, (0..total).collect::<Vec<_>>());
        prop_assert!(depth <= cap);
    }

    #[test]
    fn semaphore_values_never_decrease(deltas in proptest::collection::vec(1u64..10, 1..40)) {
        let mut w = world(1);
        let s = w.sem_create(0);
        let a = Actor::new(w.new_context("a"));
        let mut last = 0;
        for d in deltas {
            let v = w.sem_add(s, d, a).unwrap();
            prop_assert!(v > last);
            prop_assert_eq!(v, last + d);
            last = v;
        }
    }

    #[test]
    fn schedule_is_a_function_of_the_seed(seed in any::<u64>()) {
        let run = || {
            let mut w = SimWorld::new(WorldSpec::single_node(1).with_seed(seed)).unwrap();
            let sem = w.sem_create(0);
            let mut ctxs: Vec<Box<dyn Context>> = Vec::new();
            for i in 0..4 {
                let id = w.new_context(format!("c{i}"));
                let steps: Vec<ScriptStep> = (0..3)
                    .map(|_| -> ScriptStep {
                        Box::new(move |w: &mut SimWorld, a: &mut Actor| {
                            w.sem_add(sem, 1, *a)?;
                            Ok(true)
                        })
                    })
                    .collect();
                ctxs.push(Box::new(ScriptContext::new(format!("c{i}"), id, steps)));
            }
            run_schedule(&mut w, ctxs, ScheduleMode::SeededRandom).unwrap()
        };
        prop_assert_eq!(run(), run());
    }
}
