//! Cooperative scheduler driving execution contexts over a shared world.

use rand::Rng;

use super::SimWorld;
use crate::{Error, Result};

/// Upper bound on scheduler steps before a run is declared livelocked.
const MAX_STEPS: u64 = 50_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    /// The context made progress.
    Ran,
    /// The context cannot progress until another context acts.
    Blocked,
    /// The context finished.
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScheduleMode {
    RoundRobin,
    /// Uniformly random choice among runnable contexts, driven by the
    /// world's seeded RNG.
    SeededRandom,
    /// Discrete-event order: the runnable context with the smallest local
    /// time runs next, ties broken by registration order.
    Timed,
}

/// One schedulable unit of execution.
pub trait Context {
    fn label(&self) -> String;

    /// Runs at most one atomic action. Contexts may hand new contexts to the
    /// scheduler through `spawn`.
    fn step(&mut self, world: &mut SimWorld, spawn: &mut Vec<Box<dyn Context>>) -> Result<Step>;

    /// Daemons (proxy workers) never finish; a run ends when every
    /// non-daemon context is done and all daemons are idle.
    fn is_daemon(&self) -> bool {
        false
    }

    fn ready_time(&self) -> f64 {
        0.0
    }
}

/// Order in which contexts took steps.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    pub labels: Vec<String>,
    pub steps: Vec<u32>,
}

struct Slot {
    ctx: Box<dyn Context>,
    /// Progress generation at which this context last reported `Blocked`.
    blocked_at: Option<u64>,
}

/// Runs `contexts` to completion or deadlock.
pub fn run_schedule(
    world: &mut SimWorld,
    contexts: Vec<Box<dyn Context>>,
    mode: ScheduleMode,
) -> Result<Trace> {
    let mut trace = Trace::default();
    let mut slots: Vec<Option<Slot>> = Vec::new();
    let mut spawned: Vec<Box<dyn Context>> = contexts;
    let mut generation = 0u64;
    let mut cursor = 0usize;
    let mut candidates = Vec::new();

    for _ in 0..MAX_STEPS {
        for ctx in spawned.drain(..) {
            trace.labels.push(ctx.label());
            slots.push(Some(Slot {
                ctx,
                blocked_at: None,
            }));
        }

        candidates.clear();
        let mut live_workers = 0usize;
        for (i, slot) in slots.iter().enumerate() {
            let Some(slot) = slot else { continue };
            if !slot.ctx.is_daemon() {
                live_workers += 1;
            }
            if slot.blocked_at != Some(generation) {
                candidates.push(i);
            }
        }

        if candidates.is_empty() {
            if live_workers == 0 {
                return Ok(trace);
            }
            let blocked = slots
                .iter()
                .flatten()
                .filter(|s| !s.ctx.is_daemon())
                .map(|s| s.ctx.label())
                .collect();
            return Err(Error::Deadlock { blocked });
        }

        let pick = match mode {
            ScheduleMode::RoundRobin => {
                let pos = candidates.partition_point(|&i| i < cursor);
                let i = candidates.get(pos).copied().unwrap_or(candidates[0]);
                cursor = i + 1;
                i
            }
            ScheduleMode::SeededRandom => candidates[world.rng().gen_range(0..candidates.len())],
            ScheduleMode::Timed => {
                let mut best = candidates[0];
                let mut best_t = f64::INFINITY;
                for &i in &candidates {
                    let t = slots[i].as_ref().map_or(f64::INFINITY, |s| s.ctx.ready_time());
                    if t < best_t {
                        best_t = t;
                        best = i;
                    }
                }
                best
            }
        };

        let slot = slots[pick].as_mut().expect("candidate slot is live");
        match slot.ctx.step(world, &mut spawned)? {
            Step::Ran => {
                trace.steps.push(pick as u32);
                generation += 1;
            }
            Step::Blocked => slot.blocked_at = Some(generation),
            Step::Done => {
                trace.steps.push(pick as u32);
                slots[pick] = None;
                generation += 1;
            }
        }
        if !spawned.is_empty() {
            generation += 1;
        }
    }
    Err(Error::Deadlock {
        blocked: vec![format!("step budget of {MAX_STEPS} exhausted")],
    })
}

/// A context built from a list of poll functions run in order; each returns
/// `true` once its action has completed.
pub struct ScriptContext {
    label: String,
    pub actor: super::Actor,
    steps: Vec<ScriptStep>,
    pc: usize,
}

pub type ScriptStep = Box<dyn FnMut(&mut SimWorld, &mut super::Actor) -> Result<bool>>;

impl ScriptContext {
    pub fn new(label: impl Into<String>, ctx: super::CtxId, steps: Vec<ScriptStep>) -> Self {
        Self {
            label: label.into(),
            actor: super::Actor::new(ctx),
            steps,
            pc: 0,
        }
    }
}

impl Context for ScriptContext {
    fn label(&self) -> String {
        self.label.clone()
    }

    fn step(&mut self, world: &mut SimWorld, _spawn: &mut Vec<Box<dyn Context>>) -> Result<Step> {
        let Some(f) = self.steps.get_mut(self.pc) else {
            return Ok(Step::Done);
        };
        if f(world, &mut self.actor)? {
            self.pc += 1;
            Ok(if self.pc == self.steps.len() {
                Step::Done
            } else {
                Step::Ran
            })
        } else {
            Ok(Step::Blocked)
        }
    }

    fn ready_time(&self) -> f64 {
        self.actor.now
    }
}
