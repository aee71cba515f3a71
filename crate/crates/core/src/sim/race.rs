//! Happens-before race detection at the granularity of primitive byte ranges.

use std::collections::BTreeMap;
use std::fmt;

use super::clock::VectorClock;
use super::{CtxId, RegionId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AccessKind {
    Read,
    Write,
}

/// One recorded access. `epoch` is the accessing context's own clock
/// component at the time of the access.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessRecord {
    pub ctx: CtxId,
    pub region: RegionId,
    pub lo: usize,
    pub hi: usize,
    pub kind: AccessKind,
    pub epoch: u32,
}

impl AccessRecord {
    fn overlap(&self, other: &AccessRecord) -> Option<(usize, usize)> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo < hi).then_some((lo, hi))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RaceReport {
    pub first: AccessRecord,
    pub second: AccessRecord,
    /// Overlapping byte range `[lo, hi)`.
    pub range: (usize, usize),
}

impl fmt::Display for RaceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "race on region {} bytes [{}, {}): {:?} by ctx {} vs {:?} by ctx {}",
            self.first.region.0,
            self.range.0,
            self.range.1,
            self.first.kind,
            self.first.ctx.0,
            self.second.kind,
            self.second.ctx.0
        )
    }
}

/// Per-region access history checked against vector clocks.
#[derive(Debug, Default)]
pub struct RaceDetector {
    history: BTreeMap<RegionId, Vec<AccessRecord>>,
    reports: Vec<RaceReport>,
}

impl RaceDetector {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records `rec`, made by a context whose current clock is `clock`, and
    /// returns the first conflict found against the stored history.
    pub fn record(&mut self, rec: AccessRecord, clock: &VectorClock) -> Option<RaceReport> {
        if rec.lo == rec.hi {
            return None;
        }
        let entries = self.history.entry(rec.region).or_default();
        let mut first = None;
        for prior in entries.iter() {
            if prior.ctx == rec.ctx {
                continue;
            }
            if prior.kind == AccessKind::Read && rec.kind == AccessKind::Read {
                continue;
            }
            let Some(range) = prior.overlap(&rec) else {
                continue;
            };
            if clock.covers(prior.ctx, prior.epoch) {
                continue;
            }
            let report = RaceReport {
                first: prior.clone(),
                second: rec.clone(),
                range,
            };
            if first.is_none() {
                first = Some(report.clone());
            }
            self.reports.push(report);
        }
        // Entries subsumed by this access can never yield a report the new
        // access would not also yield.
        entries.retain(|prior| {
            let inside = prior.lo >= rec.lo && prior.hi <= rec.hi;
            let ordered = prior.ctx == rec.ctx || clock.covers(prior.ctx, prior.epoch);
            let dominated = rec.kind == AccessKind::Write || prior.kind == AccessKind::Read;
            !(inside && ordered && dominated)
        });
        entries.push(rec);
        first
    }

    pub fn reports(&self) -> &[RaceReport] {
        &self.reports
    }

    pub fn clear(&mut self) {
        self.history.clear();
        self.reports.clear();
    }
}
