//! Vector clocks over execution contexts.

use super::CtxId;

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct VectorClock {
    ticks: Vec<u32>,
}

impl VectorClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, ctx: CtxId) -> u32 {
        self.ticks.get(ctx.0).copied().unwrap_or(0)
    }

    pub fn set(&mut self, ctx: CtxId, value: u32) {
        if ctx.0 >= self.ticks.len() {
            self.ticks.resize(ctx.0 + 1, 0);
        }
        self.ticks[ctx.0] = value;
    }

    pub fn tick(&mut self, ctx: CtxId) {
        let v = self.get(ctx);
        self.set(ctx, v + 1);
    }

    /// Point-wise maximum.
    pub fn join(&mut self, other: &VectorClock) {
        if other.ticks.len() > self.ticks.len() {
            self.ticks.resize(other.ticks.len(), 0);
        }
        for (a, b) in self.ticks.iter_mut().zip(&other.ticks) {
            *a = (*a).max(*b);
        }
    }

    /// True when every component of `self` is `<=` the matching one in `other`.
    pub fn le(&self, other: &VectorClock) -> bool {
        self.ticks
            .iter()
            .enumerate()
            .all(|(i, &t)| t <= other.get(CtxId(i)))
    }

    /// An access stamped `(ctx, epoch)` happened before anything carrying this clock.
    pub fn covers(&self, ctx: CtxId, epoch: u32) -> bool {
        self.get(ctx) >= epoch
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn join_is_pointwise_max() {
        let mut a = VectorClock::new();
        a.set(CtxId(0), 3);
        let mut b = VectorClock::new();
        b.set(CtxId(1), 2);
        b.set(CtxId(0), 1);
        a.join(&b);
        assert_eq!(a.get(CtxId(0)), 3);
        assert_eq!(a.get(CtxId(1)), 2);
        assert!(b.le(&a));
        assert!(!a.le(&b));
    }
}
