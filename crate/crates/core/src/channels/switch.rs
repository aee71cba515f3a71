//! Switch channel: multimem reduce and broadcast across a rank group.

use std::collections::BTreeMap;

use crate::element::{reduce_bytes_into, DType};
use crate::sim::{Actor, IntraKind, RankId, RegionId, SimWorld};
use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct SwitchChannel {
    pub ranks: Vec<RankId>,
    /// The region behind the multimem address on each member.
    pub multimem: BTreeMap<RankId, RegionId>,
    /// Caller-side buffer reduce results land in and broadcasts read from.
    pub local: RegionId,
}

impl SwitchChannel {
    pub fn new(world: &SimWorld, multimem: BTreeMap<RankId, RegionId>, local: RegionId) -> Result<Self> {
        let ranks: Vec<RankId> = multimem.keys().copied().collect();
        let Some(&first) = ranks.first() else {
            return Err(Error::Topology("switch channel without members".into()));
        };
        let topo = world.topology();
        if topo.intra_kind != IntraKind::SwitchAttached {
            return Err(Error::Topology("switch channels need a switch-attached node".into()));
        }
        if ranks.iter().any(|&r| topo.node_of(r) != topo.node_of(first)) {
            return Err(Error::Topology("switch channel spans nodes".into()));
        }
        let len = world.region(multimem[&first]).len;
        for (&r, &reg) in &multimem {
            let region = world.region(reg);
            if region.rank != r {
                return Err(Error::Invalid(format!("multimem region {} is not on rank {r}", reg.0)));
            }
            if region.len != len {
                return Err(Error::Invalid("multimem regions differ in length".into()));
            }
        }
        Ok(Self { ranks, multimem, local })
    }

    pub fn caller(&self, world: &SimWorld) -> RankId {
        world.region(self.local).rank
    }

    /// `local[dst_off + e] = sum over members of member[src_off + e]`.
    pub fn reduce(
        &self,
        world: &mut SimWorld,
        actor: &mut Actor,
        dst_off: usize,
        src_off: usize,
        size: usize,
        dtype: DType,
    ) -> Result<()> {
        if !size.is_multiple_of(dtype.size()) {
            return Err(Error::BadAlign(dtype.size()));
        }
        let members: Vec<RegionId> = self.multimem.values().copied().collect();
        let mut acc = vec![0u8; size];
        for reg in members {
            let part = world.read(actor.ctx, reg, src_off, size)?;
            reduce_bytes_into(dtype, &mut acc, &part);
        }
        world.write(actor.ctx, self.local, dst_off, &acc)?;
        let caller = self.caller(world);
        actor.now = world.transfer_switch(&self.ranks, caller, size, actor.now, true);
        Ok(())
    }

    /// Stores `local[src_off..]` into every member at `dst_off`.
    pub fn broadcast(&self, world: &mut SimWorld, actor: &mut Actor, dst_off: usize, src_off: usize, size: usize) -> Result<()> {
        let data = world.read(actor.ctx, self.local, src_off, size)?;
        let members: Vec<RegionId> = self.multimem.values().copied().collect();
        for reg in members {
            world.write(actor.ctx, reg, dst_off, &data)?;
        }
        let caller = self.caller(world);
        actor.now = world.transfer_switch(&self.ranks, caller, size, actor.now, false);
        Ok(())
    }
}
