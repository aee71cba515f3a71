//! Collective algorithm library, selection, and a one-call facade.

mod algos;
pub mod oracle;
mod select;

use std::fmt;

pub use algos::ring_chunk;
pub use select::{select_algorithm, AlgoDescriptor, Scope, Selector, Thresholds, GB, KB, MB};

use crate::channels::Protocol;
use crate::element::{DType, Element};
use crate::executor::{ExecOptions, RunResult, Runtime};
use crate::lowering::{lower, LoweringParams, PassConfig, ProgramGraph};
use crate::plan::{ChannelType, Collective, ExecutionPlan};
use crate::sim::SimWorld;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algo {
    OnePa,
    TwoPaLl,
    TwoPaHb,
    TwoPaPort,
    Switch2pa,
    TwoPr,
    TwoPhLl,
    TwoPhHb,
    RingRs,
    RingAg,
    AllpairsAg,
}

impl Algo {
    pub const ALL: [Algo; 11] = [
        Algo::OnePa,
        Algo::TwoPaLl,
        Algo::TwoPaHb,
        Algo::TwoPaPort,
        Algo::Switch2pa,
        Algo::TwoPr,
        Algo::TwoPhLl,
        Algo::TwoPhHb,
        Algo::RingRs,
        Algo::RingAg,
        Algo::AllpairsAg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algo::OnePa => "1pa",
            Algo::TwoPaLl => "2pa-ll",
            Algo::TwoPaHb => "2pa-hb",
            Algo::TwoPaPort => "2pa-port",
            Algo::Switch2pa => "switch_2pa",
            Algo::TwoPr => "2pr",
            Algo::TwoPhLl => "2ph-ll",
            Algo::TwoPhHb => "2ph-hb",
            Algo::RingRs => "ring_rs",
            Algo::RingAg => "ring_ag",
            Algo::AllpairsAg => "allpairs_ag",
        }
    }

    /// Algorithm family without the protocol/channel variant.
    pub fn family(self) -> &'static str {
        match self {
            Algo::TwoPaLl | Algo::TwoPaHb | Algo::TwoPaPort => "2pa",
            Algo::TwoPhLl | Algo::TwoPhHb => "2ph",
            other => other.name(),
        }
    }

    pub fn collective(self) -> Collective {
        algos::collective_of(self)
    }

    pub fn protocol(self) -> Protocol {
        algos::protocol_of(self)
    }

    /// Channel type carrying the bulk of the traffic.
    pub fn channel(self) -> ChannelType {
        match self {
            Algo::OnePa | Algo::TwoPaLl | Algo::TwoPaHb | Algo::AllpairsAg => ChannelType::Memory,
            Algo::Switch2pa => ChannelType::Switch,
            _ => ChannelType::Port,
        }
    }

    /// Whether the algorithm runs on `nodes` nodes. Memory and switch
    /// channels stay inside one node; hierarchical ones need several.
    pub fn supports(self, nodes: usize) -> bool {
        match self {
            Algo::TwoPhLl | Algo::TwoPhHb => nodes > 1,
            Algo::OnePa | Algo::TwoPaLl | Algo::TwoPaHb | Algo::Switch2pa | Algo::AllpairsAg => nodes == 1,
            Algo::TwoPaPort | Algo::TwoPr | Algo::RingRs | Algo::RingAg => true,
        }
    }

    /// Element count the full vector must be a multiple of.
    pub fn multiple(self, num_ranks: usize, gpus_per_node: usize) -> usize {
        match self {
            Algo::OnePa => 1,
            Algo::RingRs | Algo::TwoPr => 2 * num_ranks,
            Algo::TwoPhLl => gpus_per_node.max(1),
            _ => num_ranks,
        }
        .max(1)
    }

    /// `(input, output)` buffer lengths for a full vector of `elems`.
    pub fn io_elems(self, elems: usize, num_ranks: usize) -> (usize, usize) {
        match self.collective() {
            Collective::ReduceScatter => (elems, elems / num_ranks),
            Collective::AllGather => (elems / num_ranks, elems),
            _ => (elems, elems),
        }
    }

    /// Records the algorithm's program.
    pub fn build(self, p: &AlgoParams) -> Result<ProgramGraph> {
        match self {
            Algo::OnePa => algos::one_pa(p),
            Algo::TwoPaLl => algos::two_pa_ll(p),
            Algo::TwoPaHb => algos::two_pa_hb(p),
            Algo::TwoPaPort => algos::two_pa_port(p),
            Algo::Switch2pa => algos::switch_2pa(p),
            Algo::TwoPr => algos::two_pr(p),
            Algo::TwoPhLl => algos::two_ph_ll(p),
            Algo::TwoPhHb => algos::two_ph_hb(p),
            Algo::RingRs => algos::ring_rs(p),
            Algo::RingAg => algos::ring_ag(p),
            Algo::AllpairsAg => algos::allpairs_ag(p),
        }
    }
}

impl fmt::Display for Algo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algo {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Algo::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AlgoParams {
    pub num_ranks: usize,
    /// Length of the full vector (the gathered vector for AllGather).
    pub elems: usize,
    pub dtype: DType,
    pub gpus_per_node: usize,
}

impl AlgoParams {
    pub fn new(num_ranks: usize, elems: usize, dtype: DType) -> Self {
        Self {
            num_ranks,
            elems,
            dtype,
            gpus_per_node: num_ranks,
        }
    }

    pub fn on(world: &SimWorld, elems: usize, dtype: DType) -> Self {
        Self {
            num_ranks: world.num_ranks(),
            elems,
            dtype,
            gpus_per_node: world.spec().gpus_per_node,
        }
    }

    pub fn lowering(&self, algo: Algo) -> LoweringParams {
        LoweringParams::new(self.num_ranks, self.elems, self.dtype, algo.protocol())
    }
}

/// Builds and lowers `algo`.
pub fn build_plan(algo: Algo, p: &AlgoParams, passes: PassConfig) -> Result<ExecutionPlan> {
    let g = algo.build(p)?;
    lower(&g, &p.lowering(algo), passes)
}

/// How a logical collective maps onto an algorithm's padded buffers. Pads
/// are zero; every chunk is padded at its own end so chunk `k` of the
/// logical vector stays chunk `k` of the padded one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub collective: Collective,
    pub num_ranks: usize,
    /// Logical per-rank input length.
    pub logical: usize,
    /// Full padded vector length handed to the builder.
    pub padded: usize,
}

impl Layout {
    pub fn new(algo: Algo, num_ranks: usize, gpus_per_node: usize, logical: usize) -> Self {
        let n = num_ranks.max(1);
        let m = algo.multiple(n, gpus_per_node);
        let padded = match algo.collective() {
            Collective::AllReduce | Collective::Custom => logical.max(1).next_multiple_of(m),
            Collective::ReduceScatter => {
                let chunk = logical.div_ceil(n).max(1);
                n * chunk.next_multiple_of(m.div_ceil(n))
            }
            Collective::AllGather => n * logical.max(1).next_multiple_of(m.div_ceil(n)),
        };
        Self {
            collective: algo.collective(),
            num_ranks: n,
            logical,
            padded,
        }
    }

    /// Bytes of the logical message, as used for selection.
    pub fn bytes(collective: Collective, num_ranks: usize, logical: usize, dtype: DType) -> u64 {
        let elems = match collective {
            Collective::AllGather => num_ranks * logical,
            _ => logical,
        };
        (elems * dtype.size()) as u64
    }

    fn logical_chunk(&self) -> usize {
        self.logical.div_ceil(self.num_ranks)
    }

    pub fn pad_input<T: Element>(&self, x: &[T]) -> Vec<T> {
        let n = self.num_ranks;
        match self.collective {
            Collective::ReduceScatter => {
                let (lc, pc) = (self.logical_chunk(), self.padded / n);
                let mut out = vec![T::zero(); self.padded];
                for k in 0..n {
                    let lo = (k * lc).min(x.len());
                    let hi = ((k + 1) * lc).min(x.len());
                    out[k * pc..k * pc + hi - lo].copy_from_slice(&x[lo..hi]);
                }
                out
            }
            Collective::AllGather => {
                let mut out = vec![T::zero(); self.padded / n];
                out[..x.len()].copy_from_slice(x);
                out
            }
            _ => {
                let mut out = vec![T::zero(); self.padded];
                out[..x.len()].copy_from_slice(x);
                out
            }
        }
    }

    pub fn unpad_output<T: Element>(&self, rank: usize, y: &[T]) -> Vec<T> {
        let n = self.num_ranks;
        match self.collective {
            Collective::ReduceScatter => {
                let lc = self.logical_chunk();
                let lo = (rank * lc).min(self.logical);
                let hi = ((rank + 1) * lc).min(self.logical);
                y[..hi - lo].to_vec()
            }
            Collective::AllGather => {
                let pc = self.padded / n;
                (0..n).flat_map(|k| y[k * pc..k * pc + self.logical].iter().copied()).collect()
            }
            _ => y[..self.logical].to_vec(),
        }
    }
}

/// Runs `algo` on logical per-rank `inputs` (padding as needed) and returns
/// the run with unpadded outputs.
pub fn run_algorithm<T: Element>(
    algo: Algo,
    inputs: &[Vec<T>],
    world: SimWorld,
    passes: PassConfig,
    opts: ExecOptions,
) -> Result<RunResult<T>> {
    let n = world.num_ranks();
    if inputs.len() != n {
        return Err(Error::Shape(format!("{} inputs for {n} ranks", inputs.len())));
    }
    let logical = inputs[0].len();
    if inputs.iter().any(|x| x.len() != logical) {
        return Err(Error::Shape("ranks hold inputs of different lengths".into()));
    }
    let gpn = world.spec().gpus_per_node;
    let layout = Layout::new(algo, n, gpn, logical);
    let params = AlgoParams::on(&world, layout.padded, T::DTYPE);
    let plan = build_plan(algo, &params, passes)?;
    let padded: Vec<Vec<T>> = inputs.iter().map(|x| layout.pad_input(x)).collect();
    let mut rt = Runtime::init(plan, world)?;
    let mut res = rt.execute(&padded, opts)?;
    res.outputs = res
        .outputs
        .iter()
        .enumerate()
        .map(|(r, y)| layout.unpad_output(r, y))
        .collect();
    Ok(res)
}

/// Selects, builds, lowers and runs a collective; returns per-rank outputs.
pub fn collective<T: Element>(kind: Collective, inputs: &[Vec<T>], world: SimWorld, sel: &Selector) -> Result<Vec<Vec<T>>> {
    let logical = inputs.first().map_or(0, Vec::len);
    let bytes = Layout::bytes(kind, world.num_ranks(), logical, T::DTYPE);
    let desc = select_algorithm(kind, bytes, world.topology(), sel)?;
    Ok(run_algorithm(desc.algo, inputs, world, PassConfig::SyncFuse, ExecOptions::default())?.outputs)
}
