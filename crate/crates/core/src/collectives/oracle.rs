//! Brute-force reference results.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::element::Element;

/// Seeded per-rank inputs with small integer values, so f32 sums stay exact.
pub fn sample_inputs<T: Element>(num_ranks: usize, len: usize, seed: u64) -> Vec<Vec<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..num_ranks)
        .map(|_| {
            (0..len)
                .map(|_| T::from(rng.gen_range(-1000i32..1000)).expect("small integers fit every dtype"))
                .collect()
        })
        .collect()
}

/// Oracle for `collective`; `None` for custom plans.
pub fn expected<T: Element>(collective: crate::plan::Collective, inputs: &[Vec<T>]) -> Option<Vec<Vec<T>>> {
    use crate::plan::Collective::*;
    match collective {
        AllReduce => Some(all_reduce(inputs)),
        ReduceScatter => Some(reduce_scatter(inputs)),
        AllGather => Some(all_gather(inputs)),
        Custom => None,
    }
}

/// Elementwise sum of every rank's input, on every rank.
pub fn all_reduce<T: Element>(inputs: &[Vec<T>]) -> Vec<Vec<T>> {
    let sum = sum(inputs);
    vec![sum; inputs.len()]
}

/// Rank `r` gets elements `[r·k, (r+1)·k)` of the sum, `k = ceil(len / N)`,
/// clipped to the vector.
pub fn reduce_scatter<T: Element>(inputs: &[Vec<T>]) -> Vec<Vec<T>> {
    let sum = sum(inputs);
    let n = inputs.len();
    let k = sum.len().div_ceil(n.max(1));
    (0..n)
        .map(|r| {
            let lo = (r * k).min(sum.len());
            let hi = ((r + 1) * k).min(sum.len());
            sum[lo..hi].to_vec()
        })
        .collect()
}

/// Concatenation of every rank's input, on every rank.
pub fn all_gather<T: Element>(inputs: &[Vec<T>]) -> Vec<Vec<T>> {
    let cat: Vec<T> = inputs.iter().flatten().copied().collect();
    vec![cat; inputs.len()]
}

fn sum<T: Element>(inputs: &[Vec<T>]) -> Vec<T> {
    let len = inputs.first().map_or(0, Vec::len);
    (0..len)
        .map(|i| inputs.iter().fold(T::zero(), |acc, x| acc.sum(x[i])))
        .collect()
}
