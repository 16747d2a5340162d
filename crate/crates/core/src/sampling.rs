//! Distributed tau-nice sampling: each of `c` nodes independently picks
//! `tau` of its `s` owned coordinates uniformly at random; the union is
//! the sampled set for one iteration.
//!
//! Reproducibility contract: the subset drawn by node `l` at iteration
//! `k` depends only on `(master_seed, l, k)`. Per-draw generators are
//! derived by a counter-based construction (the tuple is the ChaCha key),
//! so single-process and multi-worker runs sample identically and draws
//! for distinct nodes can happen concurrently with no shared state.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::sparsemat::Partition;

#[derive(Debug, Error, PartialEq)]
pub enum SamplingError {
    #[error("tau = {tau} out of range; need 1 <= tau <= s = {s}")]
    TauOutOfRange { tau: usize, s: usize },
    #[error("sampling support has {support} outcomes, above the enumeration cap {cap}")]
    TooLargeToEnumerate { support: u128, cap: u128 },
}

/// One drawn distributed sample: per-node sorted index sets, each of
/// size `tau` and contained in its node's block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistributedSample {
    pub iteration: u64,
    /// `sets[l]` holds the coordinates sampled by node `l`, ascending.
    pub sets: Vec<Vec<usize>>,
}

impl DistributedSample {
    /// Total number of sampled coordinates, `c * tau`.
    pub fn len(&self) -> usize {
        self.sets.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All sampled coordinates in ascending order (blocks are contiguous).
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.sets.iter().flatten().copied()
    }
}

fn draw_rng(master_seed: u64, node: u64, iteration: u64) -> ChaCha8Rng {
    let mut seed = [0u8; 32];
    seed[0..8].copy_from_slice(&master_seed.to_le_bytes());
    seed[8..16].copy_from_slice(&node.to_le_bytes());
    seed[16..24].copy_from_slice(&iteration.to_le_bytes());
    seed[24..32].copy_from_slice(b"tau-nice");
    ChaCha8Rng::from_seed(seed)
}

/// Sampler for a fixed partition, `tau`, and master seed.
///
/// Holds one reusable index buffer per node; each draw performs a partial
/// Fisher-Yates shuffle (`tau` swaps) and then undoes the swaps, so the
/// buffer stays canonical and no allocation happens per draw.
#[derive(Debug, Clone)]
pub struct DistributedSampler {
    partition: Partition,
    tau: usize,
    master_seed: u64,
    buffers: Vec<Vec<usize>>,
}

impl DistributedSampler {
    pub fn new(
        partition: Partition,
        tau: usize,
        master_seed: u64,
    ) -> Result<Self, SamplingError> {
        if tau < 1 || tau > partition.s() {
            return Err(SamplingError::TauOutOfRange {
                tau,
                s: partition.s(),
            });
        }
        let buffers = (0..partition.c())
            .map(|l| partition.block(l).collect())
            .collect();
        Ok(Self {
            partition,
            tau,
            master_seed,
            buffers,
        })
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn partition(&self) -> &Partition {
        &self.partition
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    /// Draws node `l`'s subset for `iteration`, sorted ascending.
    pub fn draw_node(&mut self, l: usize, iteration: u64) -> Vec<usize> {
        let s = self.partition.s();
        let tau = self.tau;
        let buf = &mut self.buffers[l];
        debug_assert_eq!(buf.len(), s);
        let mut rng = draw_rng(self.master_seed, l as u64, iteration);
        let mut swaps = Vec::with_capacity(tau);
        for t in 0..tau {
            let j = rng.gen_range(t..s);
            buf.swap(t, j);
            swaps.push((t, j));
        }
        let mut out: Vec<usize> = buf[..tau].to_vec();
        // Undo in reverse so the buffer is canonical for the next draw.
        for &(t, j) in swaps.iter().rev() {
            buf.swap(t, j);
        }
        out.sort_unstable();
        out
    }

    /// Draws the full distributed sample for `iteration`.
    pub fn draw(&mut self, iteration: u64) -> DistributedSample {
        let sets = (0..self.partition.c())
            .map(|l| self.draw_node(l, iteration))
            .collect();
        DistributedSample { iteration, sets }
    }
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Exhaustively enumerates the sampling's support with probabilities;
/// the uniform product measure assigns each outcome `prod_l 1/C(s,tau)`.
///
/// Intended as a test oracle; refuses supports larger than `10^6`.
pub fn enumerate_all(
    partition: &Partition,
    tau: usize,
) -> Result<Vec<(DistributedSample, f64)>, SamplingError> {
    const CAP: u128 = 1_000_000;
    if tau < 1 || tau > partition.s() {
        return Err(SamplingError::TauOutOfRange {
            tau,
            s: partition.s(),
        });
    }
    let per_node = binomial(partition.s(), tau);
    let support = per_node.checked_pow(partition.c() as u32).unwrap_or(u128::MAX);
    if support > CAP {
        return Err(SamplingError::TooLargeToEnumerate { support, cap: CAP });
    }

    // All tau-subsets of one block, lexicographic.
    let node_subsets: Vec<Vec<Vec<usize>>> = (0..partition.c())
        .map(|l| {
            let block: Vec<usize> = partition.block(l).collect();
            subsets(&block, tau)
        })
        .collect();
    let prob = 1.0 / per_node as f64 / (per_node as f64).powi(partition.c() as i32 - 1);

    let mut out = Vec::with_capacity(support as usize);
    let mut picks = vec![0usize; partition.c()];
    loop {
        let sets: Vec<Vec<usize>> = picks
            .iter()
            .enumerate()
            .map(|(l, &k)| node_subsets[l][k].clone())
            .collect();
        out.push((DistributedSample { iteration: 0, sets }, prob));
        // Odometer increment over the product space.
        let mut l = partition.c();
        loop {
            if l == 0 {
                return Ok(out);
            }
            l -= 1;
            picks[l] += 1;
            if picks[l] < node_subsets[l].len() {
                break;
            }
            picks[l] = 0;
        }
    }
}

fn subsets(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.iter().map(|&i| items[i]).collect());
        // Next combination in lexicographic order.
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] != i + items.len() - k {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}
