use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Seeded batching over item groups. A group (for example the paragraphs
/// of one document under shared normalization) always lands in a single
/// batch; a group larger than the batch size forms a batch of its own.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batches {
    groups: Vec<Vec<usize>>,
    batch_size: usize,
}

impl Batches {
    pub fn new(groups: Vec<Vec<usize>>, batch_size: usize) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::invalid("batch_iterator", "batch size must be at least 1"));
        }
        Ok(Batches { groups, batch_size })
    }

    pub fn singletons(n: usize, batch_size: usize) -> Result<Self> {
        Self::new((0..n).map(|i| vec![i]).collect(), batch_size)
    }

    /// Item indices for one epoch: groups shuffled with a stream derived
    /// from `(seed, epoch)`, packed greedily, final partial batch kept.
    pub fn epoch(&self, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let mut order: Vec<&Vec<usize>> = self.groups.iter().collect();
        order.shuffle(&mut rng);
        let mut batches = Vec::new();
        let mut current: Vec<usize> = Vec::new();
        for g in order {
            if !current.is_empty() && current.len() + g.len() > self.batch_size {
                batches.push(std::mem::take(&mut current));
            }
            current.extend(g);
        }
        if !current.is_empty() {
            batches.push(current);
        }
        batches
    }
}

/// One shuffled epoch over `items` in batches of `batch_size`.
pub fn batch_iterator<T>(items: &[T], batch_size: usize, seed: u64) -> Result<impl Iterator<Item = Vec<&T>>> {
    let batches = Batches::singletons(items.len(), batch_size)?.epoch(seed, 0);
    Ok(batches.into_iter().map(move |b| b.into_iter().map(|i| &items[i]).collect()))
}
