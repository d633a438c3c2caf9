use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

fn epoch_rng(seed: u64, epoch: usize, salt: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt);
    rng.set_stream(epoch as u64);
    rng
}

/// Shuffled index batches over `n` labeled samples. Each epoch is a fresh
/// permutation determined by `(seed, epoch)`; the last batch may be short.
#[derive(Clone, Debug)]
pub struct SegBatchPlan {
    n: usize,
    batch_size: usize,
    seed: u64,
}

pub fn seg_batches(n: usize, batch_size: usize, seed: u64) -> Result<SegBatchPlan> {
    if batch_size == 0 {
        return Err(Error::config("batch size must be at least 1"));
    }
    Ok(SegBatchPlan { n, batch_size, seed })
}

impl SegBatchPlan {
    pub fn batches_per_epoch(&self) -> usize {
        self.n.div_ceil(self.batch_size)
    }

    pub fn epoch(&self, epoch: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.n).collect();
        order.shuffle(&mut epoch_rng(self.seed, epoch, 0x5e6));
        order.chunks(self.batch_size).map(<[usize]>::to_vec).collect()
    }
}

/// Index plan for one adversarial mini-batch: the first half of the batch is
/// source (domain label 0), the second half target (domain label 1).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AdvBatch {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

impl AdvBatch {
    pub fn domain_labels(&self) -> Vec<f32> {
        let mut labels = vec![0.0; self.source.len()];
        labels.resize(self.source.len() + self.target.len(), 1.0);
        labels
    }
}

/// Balanced source/target batches. An epoch runs until the larger side is
/// exhausted once; the smaller side is drawn with replacement.
#[derive(Clone, Debug)]
pub struct AdvBatchPlan {
    n_source: usize,
    n_target: usize,
    half: usize,
    seed: u64,
}

pub fn adversarial_batches(n_source: usize, n_target: usize, batch_size: usize, seed: u64) -> Result<AdvBatchPlan> {
    if batch_size == 0 || !batch_size.is_multiple_of(2) {
        return Err(Error::config(format!(
            "adversarial batch size must be even and positive, got {batch_size}"
        )));
    }
    if n_source == 0 || n_target == 0 {
        return Err(Error::validation(
            "adversarial batches need both source and target samples",
        ));
    }
    Ok(AdvBatchPlan {
        n_source,
        n_target,
        half: batch_size / 2,
        seed,
    })
}

impl AdvBatchPlan {
    pub fn batches_per_epoch(&self) -> usize {
        self.n_source.max(self.n_target).div_ceil(self.half)
    }

    pub fn epoch(&self, epoch: usize) -> Vec<AdvBatch> {
        let mut rng = epoch_rng(self.seed, epoch, 0xad5);
        let steps = self.batches_per_epoch();
        let total = steps * self.half;
        let draw = |n: usize, rng: &mut ChaCha8Rng| -> Vec<usize> {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(rng);
            order.truncate(total);
            while order.len() < total {
                order.push(rng.random_range(0..n));
            }
            order
        };
        let source = draw(self.n_source, &mut rng);
        let target = draw(self.n_target, &mut rng);
        source
            .chunks(self.half)
            .zip(target.chunks(self.half))
            .map(|(s, t)| AdvBatch {
                source: s.to_vec(),
                target: t.to_vec(),
            })
            .collect()
    }
}
