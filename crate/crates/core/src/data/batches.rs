use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::windows::{Class, LabeledWindow};

pub const BATCH_SIZE: usize = 32;
pub const PER_CLASS: usize = BATCH_SIZE / 2;

/// Indices into the window list: the first half preictal, the second interictal.
pub type Batch = Vec<usize>;

/// Endless stream of class-balanced batches.
///
/// Each epoch has `ceil(majority / 16)` batches. Each class draws from its
/// own shuffled order without replacement and reshuffles whenever it runs out,
/// so the majority class is seen once per epoch and the minority class is
/// recycled to keep up.
#[derive(Debug, Clone)]
pub struct BalancedBatches {
    preictal: Vec<usize>,
    interictal: Vec<usize>,
    rng: ChaCha8Rng,
}

fn draw(pool: &[usize], n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut order = pool.to_vec();
        order.shuffle(rng);
        let take = (n - out.len()).min(order.len());
        out.extend_from_slice(&order[..take]);
    }
    out
}

impl BalancedBatches {
    pub fn new(windows: &[LabeledWindow], seed: u64) -> Result<Self> {
        Self::from_classes(windows.iter().map(|w| w.class), seed)
    }

    pub fn from_classes(classes: impl IntoIterator<Item = Class>, seed: u64) -> Result<Self> {
        let (mut preictal, mut interictal) = (Vec::new(), Vec::new());
        for (i, c) in classes.into_iter().enumerate() {
            match c {
                Class::Preictal => preictal.push(i),
                Class::Interictal => interictal.push(i),
            }
        }
        if preictal.is_empty() || interictal.is_empty() {
            return Err(Error::InvalidDataset(format!(
                "balanced batches need both classes ({} preictal, {} interictal)",
                preictal.len(),
                interictal.len()
            )));
        }
        Ok(BalancedBatches {
            preictal,
            interictal,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.preictal.len().max(self.interictal.len()).div_ceil(PER_CLASS)
    }

    /// The batches of the next epoch.
    pub fn next_epoch(&mut self) -> Vec<Batch> {
        let n = self.batches_per_epoch();
        let pre = draw(&self.preictal, n * PER_CLASS, &mut self.rng);
        let inter = draw(&self.interictal, n * PER_CLASS, &mut self.rng);
        pre.chunks_exact(PER_CLASS)
            .zip(inter.chunks_exact(PER_CLASS))
            .map(|(p, i)| p.iter().chain(i).copied().collect())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn classes(pre: usize, inter: usize) -> Vec<Class> {
        let mut v = vec![Class::Preictal; pre];
        v.extend(vec![Class::Interictal; inter]);
        v
    }

    #[test]
    fn every_batch_is_sixteen_and_sixteen() {
        let c = classes(100, 500);
        let mut b = BalancedBatches::from_classes(c.iter().copied(), 3).unwrap();
        assert_eq!(b.batches_per_epoch(), 32);
        for _ in 0..3 {
            let epoch = b.next_epoch();
            assert_eq!(epoch.len(), 32);
            let mut seen_inter = HashSet::new();
            for batch in &epoch {
                assert_eq!(batch.len(), 32);
                assert!(batch[..16].iter().all(|&i| c[i] == Class::Preictal));
                assert!(batch[16..].iter().all(|&i| c[i] == Class::Interictal));
                seen_inter.extend(batch[16..].iter().copied());
            }
            assert_eq!(seen_inter.len(), 500, "majority class covered every epoch");
        }
    }

    #[test]
    fn equal_classes_of_sixteen_make_one_batch() {
        let c = classes(16, 16);
        let mut b = BalancedBatches::from_classes(c, 1).unwrap();
        let epoch = b.next_epoch();
        assert_eq!(epoch.len(), 1);
        let mut all = epoch[0].clone();
        all.sort_unstable();
        assert_eq!(all, (0..32).collect::<Vec<_>>());
    }

    #[test]
    fn deterministic_for_a_seed() {
        let c = classes(40, 90);
        let mut a = BalancedBatches::from_classes(c.iter().copied(), 9).unwrap();
        let mut b = BalancedBatches::from_classes(c.iter().copied(), 9).unwrap();
        let mut d = BalancedBatches::from_classes(c.iter().copied(), 10).unwrap();
        let (ea, eb, ed) = (a.next_epoch(), b.next_epoch(), d.next_epoch());
        assert_eq!(ea, eb);
        assert_ne!(ea, ed);
        assert_ne!(ea, a.next_epoch(), "reshuffled each epoch");
    }

    #[test]
    fn single_class_is_rejected() {
        assert!(matches!(
            BalancedBatches::from_classes(classes(0, 10), 1),
            Err(Error::InvalidDataset(_))
        ));
    }

    #[test]
    fn tiny_minority_is_recycled() {
        let c = classes(3, 40);
        let mut b = BalancedBatches::from_classes(c.iter().copied(), 2).unwrap();
        for batch in b.next_epoch() {
            assert!(batch[..16].iter().all(|&i| i < 3));
            assert_eq!(batch.len(), 32);
        }
    }
}
