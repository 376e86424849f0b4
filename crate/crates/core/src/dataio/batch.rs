use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Composition of each training batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub labeled_per_batch: usize,
    pub unlabeled_per_batch: usize,
    pub seed: u64,
}

impl BatchPlan {
    pub fn validate(&self) -> Result<()> {
        if self.unlabeled_per_batch == 0 {
            return Err(Error::key(
                "unlabeled-per-batch",
                "the sample stream needs a positive batch size",
            ));
        }
        Ok(())
    }
}

/// One optimizer step worth of sample ids. The two lists may share ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub labeled: Vec<u64>,
    pub unlabeled: Vec<u64>,
}

/// Deterministic two-stream batch source.
///
/// Every epoch visits each id of the full stream exactly once in a fresh
/// shuffled order; the labeled stream is an endless cycle over a shuffled copy
/// of the labeled ids, reshuffled each time it wraps.
#[derive(Debug, Clone)]
pub struct BatchScheduler {
    all: Vec<u64>,
    labeled: Vec<u64>,
    labeled_cursor: usize,
    plan: BatchPlan,
    rng: ChaCha8Rng,
}

impl BatchScheduler {
    pub fn new(labeled: &[u64], all: &[u64], plan: BatchPlan) -> Result<Self> {
        plan.validate()?;
        if all.is_empty() {
            return Err(Error::Input("batch scheduler needs a non-empty sample stream".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(plan.seed);
        let mut labeled = labeled.to_vec();
        labeled.shuffle(&mut rng);
        Ok(BatchScheduler {
            all: all.to_vec(),
            labeled,
            labeled_cursor: 0,
            plan,
            rng,
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.all.len().div_ceil(self.plan.unlabeled_per_batch)
    }

    fn next_labeled(&mut self) -> Option<u64> {
        if self.labeled.is_empty() {
            return None;
        }
        if self.labeled_cursor == self.labeled.len() {
            self.labeled.shuffle(&mut self.rng);
            self.labeled_cursor = 0;
        }
        let id = self.labeled[self.labeled_cursor];
        self.labeled_cursor += 1;
        Some(id)
    }

    pub fn next_epoch(&mut self) -> Vec<Batch> {
        let mut order = self.all.clone();
        order.shuffle(&mut self.rng);
        let chunks: Vec<Vec<u64>> = order
            .chunks(self.plan.unlabeled_per_batch)
            .map(<[u64]>::to_vec)
            .collect();
        chunks
            .into_iter()
            .map(|unlabeled| {
                let labeled = (0..self.plan.labeled_per_batch)
                    .map_while(|_| self.next_labeled())
                    .collect();
                Batch { labeled, unlabeled }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan(l: usize, u: usize) -> BatchPlan {
        BatchPlan {
            labeled_per_batch: l,
            unlabeled_per_batch: u,
            seed: 42,
        }
    }

    #[test]
    fn ten_ids_in_batches_of_four() {
        let all: Vec<u64> = (0..10).collect();
        let mut s = BatchScheduler::new(&all[..3], &all, plan(2, 4)).unwrap();
        let epoch = s.next_epoch();
        assert_eq!(epoch.len(), 3);
        assert_eq!(s.batches_per_epoch(), 3);
        let mut seen: Vec<u64> = epoch.iter().flat_map(|b| b.unlabeled.clone()).collect();
        seen.sort_unstable();
        assert_eq!(seen, all);
        assert!(epoch.iter().all(|b| b.labeled.len() == 2));
    }

    #[test]
    fn overlapping_streams_allowed() {
        let all: Vec<u64> = (0..12).collect();
        let mut s = BatchScheduler::new(&all, &all, plan(4, 4)).unwrap();
        for b in s.next_epoch() {
            assert_eq!(b.labeled.len(), 4);
            assert!(b.labeled.iter().all(|id| all.contains(id)));
        }
    }

    #[test]
    fn labeled_stream_cycles_through_every_id() {
        let all: Vec<u64> = (0..20).collect();
        let labeled = [3u64, 5, 8];
        let mut s = BatchScheduler::new(&labeled, &all, plan(2, 5)).unwrap();
        // 4 batches x 2 = 8 draws: two full cycles over 3 ids plus two more
        let drawn: Vec<u64> = s.next_epoch().into_iter().flat_map(|b| b.labeled).collect();
        let mut first: Vec<u64> = drawn[..3].to_vec();
        first.sort_unstable();
        assert_eq!(first, labeled);
        let mut second: Vec<u64> = drawn[3..6].to_vec();
        second.sort_unstable();
        assert_eq!(second, labeled);
    }

    #[test]
    fn same_seed_same_sequence() {
        let all: Vec<u64> = (0..37).collect();
        let mut a = BatchScheduler::new(&all[..10], &all, plan(3, 8)).unwrap();
        let mut b = BatchScheduler::new(&all[..10], &all, plan(3, 8)).unwrap();
        for _ in 0..2 {
            assert_eq!(a.next_epoch(), b.next_epoch());
        }
    }

    #[test]
    fn empty_labeled_set_is_legal_and_empty_all_is_not() {
        let all: Vec<u64> = (0..5).collect();
        let mut s = BatchScheduler::new(&[], &all, plan(3, 2)).unwrap();
        assert!(s.next_epoch().iter().all(|b| b.labeled.is_empty()));
        assert!(BatchScheduler::new(&[], &[], plan(3, 2)).is_err());
    }
}
