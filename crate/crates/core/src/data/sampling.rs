//! Uniform negative sampling over unconsumed items.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::InteractionTable;
use crate::error::{Error, Result};

/// Per-user consumed sets for repeated sampling during training.
#[derive(Debug, Clone)]
pub struct NegativeSampler {
    n_items: usize,
    consumed: Vec<Vec<usize>>,
}

impl NegativeSampler {
    pub fn new(train: &InteractionTable) -> Self {
        Self {
            n_items: train.n_items(),
            consumed: train.user_items(),
        }
    }

    pub fn consumed(&self, user: usize) -> &[usize] {
        &self.consumed[user]
    }

    pub fn is_consumed(&self, user: usize, item: usize) -> bool {
        self.consumed[user].binary_search(&item).is_ok()
    }

    /// Whether at least one item is available to `user` outside `exclude`.
    pub fn has_negatives(&self, user: usize, exclude: &[usize]) -> bool {
        (0..self.n_items).any(|i| !self.is_consumed(user, i) && !exclude.contains(&i))
    }

    /// Draws `k` items uniformly with replacement from the items `user` has
    /// not consumed and that are not in `exclude`.
    pub fn sample<R: Rng>(&self, user: usize, k: usize, exclude: &[usize], rng: &mut R) -> Result<Vec<usize>> {
        if user >= self.consumed.len() {
            return Err(Error::IdOutOfRange {
                what: "user",
                id: user,
                limit: self.consumed.len(),
            });
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        let allowed = |i: usize| !self.is_consumed(user, i) && !exclude.contains(&i);
        let blocked = self.consumed[user].len() + exclude.len();
        if 2 * blocked < self.n_items {
            // Rejection sampling; acceptance probability is above one half.
            let mut out = Vec::with_capacity(k);
            while out.len() < k {
                let i = rng.random_range(0..self.n_items);
                if allowed(i) {
                    out.push(i);
                }
            }
            return Ok(out);
        }
        let candidates: Vec<usize> = (0..self.n_items).filter(|&i| allowed(i)).collect();
        if candidates.is_empty() {
            return Err(Error::NoNegatives(user));
        }
        Ok((0..k)
            .map(|_| candidates[rng.random_range(0..candidates.len())])
            .collect())
    }
}

/// One-shot sampling with its own seeded generator.
pub fn sample_negatives(
    train: &InteractionTable,
    user: usize,
    k: usize,
    seed: u64,
    exclude: &[usize],
) -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    NegativeSampler::new(train).sample(user, k, exclude, &mut rng)
}
