//! Most-popular baseline: an item's score is its training interaction count.

use crate::data::InteractionTable;
use crate::error::Result;
use crate::metrics::Scorer;
use crate::models::common::check_id;

#[derive(Debug, Clone, PartialEq)]
pub struct Popularity {
    counts: Vec<f64>,
}

impl Popularity {
    pub fn fit(train: &InteractionTable) -> Self {
        let mut counts = vec![0.0; train.n_items()];
        for x in train.interactions() {
            counts[x.item] += 1.0;
        }
        Self { counts }
    }

    pub fn count(&self, item: usize) -> f64 {
        self.counts[item]
    }
}

impl Scorer for Popularity {
    fn score(&self, _user: usize, items: &[usize]) -> Result<Vec<f64>> {
        items
            .iter()
            .map(|&i| {
                check_id("item", i, self.counts.len())?;
                Ok(self.counts[i])
            })
            .collect()
    }
}
