//! Fixtures, brute-force oracles and shared checks for the integration tests.
#![allow(dead_code)]

pub mod checks;
pub mod oracle;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use drec_autodiff::ParamSet;
use drec_core::data::{Interaction, InteractionTable, Split};
use drec_core::runner::{ExperimentConfig, ModelName, Prepared};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n` distinct user/item pairs with ratings in 1..=5 and increasing
/// timestamps.
pub fn random_table(rng: &mut ChaCha8Rng, n_users: usize, n_items: usize, n: usize) -> InteractionTable {
    let n = n.min(n_users * n_items);
    let mut picks: Vec<usize> = index::sample(rng, n_users * n_items, n).into_vec();
    picks.sort_unstable();
    let rows = picks
        .into_iter()
        .enumerate()
        .map(|(t, cell)| Interaction {
            user: cell / n_items,
            item: cell % n_items,
            rating: rng.random_range(1..=5) as f64,
            timestamp: t as i64,
        })
        .collect();
    InteractionTable::from_dense(rows, n_users, n_items)
}

/// Six users over ten items, seven interactions each (42 in total). User `u`
/// visits `u, u+3, u+6, ...` modulo 10, so histories are also learnable
/// sequences.
pub fn tiny_fixture() -> InteractionTable {
    let mut rows = Vec::new();
    for u in 0..6 {
        for t in 0..7 {
            rows.push(Interaction {
                user: u,
                item: (u + 3 * t) % 10,
                rating: (1 + (u * t + u) % 5) as f64,
                timestamp: t as i64,
            });
        }
    }
    InteractionTable::from_dense(rows, 6, 10)
}

/// Train and test both set to `table`.
pub fn prepared(table: &InteractionTable) -> Prepared {
    Prepared::Interactions(Split {
        train: table.clone(),
        test: table.clone(),
        dropped: 0,
    })
}

pub fn write_uirt(path: &Path, table: &InteractionTable) -> PathBuf {
    let mut text = String::new();
    for x in table.interactions() {
        let u = table.users().raw(x.user).unwrap();
        let i = table.items().raw(x.item).unwrap();
        writeln!(text, "{u}\t{i}\t{}\t{}", x.rating, x.timestamp).unwrap();
    }
    fs::write(path, text).unwrap();
    path.to_path_buf()
}

/// `[model]` keys that make every model runnable on small data.
pub fn model_section(name: ModelName, k: usize) -> String {
    let extra = match name {
        ModelName::Cml => "margin = 0.5\n",
        ModelName::Cdae => "dropout_q = 0.2\n",
        ModelName::Prme => "alpha = 0.5\n",
        ModelName::Caser => "L = 3\nn_h = 2\nn_v = 1\n",
        ModelName::AttRec => "L = 3\nomega = 0.3\nmargin = 0.5\nclip_rho = 1.0\n",
        _ => "",
    };
    format!("[model]\nname = \"{name}\"\nk = {k}\n{extra}")
}

pub struct Run<'a> {
    pub name: ModelName,
    pub data: &'a Path,
    pub k: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl<'a> Run<'a> {
    pub fn new(name: ModelName, data: &'a Path) -> Self {
        Self {
            name,
            data,
            k: 8,
            lr: 0.05,
            epochs: 5,
            batch_size: 16,
            seed: 11,
        }
    }

    pub fn toml(&self) -> String {
        let rating = self.name.task() == drec_core::models::Task::Rating;
        let split = if rating { "random:0.2" } else { "loo" };
        let mut text = format!(
            "[data]\npath = {:?}\nformat = \"uirt\"\nsplit = \"{split}\"\nseed = 5\n\n{}\n\
             [train]\noptimizer = \"adam\"\nlr = {}\nepochs = {}\nbatch_size = {}\nseed = {}\n",
            self.data.to_str().unwrap(),
            model_section(self.name, self.k),
            self.lr,
            self.epochs,
            self.batch_size,
            self.seed,
        );
        if !rating {
            text.push_str("\n[eval]\ncutoffs = [1, 5]\nprotocol = \"full\"\n");
        }
        text
    }

    pub fn config(&self) -> ExperimentConfig {
        ExperimentConfig::parse(&self.toml()).unwrap_or_else(|e| panic!("{e}\n{}", self.toml()))
    }
}

/// Scales every parameter and adds uniform noise in `±0.1`, moving
/// small-init models out of the near-linear regime and zero-initialized
/// biases off ReLU kinks.
pub fn perturb_params(params: &mut ParamSet, factor: f64, rng: &mut ChaCha8Rng) {
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        for v in params.get_mut(id).data_mut() {
            *v = *v * factor + rng.random_range(-0.1..0.1);
        }
    }
}
