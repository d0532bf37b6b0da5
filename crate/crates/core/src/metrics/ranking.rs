//! Top-n metrics and the per-user ranking protocol.

use std::cmp::Ordering;
use std::fmt;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::InteractionTable;
use crate::error::{Error, Result};
use crate::metrics::rating::rmse_mae;
use crate::metrics::report::MetricReport;

/// Scores candidate items for a user. Higher ranks first.
pub trait Scorer: Sync {
    fn score(&self, user: usize, items: &[usize]) -> Result<Vec<f64>>;
}

/// Adapts a plain `(user, item) -> score` function.
pub struct FnScorer<F>(pub F);

impl<F: Fn(usize, usize) -> f64 + Sync> Scorer for FnScorer<F> {
    fn score(&self, user: usize, items: &[usize]) -> Result<Vec<f64>> {
        Ok(items.iter().map(|&i| (self.0)(user, i)).collect())
    }
}

/// Candidate set construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    /// Every item the user has not consumed in train.
    Full,
    /// The user's test items plus this many seeded unconsumed negatives.
    Sampled(usize),
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Full => f.write_str("full"),
            Self::Sampled(m) => write!(f, "sampled:{m}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSpec {
    pub protocol: Protocol,
    pub cutoffs: Vec<usize>,
    pub seed: u64,
    /// Worker threads; the report does not depend on this.
    pub threads: usize,
}

impl EvalSpec {
    pub fn new(protocol: Protocol, cutoffs: Vec<usize>, seed: u64) -> Self {
        Self {
            protocol,
            cutoffs,
            seed,
            threads: 1,
        }
    }
}

/// Per-user values, one entry per cutoff.
#[derive(Debug, Clone, PartialEq)]
pub struct UserMetrics {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub mrr: f64,
}

/// Orders items by descending score, ties by ascending item id.
pub fn rank_by_score(items: &[usize], scores: &[f64]) -> Vec<usize> {
    let mut pairs: Vec<(usize, f64)> = items.iter().copied().zip(scores.iter().copied()).collect();
    pairs.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
    pairs.into_iter().map(|(i, _)| i).collect()
}

/// Binary-relevance metrics of one ranked list.
///
/// `relevant` must be sorted. Ranks are 1-based; the DCG discount is
/// `1 / log2(rank + 1)`. MRR looks at the whole list, the other metrics at
/// the top `n` only.
pub fn ranking_metrics(ranked: &[usize], relevant: &[usize], cutoffs: &[usize]) -> Result<UserMetrics> {
    if relevant.is_empty() {
        return Err(Error::InvalidArgument("empty relevant set".into()));
    }
    if cutoffs.contains(&0) {
        return Err(Error::InvalidArgument("cutoffs must be >= 1".into()));
    }
    let hit: Vec<bool> = ranked.iter().map(|i| relevant.binary_search(i).is_ok()).collect();
    let mrr = hit.iter().position(|&h| h).map_or(0.0, |p| 1.0 / (p + 1) as f64);

    let discount = |rank: usize| 1.0 / ((rank + 1) as f64).log2();
    let mut out = UserMetrics {
        precision: Vec::with_capacity(cutoffs.len()),
        recall: Vec::with_capacity(cutoffs.len()),
        ndcg: Vec::with_capacity(cutoffs.len()),
        mrr,
    };
    for &n in cutoffs {
        let top = &hit[..n.min(hit.len())];
        let hits = top.iter().filter(|&&h| h).count();
        let dcg: f64 = top
            .iter()
            .enumerate()
            .filter(|(_, &h)| h)
            .map(|(p, _)| discount(p + 1))
            .sum();
        let idcg: f64 = (1..=n.min(relevant.len())).map(discount).sum();
        out.precision.push(hits as f64 / n as f64);
        out.recall.push(hits as f64 / relevant.len() as f64);
        out.ndcg.push(dcg / idcg);
    }
    Ok(out)
}

fn user_lists(table: &InteractionTable) -> Vec<Vec<usize>> {
    table.user_items()
}

fn evaluate_user<S: Scorer + ?Sized>(
    scorer: &S,
    user: usize,
    train: &[usize],
    test: &[usize],
    n_items: usize,
    spec: &EvalSpec,
) -> Result<Option<UserMetrics>> {
    let in_train = |i: &usize| train.binary_search(i).is_ok();
    let relevant: Vec<usize> = test.iter().copied().filter(|i| !in_train(i)).collect();
    if relevant.is_empty() {
        return Ok(None);
    }
    let candidates: Vec<usize> = match spec.protocol {
        Protocol::Full => (0..n_items).filter(|i| !in_train(i)).collect(),
        Protocol::Sampled(m) => {
            let pool: Vec<usize> = (0..n_items)
                .filter(|i| !in_train(i) && relevant.binary_search(i).is_err())
                .collect();
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(user as u64);
            let take = m.min(pool.len());
            let mut picked: Vec<usize> = index::sample(&mut rng, pool.len(), take)
                .into_iter()
                .map(|k| pool[k])
                .collect();
            picked.extend_from_slice(&relevant);
            picked.sort_unstable();
            picked
        }
    };
    let scores = scorer.score(user, &candidates)?;
    if let Some(k) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFiniteScore {
            user,
            item: candidates[k],
        });
    }
    let ranked = rank_by_score(&candidates, &scores);
    ranking_metrics(&ranked, &relevant, &spec.cutoffs).map(Some)
}

/// Macro-averaged Precision/Recall/NDCG at each cutoff plus MRR.
///
/// Users are evaluated independently and reduced in ascending id order, so
/// the report is identical for any thread count.
pub fn evaluate_ranking<S: Scorer + ?Sized>(
    scorer: &S,
    train: &InteractionTable,
    test: &InteractionTable,
    spec: &EvalSpec,
) -> Result<MetricReport> {
    if spec.cutoffs.is_empty() || spec.cutoffs.contains(&0) {
        return Err(Error::InvalidArgument(
            "cutoffs must be a non-empty list of values >= 1".into(),
        ));
    }
    let n_items = train.n_items();
    let train_lists = user_lists(train);
    let test_lists = user_lists(test);
    let users: Vec<usize> = (0..test_lists.len()).filter(|&u| !test_lists[u].is_empty()).collect();

    let eval = |u: usize| {
        let empty = Vec::new();
        let tr = train_lists.get(u).unwrap_or(&empty);
        evaluate_user(scorer, u, tr, &test_lists[u], n_items, spec)
    };
    let threads = spec.threads.max(1).min(users.len().max(1));
    let results: Vec<Result<Option<UserMetrics>>> = if threads == 1 {
        users.iter().map(|&u| eval(u)).collect()
    } else {
        let chunk = users.len().div_ceil(threads);
        std::thread::scope(|s| {
            let handles: Vec<_> = users
                .chunks(chunk)
                .map(|part| s.spawn(|| part.iter().map(|&u| eval(u)).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("evaluation worker panicked"))
                .collect()
        })
    };

    let k = spec.cutoffs.len();
    let (mut p, mut r, mut n) = (vec![0.0; k], vec![0.0; k], vec![0.0; k]);
    let (mut mrr, mut evaluated, mut skipped) = (0.0, 0usize, 0usize);
    for res in results {
        match res? {
            Some(m) => {
                for c in 0..k {
                    p[c] += m.precision[c];
                    r[c] += m.recall[c];
                    n[c] += m.ndcg[c];
                }
                mrr += m.mrr;
                evaluated += 1;
            }
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        log::info!("skipped {skipped} users without relevant items");
    }
    let denom = evaluated.max(1) as f64;
    let mut values = Vec::with_capacity(3 * k + 1);
    for (c, cutoff) in spec.cutoffs.iter().enumerate() {
        values.push((format!("precision@{cutoff}"), p[c] / denom));
        values.push((format!("recall@{cutoff}"), r[c] / denom));
        values.push((format!("ndcg@{cutoff}"), n[c] / denom));
    }
    values.push(("mrr".to_string(), mrr / denom));
    Ok(MetricReport {
        values,
        protocol: spec.protocol.to_string(),
        seed: spec.seed,
        users: evaluated,
        skipped,
    })
}

/// RMSE and MAE of `predict` over the test interactions.
pub fn evaluate_rating(
    predict: impl Fn(usize, usize) -> Result<f64>,
    test: &InteractionTable,
    seed: u64,
) -> Result<MetricReport> {
    let pairs = test
        .interactions()
        .iter()
        .map(|x| predict(x.user, x.item).map(|p| (p, x.rating)))
        .collect::<Result<Vec<_>>>()?;
    let (rmse, mae) = rmse_mae(&pairs)?;
    let mut users: Vec<usize> = test.interactions().iter().map(|x| x.user).collect();
    users.sort_unstable();
    users.dedup();
    Ok(MetricReport {
        values: vec![("rmse".into(), rmse), ("mae".into(), mae)],
        protocol: "rating".into(),
        seed,
        users: users.len(),
        skipped: 0,
    })
}

/// Fraction of `(user, next_item)` cases whose next item ranks in the top
/// `k` among the items the user has not consumed in `train`.
pub fn hit_rate<S: Scorer + ?Sized>(
    scorer: &S,
    train: &InteractionTable,
    cases: &[(usize, usize)],
    k: usize,
) -> Result<f64> {
    if cases.is_empty() {
        return Err(Error::Empty("no evaluation cases".into()));
    }
    let seen = user_lists(train);
    let empty = Vec::new();
    let mut hits = 0usize;
    for &(user, target) in cases {
        let consumed = seen.get(user).unwrap_or(&empty);
        let items: Vec<usize> = (0..train.n_items())
            .filter(|i| consumed.binary_search(i).is_err())
            .collect();
        let scores = scorer.score(user, &items)?;
        let ranked = rank_by_score(&items, &scores);
        if ranked[..k.min(ranked.len())].contains(&target) {
            hits += 1;
        }
    }
    Ok(hits as f64 / cases.len() as f64)
}
