//! Independent reference implementations, written for clarity over speed.

use drec_autodiff::Tensor;
use drec_core::data::InteractionTable;

/// `Σ_{a<b} <v_a, v_b> x_a x_b`, the quadratic way.
pub fn fm_pairwise(v: &Tensor, features: &[(usize, f64)]) -> f64 {
    let k = v.shape()[1];
    let mut total = 0.0;
    for a in 0..features.len() {
        for b in a + 1..features.len() {
            let (ia, xa) = features[a];
            let (ib, xb) = features[b];
            let mut dot = 0.0;
            for f in 0..k {
                dot += v.data()[ia * k + f] * v.data()[ib * k + f];
            }
            total += dot * xa * xb;
        }
    }
    total
}

pub fn fm_score(w0: f64, w: &[f64], v: &Tensor, features: &[(usize, f64)]) -> f64 {
    let linear: f64 = features.iter().map(|&(i, x)| w[i] * x).sum();
    w0 + linear + fm_pairwise(v, features)
}

/// Per-user metrics for one ranked list.
#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub mrr: f64,
}

/// Selection sort on (score descending, item ascending).
pub fn rank(items: &[usize], score: impl Fn(usize) -> f64) -> Vec<usize> {
    let mut rest: Vec<usize> = items.to_vec();
    let mut out = Vec::with_capacity(rest.len());
    while !rest.is_empty() {
        let mut best = 0;
        for c in 1..rest.len() {
            let (sc, sb) = (score(rest[c]), score(rest[best]));
            if sc > sb || (sc == sb && rest[c] < rest[best]) {
                best = c;
            }
        }
        out.push(rest.remove(best));
    }
    out
}

pub fn metrics(ranked: &[usize], relevant: &[usize], cutoffs: &[usize]) -> Metrics {
    let is_rel = |i: &usize| relevant.contains(i);
    let mut m = Metrics {
        precision: vec![],
        recall: vec![],
        ndcg: vec![],
        mrr: 0.0,
    };
    for (pos, item) in ranked.iter().enumerate() {
        if is_rel(item) {
            m.mrr = 1.0 / (pos as f64 + 1.0);
            break;
        }
    }
    for &n in cutoffs {
        let mut hits = 0usize;
        let mut dcg = 0.0;
        for (pos, item) in ranked.iter().take(n).enumerate() {
            if is_rel(item) {
                hits += 1;
                dcg += 1.0 / (pos as f64 + 2.0).log2();
            }
        }
        let mut idcg = 0.0;
        for pos in 0..n.min(relevant.len()) {
            idcg += 1.0 / (pos as f64 + 2.0).log2();
        }
        m.precision.push(hits as f64 / n as f64);
        m.recall.push(hits as f64 / relevant.len() as f64);
        m.ndcg.push(dcg / idcg);
    }
    m
}

/// Full-protocol macro averages: candidates are the items a user did not
/// consume in train, relevant items are their test items not seen in train.
/// Returns metric name to value in report order, plus the number of users.
pub fn evaluate_full(
    score: impl Fn(usize, usize) -> f64,
    train: &InteractionTable,
    test: &InteractionTable,
    cutoffs: &[usize],
) -> (Vec<(String, f64)>, usize) {
    let n_items = train.n_items();
    let n_users = train.n_users().max(test.n_users());
    let seen = |table: &InteractionTable, u: usize| -> Vec<usize> {
        let mut v: Vec<usize> = table
            .interactions()
            .iter()
            .filter(|x| x.user == u)
            .map(|x| x.item)
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let mut sums = vec![0.0; 3 * cutoffs.len()];
    let mut mrr = 0.0;
    let mut users = 0usize;
    for u in 0..n_users {
        let tr = seen(train, u);
        let relevant: Vec<usize> = seen(test, u).into_iter().filter(|i| !tr.contains(i)).collect();
        if relevant.is_empty() {
            continue;
        }
        let candidates: Vec<usize> = (0..n_items).filter(|i| !tr.contains(i)).collect();
        let ranked = rank(&candidates, |i| score(u, i));
        let m = metrics(&ranked, &relevant, cutoffs);
        for c in 0..cutoffs.len() {
            sums[3 * c] += m.precision[c];
            sums[3 * c + 1] += m.recall[c];
            sums[3 * c + 2] += m.ndcg[c];
        }
        mrr += m.mrr;
        users += 1;
    }
    let d = users.max(1) as f64;
    let mut out = Vec::new();
    for (c, n) in cutoffs.iter().enumerate() {
        out.push((format!("precision@{n}"), sums[3 * c] / d));
        out.push((format!("recall@{n}"), sums[3 * c + 1] / d));
        out.push((format!("ndcg@{n}"), sums[3 * c + 2] / d));
    }
    out.push(("mrr".into(), mrr / d));
    (out, users)
}

pub fn rmse_mae(pairs: &[(f64, f64)]) -> (f64, f64) {
    let n = pairs.len() as f64;
    let sq: f64 = pairs.iter().map(|(p, a)| (p - a).powi(2)).sum();
    let abs: f64 = pairs.iter().map(|(p, a)| (p - a).abs()).sum();
    ((sq / n).sqrt(), abs / n)
}

/// Fraction of (positive, negative) pairs ordered correctly, ties half.
pub fn auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut wins = 0.0;
    for p in pos {
        for n in neg {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    wins / (pos.len() * neg.len()) as f64
}
