//! Checks shared by the acceptance harness and the focused test targets.
//! Each returns a one-line summary on success and the first failure
//! otherwise.

use drec_autodiff::{grad_check, Tape, Tensor};
use drec_core::data::SparseRow;
use drec_core::metrics::{evaluate_ranking, rmse_mae, EvalSpec, FnScorer, Protocol};
use drec_core::models::{
    default_layers, max_row_norm, pairwise_term, score_fm, AttRec, AttRecConfig, AttRecTriple, AutoRec, BiasedSvd,
    BprMf, Caser, CaserConfig, CaserExample, Cdae, CdaeExample, Cml, Fm, FmRegularization, FmTask, Ncf, NcfVariant,
    Optimizer, Prme, TrainOptions, Transition,
};
use drec_core::runner::{self, Checkpoint, ModelName};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::oracle;
use super::{perturb_params, prepared, random_table, rng, tiny_fixture, write_uirt, Run};

pub type Check = Result<String, String>;

const GRAD_TOL: f64 = 1e-4;

fn triples(r: &mut ChaCha8Rng, nu: usize, ni: usize, n: usize) -> Vec<(usize, usize, usize)> {
    (0..n)
        .map(|_| {
            let i = r.random_range(0..ni);
            let j = (i + r.random_range(1..ni)) % ni;
            (r.random_range(0..nu), i, j)
        })
        .collect()
}

/// Each feature present with probability `p`, values uniform in `±scale`.
fn sparse_features(r: &mut ChaCha8Rng, n: usize, p: f64, scale: f64) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    for i in 0..n {
        if r.random_bool(p) {
            out.push((i, r.random_range(-scale..scale)));
        }
    }
    out
}

fn window(r: &mut ChaCha8Rng, len: usize, ni: usize) -> Vec<usize> {
    // index `ni` is the padding item
    (0..len).map(|_| r.random_range(0..=ni)).collect()
}

/// Central-difference check of every model loss on `instances` random small
/// problems each. Returns the worst relative error per loss.
pub fn gradient_suite(instances: u64) -> Result<Vec<(String, f64)>, String> {
    let mut worst: Vec<(String, f64)> = Vec::new();
    let mut record = |name: &str, err: f64| match worst.iter_mut().find(|(n, _)| n == name) {
        Some(e) => e.1 = e.1.max(err),
        None => worst.push((name.to_string(), err)),
    };
    let fail = |name: &str, seed: u64, e: &dyn std::fmt::Display| format!("{name} (seed {seed}): {e}");
    for seed in 0..instances {
        let r = &mut rng(1000 + seed);
        let nu = r.random_range(2..=6);
        let ni = r.random_range(3..=8);
        let k = r.random_range(2..=8);
        let n = r.random_range(4..=20);
        let table = random_table(r, nu, ni, n);
        let s = 30.0;

        let mut m = BiasedSvd::new(&table, k, seed).map_err(|e| fail("biasedsvd", seed, &e))?;
        perturb_params(m.params_mut(), s, r);
        let rep = grad_check(m.params(), GRAD_TOL, |ps| {
            let mut t = Tape::new();
            let l = m.loss(ps, &mut t, table.interactions(), 0.1)?;
            Ok((t, l))
        })
        .map_err(|e| fail("biasedsvd", seed, &e))?;
        record("biasedsvd", rep.max_rel_error());

        for task in [FmTask::Regression, FmTask::Binary] {
            let nf = r.random_range(2..=8);
            let mut fm = Fm::new(nf, k, task, seed).map_err(|e| fail("fm", seed, &e))?;
            perturb_params(fm.params_mut(), s, r);
            let rows: Vec<SparseRow> = (0..n)
                .map(|_| {
                    let mut feats = sparse_features(r, nf, 0.6, 1.0);
                    if feats.is_empty() {
                        feats.push((0, 1.0));
                    }
                    let label = match task {
                        FmTask::Regression => r.random_range(1.0..5.0),
                        FmTask::Binary => r.random_range(0..2) as f64,
                    };
                    SparseRow::new(label, feats).unwrap()
                })
                .collect();
            let refs: Vec<&SparseRow> = rows.iter().collect();
            let reg = FmRegularization {
                w0: 0.05,
                w: 0.1,
                v: 0.2,
            };
            let rep = grad_check(fm.params(), GRAD_TOL, |ps| {
                let mut t = Tape::new();
                let l = fm.loss(ps, &mut t, &refs, reg)?;
                Ok((t, l))
            })
            .map_err(|e| fail("fm", seed, &e))?;
            record(&format!("fm/{task:?}").to_lowercase(), rep.max_rel_error());
        }

        let hidden = r.random_range(1..=8);
        let mut ar = AutoRec::new(&table, hidden, seed).map_err(|e| fail("autorec", seed, &e))?;
        perturb_params(ar.params_mut(), s, r);
        let items: Vec<usize> = (0..ni).collect();
        let (input, mask) = ar.batch_inputs(&items);
        let rep = grad_check(ar.params(), GRAD_TOL, |ps| {
            let mut t = Tape::new();
            let l = ar.loss(ps, &mut t, input.clone(), mask.clone(), 0.1, 0.5)?;
            Ok((t, l))
        })
        .map_err(|e| fail("autorec", seed, &e))?;
        record("autorec", rep.max_rel_error());

        let tr = triples(r, nu, ni, n);
        let mut bpr = BprMf::new(nu, ni, k, seed).map_err(|e| fail("bprmf", seed, &e))?;
        perturb_params(bpr.params_mut(), s, r);
        let rep = grad_check(bpr.params(), GRAD_TOL, |ps| {
            let mut t = Tape::new();
            let l = bpr.loss(ps, &mut t, &tr, 0.1)?;
            Ok((t, l))
        })
        .map_err(|e| fail("bprmf", seed, &e))?;
        record("bprmf", rep.max_rel_error());

        let mut cml = Cml::new(nu, ni, k, 0.5, seed).map_err(|e| fail("cml", seed, &e))?;
        perturb_params(cml.params_mut(), s, r);
        let rep = grad_check(cml.params(), GRAD_TOL, |ps| {
            let mut t = Tape::new();
            let l = cml.loss(ps, &mut t, &tr, tr.len(), 0.1)?;
            Ok((t, l))
        })
        .map_err(|e| fail("cml", seed, &e))?;
        record("cml", rep.max_rel_error());

        let labelled: Vec<(usize, usize, bool)> = (0..n)
            .map(|_| (r.random_range(0..nu), r.random_range(0..ni), r.random_bool(0.5)))
            .collect();
        for variant in [NcfVariant::Gmf, NcfVariant::Mlp, NcfVariant::NeuMf] {
            let name = variant.to_string();
            let mut m = Ncf::new(variant, nu, ni, k, &default_layers(k), seed).map_err(|e| fail(&name, seed, &e))?;
            perturb_params(m.params_mut(), 60.0, r);
            let rep = grad_check(m.params(), GRAD_TOL, |ps| {
                let mut t = Tape::new();
                let l = m.loss(ps, &mut t, &labelled, 0.1)?;
                Ok((t, l))
            })
            .map_err(|e| fail(&name, seed, &e))?;
            record(&name, rep.max_rel_error());
        }

        let q = [0.0, 0.3][seed as usize % 2];
        let mut cdae = Cdae::new(&table, hidden, q, seed).map_err(|e| fail("cdae", seed, &e))?;
        perturb_params(cdae.params_mut(), s, r);
        let batch: Vec<CdaeExample> = table
            .user_items()
            .into_iter()
            .enumerate()
            .filter(|(_, items)| !items.is_empty())
            .map(|(user, items)| CdaeExample {
                user,
                input: cdae.corrupt(&items, r),
                targets: (0..ni).map(|i| (i, items.contains(&i))).collect(),
            })
            .collect();
        let rep = grad_check(cdae.params(), GRAD_TOL, |ps| {
            let mut t = Tape::new();
            let l = cdae.loss(ps, &mut t, &batch, 0.1)?;
            Ok((t, l))
        })
        .map_err(|e| fail("cdae", seed, &e))?;
        record("cdae", rep.max_rel_error());

        let alpha = [0.0, 1.0, r.random_range(0.0..1.0)][seed as usize % 3];
        let mut prme = Prme::new(nu, ni, k, alpha, seed).map_err(|e| fail("prme", seed, &e))?;
        perturb_params(prme.params_mut(), s, r);
        let trans: Vec<Transition> = tr
            .iter()
            .map(|&(user, pos, neg)| Transition {
                user,
                prev: r.random_range(0..=ni),
                pos,
                neg,
            })
            .collect();
        let rep = grad_check(prme.params(), GRAD_TOL, |ps| {
            let mut t = Tape::new();
            let l = prme.loss(ps, &mut t, &trans, 0.1)?;
            Ok((t, l))
        })
        .map_err(|e| fail("prme", seed, &e))?;
        record("prme", rep.max_rel_error());

        let d = r.random_range(2..=6);
        let cfg = CaserConfig {
            d,
            window: r.random_range(1..=4),
            horizon: 1,
            n_h: r.random_range(0..=2),
            n_v: 1,
        };
        let mut caser = Caser::new(nu, ni, cfg, seed).map_err(|e| fail("caser", seed, &e))?;
        perturb_params(caser.params_mut(), s, r);
        let ex: Vec<CaserExample> = (0..r.random_range(1..=4))
            .map(|_| CaserExample {
                user: r.random_range(0..nu),
                window: window(r, cfg.window, ni),
                targets: (0..3).map(|_| (r.random_range(0..ni), r.random_bool(0.5))).collect(),
            })
            .collect();
        let rep = grad_check(caser.params(), GRAD_TOL, |ps| {
            let mut t = Tape::new();
            let l = caser.loss(ps, &mut t, &ex, 0.1)?;
            Ok((t, l))
        })
        .map_err(|e| fail("caser", seed, &e))?;
        record("caser", rep.max_rel_error());

        let cfg = AttRecConfig {
            d,
            window: r.random_range(1..=4),
            omega: [0.0, 1.0, 0.3][seed as usize % 3],
            margin: 0.5,
            clip_rho: 1.0,
        };
        let mut att = AttRec::new(nu, ni, cfg, seed).map_err(|e| fail("attrec", seed, &e))?;
        perturb_params(att.params_mut(), s, r);
        let ex: Vec<AttRecTriple> = tr
            .iter()
            .take(6)
            .map(|&(user, pos, neg)| AttRecTriple {
                user,
                window: window(r, cfg.window, ni),
                pos,
                neg,
            })
            .collect();
        let rep = grad_check(att.params(), GRAD_TOL, |ps| {
            let mut t = Tape::new();
            let l = att.loss(ps, &mut t, &ex, 0.1)?;
            Ok((t, l))
        })
        .map_err(|e| fail("attrec", seed, &e))?;
        record("attrec", rep.max_rel_error());
    }
    Ok(worst)
}

/// Linear-time FM pairwise term and full score against the quadratic sum.
pub fn fm_identity(instances: u64) -> Check {
    let mut worst: f64 = 0.0;
    for seed in 0..instances {
        let r = &mut rng(5000 + seed);
        let n = r.random_range(1..=20);
        let k = r.random_range(1..=8);
        let v = Tensor::new(vec![n, k], (0..n * k).map(|_| r.random_range(-1.0..1.0)).collect()).unwrap();
        let w: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let w0 = r.random_range(-1.0..1.0);
        let mut features = sparse_features(r, n, 0.7, 2.0);
        if features.is_empty() {
            features.push((n - 1, 1.0));
        }
        let fast = pairwise_term(&v, &features).map_err(|e| e.to_string())?;
        let slow = oracle::fm_pairwise(&v, &features);
        let row = SparseRow::new(0.0, features.clone()).unwrap();
        let full = score_fm(w0, &w, &v, &row).map_err(|e| e.to_string())?;
        let full_slow = oracle::fm_score(w0, &w, &v, &features);
        let err = (fast - slow).abs().max((full - full_slow).abs());
        if err > 1e-9 {
            return Err(format!(
                "instance {seed}: n={n} k={k} fast={fast} brute={slow} full={full} brute={full_slow}"
            ));
        }
        worst = worst.max(err);
    }
    Ok(format!("{instances} instances, max |diff| {worst:.1e}"))
}

/// Library evaluator against the brute-force one on random instances, with
/// tied scores on purpose.
pub fn metric_oracle(instances: u64) -> Check {
    let mut worst_ndcg: f64 = 0.0;
    for seed in 0..instances {
        let r = &mut rng(9000 + seed);
        let nu = r.random_range(1..=8);
        let ni = r.random_range(2..=15);
        let n = r.random_range(2..=nu * ni);
        let all = random_table(r, nu, ni, n);
        let cut = r.random_range(0.3..0.8);
        let (tr, te): (Vec<_>, Vec<_>) = all.interactions().iter().copied().partition(|_| r.random_bool(cut));
        let train = all.with_interactions(tr);
        let test = all.with_interactions(te);
        let levels = r.random_range(2..=6);
        let table: Vec<f64> = (0..nu * ni)
            .map(|_| r.random_range(0..levels) as f64 / levels as f64)
            .collect();
        let score = |u: usize, i: usize| table[u * ni + i];
        let mut cutoffs: Vec<usize> = (0..r.random_range(1..=3)).map(|_| r.random_range(1..=ni + 2)).collect();
        cutoffs.dedup();
        let (expect, users) = oracle::evaluate_full(score, &train, &test, &cutoffs);
        if users == 0 {
            continue;
        }
        let spec = EvalSpec::new(Protocol::Full, cutoffs.clone(), seed);
        let got = evaluate_ranking(&FnScorer(score), &train, &test, &spec).map_err(|e| e.to_string())?;
        if got.users != users {
            return Err(format!(
                "instance {seed}: {} users evaluated, oracle {users}",
                got.users
            ));
        }
        if got.keys().collect::<Vec<_>>() != expect.iter().map(|(k, _)| k.as_str()).collect::<Vec<_>>() {
            return Err(format!("instance {seed}: keys differ"));
        }
        for ((name, want), (_, have)) in expect.iter().zip(&got.values) {
            let ok = if name.starts_with("ndcg") {
                worst_ndcg = worst_ndcg.max((want - have).abs());
                (want - have).abs() <= 1e-12
            } else {
                want.to_bits() == have.to_bits()
            };
            if !ok {
                return Err(format!("instance {seed}: {name} = {have}, oracle {want}"));
            }
        }

        let pairs: Vec<(f64, f64)> = (0..r.random_range(1..=30))
            .map(|_| (r.random_range(0.0..5.0), r.random_range(1..=5) as f64))
            .collect();
        let (a, b) = rmse_mae(&pairs).map_err(|e| e.to_string())?;
        let (ea, eb) = oracle::rmse_mae(&pairs);
        if (a - ea).abs() > 1e-12 || (b - eb).abs() > 1e-12 {
            return Err(format!("instance {seed}: rmse/mae ({a}, {b}) vs ({ea}, {eb})"));
        }
    }
    Ok(format!(
        "{instances} instances, ratios bitwise, max ndcg diff {worst_ndcg:.1e}"
    ))
}

/// Every trainable model reaches 5% of its first-step loss on the tiny
/// fixture. Returns `(model, initial, final)` per model.
pub fn overfit(epochs: usize) -> Result<Vec<(ModelName, f64, f64)>, String> {
    let table = tiny_fixture();
    let data = prepared(&table);
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = write_uirt(&dir.path().join("tiny.tsv"), &table);
    let mut out = Vec::new();
    for name in ModelName::ALL {
        let mut run = Run::new(name, &path);
        run.epochs = epochs;
        run.batch_size = 64;
        run.lr = 0.03;
        let cfg = run.config();
        let (_, trace) = runner::train_model(&cfg, &data).map_err(|e| format!("{name}: {e}"))?;
        let (first, last) = (trace.first().unwrap(), trace.last().unwrap());
        out.push((name, first, last));
        if !(last < 0.05 * first) {
            return Err(format!("{name}: loss {first:.4} -> {last:.4} after {epochs} epochs"));
        }
    }
    Ok(out)
}

/// Identical runs give identical report and checkpoint bytes, and a decoded
/// checkpoint scores every user/item pair bit-for-bit like the trained model.
pub fn persistence() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = write_uirt(&dir.path().join("data.tsv"), &tiny_fixture());
    for name in ModelName::ALL {
        let cfg = Run::new(name, &path).config();
        let a = runner::run(&cfg).map_err(|e| format!("{name}: {e}"))?;
        let b = runner::run(&cfg).map_err(|e| format!("{name}: {e}"))?;
        if a.report.to_text() != b.report.to_text() {
            return Err(format!("{name}: reports differ"));
        }
        if a.checkpoint.encode() != b.checkpoint.encode() {
            return Err(format!("{name}: checkpoints differ"));
        }

        let data = runner::prepare(&cfg).map_err(|e| e.to_string())?;
        let (model, _) = runner::train_model(&cfg, &data).map_err(|e| e.to_string())?;
        let bytes = runner::checkpoint_of(&cfg, model.as_ref()).encode();
        let decoded = Checkpoint::decode(&bytes).map_err(|e| format!("{name}: {e}"))?;
        let (_, back) = runner::open_checkpoint(&decoded).map_err(|e| format!("{name}: {e}"))?;
        let items: Vec<usize> = (0..model.n_items()).collect();
        for u in 0..model.n_users() {
            let want = model.score(u, &items).map_err(|e| e.to_string())?;
            let have = back.score(u, &items).map_err(|e| e.to_string())?;
            let same = want.iter().zip(&have).all(|(x, y)| x.to_bits() == y.to_bits());
            if !same || want.len() != have.len() {
                return Err(format!("{name}: user {u} scores changed after the round trip"));
            }
        }
    }
    Ok(format!(
        "{} models, reports and checkpoints byte-identical, 0-ulp scores",
        ModelName::ALL.len()
    ))
}

fn invariant_options(epochs: usize) -> TrainOptions {
    TrainOptions {
        optimizer: Optimizer::Adam,
        lr: 0.2,
        l2: 0.0,
        epochs,
        batch_size: 4,
        neg_samples: 2,
        seed: 3,
    }
}

/// Norm clipping, zero padding rows and attention row sums, checked after
/// every optimizer step of real training runs. The large learning rate
/// pushes rows past the radius so clipping is exercised.
pub fn invariants(epochs: usize) -> Check {
    let table = tiny_fixture();
    let opts = invariant_options(epochs);
    let mut violations: Vec<String> = Vec::new();
    let (mut steps, mut clipped) = (0usize, 0usize);

    let mut cml = Cml::new(table.n_users(), table.n_items(), 6, 0.5, 1).map_err(|e| e.to_string())?;
    cml.fit_observed(&table, &opts, |ps| {
        steps += 1;
        for name in ["U", "V"] {
            let norm = max_row_norm(ps.get(ps.id(name).unwrap()));
            if norm > 1.0 + 1e-12 {
                violations.push(format!("cml {name} row norm {norm}"));
            }
            if norm > 1.0 - 1e-9 {
                clipped += 1;
            }
        }
    })
    .map_err(|e| e.to_string())?;

    let mut caser = Caser::new(
        table.n_users(),
        table.n_items(),
        CaserConfig {
            window: 3,
            ..CaserConfig::new(4)
        },
        1,
    )
    .map_err(|e| e.to_string())?;
    let pad = caser.pad();
    caser
        .fit_observed(&table, &opts, |ps| {
            steps += 1;
            let e = ps.get(ps.id("E").unwrap());
            if e.row(pad).iter().any(|&x| x != 0.0) {
                violations.push("caser padding row moved".into());
            }
        })
        .map_err(|e| e.to_string())?;

    let cfg = AttRecConfig {
        window: 3,
        clip_rho: 0.5,
        ..AttRecConfig::new(4)
    };
    let mut att = AttRec::new(table.n_users(), table.n_items(), cfg, 1).map_err(|e| e.to_string())?;
    let mut probe = att.clone();
    let pad = att.pad();
    let windows: Vec<Vec<usize>> = {
        let r = &mut rng(4);
        (0..8).map(|_| window(r, 3, pad)).collect()
    };
    att.fit_observed(&table, &opts, |ps| {
        steps += 1;
        for name in ["X", "U", "V"] {
            let norm = max_row_norm(ps.get(ps.id(name).unwrap()));
            if norm > 0.5 + 1e-12 {
                violations.push(format!("attrec {name} row norm {norm}"));
            }
        }
        if ps.get(ps.id("X").unwrap()).row(pad).iter().any(|&x| x != 0.0) {
            violations.push("attrec padding row moved".into());
        }
        *probe.params_mut() = ps.clone();
        for w in &windows {
            let a = probe.attention(w).expect("valid window");
            for row in 0..a.shape()[0] {
                let r = a.row(row);
                let sum: f64 = r.iter().sum();
                if (sum - 1.0).abs() > 1e-12 || r.iter().any(|&x| x < 0.0) {
                    violations.push(format!("attention row sums to {sum}"));
                }
            }
        }
    })
    .map_err(|e| e.to_string())?;

    if let Some(v) = violations.first() {
        return Err(format!("{} violations, first: {v}", violations.len()));
    }
    if clipped == 0 {
        return Err("no CML row ever reached the unit sphere; clipping was not exercised".into());
    }
    Ok(format!("{steps} optimizer steps checked"))
}
