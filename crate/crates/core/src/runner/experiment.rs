use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{load_interactions, load_libfm, split, InteractionTable, SparseRow, Split, SplitSpec, UirtOptions};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_ranking, evaluate_rating, rmse_mae, EvalSpec, MetricReport};
use crate::models::{
    default_layers, AttRec, AttRecConfig, AutoRec, BiasedSvd, BprMf, Caser, CaserConfig, Cdae, Cml, Fm, FmTask, Ncf,
    NcfVariant, Prme, Recommender, TensorBag, TrainOptions, TrainTrace,
};
use crate::runner::checkpoint::Checkpoint;
use crate::runner::config::{DataFormat, ExperimentConfig, ModelName};

/// Train and test data after loading, binarizing and splitting.
#[derive(Debug, Clone)]
pub enum Prepared {
    Interactions(Split),
    /// libfm rows, only for `fm`; `n_features` spans both parts.
    Rows {
        train: Vec<SparseRow>,
        test: Vec<SparseRow>,
        n_features: usize,
    },
}

impl Prepared {
    /// The interaction split, if the data is user/item based.
    pub fn split(&self) -> Option<&Split> {
        match self {
            Self::Interactions(s) => Some(s),
            Self::Rows { .. } => None,
        }
    }
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: MetricReport,
    pub trace: TrainTrace,
    pub checkpoint: Checkpoint,
}

pub fn train_options(cfg: &ExperimentConfig) -> TrainOptions {
    TrainOptions {
        optimizer: cfg.train.optimizer,
        lr: cfg.train.lr,
        l2: cfg.train.l2,
        epochs: cfg.train.epochs,
        batch_size: cfg.train.batch_size,
        neg_samples: cfg.neg_samples(),
        seed: cfg.train.seed,
    }
}

fn fm_task(cfg: &ExperimentConfig) -> FmTask {
    if cfg.data.binarize_threshold.is_some() {
        FmTask::Binary
    } else {
        FmTask::Regression
    }
}

fn binary_label(label: f64, threshold: f64) -> f64 {
    if label >= threshold {
        1.0
    } else {
        0.0
    }
}

/// Loads the data file and splits it as configured. Ranking models see only
/// interactions at or above `binarize_threshold` when one is set.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let d = &cfg.data;
    match d.format {
        DataFormat::Libfm => {
            let mut rows = load_libfm(&d.path)?;
            if let Some(t) = d.binarize_threshold {
                for r in &mut rows {
                    r.label = binary_label(r.label, t);
                }
            }
            let SplitSpec::RandomHoldout { ratio, seed } = d.split else {
                return Err(Error::InvalidArgument("libfm data needs a random split".into()));
            };
            let n_features = rows.iter().map(SparseRow::dimension).max().unwrap_or(0);
            let mut order: Vec<usize> = (0..rows.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let n_test = (ratio * rows.len() as f64).round() as usize;
            let mut is_test = vec![false; rows.len()];
            for &k in &order[..n_test] {
                is_test[k] = true;
            }
            let (test, train): (Vec<_>, Vec<_>) = rows.into_iter().zip(is_test).partition(|x| x.1);
            let unzip = |v: Vec<(SparseRow, bool)>| v.into_iter().map(|x| x.0).collect::<Vec<_>>();
            let (train, test) = (unzip(train), unzip(test));
            if train.is_empty() || test.is_empty() {
                return Err(Error::Empty("libfm split left train or test empty".into()));
            }
            Ok(Prepared::Rows {
                train,
                test,
                n_features,
            })
        }
        DataFormat::Uirt => {
            let opts = UirtOptions {
                separator: d.separator,
                has_header: d.has_header,
            };
            let mut table = load_interactions(&d.path, &opts)?;
            if cfg.model.name.task() == crate::models::Task::Ranking {
                if let Some(t) = d.binarize_threshold {
                    table = table.binarize(t);
                }
            }
            if table.is_empty() {
                return Err(Error::Empty(format!("no interactions left in {}", d.path.display())));
            }
            let s = split(&table, d.split)?;
            if s.dropped > 0 {
                log::info!("dropped {} cold-start test interactions", s.dropped);
            }
            Ok(Prepared::Interactions(s))
        }
    }
}

fn caser_config(cfg: &ExperimentConfig) -> CaserConfig {
    let m = &cfg.model;
    let base = CaserConfig::new(m.k);
    CaserConfig {
        d: m.k,
        window: m.window.unwrap_or(base.window),
        horizon: m.horizon.unwrap_or(base.horizon),
        n_h: m.n_h.unwrap_or(base.n_h),
        n_v: m.n_v.unwrap_or(base.n_v),
    }
}

fn attrec_config(cfg: &ExperimentConfig) -> AttRecConfig {
    let m = &cfg.model;
    let base = AttRecConfig::new(m.k);
    AttRecConfig {
        d: m.k,
        window: m.window.unwrap_or(base.window),
        omega: m.omega.unwrap_or(base.omega),
        margin: m.margin.unwrap_or(base.margin),
        clip_rho: m.clip_rho.unwrap_or(base.clip_rho),
    }
}

fn ncf_variant(name: ModelName) -> NcfVariant {
    match name {
        ModelName::Gmf => NcfVariant::Gmf,
        ModelName::Mlp => NcfVariant::Mlp,
        _ => NcfVariant::NeuMf,
    }
}

fn layers(cfg: &ExperimentConfig) -> Vec<usize> {
    cfg.model.layers.clone().unwrap_or_else(|| default_layers(cfg.model.k))
}

/// Builds and trains the configured model.
pub fn train_model(cfg: &ExperimentConfig, data: &Prepared) -> Result<(Box<dyn Recommender>, TrainTrace)> {
    let opts = train_options(cfg);
    let m = &cfg.model;
    let seed = cfg.train.seed;
    let train = match data {
        Prepared::Rows { train, n_features, .. } => {
            if m.name != ModelName::Fm {
                return Err(Error::InvalidArgument(format!("{} cannot train on libfm rows", m.name)));
            }
            let mut fm = Fm::new(*n_features, m.k, fm_task(cfg), seed)?;
            let trace = fm.fit(train, &opts)?;
            return Ok((Box::new(fm), trace));
        }
        Prepared::Interactions(s) => &s.train,
    };
    let (nu, ni) = (train.n_users(), train.n_items());
    fn boxed<M: Recommender + 'static>(m: M, t: TrainTrace) -> Result<(Box<dyn Recommender>, TrainTrace)> {
        Ok((Box::new(m), t))
    }
    match m.name {
        ModelName::BiasedSvd => {
            let mut model = BiasedSvd::new(train, m.k, seed)?;
            let t = model.fit(train, &opts)?;
            boxed(model, t)
        }
        ModelName::Fm => {
            let mut model = Fm::for_interactions(train, m.k, seed)?;
            let mut rows = model.interaction_rows(train)?;
            if let Some(t) = cfg.data.binarize_threshold {
                model.set_task(FmTask::Binary);
                for r in &mut rows {
                    r.label = binary_label(r.label, t);
                }
            }
            let t = model.fit(&rows, &opts)?;
            boxed(model, t)
        }
        ModelName::AutoRec => {
            let mut model = AutoRec::new(train, m.k, seed)?;
            let t = model.fit(train, &opts)?;
            boxed(model, t)
        }
        ModelName::BprMf => {
            let mut model = BprMf::new(nu, ni, m.k, seed)?;
            let t = model.fit(train, &opts)?;
            boxed(model, t)
        }
        ModelName::Cml => {
            let mut model = Cml::new(nu, ni, m.k, m.margin.unwrap_or(0.5), seed)?;
            let t = model.fit(train, &opts)?;
            boxed(model, t)
        }
        ModelName::Gmf | ModelName::Mlp | ModelName::NeuMf => {
            let mut model = Ncf::new(ncf_variant(m.name), nu, ni, m.k, &layers(cfg), seed)?;
            let t = model.fit(train, &opts)?;
            boxed(model, t)
        }
        ModelName::Cdae => {
            let mut model = Cdae::new(train, m.k, m.dropout_q.unwrap_or(0.0), seed)?;
            let t = model.fit(train, &opts)?;
            boxed(model, t)
        }
        ModelName::Prme => {
            let mut model = Prme::new(nu, ni, m.k, m.alpha.unwrap_or(0.5), seed)?;
            let t = model.fit(train, &opts)?;
            boxed(model, t)
        }
        ModelName::Caser => {
            let mut model = Caser::new(nu, ni, caser_config(cfg), seed)?;
            let t = model.fit(train, &opts)?;
            boxed(model, t)
        }
        ModelName::AttRec => {
            let mut model = AttRec::new(nu, ni, attrec_config(cfg), seed)?;
            let t = model.fit(train, &opts)?;
            boxed(model, t)
        }
    }
}

/// Rebuilds a model from checkpoint tensors using the hyperparameters in
/// `cfg`.
pub fn restore_model(
    cfg: &ExperimentConfig,
    tensors: Vec<(String, drec_autodiff::Tensor)>,
) -> Result<Box<dyn Recommender>> {
    let bag = TensorBag::new(tensors);
    let m = &cfg.model;
    Ok(match m.name {
        ModelName::BiasedSvd => Box::new(BiasedSvd::restore(m.k, bag)?),
        ModelName::Fm => Box::new(Fm::restore(fm_task(cfg), bag)?),
        ModelName::AutoRec => Box::new(AutoRec::restore(m.k, bag)?),
        ModelName::BprMf => Box::new(BprMf::restore(m.k, bag)?),
        ModelName::Cml => Box::new(Cml::restore(m.k, m.margin.unwrap_or(0.5), bag)?),
        ModelName::Gmf | ModelName::Mlp | ModelName::NeuMf => {
            Box::new(Ncf::restore(ncf_variant(m.name), m.k, &layers(cfg), bag)?)
        }
        ModelName::Cdae => Box::new(Cdae::restore(m.k, m.dropout_q.unwrap_or(0.0), bag)?),
        ModelName::Prme => Box::new(Prme::restore(m.k, m.alpha.unwrap_or(0.5), bag)?),
        ModelName::Caser => Box::new(Caser::restore(caser_config(cfg), bag)?),
        ModelName::AttRec => Box::new(AttRec::restore(attrec_config(cfg), bag)?),
    })
}

/// Scores the held-out part: RMSE/MAE for rating models, ranking metrics at
/// the configured cutoffs otherwise.
pub fn evaluate(cfg: &ExperimentConfig, model: &dyn Recommender, data: &Prepared) -> Result<MetricReport> {
    let seed = cfg.data.seed;
    match data {
        Prepared::Rows { test, .. } => {
            let Some(fm) = model.as_fm() else {
                return Err(Error::InvalidArgument("libfm rows can only be scored by fm".into()));
            };
            let pairs = test
                .iter()
                .map(|r| fm.predict(r).map(|p| (p, r.label)))
                .collect::<Result<Vec<_>>>()?;
            let (rmse, mae) = rmse_mae(&pairs)?;
            Ok(MetricReport {
                values: vec![("rmse".into(), rmse), ("mae".into(), mae)],
                protocol: "rating".into(),
                seed,
                users: test.len(),
                skipped: 0,
            })
        }
        Prepared::Interactions(s) => match &cfg.eval {
            None => {
                let test = binarized_labels(cfg, &s.test);
                evaluate_rating(|u, i| model.score_one(u, i), &test, seed)
            }
            Some(e) => {
                let mut spec = EvalSpec::new(e.protocol, e.cutoffs.clone(), seed);
                spec.threads = e.threads;
                evaluate_ranking(model, &s.train, &s.test, &spec)
            }
        },
    }
}

/// FM with a binary task is scored against 0/1 labels.
fn binarized_labels(cfg: &ExperimentConfig, test: &InteractionTable) -> InteractionTable {
    match (cfg.model.name, cfg.data.binarize_threshold) {
        (ModelName::Fm, Some(t)) => test.with_interactions(
            test.interactions()
                .iter()
                .map(|x| crate::data::Interaction {
                    rating: binary_label(x.rating, t),
                    ..*x
                })
                .collect(),
        ),
        _ => test.clone(),
    }
}

pub fn checkpoint_of(cfg: &ExperimentConfig, model: &dyn Recommender) -> Checkpoint {
    Checkpoint {
        model: model.name().to_string(),
        config: cfg.to_toml(),
        tensors: model.tensors(),
    }
}

/// Parses the config echo of a checkpoint and rebuilds its model.
pub fn open_checkpoint(ckpt: &Checkpoint) -> Result<(ExperimentConfig, Box<dyn Recommender>)> {
    let cfg = ExperimentConfig::parse(&ckpt.config)?;
    if cfg.model.name.as_str() != ckpt.model {
        return Err(Error::InvalidArgument(format!(
            "checkpoint holds `{}` but its config names `{}`",
            ckpt.model, cfg.model.name
        )));
    }
    let model = restore_model(&cfg, ckpt.tensors.clone())?;
    Ok((cfg, model))
}

/// Load, split, train, evaluate.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let data = prepare(cfg)?;
    let (model, trace) = train_model(cfg, &data)?;
    let report = evaluate(cfg, model.as_ref(), &data)?;
    let checkpoint = checkpoint_of(cfg, model.as_ref());
    Ok(RunOutput {
        report,
        trace,
        checkpoint,
    })
}
