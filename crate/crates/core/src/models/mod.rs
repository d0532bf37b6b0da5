//! Rating, top-n and sequential recommenders on the autodiff backend.
//!
//! Every model keeps its trainable tensors in a [`ParamSet`] and exposes a
//! `loss` builder over an explicit batch, so the same code path serves
//! training and gradient checking. Fixed context that scoring needs (global
//! mean, training histories, last windows) travels with the model so a
//! checkpoint is self-contained.
//!
//! [`ParamSet`]: drec_autodiff::ParamSet

mod attrec;
mod autorec;
mod biased_svd;
mod bprmf;
mod caser;
mod cdae;
mod cml;
pub(crate) mod common;
mod fm;
mod ncf;
mod popularity;
mod prme;

use drec_autodiff::Tensor;

use crate::error::Result;
use crate::metrics::Scorer;

pub use attrec::{AttRec, AttRecConfig, AttRecTriple};
pub use autorec::AutoRec;
pub use biased_svd::BiasedSvd;
pub use bprmf::BprMf;
pub use caser::{Caser, CaserConfig, CaserExample};
pub use cdae::{Cdae, CdaeExample};
pub use cml::Cml;
pub use common::{max_row_norm, Optimizer, TensorBag, TrainOptions, TrainTrace, INIT_STD};
pub use fm::{pairwise_term, score_fm, Fm, FmRegularization, FmTask};
pub use ncf::{default_layers, fit_gmf, Ncf, NcfVariant};
pub use popularity::Popularity;
pub use prme::{Prme, Transition};

/// What a model's scores mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    /// Scores are predicted ratings, reported with RMSE/MAE.
    Rating,
    /// Scores order items for a user, higher first.
    Ranking,
}

/// A trained model: scoring plus the tensors needed to rebuild it.
pub trait Recommender: Scorer + Send {
    fn name(&self) -> &'static str;
    fn task(&self) -> Task;
    fn n_users(&self) -> usize;
    fn n_items(&self) -> usize;
    /// Parameters and context, in a stable order.
    fn tensors(&self) -> Vec<(String, Tensor)>;

    /// The model as an FM, for scoring raw feature rows.
    fn as_fm(&self) -> Option<&Fm> {
        None
    }

    fn score_one(&self, user: usize, item: usize) -> Result<f64> {
        Ok(self.score(user, &[item])?[0])
    }
}
