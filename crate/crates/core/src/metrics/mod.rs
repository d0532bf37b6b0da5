//! RMSE/MAE for rating prediction; Precision, Recall, NDCG and MRR for
//! ranked lists.

mod ranking;
mod rating;
mod report;

pub use ranking::{
    evaluate_ranking, evaluate_rating, hit_rate, rank_by_score, ranking_metrics, EvalSpec, FnScorer, Protocol, Scorer,
    UserMetrics,
};
pub use rating::rmse_mae;
pub use report::MetricReport;
