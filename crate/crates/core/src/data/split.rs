//! Train/test partitioning protocols.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Interaction, InteractionTable};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SplitSpec {
    /// A seeded shuffle sends `round(ratio · n)` interactions to test.
    RandomHoldout { ratio: f64, seed: u64 },
    /// Each user's latest interaction goes to test.
    LeaveOneOut,
    /// The last `ceil(ratio · n_u)` interactions of every user go to test.
    Temporal { ratio: f64 },
}

impl fmt::Display for SplitSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::RandomHoldout { ratio, .. } => write!(f, "random:{ratio}"),
            Self::LeaveOneOut => f.write_str("loo"),
            Self::Temporal { ratio } => write!(f, "temporal:{ratio}"),
        }
    }
}

/// Parses the config spelling `random:<ratio>`, `loo` or `temporal:<ratio>`.
/// The random seed is supplied separately.
pub fn parse_split(text: &str, seed: u64) -> Result<SplitSpec> {
    let bad = || Error::InvalidArgument(format!("bad split `{text}`"));
    let spec = match text.split_once(':') {
        None if text == "loo" => SplitSpec::LeaveOneOut,
        Some(("random", r)) => SplitSpec::RandomHoldout {
            ratio: f64::from_str(r).map_err(|_| bad())?,
            seed,
        },
        Some(("temporal", r)) => SplitSpec::Temporal {
            ratio: f64::from_str(r).map_err(|_| bad())?,
        },
        _ => return Err(bad()),
    };
    spec.validate()?;
    Ok(spec)
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::RandomHoldout { ratio, .. } | Self::Temporal { ratio } if !(ratio > 0.0 && ratio < 1.0) => Err(
                Error::InvalidArgument(format!("split ratio must lie in (0, 1), got {ratio}")),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: InteractionTable,
    pub test: InteractionTable,
    /// Test interactions removed because their user or item never occurs in
    /// train.
    pub dropped: usize,
}

pub fn split(table: &InteractionTable, spec: SplitSpec) -> Result<Split> {
    spec.validate()?;
    let rows = table.interactions();
    let mut to_test = vec![false; rows.len()];

    match spec {
        SplitSpec::RandomHoldout { ratio, seed } => {
            let mut order: Vec<usize> = (0..rows.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let n_test = (ratio * rows.len() as f64).round() as usize;
            for &k in &order[..n_test] {
                to_test[k] = true;
            }
        }
        SplitSpec::LeaveOneOut | SplitSpec::Temporal { .. } => {
            let mut per_user: Vec<Vec<(i64, usize)>> = vec![Vec::new(); table.n_users()];
            for (pos, x) in rows.iter().enumerate() {
                per_user[x.user].push((x.timestamp, pos));
            }
            for mut list in per_user {
                list.sort_unstable();
                let n = list.len();
                let n_test = match spec {
                    SplitSpec::LeaveOneOut => usize::from(n >= 2),
                    SplitSpec::Temporal { ratio } => (ratio * n as f64).ceil() as usize,
                    SplitSpec::RandomHoldout { .. } => unreachable!(),
                };
                for &(_, pos) in &list[n - n_test.min(n)..] {
                    to_test[pos] = true;
                }
            }
        }
    }

    let (mut train, mut test): (Vec<Interaction>, Vec<Interaction>) = (Vec::new(), Vec::new());
    for (x, &t) in rows.iter().zip(&to_test) {
        if t {
            test.push(*x);
        } else {
            train.push(*x);
        }
    }
    let mut seen_user = vec![false; table.n_users()];
    let mut seen_item = vec![false; table.n_items()];
    for x in &train {
        seen_user[x.user] = true;
        seen_item[x.item] = true;
    }
    let before = test.len();
    test.retain(|x| seen_user[x.user] && seen_item[x.item]);
    let dropped = before - test.len();
    if dropped > 0 {
        log::info!("dropped {dropped} cold-start test interactions");
    }
    Ok(Split {
        train: table.with_interactions(train),
        test: table.with_interactions(test),
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn x(user: usize, item: usize, timestamp: i64) -> Interaction {
        Interaction {
            user,
            item,
            rating: 1.0,
            timestamp,
        }
    }

    #[test]
    fn leave_one_out_holds_latest() {
        // user 1 keeps item 2 warm
        let rows = vec![x(0, 2, 3), x(0, 0, 1), x(0, 1, 2), x(1, 2, 0)];
        let t = InteractionTable::from_dense(rows, 0, 0);
        let s = split(&t, SplitSpec::LeaveOneOut).unwrap();
        assert_eq!(s.test.interactions(), &[x(0, 2, 3)]);
        assert_eq!(s.train.len(), 3);
    }

    #[test]
    fn single_interaction_user_stays_in_train() {
        let t = InteractionTable::from_dense(vec![x(0, 0, 1), x(1, 0, 5), x(1, 1, 6)], 0, 0);
        let s = split(&t, SplitSpec::LeaveOneOut).unwrap();
        assert!(s.train.interactions().contains(&x(0, 0, 1)));
        assert!(s.test.interactions().iter().all(|r| r.user != 0));
    }

    #[test]
    fn temporal_takes_ceiling_share() {
        let rows = (0..5)
            .map(|k| x(0, k, k as i64))
            .chain([x(1, 0, 0), x(2, 3, 0), x(2, 4, 1), x(2, 0, 2), x(2, 1, 3), x(2, 2, 4)])
            .collect();
        let t = InteractionTable::from_dense(rows, 0, 0);
        let s = split(&t, SplitSpec::Temporal { ratio: 0.3 }).unwrap();
        let mut test_items: Vec<usize> = s
            .test
            .interactions()
            .iter()
            .filter(|r| r.user == 0)
            .map(|r| r.item)
            .collect();
        test_items.sort();
        assert_eq!(test_items, vec![3, 4]);
        // user 1's only interaction lands in test and is dropped as cold-start
        assert_eq!(s.dropped, 1);
    }

    #[test]
    fn random_holdout_is_deterministic() {
        let rows = (0..50).map(|k| x(k % 5, k % 7, k as i64)).collect();
        let t = InteractionTable::from_dense(rows, 0, 0);
        let spec = SplitSpec::RandomHoldout { ratio: 0.2, seed: 7 };
        let a = split(&t, spec).unwrap();
        let b = split(&t, spec).unwrap();
        assert_eq!(a.test, b.test);
        assert_eq!(a.train, b.train);
    }

    #[test]
    fn ratios_are_validated() {
        let t = InteractionTable::from_dense(vec![x(0, 0, 0)], 0, 0);
        for ratio in [0.0, 1.0, -0.5, f64::NAN] {
            assert!(split(&t, SplitSpec::Temporal { ratio }).is_err());
            assert!(split(&t, SplitSpec::RandomHoldout { ratio, seed: 0 }).is_err());
        }
    }

    #[test]
    fn parses_config_spelling() {
        assert_eq!(parse_split("loo", 1).unwrap(), SplitSpec::LeaveOneOut);
        assert_eq!(
            parse_split("random:0.1", 9).unwrap(),
            SplitSpec::RandomHoldout { ratio: 0.1, seed: 9 }
        );
        assert!(parse_split("temporal:1.5", 0).is_err());
        assert!(parse_split("kfold:5", 0).is_err());
    }
}
