//! Sliding-window training instances for sequential models.

use crate::data::InteractionTable;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceInstance {
    pub user: usize,
    /// Exactly `window` ids, left-padded with the padding id.
    pub history: Vec<usize>,
    /// Between 1 and `horizon` next items.
    pub targets: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDataset {
    /// Chronological item ids per user.
    pub sequences: Vec<Vec<usize>>,
    pub instances: Vec<SequenceInstance>,
    pub window: usize,
    pub horizon: usize,
    pub n_users: usize,
    pub n_items: usize,
}

impl SequenceDataset {
    /// The reserved padding id (`n_items`).
    pub fn pad(&self) -> usize {
        self.n_items
    }

    /// The last `window` items of each user, left-padded.
    pub fn last_windows(&self) -> Vec<Vec<usize>> {
        self.sequences
            .iter()
            .map(|s| left_padded(s, s.len(), self.window, self.n_items))
            .collect()
    }
}

/// `seq[..end]`'s last `len` items, left-padded with `pad`.
pub fn left_padded(seq: &[usize], end: usize, len: usize, pad: usize) -> Vec<usize> {
    let start = end.saturating_sub(len);
    let mut out = vec![pad; len - (end - start)];
    out.extend_from_slice(&seq[start..end]);
    out
}

/// One instance per position that has at least one preceding item.
pub fn build_sequences(table: &InteractionTable, window: usize, horizon: usize) -> Result<SequenceDataset> {
    if window < 1 || horizon < 1 {
        return Err(Error::InvalidArgument(format!(
            "window and horizon must be >= 1, got L={window}, T={horizon}"
        )));
    }
    let sequences = table.chronological();
    let pad = table.n_items();
    let mut instances = Vec::new();
    for (user, seq) in sequences.iter().enumerate() {
        for p in 1..seq.len() {
            instances.push(SequenceInstance {
                user,
                history: left_padded(seq, p, window, pad),
                targets: seq[p..(p + horizon).min(seq.len())].to_vec(),
            });
        }
    }
    Ok(SequenceDataset {
        sequences,
        instances,
        window,
        horizon,
        n_users: table.n_users(),
        n_items: table.n_items(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Interaction;

    fn history(items: &[usize], n_items: usize) -> InteractionTable {
        let rows = items
            .iter()
            .enumerate()
            .map(|(t, &item)| Interaction {
                user: 0,
                item,
                rating: 1.0,
                timestamp: t as i64,
            })
            .collect();
        InteractionTable::from_dense(rows, 1, n_items)
    }

    #[test]
    fn windows_are_left_padded() {
        let d = build_sequences(&history(&[0, 1, 2], 3), 2, 1).unwrap();
        let pad = d.pad();
        assert_eq!(pad, 3);
        let got: Vec<_> = d
            .instances
            .iter()
            .map(|s| (s.history.clone(), s.targets.clone()))
            .collect();
        assert_eq!(got, vec![(vec![pad, 0], vec![1]), (vec![0, 1], vec![2])]);
    }

    #[test]
    fn single_item_history_yields_nothing() {
        let d = build_sequences(&history(&[4], 5), 3, 1).unwrap();
        assert!(d.instances.is_empty());
    }

    #[test]
    fn horizon_may_be_truncated() {
        let d = build_sequences(&history(&[0, 1, 2, 3], 4), 3, 2).unwrap();
        let last = d.instances.last().unwrap();
        assert_eq!(last.history, vec![0, 1, 2]);
        assert_eq!(last.targets, vec![3]);
        assert_eq!(d.instances[0].targets, vec![1, 2]);
    }

    #[test]
    fn rejects_zero_window() {
        assert!(build_sequences(&history(&[0, 1], 2), 0, 1).is_err());
        assert!(build_sequences(&history(&[0, 1], 2), 1, 0).is_err());
    }

    #[test]
    fn last_windows_cover_the_tail() {
        let d = build_sequences(&history(&[0, 1, 2], 3), 2, 1).unwrap();
        assert_eq!(d.last_windows(), vec![vec![1, 2]]);
    }
}
