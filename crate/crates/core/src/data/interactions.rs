//! User-item-rating-timestamp records and the UIRT text format.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

/// One (user, item) observation with dense ids.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub rating: f64,
    pub timestamp: i64,
}

/// Bijection between raw string ids and dense `0..len` ids.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    raw: Vec<String>,
    dense: HashMap<String, usize>,
}

impl IdMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Dense id for `raw`, assigning the next free id on first sight.
    pub fn intern(&mut self, raw: &str) -> usize {
        if let Some(&id) = self.dense.get(raw) {
            return id;
        }
        let id = self.raw.len();
        self.raw.push(raw.to_string());
        self.dense.insert(raw.to_string(), id);
        id
    }

    pub fn dense(&self, raw: &str) -> Option<usize> {
        self.dense.get(raw).copied()
    }

    pub fn raw(&self, dense: usize) -> Option<&str> {
        self.raw.get(dense).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }
}

/// Deduplicated interactions sharing one dense id space.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionTable {
    interactions: Vec<Interaction>,
    users: IdMap,
    items: IdMap,
}

impl InteractionTable {
    /// Builds a table over existing id maps. Panics if an id is out of range.
    pub fn new(interactions: Vec<Interaction>, users: IdMap, items: IdMap) -> Self {
        for x in &interactions {
            assert!(x.user < users.len() && x.item < items.len());
        }
        Self {
            interactions,
            users,
            items,
        }
    }

    /// Builds a table whose raw ids are the decimal dense ids, for synthetic
    /// data. Sizes are `max id + 1`, or the given minimums.
    pub fn from_dense(interactions: Vec<Interaction>, n_users: usize, n_items: usize) -> Self {
        let n_users = interactions.iter().map(|x| x.user + 1).max().unwrap_or(0).max(n_users);
        let n_items = interactions.iter().map(|x| x.item + 1).max().unwrap_or(0).max(n_items);
        let mut users = IdMap::new();
        let mut items = IdMap::new();
        for u in 0..n_users {
            users.intern(&u.to_string());
        }
        for i in 0..n_items {
            items.intern(&i.to_string());
        }
        Self::new(interactions, users, items)
    }

    /// Same id space, different rows.
    pub fn with_interactions(&self, interactions: Vec<Interaction>) -> Self {
        Self::new(interactions, self.users.clone(), self.items.clone())
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn users(&self) -> &IdMap {
        &self.users
    }

    pub fn items(&self) -> &IdMap {
        &self.items
    }

    /// Sorted item ids per user.
    pub fn user_items(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_users()];
        for x in &self.interactions {
            out[x.user].push(x.item);
        }
        for v in &mut out {
            v.sort_unstable();
            v.dedup();
        }
        out
    }

    /// Per-user item lists ordered by timestamp, ties by row order.
    pub fn chronological(&self) -> Vec<Vec<usize>> {
        let mut rows: Vec<Vec<(i64, usize, usize)>> = vec![Vec::new(); self.n_users()];
        for (pos, x) in self.interactions.iter().enumerate() {
            rows[x.user].push((x.timestamp, pos, x.item));
        }
        rows.into_iter()
            .map(|mut r| {
                r.sort_unstable();
                r.into_iter().map(|(_, _, item)| item).collect()
            })
            .collect()
    }

    /// `(min, max)` rating, or `None` when empty.
    pub fn rating_range(&self) -> Option<(f64, f64)> {
        let mut it = self.interactions.iter().map(|x| x.rating);
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), r| (lo.min(r), hi.max(r))))
    }

    pub fn mean_rating(&self) -> Option<f64> {
        if self.interactions.is_empty() {
            return None;
        }
        Some(self.interactions.iter().map(|x| x.rating).sum::<f64>() / self.len() as f64)
    }

    /// Keeps interactions with `rating >= threshold`, relabelled 1.0.
    pub fn binarize(&self, threshold: f64) -> Self {
        let kept = self
            .interactions
            .iter()
            .filter(|x| x.rating >= threshold)
            .map(|x| Interaction { rating: 1.0, ..*x })
            .collect();
        self.with_interactions(kept)
    }
}

/// Field separator of a UIRT file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Separator {
    Tab,
    Comma,
    /// Runs of spaces or tabs.
    Whitespace,
}

impl Separator {
    fn detect(line: &str) -> Self {
        if line.contains('\t') {
            Self::Tab
        } else if line.contains(',') {
            Self::Comma
        } else {
            Self::Whitespace
        }
    }

    fn split(self, line: &str) -> Vec<&str> {
        match self {
            Self::Tab => line.split('\t').map(str::trim).collect(),
            Self::Comma => line.split(',').map(str::trim).collect(),
            Self::Whitespace => line.split_whitespace().collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UirtOptions {
    /// `None` auto-detects from the first data line.
    pub separator: Option<Separator>,
    pub has_header: bool,
}

fn parse_timestamp(field: &str) -> Option<i64> {
    field.parse::<i64>().ok().or_else(|| {
        let f = field.parse::<f64>().ok()?;
        (f.is_finite() && f.fract() == 0.0 && f.abs() < 9.0e18).then_some(f as i64)
    })
}

/// Parses UIRT text: `user item rating [timestamp]` per line.
///
/// Blank lines are ignored. A missing timestamp becomes the 0-based ordinal
/// of the data line. Repeated (user, item) pairs keep the record with the
/// latest timestamp (the later line on ties).
pub fn parse_interactions(text: &str, opts: &UirtOptions) -> Result<InteractionTable> {
    let mut users = IdMap::new();
    let mut items = IdMap::new();
    let mut rows: Vec<Interaction> = Vec::new();
    let mut slot: HashMap<(usize, usize), usize> = HashMap::new();
    let mut separator = opts.separator;
    let mut ordinal = 0i64;
    let mut header_pending = opts.has_header;

    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if header_pending {
            header_pending = false;
            continue;
        }
        let sep = *separator.get_or_insert_with(|| Separator::detect(line));
        let fields = sep.split(line);
        if !(3..=4).contains(&fields.len()) {
            return Err(Error::parse(
                line_no,
                format!("expected 3 or 4 fields, found {}", fields.len()),
            ));
        }
        if fields[0].is_empty() || fields[1].is_empty() {
            return Err(Error::parse(line_no, "empty user or item id"));
        }
        let rating: f64 = fields[2]
            .parse()
            .ok()
            .filter(|r: &f64| r.is_finite())
            .ok_or_else(|| Error::parse(line_no, format!("bad rating `{}`", fields[2])))?;
        let timestamp = match fields.get(3) {
            Some(t) => parse_timestamp(t).ok_or_else(|| Error::parse(line_no, format!("bad timestamp `{t}`")))?,
            None => ordinal,
        };
        ordinal += 1;

        let user = users.intern(fields[0]);
        let item = items.intern(fields[1]);
        let record = Interaction {
            user,
            item,
            rating,
            timestamp,
        };
        match slot.get(&(user, item)) {
            Some(&pos) => {
                if timestamp >= rows[pos].timestamp {
                    rows[pos] = record;
                }
            }
            None => {
                slot.insert((user, item), rows.len());
                rows.push(record);
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::Empty("no interactions".into()));
    }
    Ok(InteractionTable::new(rows, users, items))
}

pub fn load_interactions(path: impl AsRef<Path>, opts: &UirtOptions) -> Result<InteractionTable> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_interactions(&text, opts)
}
