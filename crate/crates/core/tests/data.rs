mod common;

use std::collections::{HashMap, HashSet};

use drec_core::data::{
    build_sequences, parse_interactions, parse_libfm, sample_negatives, split, Interaction, InteractionTable,
    Separator, SparseRow, SplitSpec, UirtOptions,
};
use proptest::prelude::*;

/// Distinct (user, item) cells with small integer ratings and timestamps.
fn cells() -> impl Strategy<Value = Vec<(u8, u8, u8, i32)>> {
    proptest::collection::vec((0u8..12, 0u8..15, 1u8..=5, -50i32..50), 1..80).prop_map(|mut v| {
        let mut seen = HashSet::new();
        v.retain(|&(u, i, _, _)| seen.insert((u, i)));
        v
    })
}

fn table_of(cells: &[(u8, u8, u8, i32)]) -> InteractionTable {
    let text: String = cells
        .iter()
        .map(|(u, i, r, t)| format!("u{u}\ti{i}\t{r}\t{t}\n"))
        .collect();
    parse_interactions(&text, &UirtOptions::default()).unwrap()
}

fn raw(table: &InteractionTable) -> Vec<(String, String, f64, i64)> {
    table
        .interactions()
        .iter()
        .map(|x| {
            (
                table.users().raw(x.user).unwrap().to_string(),
                table.items().raw(x.item).unwrap().to_string(),
                x.rating,
                x.timestamp,
            )
        })
        .collect()
}

proptest! {
    #[test]
    fn uirt_round_trips_under_every_separator(cells in cells(), sep in 0usize..3, header in any::<bool>()) {
        let (glue, separator) = [("\t", Separator::Tab), (",", Separator::Comma), ("   ", Separator::Whitespace)][sep];
        let mut text = if header { format!("user{glue}item{glue}rating{glue}ts\n") } else { String::new() };
        for (u, i, r, t) in &cells {
            text.push_str(&format!("u{u}{glue}i{i}{glue}{r}{glue}{t}\n"));
        }
        let opts = UirtOptions { separator: Some(separator), has_header: header };
        let t = parse_interactions(&text, &opts).unwrap();
        let want: Vec<(String, String, f64, i64)> = cells
            .iter()
            .map(|(u, i, r, ts)| (format!("u{u}"), format!("i{i}"), *r as f64, *ts as i64))
            .collect();
        prop_assert_eq!(raw(&t), want);
        // dense ids follow first appearance
        let mut first = Vec::new();
        for (u, ..) in &cells {
            if !first.contains(u) {
                first.push(*u);
            }
        }
        for (d, u) in first.iter().enumerate() {
            prop_assert_eq!(t.users().dense(&format!("u{u}")), Some(d));
        }
    }

    #[test]
    fn uirt_parser_never_panics(text in "[ui0-9\\t,. \\n-]{0,200}") {
        let _ = parse_interactions(&text, &UirtOptions::default());
    }

    #[test]
    fn duplicate_pairs_keep_the_latest(t1 in -100i64..100, t2 in -100i64..100) {
        let text = format!("a\tb\t1\t{t1}\na\tb\t2\t{t2}\n");
        let t = parse_interactions(&text, &UirtOptions::default()).unwrap();
        prop_assert_eq!(t.len(), 1);
        let want = if t2 >= t1 { 2.0 } else { 1.0 };
        prop_assert_eq!(t.interactions()[0].rating, want);
    }

    #[test]
    fn libfm_round_trips(rows in proptest::collection::vec(
        (-5i8..5, proptest::collection::btree_map(0usize..40, -100i16..100, 0..8)), 0..20)) {
        let text: String = rows
            .iter()
            .map(|(label, feats)| {
                let mut line = label.to_string();
                for (i, v) in feats {
                    line.push_str(&format!(" {i}:{}", f64::from(*v) / 4.0));
                }
                line + "\n"
            })
            .collect();
        let parsed = parse_libfm(&text).unwrap();
        let want: Vec<SparseRow> = rows
            .iter()
            .map(|(l, f)| SparseRow::new(f64::from(*l), f.iter().map(|(&i, &v)| (i, f64::from(v) / 4.0)).collect()).unwrap())
            .collect();
        prop_assert_eq!(parsed, want);
    }

    #[test]
    fn libfm_parser_never_panics(text in "[0-9:. \\n-]{0,200}") {
        let _ = parse_libfm(&text);
    }

    #[test]
    fn random_split_partitions(cells in cells(), ratio in 0.0f64..1.0, seed in any::<u64>()) {
        let t = table_of(&cells);
        let s = split(&t, SplitSpec::RandomHoldout { ratio, seed }).unwrap();
        prop_assert_eq!(s.train.len() + s.test.len() + s.dropped, t.len());
        let again = split(&t, SplitSpec::RandomHoldout { ratio, seed }).unwrap();
        prop_assert_eq!(s.test.interactions(), again.test.interactions());
        check_disjoint_and_warm(&t, &s.train, &s.test)?;
    }

    #[test]
    fn leave_one_out_holds_out_each_latest(cells in cells()) {
        let t = table_of(&cells);
        let s = split(&t, SplitSpec::LeaveOneOut).unwrap();
        check_disjoint_and_warm(&t, &s.train, &s.test)?;
        let mut count: HashMap<usize, usize> = HashMap::new();
        for x in s.test.interactions() {
            *count.entry(x.user).or_default() += 1;
            let later = s.train.interactions().iter().any(|y| y.user == x.user && y.timestamp > x.timestamp);
            prop_assert!(!later);
        }
        prop_assert!(count.values().all(|&c| c == 1));
    }

    #[test]
    fn temporal_split_keeps_the_past_in_train(cells in cells(), ratio in 0.05f64..0.95) {
        let t = table_of(&cells);
        let s = split(&t, SplitSpec::Temporal { ratio }).unwrap();
        prop_assert_eq!(s.train.len() + s.test.len() + s.dropped, t.len());
        for x in s.test.interactions() {
            let later = s.train.interactions().iter().any(|y| y.user == x.user && y.timestamp > x.timestamp);
            prop_assert!(!later);
        }
    }

    #[test]
    fn negatives_are_never_consumed(cells in cells(), seed in any::<u64>(), k in 1usize..20) {
        let t = table_of(&cells);
        let consumed = t.user_items();
        for u in 0..t.n_users() {
            match sample_negatives(&t, u, k, seed, &[]) {
                Ok(neg) => {
                    prop_assert_eq!(neg.len(), k);
                    prop_assert!(neg.iter().all(|i| *i < t.n_items() && !consumed[u].contains(i)));
                    prop_assert_eq!(&neg, &sample_negatives(&t, u, k, seed, &[]).unwrap());
                }
                Err(_) => prop_assert_eq!(consumed[u].len(), t.n_items()),
            }
        }
    }

    #[test]
    fn sequences_slide_over_chronological_histories(cells in cells(), window in 1usize..5, horizon in 1usize..3) {
        let t = table_of(&cells);
        let d = build_sequences(&t, window, horizon).unwrap();
        let chron = t.chronological();
        let expected: usize = chron.iter().map(|s| s.len().saturating_sub(1)).sum();
        prop_assert_eq!(d.instances.len(), expected);
        for inst in &d.instances {
            prop_assert_eq!(inst.history.len(), window);
            prop_assert!(!inst.targets.is_empty() && inst.targets.len() <= horizon);
            let seq = &chron[inst.user];
            let p = seq.windows(inst.targets.len()).position(|w| w == &inst.targets[..]).unwrap();
            let real: Vec<usize> = inst.history.iter().copied().filter(|&i| i != d.pad()).collect();
            prop_assert_eq!(&real[..], &seq[p.saturating_sub(window)..p]);
        }
        for (u, w) in d.last_windows().iter().enumerate() {
            let seq = &chron[u];
            prop_assert_eq!(w.last().copied(), seq.last().copied().or(Some(d.pad())));
        }
    }
}

fn check_disjoint_and_warm(
    all: &InteractionTable,
    train: &InteractionTable,
    test: &InteractionTable,
) -> Result<(), TestCaseError> {
    let key = |x: &Interaction| (x.user, x.item);
    let tr: HashSet<_> = train.interactions().iter().map(key).collect();
    let users: HashSet<_> = train.interactions().iter().map(|x| x.user).collect();
    let items: HashSet<_> = train.interactions().iter().map(|x| x.item).collect();
    for x in test.interactions() {
        prop_assert!(!tr.contains(&key(x)));
        prop_assert!(users.contains(&x.user) && items.contains(&x.item));
    }
    prop_assert_eq!(train.n_users(), all.n_users());
    prop_assert_eq!(train.n_items(), all.n_items());
    Ok(())
}

#[test]
fn malformed_lines_report_their_number() {
    let err = parse_interactions("a\tb\t1\na\tb\n", &UirtOptions::default()).unwrap_err();
    assert!(err.to_string().contains('2'), "{err}");
    let err = parse_libfm("1 0:1\n1 3:x\n").unwrap_err();
    assert!(err.to_string().contains('2'), "{err}");
}

#[test]
fn fixture_is_small_and_sequential() {
    let t = common::tiny_fixture();
    assert!(t.len() <= 50);
    assert!(t.chronological().iter().all(|s| s.len() == 7));
}
