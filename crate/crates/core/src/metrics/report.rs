use std::fmt::Write;

/// Named metric values plus the settings needed to reproduce them.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    /// Metric name (`ndcg@10`, `mrr`, `rmse`, ...) to value, in output order.
    pub values: Vec<(String, f64)>,
    pub protocol: String,
    pub seed: u64,
    /// Users that contributed to the averages.
    pub users: usize,
    /// Users skipped for lack of relevant items.
    pub skipped: usize,
}

impl MetricReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.iter().find(|(k, _)| k == name).map(|(_, v)| *v)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.iter().map(|(k, _)| k.as_str())
    }

    /// Header lines followed by one `name<TAB>value` line per metric, six
    /// decimal places.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "# protocol: {}", self.protocol).unwrap();
        writeln!(out, "# seed: {}", self.seed).unwrap();
        writeln!(out, "# users: {}", self.users).unwrap();
        for (k, v) in &self.values {
            writeln!(out, "{k}\t{v:.6}").unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_layout() {
        let r = MetricReport {
            values: vec![("ndcg@5".into(), 0.5), ("mrr".into(), 1.0 / 3.0)],
            protocol: "full".into(),
            seed: 7,
            users: 12,
            skipped: 0,
        };
        assert_eq!(
            r.to_text(),
            "# protocol: full\n# seed: 7\n# users: 12\nndcg@5\t0.500000\nmrr\t0.333333\n"
        );
        assert_eq!(r.get("mrr"), Some(1.0 / 3.0));
        assert_eq!(r.get("recall@5"), None);
    }
}
