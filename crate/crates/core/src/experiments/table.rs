use serde::{Deserialize, Serialize};

/// Mean, sample standard deviation and count of a set of observations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl Stats {
    /// Summarizes `values` in iteration order. `std` uses the `n − 1`
    /// denominator and is 0 for fewer than two values.
    pub fn of<I: IntoIterator<Item = f64>>(values: I) -> Stats {
        let values: Vec<f64> = values.into_iter().collect();
        let count = values.len();
        if count == 0 {
            return Stats {
                mean: f64::NAN,
                std: 0.0,
                count,
            };
        }
        let mean = values.iter().sum::<f64>() / count as f64;
        let std = if count > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
        } else {
            0.0
        };
        Stats { mean, std, count }
    }

    pub fn stderr(&self) -> f64 {
        self.std / (self.count as f64).sqrt()
    }
}

/// One `(metric, layer_or_width, mean, std, count)` record.
///
/// Metrics are named `<quantity>/<series>`, e.g. `act_ratio/he_n500`; the
/// quantity selects a plot panel and the series a line within it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub metric: String,
    pub layer_or_width: u64,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl SummaryRow {
    pub fn new(metric: impl Into<String>, key: usize, stats: Stats) -> Self {
        Self {
            metric: metric.into(),
            layer_or_width: key as u64,
            mean: stats.mean,
            std: stats.std,
            count: stats.count,
        }
    }

    pub fn point(metric: impl Into<String>, key: usize, value: f64, count: usize) -> Self {
        Self::new(
            metric,
            key,
            Stats {
                mean: value,
                std: 0.0,
                count,
            },
        )
    }

    pub fn quantity(&self) -> &str {
        self.metric.split_once('/').map_or(&self.metric, |(q, _)| q)
    }

    pub fn series(&self) -> &str {
        self.metric.split_once('/').map_or("", |(_, s)| s)
    }
}

/// Output of an experiment plus enough metadata to reproduce it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub name: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub rows: Vec<SummaryRow>,
}

impl SummaryTable {
    pub fn new(name: impl Into<String>, seed: u64, config: serde_json::Value) -> Self {
        Self {
            name: name.into(),
            seed,
            config,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: SummaryRow) {
        self.rows.push(row);
    }

    /// Rows whose metric equals `metric`, in table order.
    pub fn series(&self, metric: &str) -> Vec<&SummaryRow> {
        self.rows.iter().filter(|r| r.metric == metric).collect()
    }

    pub fn get(&self, metric: &str, key: usize) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.metric == metric && r.layer_or_width == key as u64)
    }

    /// Distinct metric names in first-appearance order.
    pub fn metrics(&self) -> Vec<&str> {
        let mut seen: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !seen.contains(&r.metric.as_str()) {
                seen.push(&r.metric);
            }
        }
        seen
    }

    /// Appends the rows of `other`, keeping this table's metadata.
    pub fn extend(&mut self, other: SummaryTable) {
        self.rows.extend(other.rows);
    }
}
