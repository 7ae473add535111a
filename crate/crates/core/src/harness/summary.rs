//! Terminal-metric summaries across seeds.

use std::collections::BTreeMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{read_rows, Row};

/// Mean and population standard deviation (`n` denominator) of one metric's
/// final value across seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
    pub seeds: usize,
}

/// `run_id -> metric -> summary`, ordered by key so the JSON is stable.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub runs: BTreeMap<String, BTreeMap<String, MetricSummary>>,
}

impl Summary {
    /// For every run and metric, takes each seed's value at the largest step
    /// where that metric was recorded.
    pub fn from_rows(rows: &[Row]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Csv {
                row: 1,
                msg: "no data rows to summarize".into(),
            });
        }
        let mut last: BTreeMap<(&str, &str), BTreeMap<u64, (u64, f64)>> = BTreeMap::new();
        for r in rows {
            let per_seed = last.entry((&r.run_id, &r.metric)).or_default();
            let slot = per_seed.entry(r.seed).or_insert((r.step, r.value));
            if r.step >= slot.0 {
                *slot = (r.step, r.value);
            }
        }
        let mut runs: BTreeMap<String, BTreeMap<String, MetricSummary>> = BTreeMap::new();
        for ((run, metric), per_seed) in last {
            let values: Vec<f64> = per_seed.values().map(|&(_, v)| v).collect();
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            runs.entry(run.to_string()).or_default().insert(
                metric.to_string(),
                MetricSummary {
                    mean,
                    std: var.sqrt(),
                    seeds: values.len(),
                },
            );
        }
        Ok(Summary { runs })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn get(&self, run: &str, metric: &str) -> Option<&MetricSummary> {
        self.runs.get(run)?.get(metric)
    }
}

/// Reads a harness CSV and summarizes it.
pub fn summarize(reader: impl BufRead) -> Result<Summary> {
    Summary::from_rows(&read_rows(reader)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn population_std_over_final_steps() {
        let rows = vec![
            Row::new("r", 0, 1, "accuracy", 0.1),
            Row::new("r", 0, 9, "accuracy", 0.8),
            Row::new("r", 1, 9, "accuracy", 0.9),
        ];
        let s = Summary::from_rows(&rows).unwrap();
        let a = s.get("r", "accuracy").unwrap();
        assert!((a.mean - 0.85).abs() < 1e-12);
        assert!((a.std - 0.05).abs() < 1e-12);
        assert_eq!(a.seeds, 2);
    }

    #[test]
    fn single_seed_has_zero_std() {
        let s = Summary::from_rows(&[Row::new("r", 3, 2, "loss_val", 1.5)]).unwrap();
        assert_eq!(s.get("r", "loss_val").unwrap().std, 0.0);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(Summary::from_rows(&[]).is_err());
    }
}
