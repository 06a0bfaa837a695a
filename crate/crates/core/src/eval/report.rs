use std::collections::BTreeMap;
use std::fmt::Write;

use super::metrics::{compute_metrics, PredictionTriplet};
use crate::error::{Error, Result};

/// One cell of the report: a metric at one context length, aggregated over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: String,
    /// Flag set such as `G+P+I`, or `-` when no flag applies.
    pub variant: String,
    pub context_len: usize,
    pub metric: String,
    /// `None` when the metric is undefined for at least one seed.
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub n_eval: usize,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
}

/// Standard deviation with divisor `n`.
pub fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Rows for every (length, metric) from per-seed triplet sets.
pub fn aggregate_seeds(
    method: &str,
    variant: &str,
    per_seed: &[(u64, BTreeMap<usize, Vec<PredictionTriplet>>)],
) -> Result<Vec<ReportRow>> {
    let (_, first) = per_seed.first().ok_or_else(|| Error::Config("no seeds to aggregate".into()))?;
    let seeds: Vec<u64> = per_seed.iter().map(|(s, _)| *s).collect();
    let mut rows = Vec::new();
    for (&len, triplets) in first {
        let mut by_seed = Vec::with_capacity(per_seed.len());
        for (seed, sets) in per_seed {
            let ts = sets.get(&len).ok_or_else(|| Error::Config(format!("seed {seed} lacks context length {len}")))?;
            by_seed.push(compute_metrics(ts));
        }
        for (k, (metric, _)) in by_seed[0].iter().enumerate() {
            let values: Option<Vec<f64>> = by_seed.iter().map(|m| m[k].1).collect();
            let (mean, std) = match values {
                Some(v) => (Some(v.iter().sum::<f64>() / v.len() as f64), Some(population_std(&v))),
                None => (None, None),
            };
            rows.push(ReportRow {
                method: method.to_string(),
                variant: variant.to_string(),
                context_len: len,
                metric: metric.name(),
                mean,
                std,
                n_eval: triplets.len(),
                seeds: seeds.clone(),
            });
        }
    }
    Ok(rows)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "null".to_string(), |x| format!("{x}"))
}

fn parse_opt(s: &str) -> Option<Option<f64>> {
    if s == "null" {
        Some(None)
    } else {
        s.parse().ok().map(Some)
    }
}

impl EvalReport {
    pub const HEADER: &'static str = "method,variant,context_len,metric,mean,std,n_eval,seeds";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::HEADER);
        out.push('\n');
        for r in &self.rows {
            let seeds: Vec<String> = r.seeds.iter().map(u64::to_string).collect();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.method,
                r.variant,
                r.context_len,
                r.metric,
                opt(r.mean),
                opt(r.std),
                r.n_eval,
                seeds.join(";")
            )
            .unwrap();
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(Self::HEADER) {
            return Err(Error::Format("report header is missing".into()));
        }
        let mut rows = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let bad = || Error::Format(format!("bad report line: {line}"));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(bad());
            }
            let seeds = if f[7].is_empty() {
                Vec::new()
            } else {
                f[7].split(';').map(|s| s.parse().map_err(|_| bad())).collect::<Result<_>>()?
            };
            rows.push(ReportRow {
                method: f[0].to_string(),
                variant: f[1].to_string(),
                context_len: f[2].parse().map_err(|_| bad())?,
                metric: f[3].to_string(),
                mean: parse_opt(f[4]).ok_or_else(bad)?,
                std: parse_opt(f[5]).ok_or_else(bad)?,
                n_eval: f[6].parse().map_err(|_| bad())?,
                seeds,
            });
        }
        Ok(EvalReport { rows })
    }

    pub fn get(&self, method: &str, variant: &str, context_len: usize, metric: &str) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.variant == variant && r.context_len == context_len && r.metric == metric)
    }

    /// Mean of a cell, if present and defined.
    pub fn mean(&self, method: &str, variant: &str, context_len: usize, metric: &str) -> Option<f64> {
        self.get(method, variant, context_len, metric).and_then(|r| r.mean)
    }

    /// `(method, variant)` pairs in first-appearance order.
    pub fn series_keys(&self) -> Vec<(String, String)> {
        let mut keys: Vec<(String, String)> = Vec::new();
        for r in &self.rows {
            if !keys.iter().any(|(m, v)| *m == r.method && *v == r.variant) {
                keys.push((r.method.clone(), r.variant.clone()));
            }
        }
        keys
    }

    /// Sorted `(context_len, mean, std)` points of one series and metric.
    pub fn series(&self, method: &str, variant: &str, metric: &str) -> Vec<(usize, Option<f64>, Option<f64>)> {
        let mut pts: Vec<_> = self
            .rows
            .iter()
            .filter(|r| r.method == method && r.variant == variant && r.metric == metric)
            .map(|r| (r.context_len, r.mean, r.std))
            .collect();
        pts.sort_by_key(|p| p.0);
        pts
    }

    pub fn validate(&self) -> Result<()> {
        for r in &self.rows {
            for field in [&r.method, &r.variant, &r.metric] {
                if field.is_empty() || field.contains([',', '\n', ';']) {
                    return Err(Error::Format(format!("report field {field:?} cannot be written to CSV")));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn population_std_of_known_values() {
        assert_eq!(population_std(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]), 2.0);
        assert_eq!(population_std(&[3.0]), 0.0);
    }

    #[test]
    fn csv_round_trip_with_nulls() {
        let report = EvalReport {
            rows: vec![
                ReportRow {
                    method: "proposed".into(),
                    variant: "G+P+I".into(),
                    context_len: 64,
                    metric: "minority_group".into(),
                    mean: Some(0.123_456_789_012_345_67),
                    std: Some(1e-17),
                    n_eval: 8192,
                    seeds: vec![0, 1, 2, 3, 4],
                },
                ReportRow {
                    method: "erm".into(),
                    variant: "-".into(),
                    context_len: 2,
                    metric: "worst_group".into(),
                    mean: None,
                    std: None,
                    n_eval: 10,
                    seeds: vec![7],
                },
            ],
        };
        report.validate().unwrap();
        let csv = report.to_csv();
        assert!(csv.contains(",null,null,"));
        assert_eq!(EvalReport::from_csv(&csv).unwrap(), report);
        assert!(EvalReport::from_csv("x\n").is_err());
    }
}
