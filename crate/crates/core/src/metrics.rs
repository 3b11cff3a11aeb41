//! AU-ROC, average precision, aggregation over runs and average ranks.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::MetricInput(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::MetricInput("scores contain NaN".into()));
    }
    Ok(())
}

/// Probability that a random positive outranks a random negative, ties
/// counting one half. Computed from tie-averaged ranks in O(n log n).
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedMetric("AU-ROC needs both classes"));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // 1-based ranks i+1..=j+1 share their mean.
        let mean_rank = (i + j + 2) as f64 / 2.0;
        let pos_in_group = idx[i..=j].iter().filter(|&&k| labels[k]).count();
        pos_rank_sum += mean_rank * pos_in_group as f64;
        i = j + 1;
    }
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Non-interpolated average precision: the mean of precision@k over the
/// ranks k of the positives, scores descending. Within equal scores,
/// negatives are ranked ahead of positives.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_inputs(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 {
        return Err(Error::UndefinedMetric("average precision needs a positive"));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| labels[a].cmp(&labels[b]))
    });
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank0, &k) in idx.iter().enumerate() {
        if labels[k] {
            hits += 1;
            sum += hits as f64 / (rank0 + 1) as f64;
        }
    }
    Ok(sum / n_pos as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub method: String,
    pub dataset_id: String,
    pub run_index: usize,
    pub auroc: f64,
    pub ap: f64,
    pub n_samples: usize,
    pub n_positive: usize,
}

impl RunResult {
    pub fn compute(
        method: &str,
        dataset_id: &str,
        run_index: usize,
        scores: &[f64],
        labels: &[bool],
    ) -> Result<Self> {
        Ok(RunResult {
            method: method.to_string(),
            dataset_id: dataset_id.to_string(),
            run_index,
            auroc: auroc(scores, labels)?,
            ap: average_precision(scores, labels)?,
            n_samples: scores.len(),
            n_positive: labels.iter().filter(|&&l| l).count(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "AU-ROC")]
    Auroc,
    #[serde(rename = "AP")]
    Ap,
}

impl Metric {
    pub fn label(self) -> &'static str {
        match self {
            Metric::Auroc => "AU-ROC",
            Metric::Ap => "AP",
        }
    }

    fn of(self, r: &RunResult) -> f64 {
        match self {
            Metric::Auroc => r.auroc,
            Metric::Ap => r.ap,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub mean: f64,
    /// Sample standard deviation (n - 1); zero for a single run.
    pub std: f64,
    pub n_runs: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregateReport {
    pub methods: Vec<String>,
    pub datasets: Vec<String>,
    /// Keyed by (method, dataset, metric).
    pub cells: BTreeMap<(String, String, Metric), CellSummary>,
    /// Rank of each method per (dataset, metric) column; 1 is best.
    pub ranks: BTreeMap<(String, String, Metric), f64>,
    pub avg_rank: BTreeMap<String, f64>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Ranks with ties sharing the mean of their positions; higher value = rank 1.
fn fractional_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let r = (i + j + 2) as f64 / 2.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Mean and std per (method, dataset, metric), ranks per column and the
/// average rank of every method. `methods` fixes the report order; an empty
/// slice uses the order of first appearance.
pub fn aggregate_runs(results: &[RunResult], methods: &[String]) -> Result<AggregateReport> {
    let mut method_order: Vec<String> = methods.to_vec();
    let mut dataset_order: Vec<String> = Vec::new();
    for r in results {
        if !method_order.contains(&r.method) {
            if !methods.is_empty() {
                return Err(Error::MetricInput(format!("unexpected method `{}`", r.method)));
            }
            method_order.push(r.method.clone());
        }
        if !dataset_order.contains(&r.dataset_id) {
            dataset_order.push(r.dataset_id.clone());
        }
    }
    if method_order.is_empty() || dataset_order.is_empty() {
        return Err(Error::MetricInput("no run results".into()));
    }

    let mut grouped: BTreeMap<(String, String), Vec<&RunResult>> = BTreeMap::new();
    for r in results {
        grouped
            .entry((r.method.clone(), r.dataset_id.clone()))
            .or_default()
            .push(r);
    }
    for d in &dataset_order {
        let counts: BTreeSet<usize> = method_order
            .iter()
            .map(|m| grouped.get(&(m.clone(), d.clone())).map_or(0, Vec::len))
            .collect();
        if counts.len() != 1 || counts.contains(&0) {
            return Err(Error::MetricInput(format!(
                "dataset `{d}` has unequal run counts across methods: {counts:?}"
            )));
        }
    }

    let mut cells = BTreeMap::new();
    for ((m, d), runs) in &grouped {
        for metric in [Metric::Auroc, Metric::Ap] {
            let vals: Vec<f64> = runs.iter().map(|r| metric.of(r)).collect();
            let (mean, std) = mean_std(&vals);
            cells.insert(
                (m.clone(), d.clone(), metric),
                CellSummary {
                    mean,
                    std,
                    n_runs: vals.len(),
                },
            );
        }
    }

    let mut ranks = BTreeMap::new();
    let mut rank_sums: BTreeMap<String, f64> = BTreeMap::new();
    let mut n_columns = 0usize;
    for d in &dataset_order {
        for metric in [Metric::Auroc, Metric::Ap] {
            let means: Vec<f64> = method_order
                .iter()
                .map(|m| cells[&(m.clone(), d.clone(), metric)].mean)
                .collect();
            for (m, r) in method_order.iter().zip(fractional_ranks(&means)) {
                ranks.insert((m.clone(), d.clone(), metric), r);
                *rank_sums.entry(m.clone()).or_insert(0.0) += r;
            }
            n_columns += 1;
        }
    }
    let avg_rank = rank_sums
        .into_iter()
        .map(|(m, s)| (m, s / n_columns as f64))
        .collect();

    Ok(AggregateReport {
        methods: method_order,
        datasets: dataset_order,
        cells,
        ranks,
        avg_rank,
    })
}

impl AggregateReport {
    pub fn cell(&self, method: &str, dataset: &str, metric: Metric) -> Option<&CellSummary> {
        self.cells
            .get(&(method.to_string(), dataset.to_string(), metric))
    }

    /// Long-format CSV; metric values are multiplied by 100 with two decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,dataset,metric,mean,std,n_runs,rank\n");
        for m in &self.methods {
            for d in &self.datasets {
                for metric in [Metric::Auroc, Metric::Ap] {
                    let key = (m.clone(), d.clone(), metric);
                    let c = &self.cells[&key];
                    let _ = writeln!(
                        out,
                        "{},{},{},{:.2},{:.2},{},{}",
                        csv_field(m),
                        csv_field(d),
                        metric.label(),
                        c.mean * 100.0,
                        c.std * 100.0,
                        c.n_runs,
                        self.ranks[&key]
                    );
                }
            }
        }
        out
    }

    /// Aligned text table: one row per method, one `mean ± std` column per
    /// (dataset, metric), then the average rank.
    pub fn to_text(&self) -> String {
        let mut header = vec!["Method".to_string()];
        for d in &self.datasets {
            for metric in [Metric::Auroc, Metric::Ap] {
                header.push(format!("{d} {}", metric.label()));
            }
        }
        header.push("Avg. Rank".into());
        let mut rows = vec![header];
        for m in &self.methods {
            let mut row = vec![m.clone()];
            for d in &self.datasets {
                for metric in [Metric::Auroc, Metric::Ap] {
                    let c = &self.cells[&(m.clone(), d.clone(), metric)];
                    row.push(format!("{:.2} ± {:.2}", c.mean * 100.0, c.std * 100.0));
                }
            }
            row.push(format!("{:.1}", round_half_away(self.avg_rank[m], 1)));
            rows.push(row);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in rows {
            let line: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(cell, w)| format!("{cell:<w$}"))
                .collect();
            out.push_str(line.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Decimal rounding with halves away from zero, as tables usually print.
pub fn round_half_away(x: f64, decimals: i32) -> f64 {
    let f = 10f64.powi(decimals);
    let scaled = x * f;
    // Guard against representation error just below an exact half.
    let nudged = scaled + scaled.signum() * 1e-9;
    nudged.round() / f
}

/// Reads a runs CSV written by [`runs_to_csv`].
pub fn runs_from_csv(text: &str) -> Result<Vec<RunResult>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}

pub fn runs_to_csv(runs: &[RunResult]) -> Result<String> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    for r in runs {
        wtr.serialize(r)?;
    }
    let bytes = wtr
        .into_inner()
        .map_err(|e| Error::MetricInput(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(v: &[u8]) -> Vec<bool> {
        v.iter().map(|&x| x == 1).collect()
    }

    #[test]
    fn auroc_examples() {
        let s = [0.9, 0.8, 0.3, 0.2];
        assert_eq!(auroc(&s, &b(&[1, 1, 0, 0])).unwrap(), 1.0);
        assert_eq!(auroc(&s, &b(&[1, 0, 0, 1])).unwrap(), 0.5);
        assert_eq!(auroc(&[0.5, 0.5], &b(&[1, 0])).unwrap(), 0.5);
        assert!(matches!(
            auroc(&[0.1, 0.2], &b(&[1, 1])),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn ap_examples() {
        let s = [0.9, 0.8, 0.3, 0.2];
        assert_eq!(average_precision(&s, &b(&[1, 0, 0, 1])).unwrap(), 0.75);
        assert_eq!(average_precision(&s, &b(&[1, 1, 0, 0])).unwrap(), 1.0);
        assert_eq!(average_precision(&[0.9], &b(&[1])).unwrap(), 1.0);
        assert!(average_precision(&s, &b(&[0, 0, 0, 0])).is_err());
    }

    #[test]
    fn ap_ties_are_pessimistic() {
        // Negative ranked first within the tie: precision 1/2.
        assert_eq!(average_precision(&[0.5, 0.5], &b(&[1, 0])).unwrap(), 0.5);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(auroc(&[0.1], &b(&[1, 0])), Err(Error::MetricInput(_))));
    }

    fn run(m: &str, d: &str, i: usize, auroc: f64, ap: f64) -> RunResult {
        RunResult {
            method: m.into(),
            dataset_id: d.into(),
            run_index: i,
            auroc,
            ap,
            n_samples: 10,
            n_positive: 3,
        }
    }

    #[test]
    fn strictly_best_method_has_rank_one() {
        let mut rs = Vec::new();
        for d in ["d1", "d2", "d3", "d4"] {
            rs.push(run("best", d, 0, 0.9, 0.8));
            rs.push(run("other", d, 0, 0.7, 0.6));
        }
        let rep = aggregate_runs(&rs, &[]).unwrap();
        assert_eq!(rep.avg_rank["best"], 1.0);
        assert_eq!(rep.avg_rank["other"], 2.0);
    }

    #[test]
    fn identical_methods_share_rank() {
        let rs = vec![run("a", "d", 0, 0.7, 0.5), run("b", "d", 0, 0.7, 0.5)];
        let rep = aggregate_runs(&rs, &[]).unwrap();
        assert_eq!(rep.avg_rank["a"], 1.5);
        assert_eq!(rep.avg_rank["b"], 1.5);
    }

    #[test]
    fn mean_and_sample_std() {
        let rs: Vec<_> = [0.70, 0.72, 0.74, 0.76, 0.78]
            .iter()
            .enumerate()
            .map(|(i, &a)| run("m", "d", i, a, 0.5))
            .collect();
        let rep = aggregate_runs(&rs, &[]).unwrap();
        let c = rep.cell("m", "d", Metric::Auroc).unwrap();
        assert!((c.mean - 0.74).abs() < 1e-12);
        // sum of squares 0.004 over n - 1 = 4
        assert!((c.std - (0.004f64 / 4.0).sqrt()).abs() < 1e-12);
        assert_eq!(c.n_runs, 5);
    }

    #[test]
    fn unequal_run_counts_fail() {
        let rs = vec![
            run("a", "d", 0, 0.7, 0.5),
            run("a", "d", 1, 0.7, 0.5),
            run("b", "d", 0, 0.6, 0.4),
        ];
        assert!(aggregate_runs(&rs, &[]).is_err());
    }

    #[test]
    fn runs_csv_round_trip() {
        let rs = vec![run("a", "d", 0, 0.7, 0.5)];
        assert_eq!(runs_from_csv(&runs_to_csv(&rs).unwrap()).unwrap(), rs);
    }

    #[test]
    fn half_away_rounding() {
        assert_eq!(round_half_away(2.25, 1), 2.3);
        assert_eq!(round_half_away(1.125, 1), 1.1);
    }
}
