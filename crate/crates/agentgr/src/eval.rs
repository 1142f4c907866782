//! Ranking metrics and reports.
//!
//! Leave-one-out evaluation has exactly one relevant item per case, so HR@K
//! is a hit indicator on the top K and NDCG@K reduces to 1/log2(rank+1) with
//! an ideal DCG of 1. Ranks are 1-based and the K boundary is inclusive.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulation::GroupRecommendation;

/// 1-based rank of the positive item, or an error if it is absent (a
/// violated upstream permutation contract).
fn rank_of(ranked: &[String], positive: &str) -> Result<usize> {
    ranked
        .iter()
        .position(|id| id == positive)
        .map(|p| p + 1)
        .ok_or_else(|| {
            Error::Data(format!(
                "positive item {positive:?} missing from ranked list"
            ))
        })
}

pub fn hit_rate_at_k(ranked: &[String], positive: &str, k: usize) -> Result<f64> {
    let rank = rank_of(ranked, positive)?;
    Ok(if rank <= k { 1.0 } else { 0.0 })
}

pub fn ndcg_at_k(ranked: &[String], positive: &str, k: usize) -> Result<f64> {
    let rank = rank_of(ranked, positive)?;
    if rank <= k {
        Ok(1.0 / ((rank as f64) + 1.0).log2())
    } else {
        Ok(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMetrics {
    pub hr: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub strategy: String,
    pub fingerprint: String,
    pub n_groups: usize,
    pub n_errors: usize,
    pub per_k: BTreeMap<usize, KMetrics>,
}

/// Average HR@K and NDCG@K over the results; `positives` maps group id to its
/// held-out item. Failed groups are not in `results` — pass their count so
/// the report can state it.
pub fn evaluate(
    results: &[GroupRecommendation],
    positives: &BTreeMap<String, String>,
    k_values: &[usize],
    n_errors: usize,
    fingerprint: &str,
) -> Result<MetricReport> {
    if results.is_empty() {
        return Err(Error::Data("no evaluable groups".into()));
    }
    let strategy = results[0].strategy.as_str().to_string();
    let mut per_k: BTreeMap<usize, KMetrics> = k_values
        .iter()
        .map(|&k| (k, KMetrics { hr: 0.0, ndcg: 0.0 }))
        .collect();
    for result in results {
        let positive = positives
            .get(&result.group_id)
            .ok_or_else(|| Error::Data(format!("group {:?} has no test case", result.group_id)))?;
        for (&k, metrics) in per_k.iter_mut() {
            metrics.hr += hit_rate_at_k(&result.ranked_items, positive, k)?;
            metrics.ndcg += ndcg_at_k(&result.ranked_items, positive, k)?;
        }
    }
    let n = results.len() as f64;
    for metrics in per_k.values_mut() {
        metrics.hr /= n;
        metrics.ndcg /= n;
    }
    Ok(MetricReport {
        strategy,
        fingerprint: fingerprint.to_string(),
        n_groups: results.len(),
        n_errors,
        per_k,
    })
}

/// Aligned plain-text table over one or more reports, one row per strategy.
pub fn render_table(reports: &[&MetricReport]) -> String {
    let mut ks: Vec<usize> = reports
        .iter()
        .flat_map(|r| r.per_k.keys().copied())
        .collect();
    ks.sort_unstable();
    ks.dedup();

    let mut header = vec![
        "strategy".to_string(),
        "groups".to_string(),
        "errors".to_string(),
    ];
    for &k in &ks {
        header.push(format!("HR@{k}"));
        header.push(format!("NDCG@{k}"));
    }
    let mut rows: Vec<Vec<String>> = vec![header];
    for report in reports {
        let mut row = vec![
            report.strategy.clone(),
            report.n_groups.to_string(),
            report.n_errors.to_string(),
        ];
        for &k in &ks {
            match report.per_k.get(&k) {
                Some(m) => {
                    row.push(format!("{:.4}", m.hr));
                    row.push(format!("{:.4}", m.ndcg));
                }
                None => {
                    row.push("-".into());
                    row.push("-".into());
                }
            }
        }
        rows.push(row);
    }

    let widths: Vec<usize> = (0..rows[0].len())
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in &rows {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, cell)| format!("{cell:>width$}", width = widths[c]))
            .collect();
        out.push_str(&line.join("  "));
        out.push('\n');
    }
    out
}
